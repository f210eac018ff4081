// SPDX-License-Identifier: Apache-2.0
//
// Discrete VAE frame tokenizer. The encoder turns a frame into one logit
// vector per P x P patch; Gumbel-Softmax yields soft samples for the
// reconstruction path and hard argmax tokens serve as transformer targets.
// Token grids are stored row-major as [L, |V|] with L = (H/P) * (W/P).

#ifndef STEVE_DVAE_HPP
#define STEVE_DVAE_HPP

#include "steve/autodiff.hpp"
#include "steve/nn.hpp"
#include "steve/rng.hpp"
#include "steve/schedules.hpp"
#include "steve/tensor.hpp"

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

namespace steve {

struct DvaeConfig {
  int patch_size = 4;  // one of {4, 16, 32}
  int vocab_size = 4096;
  int hidden = 64;
  double tau_start = 1.0;
  double tau_end = 0.1;
  int tau_decay_steps = 30000;

  void validate() const {
    check(patch_size == 4 || patch_size == 16 || patch_size == 32,
          "dvae: patch_size must be one of 4, 16, 32");
    check(vocab_size >= 2, "dvae: vocab_size must be >= 2");
    check(hidden >= 4 && hidden % 4 == 0, "dvae: hidden must be a multiple of 4");
    check(tau_decay_steps >= 1, "dvae: tau_decay_steps must be >= 1");
  }

  int pixel_shuffle_stages() const {
    return static_cast<int>(std::lround(std::log2(patch_size)));
  }
};

template <typename T>
class Dvae {
public:
  using Var = typename Tape<T>::Var;

  Dvae(const DvaeConfig& cfg, Rng& rng) : cfg_(cfg) {
    cfg_.validate();
    const int v = cfg_.vocab_size;
    const int h = cfg_.hidden;

    // Encoder: one patchifying conv, six pointwise convs, pointwise to |V|.
    enc_.reserve(8);
    enc_.emplace_back("dvae.enc0", 3, h, cfg_.patch_size, cfg_.patch_size, 0, rng);
    for (int i = 1; i <= 6; ++i)
      enc_.emplace_back("dvae.enc" + std::to_string(i), h, h, 1, 1, 0, rng);
    enc_.emplace_back("dvae.enc7", h, v, 1, 1, 0, rng);

    // Decoder: pointwise stem, then per upsampling stage one 3x3 conv, two
    // pointwise convs, a 4x expansion and a pixel shuffle; pointwise to RGB.
    const int stages = cfg_.pixel_shuffle_stages();
    dec_.reserve(2 + 4 * static_cast<std::size_t>(stages));
    dec_.emplace_back("dvae.dec_stem", v, h, 1, 1, 0, rng);
    for (int s = 0; s < stages; ++s) {
      const std::string p = "dvae.dec_s" + std::to_string(s);
      dec_.emplace_back(p + "a", h, h, 3, 1, 1, rng);
      dec_.emplace_back(p + "b", h, h, 1, 1, 0, rng);
      dec_.emplace_back(p + "c", h, h, 1, 1, 0, rng);
      dec_.emplace_back(p + "d", h, 4 * h, 1, 1, 0, rng);
    }
    dec_.emplace_back("dvae.dec_out", h, 3, 1, 1, 0, rng);

    for (auto& c : enc_) c.reg(params_);
    for (auto& c : dec_) c.reg(params_);
  }

  const DvaeConfig& config() const { return cfg_; }
  ParamSet<T>& params() { return params_; }

  int grid_side(int image_side) const {
    check(image_side % cfg_.patch_size == 0,
          "dvae: image side " + std::to_string(image_side) +
              " not divisible by patch size " + std::to_string(cfg_.patch_size));
    return image_side / cfg_.patch_size;
  }

  /// Frame [3, H, W] -> token logits [L, |V|], rows in raster order.
  Var encode(Tape<T>& t, Var frame) const {
    const auto& shape = t.value(frame);
    check(shape.rank() == 3 && shape.dim(0) == 3, "dvae: frame must be [3,H,W]");
    const int gh = grid_side(shape.dim(1));
    const int gw = grid_side(shape.dim(2));
    Var x = frame;
    for (std::size_t i = 0; i < enc_.size(); ++i) {
      x = enc_[i].apply(t, x);
      if (i + 1 < enc_.size()) x = t.relu(x);
    }
    // [V, gh, gw] -> rows [L, V]
    return t.transpose2d(t.reshape(x, {cfg_.vocab_size, gh * gw}));
  }

  /// Token distribution rows [L, |V|] -> frame [3, H, W].
  Var decode(Tape<T>& t, Var grid_rows, int grid_h, int grid_w) const {
    const auto& g = t.value(grid_rows);
    check(g.rank() == 2 && g.cols() == cfg_.vocab_size &&
              g.rows() == grid_h * grid_w,
          "dvae: decode expects [" + std::to_string(grid_h * grid_w) + ", " +
              std::to_string(cfg_.vocab_size) + "] grid, got " + g.shape_str());
    Var x = t.reshape(t.transpose2d(grid_rows),
                      {cfg_.vocab_size, grid_h, grid_w});
    std::size_t layer = 0;
    x = t.relu(dec_[layer++].apply(t, x));
    for (int s = 0; s < cfg_.pixel_shuffle_stages(); ++s) {
      for (int c = 0; c < 4; ++c) x = t.relu(dec_[layer++].apply(t, x));
      x = t.pixel_shuffle(x, 2);
    }
    return dec_[layer].apply(t, x);
  }

  /// Soft or straight-through Gumbel-Softmax over each row of [L, |V|]
  /// logits. `noise` null suppresses the Gumbel noise (g = 0).
  static Var gumbel_softmax(Tape<T>& t, Var logits_rows, double tau, bool hard,
                            Rng* noise) {
    if (tau <= 0.0) throw std::domain_error("gumbel_softmax: tau must be > 0");
    check(t.value(logits_rows).rank() == 2, "gumbel_softmax: expected [L, V] rows");
    const std::vector<int> shape = t.value(logits_rows).shape();
    Tensor<T> g(shape);
    if (noise)
      for (std::int64_t i = 0; i < g.numel(); ++i)
        g[i] = static_cast<T>(noise->gumbel());
    const Var noisy = t.add_const(logits_rows, g);
    Var soft = t.softmax_rows(t.scale(noisy, static_cast<T>(1.0 / tau)));
    if (!hard) return soft;
    const Tensor<T>& nv = t.value(noisy);
    Tensor<T> onehot(shape);
    for (int r = 0; r < nv.rows(); ++r) {
      int best = 0;
      for (int c = 1; c < nv.cols(); ++c)
        if (nv.at(r, c) > nv.at(r, best)) best = c;
      onehot.at(r, best) = T(1);
    }
    return t.straight_through(soft, std::move(onehot));
  }

  /// Value-level Gumbel-Softmax for callers without a tape.
  static Tensor<T> gumbel_softmax_value(const Tensor<T>& logits_rows, double tau,
                                        bool hard, Rng* noise) {
    Tape<T> t;
    return t.value(gumbel_softmax(t, t.input(logits_rows), tau, hard, noise));
  }

  /// Hard token indices: argmax of (logits + Gumbel noise) per row; null
  /// noise gives the deterministic argmax used at evaluation.
  static std::vector<int> sample_tokens(const Tensor<T>& logits_rows, Rng* noise) {
    check(logits_rows.rank() == 2, "sample_tokens: expected [L, V] rows");
    std::vector<int> out(static_cast<std::size_t>(logits_rows.rows()));
    for (int r = 0; r < logits_rows.rows(); ++r) {
      int best = 0;
      T best_v = std::numeric_limits<T>::lowest();
      for (int c = 0; c < logits_rows.cols(); ++c) {
        const T v = logits_rows.at(r, c) +
                    (noise ? static_cast<T>(noise->gumbel()) : T(0));
        if (v > best_v) {
          best_v = v;
          best = c;
        }
      }
      out[static_cast<std::size_t>(r)] = best;
    }
    return out;
  }

  /// One-hot rows for a token sequence.
  Tensor<T> tokens_to_onehot(const std::vector<int>& tokens) const {
    Tensor<T> rows({static_cast<int>(tokens.size()), cfg_.vocab_size});
    for (std::size_t i = 0; i < tokens.size(); ++i) {
      check(tokens[i] >= 0 && tokens[i] < cfg_.vocab_size,
            "tokens_to_onehot: token out of vocabulary");
      rows.at(static_cast<int>(i), tokens[i]) = T(1);
    }
    return rows;
  }

  double temperature(std::int64_t step) const {
    return temperature_schedule(step, cfg_.tau_start, cfg_.tau_end,
                                cfg_.tau_decay_steps);
  }

  /// Sum over frames of the per-frame squared reconstruction error.
  static Var reconstruction_loss(Tape<T>& t, const std::vector<Var>& frames,
                                 const std::vector<Var>& reconstructions) {
    check(frames.size() == reconstructions.size() && !frames.empty(),
          "dvae_loss: frame count mismatch");
    Var total = t.squared_error_sum(reconstructions[0], frames[0]);
    for (std::size_t i = 1; i < frames.size(); ++i)
      total = t.add(total, t.squared_error_sum(reconstructions[i], frames[i]));
    return total;
  }

private:
  DvaeConfig cfg_;
  std::vector<Conv2d<T>> enc_;
  std::vector<Conv2d<T>> dec_;
  ParamSet<T> params_;
};

}  // namespace steve

#endif  // STEVE_DVAE_HPP
