// SPDX-License-Identifier: Apache-2.0
//
// Recurrent slot encoder: a CNN backbone with a learned positional code
// feeds iterative slot-axis attention with GRU updates, followed by a
// transformer interaction step, rolled over the frames of a clip. The
// pre-interaction slots and per-frame attention maps are exposed for
// decoding and segmentation.

#ifndef STEVE_SLOT_ENCODER_HPP
#define STEVE_SLOT_ENCODER_HPP

#include "steve/autodiff.hpp"
#include "steve/nn.hpp"
#include "steve/rng.hpp"
#include "steve/tensor.hpp"

#include <cmath>
#include <string>
#include <utility>
#include <vector>

namespace steve {

struct EncoderConfig {
  int num_slots = 0;
  int slot_dim = 192;
  int corrector_iters = 2;
  int mlp_hidden = 192;
  int predictor_blocks = 1;
  int predictor_heads = 4;
  int cnn_channels = 32;
  int cnn_first_stride = 1;

  void validate() const {
    check(num_slots >= 1, "encoder config: num_slots must be >= 1");
    check(slot_dim > 0, "encoder config: slot_dim must be positive");
    check(corrector_iters >= 1, "encoder config: corrector_iters must be >= 1");
    check(mlp_hidden > 0, "encoder config: mlp_hidden must be positive");
    check(predictor_blocks >= 1, "encoder config: predictor_blocks must be >= 1");
    check(predictor_heads >= 1 && slot_dim % predictor_heads == 0,
          "encoder config: predictor_heads must divide slot_dim");
    check(cnn_channels > 0, "encoder config: cnn_channels must be positive");
    check(cnn_first_stride == 1 || cnn_first_stride == 2,
          "encoder config: cnn_first_stride must be 1 or 2");
  }
};

/// Backbone defaults by input size: 64 uses 32 channels at stride 1; 128
/// doubles the width and halves the resolution in the first conv.
inline EncoderConfig encoder_config_for_image(int image_size, int num_slots) {
  EncoderConfig cfg;
  cfg.num_slots = num_slots;
  if (image_size >= 128) {
    cfg.cnn_channels = 64;
    cfg.cnn_first_stride = 2;
  }
  return cfg;
}

template <typename T>
class SlotEncoder {
public:
  using Var = typename Tape<T>::Var;

  struct FeatureMap {
    Var e;
    int h_enc = 0;
    int w_enc = 0;
  };
  struct Correction {
    Var slots;
    Var attention;
    Var readout;
  };
  struct EncodeResult {
    std::vector<Var> pre;                          // s-tilde per frame, [N,D]
    std::vector<Var> post;                         // interacted slots, [N,D]
    std::vector<Var> attention;                    // final-iteration map, [N,L]
    std::vector<std::vector<Var>> attention_iters; // every corrector iteration
    int h_enc = 0;
    int w_enc = 0;
  };

  SlotEncoder(const EncoderConfig& cfg, Rng& rng)
      : cfg_(validated(cfg)),
        conv0_("encoder.conv0", 3, cfg_.cnn_channels, 5, cfg_.cnn_first_stride,
               2, rng),
        conv1_("encoder.conv1", cfg_.cnn_channels, cfg_.cnn_channels, 5, 1, 2,
               rng),
        conv2_("encoder.conv2", cfg_.cnn_channels, cfg_.cnn_channels, 5, 1, 2,
               rng),
        conv3_("encoder.conv3", cfg_.cnn_channels, cfg_.cnn_channels, 5, 1, 2,
               rng),
        pos_proj_("encoder.pos", 4, cfg_.cnn_channels, rng),
        feat_ln_("encoder.feat_ln", cfg_.cnn_channels),
        feat_mlp0_("encoder.feat_mlp0", cfg_.cnn_channels, cfg_.cnn_channels,
                   rng),
        feat_mlp1_("encoder.feat_mlp1", cfg_.cnn_channels, cfg_.cnn_channels,
                   rng),
        input_ln_("encoder.input_ln", cfg_.cnn_channels),
        slot_ln_("encoder.slot_ln", cfg_.slot_dim),
        q_("encoder.q", cfg_.slot_dim, cfg_.slot_dim, rng, false),
        k_("encoder.k", cfg_.cnn_channels, cfg_.slot_dim, rng, false),
        v_("encoder.v", cfg_.cnn_channels, cfg_.slot_dim, rng, false),
        gru_("encoder.gru", cfg_.slot_dim, cfg_.slot_dim, rng),
        update_ln_("encoder.update_ln", cfg_.slot_dim),
        update_mlp0_("encoder.update_mlp0", cfg_.slot_dim, cfg_.mlp_hidden,
                     rng),
        update_mlp1_("encoder.update_mlp1", cfg_.mlp_hidden, cfg_.slot_dim,
                     rng) {
    const int d = cfg_.slot_dim;
    const double bound = std::sqrt(6.0 / (1.0 + d));
    mu_.name = "encoder.slot_mu";
    mu_.value = Tensor<T>({d});
    log_sigma_.name = "encoder.slot_log_sigma";
    log_sigma_.value = Tensor<T>({d});
    for (int i = 0; i < d; ++i) {
      mu_.value[i] = static_cast<T>(rng.uniform(-bound, bound));
      log_sigma_.value[i] = static_cast<T>(rng.uniform(-bound, bound));
    }

    pred_blocks_.reserve(cfg_.predictor_blocks);
    for (int b = 0; b < cfg_.predictor_blocks; ++b) {
      const std::string p = "encoder.pred" + std::to_string(b);
      pred_blocks_.push_back(PredBlock{
          MultiHeadAttention<T>(p + ".attn", d, cfg_.predictor_heads, rng),
          LayerNorm<T>(p + ".ln1", d), LayerNorm<T>(p + ".ln2", d),
          Linear<T>(p + ".ffn0", d, cfg_.mlp_hidden, rng),
          Linear<T>(p + ".ffn1", cfg_.mlp_hidden, d, rng)});
    }

    conv0_.reg(params_);
    conv1_.reg(params_);
    conv2_.reg(params_);
    conv3_.reg(params_);
    pos_proj_.reg(params_);
    feat_ln_.reg(params_);
    feat_mlp0_.reg(params_);
    feat_mlp1_.reg(params_);
    params_.add(&mu_);
    params_.add(&log_sigma_);
    input_ln_.reg(params_);
    slot_ln_.reg(params_);
    q_.reg(params_);
    k_.reg(params_);
    v_.reg(params_);
    gru_.reg(params_);
    update_ln_.reg(params_);
    update_mlp0_.reg(params_);
    update_mlp1_.reg(params_);
    for (PredBlock& blk : pred_blocks_) {
      blk.attn.reg(params_);
      blk.ln1.reg(params_);
      blk.ln2.reg(params_);
      blk.ffn0.reg(params_);
      blk.ffn1.reg(params_);
    }
  }

  const EncoderConfig& config() const { return cfg_; }
  ParamSet<T>& params() { return params_; }

  /// Four 5x5 convs (ReLU between, none after the last), flattened to rows,
  /// plus a learned linear map of the 4-dimensional position code, then a
  /// 2-layer MLP with a LayerNorm front.
  FeatureMap backbone_features(Tape<T>& t, const Tensor<T>& frame) const {
    check(frame.rank() == 3 && frame.dim(0) == 3,
          "backbone_features: expected a [3,H,W] frame");
    Var x = t.input(frame);
    x = t.relu(conv0_.apply(t, x));
    x = t.relu(conv1_.apply(t, x));
    x = t.relu(conv2_.apply(t, x));
    x = conv3_.apply(t, x);
    const int c = t.value(x).dim(0);
    const int he = t.value(x).dim(1);
    const int we = t.value(x).dim(2);
    x = t.transpose2d(t.reshape(x, {c, he * we}));
    x = t.add(x, pos_proj_.apply(t, t.input(position_grid(he, we))));
    Var h = feat_ln_.apply(t, x);
    h = t.relu(feat_mlp0_.apply(t, h));
    h = feat_mlp1_.apply(t, h);
    return {h, he, we};
  }

  /// Standard-normal draw shaped [N,D]; kept separate from init_slots so a
  /// fixed draw can be replayed. The overload with an explicit count serves
  /// evaluations that instantiate more slots than the training config.
  Tensor<T> slot_noise(Rng& rng) const { return slot_noise(rng, cfg_.num_slots); }
  Tensor<T> slot_noise(Rng& rng, int n) const {
    check(n >= 1, "slot_noise: need at least one slot");
    Tensor<T> eps({n, cfg_.slot_dim});
    for (std::int64_t i = 0; i < eps.numel(); ++i)
      eps[i] = static_cast<T>(rng.normal());
    return eps;
  }

  /// s_0 = mu + exp(log_sigma) * eps, reparameterized so gradients reach the
  /// learned mean and (log) spread. Any row count is accepted; the learned
  /// mean and spread are shared across slots.
  Var init_slots(Tape<T>& t, const Tensor<T>& eps) const {
    check(eps.rank() == 2 && eps.dim(0) >= 1 && eps.dim(1) == cfg_.slot_dim,
          "init_slots: noise must be [N,D]");
    Var sigma = t.exp_op(t.param(const_cast<Param<T>&>(log_sigma_)));
    Var scaled = t.mul_rowvec(t.input(eps), sigma);
    return t.add_rowvec(scaled, t.param(const_cast<Param<T>&>(mu_)));
  }

  std::vector<Var> init_slots_batch(Tape<T>& t, int batch, Rng& rng) const {
    check(batch >= 1, "init_slots_batch: batch must be >= 1");
    std::vector<Var> out;
    out.reserve(batch);
    for (int b = 0; b < batch; ++b) out.push_back(init_slots(t, slot_noise(rng)));
    return out;
  }

  /// Value projection of (normalized) features, exposed for readout checks.
  Var project_values(Tape<T>& t, Var feats) const {
    return v_.apply(t, input_ln_.apply(t, feats));
  }

  /// One attention-and-update step. The softmax runs over the slot axis, so
  /// locations compete for slots; the readout renormalizes each slot's
  /// weights to a mean with an epsilon-stabilized denominator.
  Correction corrector_step(Tape<T>& t, Var slots, Var feats) const {
    Var e = input_ln_.apply(t, feats);
    Var keys = k_.apply(t, e);
    Var values = v_.apply(t, e);
    Var queries = q_.apply(t, slot_ln_.apply(t, slots));
    const T inv_sqrt =
        T(1) / static_cast<T>(std::sqrt(static_cast<double>(cfg_.slot_dim)));
    Var att = t.softmax_cols(t.scale(t.matmul(queries, keys, false, true),
                                     inv_sqrt));
    Var readout = t.div_colvec(t.matmul(att, values), t.row_sum(att), T(1e-8));
    Var h = gru_.apply(t, readout, slots);
    Var m = update_mlp1_.apply(
        t, t.relu(update_mlp0_.apply(t, update_ln_.apply(t, h))));
    return {t.add(h, m), att, readout};
  }

  /// One pre-norm transformer block (self-attention then MLP) over the slot
  /// rows, with no positional code so the slot order carries no meaning.
  Var interact(Tape<T>& t, Var slots) const {
    for (const PredBlock& blk : pred_blocks_) {
      Var n1 = blk.ln1.apply(t, slots);
      slots = t.add(slots, blk.attn.apply(t, n1, n1));
      Var n2 = blk.ln2.apply(t, slots);
      slots = t.add(slots, blk.ffn1.apply(t, t.relu(blk.ffn0.apply(t, n2))));
    }
    return slots;
  }

  /// Roll the corrector and interaction over a clip. Each frame re-attends
  /// to its features `corrector_iters` times, chaining slot state; the
  /// final iteration's attention map is recorded, the final corrector output
  /// becomes s-tilde, and the interacted slots carry to the next frame.
  EncodeResult encode_video(Tape<T>& t, const std::vector<Tensor<T>>& frames,
                            Var s0) const {
    check(!frames.empty(), "encode_video: need at least one frame");
    EncodeResult out;
    Var state = s0;
    for (const Tensor<T>& frame : frames) {
      FeatureMap fm = backbone_features(t, frame);
      out.h_enc = fm.h_enc;
      out.w_enc = fm.w_enc;
      Var slots = state;
      std::vector<Var> iter_maps;
      iter_maps.reserve(cfg_.corrector_iters);
      for (int it = 0; it < cfg_.corrector_iters; ++it) {
        Correction c = corrector_step(t, slots, fm.e);
        slots = c.slots;
        iter_maps.push_back(c.attention);
      }
      out.pre.push_back(slots);
      out.attention.push_back(iter_maps.back());
      out.attention_iters.push_back(std::move(iter_maps));
      state = interact(t, slots);
      out.post.push_back(state);
    }
    return out;
  }

  /// Position code rows in raster order: (x, y, 1-x, 1-y) at pixel centers.
  static Tensor<T> position_grid(int he, int we) {
    Tensor<T> g({he * we, 4});
    for (int i = 0; i < he; ++i) {
      const T y = (static_cast<T>(i) + T(0.5)) / static_cast<T>(he);
      for (int j = 0; j < we; ++j) {
        const T x = (static_cast<T>(j) + T(0.5)) / static_cast<T>(we);
        const int row = i * we + j;
        g.at(row, 0) = x;
        g.at(row, 1) = y;
        g.at(row, 2) = T(1) - x;
        g.at(row, 3) = T(1) - y;
      }
    }
    return g;
  }

private:
  struct PredBlock {
    MultiHeadAttention<T> attn;
    LayerNorm<T> ln1, ln2;
    Linear<T> ffn0, ffn1;
  };

  static EncoderConfig validated(EncoderConfig c) {
    c.validate();
    return c;
  }

  EncoderConfig cfg_;
  Conv2d<T> conv0_, conv1_, conv2_, conv3_;
  Linear<T> pos_proj_;
  LayerNorm<T> feat_ln_;
  Linear<T> feat_mlp0_, feat_mlp1_;
  Param<T> mu_, log_sigma_;
  LayerNorm<T> input_ln_;
  LayerNorm<T> slot_ln_;
  Linear<T> q_, k_, v_;
  GRUCell<T> gru_;
  LayerNorm<T> update_ln_;
  Linear<T> update_mlp0_, update_mlp1_;
  std::vector<PredBlock> pred_blocks_;
  ParamSet<T> params_;
};

}  // namespace steve

#endif  // STEVE_SLOT_ENCODER_HPP
