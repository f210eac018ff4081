// SPDX-License-Identifier: Apache-2.0
//
// Mixture decoder over slots: per-slot RGB plus a mask logit, masks softmaxed
// across slots at every pixel, composite the mask-weighted sum. Used as a
// frozen-encoder diagnostic probe, as the decoder of an end-to-end baseline
// model, and in a transposed-convolution variant. Decoding masks double as a
// segmentation source.

#ifndef STEVE_MIXTURE_HPP
#define STEVE_MIXTURE_HPP

#include "steve/eval.hpp"
#include "steve/train.hpp"

#include <cmath>
#include <string>
#include <vector>

namespace steve {

struct MixtureConfig {
  int image_size = 64;
  int slot_dim = 192;
  int channels = 32;
  /// false: spatial broadcast at image resolution through a 4-layer 5x5 CNN;
  /// true: zero-stuffed strided convolutions growing a 1x1 seed by doublings.
  bool deconv = false;

  void validate() const {
    check(image_size >= 8, "mixture: image_size must be >= 8");
    check(slot_dim >= 1, "mixture: slot_dim must be >= 1");
    check(channels >= 4, "mixture: channels must be >= 4");
    if (deconv)
      check((image_size & (image_size - 1)) == 0,
            "mixture: deconv variant needs a power-of-two image_size");
  }

  int deconv_stages() const {
    int n = 0;
    for (int s = 1; s < image_size; s *= 2) ++n;
    return n;
  }
};

template <typename T>
class MixtureDecoder {
public:
  using Var = typename Tape<T>::Var;

  struct Decoded {
    std::vector<Var> rgb;  // per slot [3, H*W]
    Var masks{};           // [N, H*W], simplex over slots at each pixel
    Var composite{};       // [3, H*W]
  };

  struct Rendered {
    Tensor<T> rgb;        // [N, 3, H, W]
    Tensor<T> masks;      // [N, H, W]
    Tensor<T> composite;  // [3, H, W]
  };

  MixtureDecoder(const MixtureConfig& cfg, Rng& rng) : cfg_(checked(cfg)) {
    const int c = cfg_.channels, d = cfg_.slot_dim;
    if (cfg_.deconv) {
      const int stages = cfg_.deconv_stages();
      convs_.reserve(stages);
      for (int s = 0; s < stages; ++s) {
        const int in = s == 0 ? d : c;
        const int out = s + 1 == stages ? 4 : c;
        convs_.emplace_back("mixture.deconv" + std::to_string(s), in, out, 5,
                            1, 2, rng);
      }
    } else {
      pos_conv_ = Conv2d<T>("mixture.pos", 4, d, 1, 1, 0, rng);
      convs_.emplace_back("mixture.conv0", d, c, 5, 1, 2, rng);
      convs_.emplace_back("mixture.conv1", c, c, 5, 1, 2, rng);
      convs_.emplace_back("mixture.conv2", c, c, 5, 1, 2, rng);
      convs_.emplace_back("mixture.conv3", c, 4, 5, 1, 2, rng);
      pos_conv_.reg(params_);
    }
    for (auto& cv : convs_) cv.reg(params_);
  }

  const MixtureConfig& config() const { return cfg_; }
  ParamSet<T>& params() { return params_; }
  const ParamSet<T>& params() const { return params_; }

  /// slots [N, D] -> per-slot images, pixelwise slot masks, and composite.
  Decoded decode(Tape<T>& t, Var slots) const {
    const Tensor<T>& sv = t.value(slots);
    check(sv.rank() == 2 && sv.dim(1) == cfg_.slot_dim,
          "mixture decode: slots must be [N," +
              std::to_string(cfg_.slot_dim) + "]");
    const int n = sv.dim(0);
    const int hw = cfg_.image_size * cfg_.image_size;

    Decoded out;
    Var logits{};
    for (int i = 0; i < n; ++i) {
      Var flat = t.reshape(decode_one(t, t.slice_rows(slots, i, 1)), {4, hw});
      out.rgb.push_back(t.slice_rows(flat, 0, 3));
      Var logit = t.slice_rows(flat, 3, 1);
      logits = i == 0 ? logit : t.concat_rows(logits, logit);
    }
    out.masks = t.softmax_cols(logits);
    for (int i = 0; i < n; ++i) {
      Var weighted = t.mul_rowvec(out.rgb[i], t.slice_rows(out.masks, i, 1));
      out.composite = i == 0 ? weighted : t.add(out.composite, weighted);
    }
    return out;
  }

  /// Value-level decode for evaluation and rendering.
  Rendered render(const Tensor<T>& slots) const {
    Tape<T> t;
    Decoded d = decode(t, t.input(slots));
    const int n = static_cast<int>(d.rgb.size());
    const int side = cfg_.image_size;
    Rendered r;
    r.rgb = Tensor<T>({n, 3, side, side});
    for (int i = 0; i < n; ++i) {
      const Tensor<T>& v = t.value(d.rgb[i]);
      std::copy(v.data(), v.data() + v.numel(),
                r.rgb.data() + static_cast<std::int64_t>(i) * v.numel());
    }
    r.masks = t.value(d.masks).reshaped({n, side, side});
    r.composite = t.value(d.composite).reshaped({3, side, side});
    return r;
  }

  /// Pixelwise argmax over the slot axis; ties go to the lowest slot index.
  static Tensor<int> mask_labels(const Tensor<T>& masks) {
    check(masks.rank() == 3, "mask_labels: masks must be [N,H,W]");
    const int n = masks.dim(0), h = masks.dim(1), w = masks.dim(2);
    Tensor<int> out({h, w});
    const std::int64_t hw = static_cast<std::int64_t>(h) * w;
    for (std::int64_t p = 0; p < hw; ++p) {
      int best = 0;
      T best_v = masks[p];
      for (int i = 1; i < n; ++i) {
        const T v = masks[static_cast<std::int64_t>(i) * hw + p];
        if (v > best_v) {
          best_v = v;
          best = i;
        }
      }
      out[p] = best;
    }
    return out;
  }

  /// Squared error summed over pixels and channels, averaged over frames.
  static Var mixture_loss(Tape<T>& t, const std::vector<Var>& pred,
                          const std::vector<Var>& target) {
    check(!pred.empty() && pred.size() == target.size(),
          "mixture_loss: one prediction per target frame");
    Var acc{};
    for (std::size_t f = 0; f < pred.size(); ++f) {
      Var e = t.squared_error_sum(pred[f], target[f]);
      acc = f == 0 ? e : t.add(acc, e);
    }
    return t.scale(acc, T(1) / static_cast<T>(pred.size()));
  }

private:
  static MixtureConfig checked(MixtureConfig c) {
    c.validate();
    return c;
  }

  /// One slot row [1, D] -> [4, H, W].
  Var decode_one(Tape<T>& t, Var slot_row) const {
    const int side = cfg_.image_size;
    Var x;
    if (cfg_.deconv) {
      x = t.reshape(slot_row, {cfg_.slot_dim, 1, 1});
      const int stages = cfg_.deconv_stages();
      for (int s = 0; s < stages; ++s) {
        x = convs_[s].apply(t, t.zero_upsample(x, 2, 1));
        if (s + 1 < stages) x = t.relu(x);
      }
      return x;
    }
    Var col = t.reshape(slot_row, {cfg_.slot_dim, 1});
    Var tiled = t.reshape(t.matmul(col, t.input(ones_row(side * side))),
                          {cfg_.slot_dim, side, side});
    x = t.add(tiled, pos_conv_.apply(t, t.input(position_chw(side, side))));
    for (std::size_t i = 0; i < convs_.size(); ++i) {
      x = convs_[i].apply(t, x);
      if (i + 1 < convs_.size()) x = t.relu(x);
    }
    return x;
  }

  static Tensor<T> ones_row(int n) {
    return Tensor<T>::full({1, n}, T(1));
  }

  /// (x, y, 1-x, 1-y) at pixel centers, channel-major.
  static Tensor<T> position_chw(int h, int w) {
    Tensor<T> out({4, h, w});
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const T fx = (static_cast<T>(x) + T(0.5)) / static_cast<T>(w);
        const T fy = (static_cast<T>(y) + T(0.5)) / static_cast<T>(h);
        out[(0 * static_cast<std::int64_t>(h) + y) * w + x] = fx;
        out[(1 * static_cast<std::int64_t>(h) + y) * w + x] = fy;
        out[(2 * static_cast<std::int64_t>(h) + y) * w + x] = T(1) - fx;
        out[(3 * static_cast<std::int64_t>(h) + y) * w + x] = T(1) - fy;
      }
    return out;
  }

  MixtureConfig cfg_;
  Conv2d<T> pos_conv_;
  std::vector<Conv2d<T>> convs_;
  ParamSet<T> params_;
};

/// Recurrent slot encoder paired with the mixture decoder and trained on
/// pixel reconstruction alone; the ablation baseline that differs from the
/// token-transformer model only in its decoding pathway.
struct MixtureModelConfig {
  int image_size = 64;
  EncoderConfig encoder;
  MixtureConfig mixture;

  void finalize() {
    encoder.validate();
    mixture.image_size = image_size;
    mixture.slot_dim = encoder.slot_dim;
    mixture.validate();
  }
};

template <typename T>
class MixtureModel {
public:
  using Var = typename Tape<T>::Var;
  using VideoEncoding = typename SteveModel<T>::VideoEncoding;

  MixtureModel(const MixtureModelConfig& cfg, Rng& rng)
      : cfg_(finalized(cfg)),
        encoder_(cfg_.encoder, rng),
        decoder_(cfg_.mixture, rng) {}

  const MixtureModelConfig& config() const { return cfg_; }
  SlotEncoder<T>& encoder() { return encoder_; }
  MixtureDecoder<T>& decoder() { return decoder_; }

  std::vector<Param<T>*> all_params() {
    std::vector<Param<T>*> out;
    for (Param<T>* p : encoder_.params().all()) out.push_back(p);
    for (Param<T>* p : decoder_.params().all()) out.push_back(p);
    return out;
  }

  /// Reconstruction loss of one clip from pre-interaction slots.
  Var total_loss(Tape<T>& t, const std::vector<Tensor<T>>& frames,
                 Rng* sample_rng) const {
    check(!frames.empty(), "mixture model: empty clip");
    const int side = cfg_.image_size;
    for (const Tensor<T>& f : frames)
      check(f.rank() == 3 && f.dim(0) == 3 && f.dim(1) == side &&
                f.dim(2) == side,
            "mixture model: frames must be [3," + std::to_string(side) + "," +
                std::to_string(side) + "]");
    Tensor<T> eps;
    if (sample_rng)
      eps = encoder_.slot_noise(*sample_rng);
    else
      eps = Tensor<T>({cfg_.encoder.num_slots, cfg_.encoder.slot_dim});
    auto enc = encoder_.encode_video(t, frames, encoder_.init_slots(t, eps));
    std::vector<Var> pred, target;
    for (std::size_t f = 0; f < frames.size(); ++f) {
      pred.push_back(decoder_.decode(t, enc.pre[f]).composite);
      target.push_back(t.reshape(t.input(frames[f]), {3, side * side}));
    }
    Var loss = MixtureDecoder<T>::mixture_loss(t, pred, target);
    const double v = static_cast<double>(t.value(loss)[0]);
    if (!std::isfinite(v))
      throw std::runtime_error("mixture model: non-finite loss");
    return loss;
  }

  VideoEncoding eval_encode(const std::vector<Tensor<T>>& frames,
                            const Tensor<T>& slot_eps) const {
    Tape<T> t;
    auto enc = encoder_.encode_video(t, frames, encoder_.init_slots(t, slot_eps));
    VideoEncoding out;
    out.h_enc = enc.h_enc;
    out.w_enc = enc.w_enc;
    for (std::size_t f = 0; f < frames.size(); ++f) {
      out.pre_slots.push_back(t.value(enc.pre[f]));
      out.post_slots.push_back(t.value(enc.post[f]));
      out.attention.push_back(t.value(enc.attention[f]));
    }
    return out;
  }

private:
  static MixtureModelConfig finalized(MixtureModelConfig c) {
    c.finalize();
    return c;
  }

  MixtureModelConfig cfg_;
  SlotEncoder<T> encoder_;
  MixtureDecoder<T> decoder_;
};

/// Trainer for the end-to-end mixture baseline. Reuses the schedule and batch
/// contract of the main trainer with two parameter groups (encoder, decoder);
/// the tokenizer learning rate field is unused.
template <typename T>
class MixtureTrainer {
public:
  MixtureTrainer(MixtureModel<T>& model, std::vector<VideoClip> clips,
                 TrainConfig cfg, std::string log_path = "",
                 std::string checkpoint_dir = "")
      : model_(model),
        clips_(std::move(clips)),
        cfg_(cfg),
        log_path_(std::move(log_path)),
        ckpt_dir_(std::move(checkpoint_dir)),
        opt_({{model.encoder().params().all(), cfg.lr_encoder},
              {model.decoder().params().all(), cfg.lr_decoder}}) {
    cfg_.validate();
    check(!clips_.empty(), "mixture trainer: empty dataset");
    for (const VideoClip& c : clips_)
      check(static_cast<int>(c.frames.size()) >= cfg_.episode_length,
            "mixture trainer: clip " + c.id + " is shorter than episode_length");
  }

  double run_step(std::int64_t step) {
    Rng rng(Rng::mix(cfg_.seed, static_cast<std::uint64_t>(step)));
    opt_.zero_grad();
    double total = 0.0;
    const T inv_batch = T(1) / static_cast<T>(cfg_.batch_size);
    for (int b = 0; b < cfg_.batch_size; ++b) {
      const int ci = static_cast<int>(
          rng.uniform_int(static_cast<std::uint64_t>(clips_.size())));
      const int span =
          static_cast<int>(clips_[ci].frames.size()) - cfg_.episode_length;
      const int start =
          span > 0 ? static_cast<int>(rng.uniform_int(
                         static_cast<std::uint64_t>(span + 1)))
                   : 0;
      std::vector<Tensor<T>> frames;
      for (int f = 0; f < cfg_.episode_length; ++f)
        frames.push_back(convert_frame(clips_[ci].frames[start + f]));
      Tape<T> t;
      auto loss = model_.total_loss(t, frames, &rng);
      t.backward(t.scale(loss, inv_batch));
      total += static_cast<double>(t.value(loss)[0]);
    }
    total /= cfg_.batch_size;
    opt_.clip_global_norm(cfg_.grad_clip);
    const std::int64_t warm = cfg_.warmup_effective();
    const double half = cfg_.halflife_effective();
    opt_.step({lr_schedule(step, cfg_.lr_encoder, warm, half),
               lr_schedule(step, cfg_.lr_decoder, warm, half)});
    if (!std::isfinite(total) || total > cfg_.divergence_threshold)
      throw std::runtime_error("mixture training diverged at step " +
                               std::to_string(step) +
                               ": total=" + std::to_string(total));
    return total;
  }

  void run() {
    std::ofstream log;
    if (!log_path_.empty()) {
      log.open(log_path_, std::ios::trunc);
      if (!log)
        throw std::runtime_error("mixture trainer: cannot open log " +
                                 log_path_);
      log << "step,total\n";
    }
    if (!ckpt_dir_.empty()) std::filesystem::create_directories(ckpt_dir_);
    for (std::int64_t step = 0; step < cfg_.steps; ++step) {
      const double total = run_step(step);
      history_.push_back(total);
      if (log && (step % cfg_.log_every == 0 || step + 1 == cfg_.steps)) {
        log << step << ',' << std::setprecision(12) << total << '\n';
        log.flush();
      }
    }
    if (!ckpt_dir_.empty()) save(ckpt_dir_ + "/final.ckpt", cfg_.steps);
  }

  void save(const std::string& path, std::int64_t step) {
    nlohmann::json meta = meta_extra;
    meta["step"] = step;
    meta["seed"] = cfg_.seed;
    meta["kind"] = "mixture";
    save_checkpoint<T>(path, model_.all_params(), meta);
  }

  /// Extra fields merged into checkpoint metadata.
  nlohmann::json meta_extra = nlohmann::json::object();

  const std::vector<double>& history() const { return history_; }

private:
  static Tensor<T> convert_frame(const Tensor<float>& f) {
    if constexpr (std::is_same_v<T, float>) {
      return f;
    } else {
      Tensor<T> out(f.shape());
      for (std::int64_t i = 0; i < f.numel(); ++i)
        out[i] = static_cast<T>(f[i]);
      return out;
    }
  }

  MixtureModel<T>& model_;
  std::vector<VideoClip> clips_;
  TrainConfig cfg_;
  std::string log_path_, ckpt_dir_;
  Adam<T> opt_;
  std::vector<double> history_;
};

/// Training recipe for the frozen-encoder probe.
struct ProbeTrainConfig {
  std::int64_t steps = 1500;
  int batch_size = 4;
  int episode_length = 3;
  double lr = 3e-4;
  double grad_clip = 1.0;
  std::uint64_t seed = 0;
  std::int64_t log_every = 50;
  double divergence_threshold = 1e6;

  void validate() const {
    check(steps >= 1 && batch_size >= 1 && episode_length >= 1,
          "probe config: steps, batch_size, episode_length must be >= 1");
    check(lr > 0.0 && grad_clip > 0.0, "probe config: lr and grad_clip > 0");
    check(log_every >= 1, "probe config: log_every must be >= 1");
  }
};

/// Trains a mixture probe on slots from a frozen model. Slots enter the
/// probe's tape as plain value tensors, so no gradient can reach the encoder;
/// only probe parameters are optimized.
template <typename T>
std::vector<double> train_diagnostic(SteveModel<T>& frozen,
                                     MixtureDecoder<T>& probe,
                                     const std::vector<VideoClip>& clips,
                                     const ProbeTrainConfig& cfg,
                                     const std::string& log_path = "") {
  cfg.validate();
  check(!clips.empty(), "probe training: empty dataset");
  check(probe.config().image_size == frozen.config().image_size,
        "probe training: image size mismatch");
  check(probe.config().slot_dim == frozen.config().encoder.slot_dim,
        "probe training: slot width mismatch");
  for (const VideoClip& c : clips)
    check(static_cast<int>(c.frames.size()) >= cfg.episode_length,
          "probe training: clip " + c.id + " is shorter than episode_length");

  std::ofstream log;
  if (!log_path.empty()) {
    log.open(log_path, std::ios::trunc);
    if (!log)
      throw std::runtime_error("probe training: cannot open log " + log_path);
    log << "step,total\n";
  }

  Adam<T> opt({{probe.params().all(), cfg.lr}});
  const int side = frozen.config().image_size;
  std::vector<double> history;
  for (std::int64_t step = 0; step < cfg.steps; ++step) {
    Rng rng(Rng::mix(cfg.seed, static_cast<std::uint64_t>(step)));
    opt.zero_grad();
    double total = 0.0;
    const T inv_batch = T(1) / static_cast<T>(cfg.batch_size);
    for (int b = 0; b < cfg.batch_size; ++b) {
      const int ci = static_cast<int>(
          rng.uniform_int(static_cast<std::uint64_t>(clips.size())));
      const int span =
          static_cast<int>(clips[ci].frames.size()) - cfg.episode_length;
      const int start =
          span > 0 ? static_cast<int>(rng.uniform_int(
                         static_cast<std::uint64_t>(span + 1)))
                   : 0;
      std::vector<Tensor<T>> frames;
      for (int f = 0; f < cfg.episode_length; ++f)
        frames.push_back(eval_frames_as<T>({clips[ci].frames[start + f]})[0]);
      Tensor<T> eps = frozen.encoder().slot_noise(rng);
      auto enc = frozen.eval_encode(frames, eps);
      Tape<T> t;
      std::vector<typename Tape<T>::Var> pred, target;
      for (std::size_t f = 0; f < frames.size(); ++f) {
        pred.push_back(probe.decode(t, t.input(enc.pre_slots[f])).composite);
        target.push_back(t.reshape(t.input(frames[f]), {3, side * side}));
      }
      auto loss = MixtureDecoder<T>::mixture_loss(t, pred, target);
      t.backward(t.scale(loss, inv_batch));
      total += static_cast<double>(t.value(loss)[0]);
    }
    total /= cfg.batch_size;
    opt.clip_global_norm(cfg.grad_clip);
    opt.step({cfg.lr});
    if (!std::isfinite(total) || total > cfg.divergence_threshold)
      throw std::runtime_error("probe training diverged at step " +
                               std::to_string(step));
    history.push_back(total);
    if (log && (step % cfg.log_every == 0 || step + 1 == cfg.steps)) {
      log << step << ',' << std::setprecision(12) << total << '\n';
      log.flush();
    }
  }
  return history;
}

/// FG-ARI of a clip under decoding-mask segmentation: slots from the frozen
/// model, labels from the probe's pixelwise mask argmax.
template <typename T>
ClipScores evaluate_clip_decoding(SteveModel<T>& frozen,
                                  const MixtureDecoder<T>& probe,
                                  const VideoClip& clip,
                                  const Tensor<T>& slot_eps) {
  const auto frames = eval_frames_as<T>(clip.frames);
  const auto enc = frozen.eval_encode(frames, slot_eps);
  ClipScores s;
  s.clip_id = clip.id;
  std::vector<Tensor<int>> pred;
  for (std::size_t f = 0; f < frames.size(); ++f) {
    auto rendered = probe.render(enc.pre_slots[f]);
    pred.push_back(MixtureDecoder<T>::mask_labels(rendered.masks));
    s.image_fgari.push_back(fg_ari_image(clip.labels[f], pred.back()));
  }
  s.video_fgari = fg_ari_video(clip.labels, pred);
  return s;
}

template <typename T>
AriReport evaluate_dataset_decoding(SteveModel<T>& frozen,
                                    const MixtureDecoder<T>& probe,
                                    const std::vector<VideoClip>& clips,
                                    const EvalConfig& cfg) {
  cfg.validate();
  const int slots = frozen.config().encoder.num_slots + cfg.extra_slots;
  AriReport report;
  for (std::size_t i = 0; i < clips.size(); ++i) {
    Tensor<T> eps = eval_slot_noise(frozen, cfg.seed, i, slots);
    report.clips.push_back(
        evaluate_clip_decoding(frozen, probe, clips[i], eps));
  }
  report.finalize();
  return report;
}

/// FG-ARI of the end-to-end baseline under its own decoding masks.
template <typename T>
AriReport evaluate_mixture_model(MixtureModel<T>& model,
                                 const std::vector<VideoClip>& clips,
                                 const EvalConfig& cfg) {
  cfg.validate();
  AriReport report;
  for (std::size_t i = 0; i < clips.size(); ++i) {
    Rng rng(Rng::mix(cfg.seed, i));
    Tensor<T> eps = model.encoder().slot_noise(
        rng, model.config().encoder.num_slots + cfg.extra_slots);
    const auto frames = eval_frames_as<T>(clips[i].frames);
    const auto enc = model.eval_encode(frames, eps);
    ClipScores s;
    s.clip_id = clips[i].id;
    std::vector<Tensor<int>> pred;
    for (std::size_t f = 0; f < frames.size(); ++f) {
      auto rendered = model.decoder().render(enc.pre_slots[f]);
      pred.push_back(MixtureDecoder<T>::mask_labels(rendered.masks));
      s.image_fgari.push_back(fg_ari_image(clips[i].labels[f], pred.back()));
    }
    s.video_fgari = fg_ari_video(clips[i].labels, pred);
    report.clips.push_back(std::move(s));
  }
  report.finalize();
  return report;
}

}  // namespace steve

#endif  // STEVE_MIXTURE_HPP
