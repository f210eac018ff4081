// SPDX-License-Identifier: Apache-2.0
//
// Evaluation protocols on top of the metrics primitives: whole-dataset FG-ARI
// scoring from attention masks, the past-frame sweep, the video-length sweep,
// the extra-slot out-of-distribution evaluation, and a random-assignment
// baseline. All protocol functions are pure given (model, clips, config) and
// draw per-clip slot noise from a seed so results are reproducible.

#ifndef STEVE_EVAL_HPP
#define STEVE_EVAL_HPP

#include "steve/metrics.hpp"
#include "steve/model.hpp"
#include "steve/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

namespace steve {

struct EvalConfig {
  int num_clips = 50;
  std::vector<int> past_k = {0, 1, 2, 3, 4, 5, 6};
  std::vector<int> lengths = {3, 6, 12, 24};
  int extra_slots = 0;
  std::uint64_t seed = 42;
  bool bilinear = true;

  void validate() const {
    check(num_clips >= 1, "eval config: num_clips must be >= 1");
    for (int k : past_k) check(k >= 0, "eval config: past_k entries must be >= 0");
    for (int l : lengths)
      check(l >= 1, "eval config: lengths entries must be >= 1");
    check(extra_slots >= 0, "eval config: extra_slots must be >= 0");
  }
};

struct ClipScores {
  std::string clip_id;
  /// Per-frame Image FG-ARI; nullopt marks a frame with no foreground.
  std::vector<std::optional<double>> image_fgari;
  std::optional<double> video_fgari;

  std::optional<double> image_mean() const {
    double sum = 0.0;
    int n = 0;
    for (const auto& v : image_fgari)
      if (v) {
        sum += *v;
        ++n;
      }
    if (n == 0) return std::nullopt;
    return sum / n;
  }
};

struct AriReport {
  std::vector<ClipScores> clips;
  /// Means over clips of the per-clip scores; NaN when nothing was scorable.
  double mean_image = std::numeric_limits<double>::quiet_NaN();
  double mean_video = std::numeric_limits<double>::quiet_NaN();

  void finalize() {
    double si = 0.0, sv = 0.0;
    int ni = 0, nv = 0;
    for (const ClipScores& c : clips) {
      if (auto m = c.image_mean()) {
        si += *m;
        ++ni;
      }
      if (c.video_fgari) {
        sv += *c.video_fgari;
        ++nv;
      }
    }
    mean_image = ni ? si / ni : std::numeric_limits<double>::quiet_NaN();
    mean_video = nv ? sv / nv : std::numeric_limits<double>::quiet_NaN();
  }
};

/// One row of the past-frame sweep: scores of the final frame after k frames
/// of context, per requested k, averaged over clips. Frames whose foreground
/// is empty are skipped in the averages.
struct PastFrameSweep {
  std::vector<int> k_values;
  std::vector<std::vector<std::optional<double>>> per_clip;  // [clip][k]
  std::vector<std::string> clip_ids;
  std::vector<double> mean_image;  // per k, NaN when nothing scorable
};

struct LengthSweep {
  std::vector<int> lengths;
  std::vector<std::vector<std::optional<double>>> per_clip;  // [clip][length]
  std::vector<std::string> clip_ids;
  std::vector<double> mean_video;  // per length, NaN when nothing scorable
};

template <typename T>
Tensor<float> eval_to_float(const Tensor<T>& x) {
  if constexpr (std::is_same_v<T, float>) return x;
  Tensor<float> out(x.shape());
  for (std::int64_t i = 0; i < x.numel(); ++i)
    out[i] = static_cast<float>(x[i]);
  return out;
}

template <typename T>
std::vector<Tensor<T>> eval_frames_as(const std::vector<Tensor<float>>& frames) {
  if constexpr (std::is_same_v<T, float>) return frames;
  std::vector<Tensor<T>> out;
  out.reserve(frames.size());
  for (const Tensor<float>& f : frames) {
    Tensor<T> g(f.shape());
    for (std::int64_t i = 0; i < f.numel(); ++i)
      g[i] = static_cast<T>(f[i]);
    out.push_back(std::move(g));
  }
  return out;
}

/// Full-resolution predicted labels for every frame of a clip, from the
/// encoder's final-iteration attention maps.
template <typename T>
std::vector<Tensor<int>> segment_clip(SteveModel<T>& model,
                                      const std::vector<Tensor<float>>& frames,
                                      const Tensor<T>& slot_eps,
                                      bool bilinear = true) {
  const auto mframes = eval_frames_as<T>(frames);
  const auto enc = model.eval_encode(mframes, slot_eps);
  const int side = model.config().image_size;
  std::vector<Tensor<int>> out;
  out.reserve(frames.size());
  for (const Tensor<T>& att : enc.attention)
    out.push_back(attention_to_segmentation(eval_to_float(att), enc.h_enc,
                                            enc.w_enc, side, side, bilinear));
  return out;
}

/// Slot-noise draw for clip `index` under `seed`; `num_slots` covers the
/// extra-slot evaluation.
template <typename T>
Tensor<T> eval_slot_noise(SteveModel<T>& model, std::uint64_t seed,
                          std::uint64_t index, int num_slots) {
  Rng rng(Rng::mix(seed, index));
  return model.encoder().slot_noise(rng, num_slots);
}

template <typename T>
ClipScores evaluate_clip(SteveModel<T>& model, const VideoClip& clip,
                         const Tensor<T>& slot_eps, bool bilinear = true) {
  ClipScores s;
  s.clip_id = clip.id;
  const auto pred = segment_clip(model, clip.frames, slot_eps, bilinear);
  for (std::size_t f = 0; f < pred.size(); ++f)
    s.image_fgari.push_back(fg_ari_image(clip.labels[f], pred[f]));
  s.video_fgari = fg_ari_video(clip.labels, pred);
  return s;
}

/// Standard evaluation: every clip scored with N + extra_slots slots.
template <typename T>
AriReport evaluate_dataset(SteveModel<T>& model,
                           const std::vector<VideoClip>& clips,
                           const EvalConfig& cfg) {
  cfg.validate();
  const int slots = model.config().encoder.num_slots + cfg.extra_slots;
  AriReport report;
  for (std::size_t i = 0; i < clips.size(); ++i) {
    Tensor<T> eps = eval_slot_noise(model, cfg.seed, i, slots);
    report.clips.push_back(
        evaluate_clip(model, clips[i], eps, cfg.bilinear));
  }
  report.finalize();
  return report;
}

/// Out-of-distribution slot-count evaluation: the learned initializer is
/// sampled for N + extra_objects slots, everything else unchanged.
template <typename T>
AriReport ood_eval(SteveModel<T>& model, const std::vector<VideoClip>& clips,
                   int extra_objects, const EvalConfig& base) {
  check(extra_objects >= 0, "ood_eval: extra_objects must be >= 0");
  EvalConfig cfg = base;
  cfg.extra_slots = extra_objects;
  return evaluate_dataset(model, clips, cfg);
}

/// Uniform random slot assignment scored with the same protocol; the floor
/// any learned segmentation has to clear.
inline AriReport random_baseline(const std::vector<VideoClip>& clips,
                                 int num_labels, std::uint64_t seed) {
  check(num_labels >= 1, "random_baseline: num_labels must be >= 1");
  AriReport report;
  for (std::size_t i = 0; i < clips.size(); ++i) {
    Rng rng(Rng::mix(seed, i));
    ClipScores s;
    s.clip_id = clips[i].id;
    std::vector<Tensor<int>> pred;
    for (const Tensor<std::uint8_t>& label : clips[i].labels) {
      Tensor<int> r(label.shape());
      for (std::int64_t p = 0; p < r.numel(); ++p)
        r[p] = static_cast<int>(
            rng.uniform_int(static_cast<std::uint64_t>(num_labels)));
      pred.push_back(std::move(r));
    }
    for (std::size_t f = 0; f < pred.size(); ++f)
      s.image_fgari.push_back(fg_ari_image(clips[i].labels[f], pred[f]));
    s.video_fgari = fg_ari_video(clips[i].labels, pred);
    report.clips.push_back(std::move(s));
  }
  report.finalize();
  return report;
}

/// Image FG-ARI of a clip's final frame after k frames of context, for each
/// requested k. k = 0 scores fresh slots directly on the final frame; slots
/// are initialized from the same noise draw for every k.
template <typename T>
std::vector<std::optional<double>> past_frame_scores(
    SteveModel<T>& model, const VideoClip& clip, const std::vector<int>& ks,
    const Tensor<T>& slot_eps, bool bilinear = true) {
  const int total = static_cast<int>(clip.frames.size());
  int kmax = 0;
  for (int k : ks) kmax = std::max(kmax, k);
  check(total >= kmax + 1,
        "past_frame_scores: clip shorter than max(k) + 1 frames");
  std::vector<std::optional<double>> out;
  for (int k : ks) {
    std::vector<Tensor<float>> window(clip.frames.end() - (k + 1),
                                      clip.frames.end());
    const auto pred = segment_clip(model, window, slot_eps, bilinear);
    out.push_back(fg_ari_image(clip.labels.back(), pred.back()));
  }
  return out;
}

template <typename T>
PastFrameSweep past_frame_sweep(SteveModel<T>& model,
                                const std::vector<VideoClip>& clips,
                                const EvalConfig& cfg) {
  cfg.validate();
  PastFrameSweep sweep;
  sweep.k_values = cfg.past_k;
  const int slots = model.config().encoder.num_slots + cfg.extra_slots;
  for (std::size_t i = 0; i < clips.size(); ++i) {
    Tensor<T> eps = eval_slot_noise(model, cfg.seed, i, slots);
    sweep.per_clip.push_back(
        past_frame_scores(model, clips[i], cfg.past_k, eps, cfg.bilinear));
    sweep.clip_ids.push_back(clips[i].id);
  }
  for (std::size_t j = 0; j < sweep.k_values.size(); ++j) {
    double sum = 0.0;
    int n = 0;
    for (const auto& row : sweep.per_clip)
      if (row[j]) {
        sum += *row[j];
        ++n;
      }
    sweep.mean_image.push_back(
        n ? sum / n : std::numeric_limits<double>::quiet_NaN());
  }
  return sweep;
}

/// Video FG-ARI of each clip's first `length` frames, per requested length.
template <typename T>
LengthSweep video_length_sweep(SteveModel<T>& model,
                               const std::vector<VideoClip>& clips,
                               const EvalConfig& cfg) {
  cfg.validate();
  LengthSweep sweep;
  sweep.lengths = cfg.lengths;
  int lmax = 1;
  for (int l : cfg.lengths) lmax = std::max(lmax, l);
  const int slots = model.config().encoder.num_slots + cfg.extra_slots;
  for (std::size_t i = 0; i < clips.size(); ++i) {
    check(static_cast<int>(clips[i].frames.size()) >= lmax,
          "video_length_sweep: clip " + clips[i].id +
              " shorter than max length");
    Tensor<T> eps = eval_slot_noise(model, cfg.seed, i, slots);
    std::vector<std::optional<double>> row;
    for (int l : cfg.lengths) {
      std::vector<Tensor<float>> frames(clips[i].frames.begin(),
                                        clips[i].frames.begin() + l);
      std::vector<Tensor<std::uint8_t>> labels(clips[i].labels.begin(),
                                               clips[i].labels.begin() + l);
      const auto pred = segment_clip(model, frames, eps, cfg.bilinear);
      row.push_back(fg_ari_video(labels, pred));
    }
    sweep.per_clip.push_back(std::move(row));
    sweep.clip_ids.push_back(clips[i].id);
  }
  for (std::size_t j = 0; j < sweep.lengths.size(); ++j) {
    double sum = 0.0;
    int n = 0;
    for (const auto& row : sweep.per_clip)
      if (row[j]) {
        sum += *row[j];
        ++n;
      }
    sweep.mean_video.push_back(
        n ? sum / n : std::numeric_limits<double>::quiet_NaN());
  }
  return sweep;
}

/// Report serialization: {clip_id: {image_fgari: [...], video_fgari: x}} with
/// null for skipped entries.
void write_ari_json(const std::string& path, const AriReport& report);

/// Per-clip rows plus a MEAN row: clip_id,image_fgari,video_fgari.
void write_ari_csv(const std::string& path, const AriReport& report);

void write_past_frame_json(const std::string& path, const PastFrameSweep& s);
void write_past_frame_csv(const std::string& path, const PastFrameSweep& s);
void write_length_json(const std::string& path, const LengthSweep& s);
void write_length_csv(const std::string& path, const LengthSweep& s);

}  // namespace steve

#endif  // STEVE_EVAL_HPP
