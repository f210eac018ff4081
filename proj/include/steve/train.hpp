// SPDX-License-Identifier: Apache-2.0
//
// Training loop: deterministic batch windows drawn from (seed, step), a
// per-clip loss pass with gradient accumulation, joint global-norm
// clipping, and three Adam groups (tokenizer, slot encoder, token
// transformer) on warmup-then-exponential-decay schedules. Emits a scalar
// CSV log and checkpoint files.

#ifndef STEVE_TRAIN_HPP
#define STEVE_TRAIN_HPP

#include "steve/checkpoint.hpp"
#include "steve/model.hpp"
#include "steve/optim.hpp"
#include "steve/schedules.hpp"
#include "steve/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <string>
#include <vector>

namespace steve {

struct TrainConfig {
  int batch_size = 24;
  int episode_length = 3;
  std::int64_t steps = 5000;
  double lr_dvae = 3e-4;
  double lr_encoder = 1e-4;
  double lr_decoder = 3e-4;
  std::int64_t warmup_steps = 30000;
  double decay_halflife = 250000.0;
  double grad_clip = 1.0;
  std::uint64_t seed = 0;
  std::int64_t log_every = 50;
  std::int64_t checkpoint_every = 0;  // 0 keeps only the final checkpoint
  double divergence_threshold = 1e6;

  void validate() const {
    check(batch_size >= 1, "train config: batch_size must be >= 1");
    check(episode_length >= 1, "train config: episode_length must be >= 1");
    check(steps >= 1, "train config: steps must be >= 1");
    check(lr_dvae > 0.0 && lr_encoder > 0.0 && lr_decoder > 0.0,
          "train config: learning rates must be > 0");
    check(warmup_steps >= 1, "train config: warmup_steps must be >= 1");
    check(decay_halflife > 0.0, "train config: decay_halflife must be > 0");
    check(grad_clip > 0.0, "train config: grad_clip must be > 0");
    check(log_every >= 1, "train config: log_every must be >= 1");
  }

  /// Schedules compress proportionally when the run is shorter than the
  /// reference 200000-step recipe.
  double schedule_scale() const {
    return steps < 200000 ? static_cast<double>(steps) / 200000.0 : 1.0;
  }
  std::int64_t warmup_effective() const {
    return std::max<std::int64_t>(
        1, std::llround(static_cast<double>(warmup_steps) * schedule_scale()));
  }
  double halflife_effective() const {
    return std::max(1.0, decay_halflife * schedule_scale());
  }

  /// Apply the same compression to the tokenizer's temperature anneal.
  void scale_model_schedules(ModelConfig& m) const {
    m.dvae.tau_decay_steps = static_cast<int>(std::max<std::int64_t>(
        1, std::llround(m.dvae.tau_decay_steps * schedule_scale())));
  }
};

template <typename T>
class Trainer {
public:
  struct StepStats {
    std::int64_t step = 0;
    double total = 0.0, ce = 0.0, dvae = 0.0;
    double tau = 0.0, lr_encoder = 0.0, grad_norm = 0.0;
  };

  Trainer(SteveModel<T>& model, std::vector<VideoClip> clips, TrainConfig cfg,
          std::string log_path = "", std::string checkpoint_dir = "")
      : model_(model),
        clips_(std::move(clips)),
        cfg_(cfg),
        log_path_(std::move(log_path)),
        ckpt_dir_(std::move(checkpoint_dir)),
        opt_({{model.dvae().params().all(), cfg.lr_dvae},
              {model.encoder().params().all(), cfg.lr_encoder},
              {model.decoder().params().all(), cfg.lr_decoder}}) {
    cfg_.validate();
    check(!clips_.empty(), "trainer: empty dataset");
    for (const VideoClip& c : clips_)
      check(static_cast<int>(c.frames.size()) >= cfg_.episode_length,
            "trainer: clip " + c.id + " is shorter than episode_length");
  }

  const TrainConfig& config() const { return cfg_; }
  const std::vector<StepStats>& history() const { return history_; }

  /// The batch at a step is a pure function of (seed, step): window choices
  /// and all per-clip noise come from one mixed stream.
  StepStats run_step(std::int64_t step) {
    Rng rng(Rng::mix(cfg_.seed, static_cast<std::uint64_t>(step)));
    struct Window {
      int clip;
      int start;
    };
    std::vector<Window> windows;
    windows.reserve(cfg_.batch_size);
    for (int b = 0; b < cfg_.batch_size; ++b) {
      const int ci = static_cast<int>(
          rng.uniform_int(static_cast<std::uint64_t>(clips_.size())));
      const int span =
          static_cast<int>(clips_[ci].frames.size()) - cfg_.episode_length;
      const int start =
          span > 0
              ? static_cast<int>(rng.uniform_int(
                    static_cast<std::uint64_t>(span + 1)))
              : 0;
      windows.push_back({ci, start});
    }

    opt_.zero_grad();
    StepStats stats;
    stats.step = step;
    const T inv_batch = T(1) / static_cast<T>(cfg_.batch_size);
    for (const Window& w : windows) {
      std::vector<Tensor<T>> frames;
      frames.reserve(cfg_.episode_length);
      for (int f = 0; f < cfg_.episode_length; ++f)
        frames.push_back(convert_frame(clips_[w.clip].frames[w.start + f]));
      Tape<T> t;
      auto parts = model_.total_loss(t, frames, step, &rng, &rng);
      t.backward(t.scale(parts.total, inv_batch));
      stats.total += static_cast<double>(t.value(parts.total)[0]);
      stats.ce += static_cast<double>(t.value(parts.ce)[0]);
      stats.dvae += static_cast<double>(t.value(parts.dvae)[0]);
      stats.tau = parts.tau;
    }
    stats.total /= cfg_.batch_size;
    stats.ce /= cfg_.batch_size;
    stats.dvae /= cfg_.batch_size;

    stats.grad_norm = opt_.clip_global_norm(cfg_.grad_clip);
    const std::int64_t warm = cfg_.warmup_effective();
    const double half = cfg_.halflife_effective();
    stats.lr_encoder = lr_schedule(step, cfg_.lr_encoder, warm, half);
    opt_.step({lr_schedule(step, cfg_.lr_dvae, warm, half), stats.lr_encoder,
               lr_schedule(step, cfg_.lr_decoder, warm, half)});

    if (!std::isfinite(stats.total) || stats.total > cfg_.divergence_threshold)
      throw std::runtime_error(
          "training diverged at step " + std::to_string(step) + ": total=" +
          std::to_string(stats.total) + " ce=" + std::to_string(stats.ce) +
          " reconstruction=" + std::to_string(stats.dvae));
    return stats;
  }

  /// Full loop: steps 0..steps-1 with periodic CSV rows (first and last
  /// always included) and checkpointing.
  void run() {
    std::ofstream log;
    if (!log_path_.empty()) {
      log.open(log_path_, std::ios::trunc);
      if (!log)
        throw std::runtime_error("trainer: cannot open log " + log_path_);
      log << "step,total,ce,dvae,tau,lr_encoder\n";
    }
    if (!ckpt_dir_.empty()) std::filesystem::create_directories(ckpt_dir_);

    for (std::int64_t step = 0; step < cfg_.steps; ++step) {
      StepStats s = run_step(step);
      history_.push_back(s);
      const bool last = step + 1 == cfg_.steps;
      if (log && (step % cfg_.log_every == 0 || last)) {
        log << s.step << ',' << std::setprecision(12) << s.total << ',' << s.ce
            << ',' << s.dvae << ',' << s.tau << ',' << s.lr_encoder << '\n';
        log.flush();
      }
      if (!ckpt_dir_.empty() && cfg_.checkpoint_every > 0 &&
          (step + 1) % cfg_.checkpoint_every == 0 && !last)
        save(ckpt_dir_ + "/step_" + std::to_string(step + 1) + ".ckpt",
             step + 1);
    }
    if (!ckpt_dir_.empty()) save(ckpt_dir_ + "/final.ckpt", cfg_.steps);
  }

  void save(const std::string& path, std::int64_t step) {
    nlohmann::json meta = meta_extra;
    meta["step"] = step;
    meta["seed"] = cfg_.seed;
    save_checkpoint<T>(path, model_.all_params(), meta);
  }

  /// Extra fields merged into checkpoint metadata (the CLI stores the full
  /// configuration echo here).
  nlohmann::json meta_extra = nlohmann::json::object();

private:
  Tensor<T> convert_frame(const Tensor<float>& f) const {
    if constexpr (sizeof(T) == sizeof(float)) {
      return f;
    } else {
      Tensor<T> out(f.shape());
      for (std::int64_t i = 0; i < f.numel(); ++i)
        out[i] = static_cast<T>(f[i]);
      return out;
    }
  }

  SteveModel<T>& model_;
  std::vector<VideoClip> clips_;
  TrainConfig cfg_;
  std::string log_path_;
  std::string ckpt_dir_;
  Adam<T> opt_;
  std::vector<StepStats> history_;
};

}  // namespace steve

#endif  // STEVE_TRAIN_HPP
