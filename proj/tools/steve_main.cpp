// SPDX-License-Identifier: Apache-2.0
//
// Command-line entry point: dataset generation, training, evaluation,
// diagnostic probing, and visualization. Every command validates its full
// configuration before any work, echoes the configuration into each artifact
// it produces, refuses to overwrite outputs without --force, and removes
// partial outputs when aborting. Exit codes: 0 success, 2 configuration
// error, 3 runtime failure.

#include "steve/checkpoint.hpp"
#include "steve/config.hpp"
#include "steve/eval.hpp"
#include "steve/metrics.hpp"
#include "steve/mixture.hpp"
#include "steve/model.hpp"
#include "steve/png_io.hpp"
#include "steve/synthgen.hpp"
#include "steve/train.hpp"
#include "steve/viz.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cerrno>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace steve;
using nlohmann::json;

namespace {

/// Removes the claimed output directory unless the command committed it.
struct OutputGuard {
  fs::path path;
  bool armed = false;

  void arm(const fs::path& p) {
    path = p;
    armed = true;
  }
  void commit() { armed = false; }
  ~OutputGuard() {
    if (armed) {
      std::error_code ec;
      fs::remove_all(path, ec);
    }
  }
};

void claim_output(const fs::path& out, bool force, OutputGuard& guard) {
  if (fs::exists(out)) {
    if (!force)
      fail("output already exists: " + out.string() +
           " (pass --force to overwrite)");
    fs::remove_all(out);
  }
  fs::create_directories(out);
  guard.arm(out);
}

std::optional<std::uint64_t> env_seed_override() {
  const char* s = std::getenv("STEVE_SEED");
  if (!s || !*s) return std::nullopt;
  errno = 0;
  char* end = nullptr;
  const unsigned long long v = std::strtoull(s, &end, 10);
  if (errno != 0 || end == s || *end != '\0' || s[0] == '-')
    fail("STEVE_SEED must be a nonnegative integer, got '" + std::string(s) +
         "'");
  return static_cast<std::uint64_t>(v);
}

void write_json_file(const fs::path& path, const json& j) {
  std::ofstream out(path);
  if (!out)
    throw std::runtime_error("cannot open for write: " + path.string());
  out << j.dump(2) << '\n';
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

/// Load the run configuration for a checkpoint-driven command: --config wins
/// when given, otherwise the checkpoint's embedded echo is used.
RunConfig config_for_checkpoint(const std::string& config_path,
                                const std::string& ckpt_path) {
  if (!config_path.empty()) return load_run_config(config_path);
  const json meta = read_checkpoint_meta(ckpt_path);
  if (!meta.contains("config"))
    fail("checkpoint " + ckpt_path +
         " carries no embedded configuration; pass --config");
  return parse_run_config(meta.at("config"));
}

void check_dataset_geometry(const std::vector<VideoClip>& clips,
                            const RunConfig& rc, const std::string& data) {
  check(!clips.empty(), "dataset " + data + " holds no clips");
  const Tensor<float>& f0 = clips.front().frames.front();
  check(f0.dim(1) == rc.data.image_size && f0.dim(2) == rc.data.image_size,
        "dataset " + data + " frame size " + std::to_string(f0.dim(1)) +
            " does not match configured image_size " +
            std::to_string(rc.data.image_size));
}

int min_clip_frames(const std::vector<VideoClip>& clips) {
  int m = std::numeric_limits<int>::max();
  for (const VideoClip& c : clips)
    m = std::min(m, static_cast<int>(c.frames.size()));
  return m;
}

std::uint64_t split_salt(const std::string& split) {
  if (split == "train") return 0;
  if (split == "iid") return 1;
  if (split == "ood-count") return 2;
  if (split == "ood-texture") return 3;
  fail("unknown split '" + split + "'");
  return 0;
}

int cmd_gen_data(const std::string& config_path, const std::string& out,
                 const std::string& split, int num_clips, bool force) {
  RunConfig rc = load_run_config(config_path);
  if (auto s = env_seed_override()) rc.data.seed = *s;
  check(num_clips >= 1, "--num-clips must be >= 1");

  SceneConfig scene = rc.data;
  if (split == "ood-count") {
    scene.k_min = rc.data.k_max + 1;
    scene.k_max = rc.data.k_max + 2;
  } else if (split == "ood-texture") {
    scene.ood_textures = true;
  }
  scene.validate();

  OutputGuard guard;
  claim_output(out, force, guard);

  const std::uint64_t salt = split_salt(split);
  std::vector<VideoClip> clips;
  clips.reserve(static_cast<std::size_t>(num_clips));
  for (int i = 0; i < num_clips; ++i) {
    SceneConfig one = scene;
    one.seed = Rng::mix(Rng::mix(rc.data.seed, salt),
                        static_cast<std::uint64_t>(i));
    clips.push_back(generate_clip(one));
    char id[32];
    std::snprintf(id, sizeof(id), "%s_%05d", split.c_str(), i);
    clips.back().id = id;
  }
  write_dataset(clips, out, scene);

  RunConfig used = rc;
  used.data = scene;
  write_json_file(fs::path(out) / "config.json",
                  {{"config", run_config_json(used)},
                   {"split", split},
                   {"num_clips", num_clips}});
  guard.commit();
  std::printf("wrote %d %s clips to %s\n", num_clips, split.c_str(),
              out.c_str());
  return 0;
}

int cmd_train(const std::string& config_path, const std::string& data,
              const std::string& out, bool force) {
  RunConfig rc = load_run_config(config_path);
  if (auto s = env_seed_override()) rc.train.seed = *s;

  std::vector<VideoClip> clips = read_dataset(data);
  check_dataset_geometry(clips, rc, data);

  OutputGuard guard;
  claim_output(out, force, guard);

  const json echo = run_config_json(rc);
  Rng rng(rc.train.seed);
  SteveModel<float> model(rc.model, rng);
  Trainer<float> trainer(model, std::move(clips), rc.train,
                         (fs::path(out) / "train_log.csv").string(), out);
  trainer.meta_extra = {{"config", echo}};
  trainer.run();

  write_json_file(fs::path(out) / "config.json",
                  {{"config", echo}, {"data", data}});
  guard.commit();
  std::printf("trained %lld steps; final checkpoint at %s/final.ckpt\n",
              static_cast<long long>(rc.train.steps), out.c_str());
  return 0;
}

int cmd_eval(const std::string& ckpt, const std::string& data,
             const std::string& report, const std::string& config_path,
             bool force) {
  RunConfig rc = config_for_checkpoint(config_path, ckpt);
  if (auto s = env_seed_override()) rc.eval.seed = *s;

  std::vector<VideoClip> clips = read_dataset(data);
  check_dataset_geometry(clips, rc, data);

  Rng rng(0);
  SteveModel<float> model(rc.model, rng);
  load_checkpoint(ckpt, model.all_params());

  OutputGuard guard;
  claim_output(report, force, guard);
  const fs::path dir(report);

  EvalConfig standard = rc.eval;
  standard.extra_slots = 0;
  AriReport ari = evaluate_dataset(model, clips, standard);
  write_ari_json((dir / "ari.json").string(), ari);
  write_ari_csv((dir / "ari.csv").string(), ari);

  AriReport rnd = random_baseline(clips, rc.model.encoder.num_slots,
                                  rc.eval.seed);
  write_ari_json((dir / "random_ari.json").string(), rnd);
  write_ari_csv((dir / "random_ari.csv").string(), rnd);

  json skipped = json::object();
  const int frames = min_clip_frames(clips);

  const int max_k = rc.eval.past_k.empty()
                        ? 0
                        : *std::max_element(rc.eval.past_k.begin(),
                                            rc.eval.past_k.end());
  if (!rc.eval.past_k.empty() && frames >= max_k + 1) {
    PastFrameSweep sweep = past_frame_sweep(model, clips, rc.eval);
    write_past_frame_json((dir / "past_frames.json").string(), sweep);
    write_past_frame_csv((dir / "past_frames.csv").string(), sweep);
  } else {
    skipped["past_frames"] = "clips hold " + std::to_string(frames) +
                             " frames; k up to " + std::to_string(max_k) +
                             " needs " + std::to_string(max_k + 1);
  }

  const int max_len = rc.eval.lengths.empty()
                          ? 0
                          : *std::max_element(rc.eval.lengths.begin(),
                                              rc.eval.lengths.end());
  if (!rc.eval.lengths.empty() && frames >= max_len) {
    LengthSweep sweep = video_length_sweep(model, clips, rc.eval);
    write_length_json((dir / "video_length.json").string(), sweep);
    write_length_csv((dir / "video_length.csv").string(), sweep);
  } else {
    skipped["video_length"] = "clips hold " + std::to_string(frames) +
                              " frames; lengths up to " +
                              std::to_string(max_len) + " need that many";
  }

  if (rc.eval.extra_slots > 0) {
    AriReport ood = ood_eval(model, clips, rc.eval.extra_slots, rc.eval);
    write_ari_json((dir / "ood_ari.json").string(), ood);
    write_ari_csv((dir / "ood_ari.csv").string(), ood);
  }

  write_json_file(dir / "config.json", {{"config", run_config_json(rc)},
                                        {"checkpoint", ckpt},
                                        {"data", data},
                                        {"skipped", skipped}});
  guard.commit();
  std::printf("evaluated %zu clips: mean image FG-ARI %.4f, video %.4f "
              "(random video %.4f)\n",
              clips.size(), ari.mean_image, ari.mean_video, rnd.mean_video);
  for (auto it = skipped.begin(); it != skipped.end(); ++it)
    std::printf("skipped %s: %s\n", it.key().c_str(),
                it.value().get<std::string>().c_str());
  return 0;
}

int cmd_diagnose(const std::string& ckpt, const std::string& data,
                 const std::string& out, const std::string& config_path,
                 bool force) {
  RunConfig rc = config_for_checkpoint(config_path, ckpt);
  if (auto s = env_seed_override()) rc.probe.seed = *s;

  std::vector<VideoClip> clips = read_dataset(data);
  check_dataset_geometry(clips, rc, data);

  Rng rng(0);
  SteveModel<float> model(rc.model, rng);
  load_checkpoint(ckpt, model.all_params());

  OutputGuard guard;
  claim_output(out, force, guard);
  const fs::path dir(out);

  Rng prng(rc.probe.seed);
  MixtureDecoder<float> probe(rc.mixture, prng);
  train_diagnostic(model, probe, clips, rc.probe,
                   (dir / "probe_log.csv").string());

  const json echo = run_config_json(rc);
  save_checkpoint<float>((dir / "probe.ckpt").string(), probe.params().all(),
                         {{"kind", "diagnostic-probe"}, {"config", echo}});

  AriReport decoding = evaluate_dataset_decoding(model, probe, clips, rc.eval);
  write_ari_json((dir / "decoding_ari.json").string(), decoding);
  write_ari_csv((dir / "decoding_ari.csv").string(), decoding);

  EvalConfig standard = rc.eval;
  standard.extra_slots = 0;
  AriReport attention = evaluate_dataset(model, clips, standard);
  write_ari_json((dir / "attention_ari.json").string(), attention);
  write_ari_csv((dir / "attention_ari.csv").string(), attention);

  write_json_file(dir / "config.json",
                  {{"config", echo}, {"checkpoint", ckpt}, {"data", data}});
  guard.commit();
  std::printf("diagnostic probe trained; decoding video FG-ARI %.4f vs "
              "attention %.4f\n",
              decoding.mean_video, attention.mean_video);
  return 0;
}

int cmd_visualize(const std::string& ckpt, const std::string& data,
                  const std::string& out, const std::string& config_path,
                  const std::string& probe_path, int num_clips, bool force) {
  RunConfig rc = config_for_checkpoint(config_path, ckpt);
  if (auto s = env_seed_override()) rc.eval.seed = *s;
  check(num_clips >= 1, "--num-clips must be >= 1");

  std::vector<VideoClip> clips = read_dataset(data);
  check_dataset_geometry(clips, rc, data);

  Rng rng(0);
  SteveModel<float> model(rc.model, rng);
  load_checkpoint(ckpt, model.all_params());

  OutputGuard guard;
  claim_output(out, force, guard);
  const fs::path dir(out);

  Rng prng(rc.probe.seed);
  MixtureDecoder<float> probe(rc.mixture, prng);
  if (!probe_path.empty())
    load_checkpoint(probe_path, probe.params().all());
  else
    train_diagnostic(model, probe, clips, rc.probe);

  const int n_slots = rc.model.encoder.num_slots;
  const int side = rc.data.image_size;
  const std::size_t count =
      std::min<std::size_t>(clips.size(), static_cast<std::size_t>(num_clips));
  for (std::size_t i = 0; i < count; ++i) {
    const VideoClip& clip = clips[i];
    Tensor<float> eps = eval_slot_noise(model, rc.eval.seed, i, n_slots);
    auto enc = model.eval_encode(clip.frames, eps);

    ClipStrip strip;
    for (std::size_t f = 0; f < clip.frames.size(); ++f) {
      strip.frames.push_back(clip.frames[f]);
      strip.true_labels.push_back(clip.labels[f]);
      strip.attention_seg.push_back(
          attention_to_segmentation(enc.attention[f], enc.h_enc, enc.w_enc,
                                    side, side, rc.eval.bilinear));
      auto rendered = probe.render(enc.pre_slots[f]);
      strip.decoding_seg.push_back(
          MixtureDecoder<float>::mask_labels(rendered.masks));
      Tensor<float> recon = model.reconstruct_frame(enc.pre_slots[f]);
      for (std::int64_t p = 0; p < recon.numel(); ++p)
        recon[p] = std::clamp(recon[p], 0.0f, 1.0f);
      strip.reconstructions.push_back(std::move(recon));
      Tensor<float> masks({n_slots, side, side});
      for (int n = 0; n < n_slots; ++n) {
        Tensor<float> one = attention_slot_mask(
            enc.attention[f], n, enc.h_enc, enc.w_enc, side, side,
            rc.eval.bilinear);
        for (std::int64_t p = 0; p < one.numel(); ++p)
          masks[static_cast<std::int64_t>(n) * side * side + p] = one[p];
      }
      strip.slot_masks.push_back(std::move(masks));
    }
    write_clip_strip_png((dir / (clip.id + ".png")).string(), strip);
  }

  std::vector<VideoClip> sweep_clips(clips.begin(), clips.begin() + count);
  const int frames = min_clip_frames(sweep_clips);
  json skipped = json::object();

  const int max_k = rc.eval.past_k.empty()
                        ? 0
                        : *std::max_element(rc.eval.past_k.begin(),
                                            rc.eval.past_k.end());
  if (!rc.eval.past_k.empty() && frames >= max_k + 1) {
    PastFrameSweep sweep = past_frame_sweep(model, sweep_clips, rc.eval);
    PlotSeries series{"attention masks", {}, {}};
    for (std::size_t k = 0; k < sweep.k_values.size(); ++k) {
      series.xs.push_back(sweep.k_values[k]);
      series.ys.push_back(sweep.mean_image[k]);
    }
    write_line_plot_svg((dir / "past_frames.svg").string(),
                        "Image FG-ARI vs past frames", "past frames",
                        "Image FG-ARI", {series});
  } else {
    skipped["past_frames"] = "clips too short for the configured k values";
  }

  const int max_len = rc.eval.lengths.empty()
                          ? 0
                          : *std::max_element(rc.eval.lengths.begin(),
                                              rc.eval.lengths.end());
  if (!rc.eval.lengths.empty() && frames >= max_len) {
    LengthSweep sweep = video_length_sweep(model, sweep_clips, rc.eval);
    PlotSeries series{"attention masks", {}, {}};
    for (std::size_t l = 0; l < sweep.lengths.size(); ++l) {
      series.xs.push_back(sweep.lengths[l]);
      series.ys.push_back(sweep.mean_video[l]);
    }
    write_line_plot_svg((dir / "video_length.svg").string(),
                        "Video FG-ARI vs video length", "video length",
                        "Video FG-ARI", {series});
  } else {
    skipped["video_length"] = "clips too short for the configured lengths";
  }

  write_json_file(dir / "config.json", {{"config", run_config_json(rc)},
                                        {"checkpoint", ckpt},
                                        {"data", data},
                                        {"num_clips", static_cast<int>(count)},
                                        {"skipped", skipped}});
  guard.commit();
  std::printf("wrote %zu clip strips to %s\n", count, out.c_str());
  for (auto it = skipped.begin(); it != skipped.end(); ++it)
    std::printf("skipped %s: %s\n", it.key().c_str(),
                it.value().get<std::string>().c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Object-centric video model: data, training, evaluation"};
  app.require_subcommand(1);

  std::string config_path, data, out, split, ckpt, report, probe_path;
  int num_clips = 0;
  int viz_clips = 8;
  bool force = false;

  CLI::App* gen = app.add_subcommand("gen-data", "Generate a dataset split");
  gen->add_option("--config", config_path, "Run configuration JSON")
      ->required();
  gen->add_option("--out", out, "Output dataset directory")->required();
  gen->add_option("--split", split, "Dataset split")
      ->required()
      ->check(CLI::IsMember({"train", "iid", "ood-count", "ood-texture"}));
  gen->add_option("--num-clips", num_clips, "Number of clips")->required();
  gen->add_flag("--force", force, "Overwrite an existing output");

  CLI::App* train = app.add_subcommand("train", "Train a model");
  train->add_option("--config", config_path, "Run configuration JSON")
      ->required();
  train->add_option("--data", data, "Training dataset directory")->required();
  train->add_option("--out", out, "Output directory")->required();
  train->add_flag("--force", force, "Overwrite an existing output");

  CLI::App* ev = app.add_subcommand("eval", "Evaluate a checkpoint");
  ev->add_option("--checkpoint", ckpt, "Model checkpoint")->required();
  ev->add_option("--data", data, "Evaluation dataset directory")->required();
  ev->add_option("--report", report, "Report directory")->required();
  ev->add_option("--config", config_path,
                 "Run configuration JSON (defaults to the checkpoint echo)");
  ev->add_flag("--force", force, "Overwrite an existing output");

  CLI::App* diag = app.add_subcommand("diagnose", "Train a mixture probe on "
                                                  "frozen slots");
  diag->add_option("--checkpoint", ckpt, "Model checkpoint")->required();
  diag->add_option("--data", data, "Dataset directory")->required();
  diag->add_option("--out", out, "Output directory")->required();
  diag->add_option("--config", config_path,
                   "Run configuration JSON (defaults to the checkpoint echo)");
  diag->add_flag("--force", force, "Overwrite an existing output");

  CLI::App* viz = app.add_subcommand("visualize", "Emit clip strips and "
                                                  "sweep plots");
  viz->add_option("--checkpoint", ckpt, "Model checkpoint")->required();
  viz->add_option("--data", data, "Dataset directory")->required();
  viz->add_option("--out", out, "Output directory")->required();
  viz->add_option("--config", config_path,
                  "Run configuration JSON (defaults to the checkpoint echo)");
  viz->add_option("--probe", probe_path,
                  "Trained probe checkpoint (otherwise trained in place)");
  viz->add_option("--num-clips", viz_clips, "Clips to render");
  viz->add_flag("--force", force, "Overwrite an existing output");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (gen->parsed())
      return cmd_gen_data(config_path, out, split, num_clips, force);
    if (train->parsed()) return cmd_train(config_path, data, out, force);
    if (ev->parsed())
      return cmd_eval(ckpt, data, report, config_path, force);
    if (diag->parsed())
      return cmd_diagnose(ckpt, data, out, config_path, force);
    if (viz->parsed())
      return cmd_visualize(ckpt, data, out, config_path, probe_path,
                           viz_clips, force);
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  }
  return 0;
}
