// SPDX-License-Identifier: Apache-2.0
//
// Checkpoint round trips and strictness, deterministic batch replay, the
// short training smoke run that must reduce the loss on three seeds,
// divergence halts, and the scalar log format.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "steve/train.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

using steve::ModelConfig;
using steve::Param;
using steve::Rng;
using steve::SceneConfig;
using steve::SteveModel;
using steve::Tape;
using steve::Tensor;
using steve::TrainConfig;
using steve::Trainer;
using steve::VideoClip;

namespace {

ModelConfig tiny_model(int vocab = 24) {
  ModelConfig cfg;
  cfg.image_size = 32;
  cfg.dvae.patch_size = 16;
  cfg.dvae.vocab_size = vocab;
  cfg.dvae.hidden = 8;
  cfg.encoder.num_slots = 2;
  cfg.encoder.slot_dim = 16;
  cfg.encoder.mlp_hidden = 16;
  cfg.encoder.cnn_channels = 8;
  cfg.decoder.blocks = 1;
  cfg.decoder.heads = 4;
  cfg.decoder.hidden = 16;
  cfg.finalize();
  return cfg;
}

std::vector<VideoClip> tiny_dataset(int clips, int frames, std::uint64_t seed) {
  SceneConfig scene;
  scene.image_size = 32;
  scene.num_frames = frames;
  std::vector<VideoClip> out;
  for (int i = 0; i < clips; ++i) {
    scene.seed = seed + static_cast<std::uint64_t>(i);
    out.push_back(steve::generate_clip(scene));
  }
  return out;
}

TrainConfig smoke_config(std::uint64_t seed, std::int64_t steps) {
  TrainConfig cfg;
  cfg.batch_size = 4;
  cfg.episode_length = 2;
  cfg.steps = steps;
  cfg.seed = seed;
  cfg.log_every = 50;
  return cfg;
}

std::filesystem::path fresh_dir(const std::string& leaf) {
  const auto dir = std::filesystem::temp_directory_path() / leaf;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace

TEST_CASE("checkpoint round trip restores every parameter bit for bit") {
  const auto dir = fresh_dir("steve_test_ckpt");
  const std::string path = (dir / "model.ckpt").string();

  Rng init_a(1);
  SteveModel<float> a(tiny_model(), init_a);
  nlohmann::json meta;
  meta["step"] = 7;
  steve::save_checkpoint<float>(path, a.all_params(), meta);

  Rng init_b(2);
  SteveModel<float> b(tiny_model(), init_b);
  const nlohmann::json loaded = steve::load_checkpoint<float>(path, b.all_params());
  CHECK(loaded.at("step") == 7);

  const auto pa = a.all_params();
  const auto pb = b.all_params();
  REQUIRE(pa.size() == pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) {
    REQUIRE(pa[i]->name == pb[i]->name);
    REQUIRE(pa[i]->value.same_shape(pb[i]->value));
    for (std::int64_t j = 0; j < pa[i]->value.numel(); ++j)
      REQUIRE(pa[i]->value[j] == pb[i]->value[j]);
  }

  // Identical parameters and seeds give the identical loss.
  Rng data(3);
  std::vector<Tensor<float>> frames;
  for (int f = 0; f < 2; ++f) {
    Tensor<float> img({3, 32, 32});
    for (std::int64_t i = 0; i < img.numel(); ++i)
      img[i] = static_cast<float>(data.uniform());
    frames.push_back(std::move(img));
  }
  auto eval = [&](SteveModel<float>& m) {
    Tape<float> t;
    Rng sample(4);
    return t.value(m.total_loss(t, frames, 1, &sample, nullptr).total)[0];
  };
  CHECK(eval(a) == eval(b));
  std::filesystem::remove_all(dir);
}

TEST_CASE("checkpoint loading is strict about structure") {
  const auto dir = fresh_dir("steve_test_ckpt_strict");
  const std::string path = (dir / "model.ckpt").string();

  Rng init(5);
  SteveModel<float> model(tiny_model(), init);
  steve::save_checkpoint<float>(path, model.all_params(), {{"step", 0}});

  // A structurally different model must refuse the file.
  ModelConfig other_cfg = tiny_model(32);
  Rng init2(6);
  SteveModel<float> other(other_cfg, init2);
  CHECK_THROWS_AS(steve::load_checkpoint<float>(path, other.all_params()),
                  std::runtime_error);

  // Wrong dtype fails before any payload is read.
  Rng init3(7);
  SteveModel<double> dbl(tiny_model(), init3);
  CHECK_THROWS_AS(steve::load_checkpoint<double>(path, dbl.all_params()),
                  std::runtime_error);

  // Corrupt magic.
  {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out << "not a checkpoint";
  }
  CHECK_THROWS_AS(steve::load_checkpoint<float>(path, model.all_params()),
                  std::runtime_error);
  CHECK_THROWS_AS(steve::load_checkpoint<float>("/nonexistent/x.ckpt",
                                                model.all_params()),
                  std::runtime_error);
  std::filesystem::remove_all(dir);
}

TEST_CASE("identical seeds replay identical loss curves") {
  auto clips = tiny_dataset(3, 3, 11);
  auto run = [&]() {
    Rng init(21);
    SteveModel<float> model(tiny_model(), init);
    Trainer<float> trainer(model, clips, smoke_config(9, 5));
    std::vector<double> totals;
    for (int s = 0; s < 5; ++s) totals.push_back(trainer.run_step(s).total);
    return totals;
  };
  const auto a = run();
  const auto b = run();
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
}

TEST_CASE("a 200-step run reduces the loss on three seeds") {
  auto clips = tiny_dataset(4, 2, 31);
  for (std::uint64_t seed : {0ull, 1ull, 2ull}) {
    CAPTURE(seed);
    ModelConfig mcfg = tiny_model();
    TrainConfig tcfg = smoke_config(seed, 200);
    tcfg.scale_model_schedules(mcfg);
    Rng init(100 + seed);
    SteveModel<float> model(mcfg, init);
    Trainer<float> trainer(model, clips, tcfg);
    double first = 0.0, last = 0.0;
    for (int s = 0; s < 200; ++s) {
      const double total = trainer.run_step(s).total;
      if (s == 0) first = total;
      last = total;
    }
    CHECK(last < first);
  }
}

TEST_CASE("divergence threshold halts with step context") {
  auto clips = tiny_dataset(2, 2, 41);
  Rng init(51);
  SteveModel<float> model(tiny_model(), init);
  TrainConfig cfg = smoke_config(1, 10);
  cfg.divergence_threshold = 1e-12;
  Trainer<float> trainer(model, clips, cfg);
  CHECK_THROWS_WITH_AS(trainer.run_step(0), doctest::Contains("diverged at step 0"),
                       std::runtime_error);
}

TEST_CASE("clips shorter than the episode are rejected up front") {
  auto clips = tiny_dataset(2, 2, 61);
  Rng init(71);
  SteveModel<float> model(tiny_model(), init);
  TrainConfig cfg = smoke_config(1, 10);
  cfg.episode_length = 3;
  CHECK_THROWS_AS(Trainer<float>(model, clips, cfg), std::invalid_argument);
}

TEST_CASE("the full loop writes the scalar log and a loadable checkpoint") {
  const auto dir = fresh_dir("steve_test_trainer_io");
  auto clips = tiny_dataset(2, 2, 81);
  Rng init(91);
  SteveModel<float> model(tiny_model(), init);
  TrainConfig cfg = smoke_config(2, 6);
  cfg.log_every = 2;
  Trainer<float> trainer(model, clips, cfg, (dir / "log.csv").string(),
                         (dir / "ckpt").string());
  trainer.run();
  CHECK(trainer.history().size() == 6);

  std::ifstream log(dir / "log.csv");
  REQUIRE(log.good());
  std::string header;
  std::getline(log, header);
  CHECK(header == "step,total,ce,dvae,tau,lr_encoder");
  int rows = 0;
  for (std::string line; std::getline(log, line);)
    if (!line.empty()) ++rows;
  CHECK(rows >= 2);

  Rng init2(92);
  SteveModel<float> fresh(tiny_model(), init2);
  const nlohmann::json meta = steve::load_checkpoint<float>(
      (dir / "ckpt" / "final.ckpt").string(), fresh.all_params());
  CHECK(meta.at("step") == 6);
  std::filesystem::remove_all(dir);
}
