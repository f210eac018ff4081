// SPDX-License-Identifier: Apache-2.0
//
// Combined-loss contracts: exact component sum, the near-uniform
// cross-entropy bound at initialization, gradient isolation between the
// tokenizer and the slot pathway, non-finite aborts, and determinism.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "steve/model.hpp"

#include <cmath>
#include <stdexcept>
#include <vector>

using steve::ModelConfig;
using steve::Param;
using steve::Rng;
using steve::SteveModel;
using steve::Tape;
using steve::Tensor;

namespace {

ModelConfig tiny_model(int slots = 2) {
  ModelConfig cfg;
  cfg.image_size = 16;
  cfg.dvae.patch_size = 4;
  cfg.dvae.vocab_size = 24;
  cfg.dvae.hidden = 8;
  cfg.dvae.tau_decay_steps = 100;
  cfg.encoder.num_slots = slots;
  cfg.encoder.slot_dim = 16;
  cfg.encoder.mlp_hidden = 16;
  cfg.encoder.cnn_channels = 8;
  cfg.decoder.blocks = 1;
  cfg.decoder.heads = 4;
  cfg.decoder.hidden = 16;
  cfg.finalize();
  return cfg;
}

template <typename T>
std::vector<Tensor<T>> rand_clip(int frames, int side, Rng& rng) {
  std::vector<Tensor<T>> out;
  for (int f = 0; f < frames; ++f) {
    Tensor<T> img({3, side, side});
    for (std::int64_t i = 0; i < img.numel(); ++i)
      img[i] = static_cast<T>(rng.uniform());
    out.push_back(std::move(img));
  }
  return out;
}

template <typename T>
bool all_zero(const std::vector<Param<T>*>& params) {
  for (const Param<T>* p : params)
    for (std::int64_t i = 0; i < p->grad.numel(); ++i)
      if (p->grad[i] != T(0)) return false;
  return true;
}

template <typename T>
bool any_nonzero(const std::vector<Param<T>*>& params) {
  for (const Param<T>* p : params)
    for (std::int64_t i = 0; i < p->grad.numel(); ++i)
      if (p->grad[i] != T(0)) return true;
  return false;
}

}  // namespace

TEST_CASE("total is exactly cross-entropy plus reconstruction") {
  Rng init(1);
  SteveModel<double> model(tiny_model(), init);
  Rng data(2);
  auto frames = rand_clip<double>(2, 16, data);

  Tape<double> t;
  Rng sample(3);
  auto parts = model.total_loss(t, frames, 10, &sample, nullptr);
  CHECK(t.value(parts.total)[0] ==
        t.value(parts.ce)[0] + t.value(parts.dvae)[0]);
  CHECK(parts.tau == model.dvae().temperature(10));
  REQUIRE(parts.tokens.size() == 2);
  for (const auto& frame_tokens : parts.tokens) {
    REQUIRE(frame_tokens.size() == 16);
    for (int z : frame_tokens) CHECK((z >= 0 && z < 24));
  }
}

TEST_CASE("cross-entropy at initialization stays near the uniform bound") {
  for (std::uint64_t seed : {1ull, 2ull, 3ull}) {
    Rng init(seed);
    SteveModel<double> model(tiny_model(), init);
    Rng data(seed + 10);
    auto frames = rand_clip<double>(2, 16, data);
    Tape<double> t;
    Rng sample(seed + 20);
    auto parts = model.total_loss(t, frames, 0, &sample, nullptr);
    const double bound = 2.0 * 16.0 * std::log(24.0);
    CHECK(t.value(parts.ce)[0] <= 1.1 * bound);
  }
}

TEST_CASE("cross-entropy gradients never reach the tokenizer and vice versa") {
  Rng init(5);
  SteveModel<double> model(tiny_model(), init);
  Rng data(6);
  auto frames = rand_clip<double>(2, 16, data);

  {
    for (Param<double>* p : model.all_params()) p->zero_grad();
    Tape<double> t;
    Rng sample(7);
    auto parts = model.total_loss(t, frames, 5, &sample, nullptr);
    t.backward(parts.ce);
    CHECK(all_zero(model.dvae().params().all()));
    CHECK(any_nonzero(model.encoder().params().all()));
    CHECK(any_nonzero(model.decoder().params().all()));
  }
  {
    for (Param<double>* p : model.all_params()) p->zero_grad();
    Tape<double> t;
    Rng sample(7);
    auto parts = model.total_loss(t, frames, 5, &sample, nullptr);
    t.backward(parts.dvae);
    CHECK(any_nonzero(model.dvae().params().all()));
    CHECK(all_zero(model.encoder().params().all()));
    CHECK(all_zero(model.decoder().params().all()));
  }
}

TEST_CASE("non-finite inputs abort the loss with a diagnostic") {
  Rng init(9);
  SteveModel<double> model(tiny_model(), init);
  Rng data(10);
  auto frames = rand_clip<double>(2, 16, data);
  frames[1][5] = std::numeric_limits<double>::quiet_NaN();
  Tape<double> t;
  Rng sample(11);
  CHECK_THROWS_WITH_AS(model.total_loss(t, frames, 0, &sample, nullptr),
                       doctest::Contains("non-finite"), std::runtime_error);
}

TEST_CASE("the loss is a deterministic function of seeds") {
  Rng init(13);
  SteveModel<float> model(tiny_model(), init);
  Rng data(14);
  auto frames = rand_clip<float>(2, 16, data);

  auto eval = [&]() {
    Tape<float> t;
    Rng sample(15), drop(16);
    auto parts = model.total_loss(t, frames, 3, &sample, &drop);
    return std::pair<float, float>(t.value(parts.ce)[0],
                                   t.value(parts.dvae)[0]);
  };
  const auto a = eval();
  const auto b = eval();
  CHECK(a.first == b.first);
  CHECK(a.second == b.second);
}

TEST_CASE("config finalize wires the decoder to its siblings and validates") {
  ModelConfig cfg = tiny_model();
  CHECK(cfg.decoder.vocab_size == 24);
  CHECK(cfg.decoder.sequence_length == 16);
  CHECK(cfg.decoder.slot_dim == 16);

  ModelConfig bad = tiny_model();
  bad.image_size = 15;
  CHECK_THROWS_AS(bad.finalize(), std::invalid_argument);

  const ModelConfig full = steve::model_config_for(128, 11);
  CHECK(full.encoder.cnn_channels == 64);
  CHECK(full.encoder.cnn_first_stride == 2);
  CHECK(full.decoder.blocks == 8);
  CHECK(full.decoder.sequence_length == 1024);
  const ModelConfig small = steve::model_config_for(64, 11);
  CHECK(small.encoder.cnn_channels == 32);
  CHECK(small.decoder.blocks == 4);
  CHECK(small.decoder.sequence_length == 256);
}

TEST_CASE("reconstruction helpers produce frame-shaped finite images") {
  Rng init(17);
  SteveModel<float> model(tiny_model(3), init);
  Rng data(18);
  auto frames = rand_clip<float>(2, 16, data);

  Rng draw(19);
  auto enc = model.eval_encode(frames, model.encoder().slot_noise(draw));
  REQUIRE(enc.pre_slots.size() == 2);
  CHECK(enc.h_enc == 16);
  CHECK(enc.attention[0].rows() == 3);
  CHECK(enc.attention[0].cols() == 256);

  const Tensor<float> rec = model.reconstruct_frame(enc.pre_slots[0]);
  REQUIRE(rec.shape() == std::vector<int>({3, 16, 16}));
  for (std::int64_t i = 0; i < rec.numel(); ++i) CHECK(std::isfinite(rec[i]));

  const Tensor<float> round = model.dvae_roundtrip(frames[0]);
  REQUIRE(round.shape() == std::vector<int>({3, 16, 16}));
}
