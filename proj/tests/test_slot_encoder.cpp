// SPDX-License-Identifier: Apache-2.0
//
// Backbone feature geometry, slot initialization contracts, attention
// normalization over the slot axis, permutation equivariance of the full
// video roll-out, and finite-difference gradient flow into the learned
// slot initialization.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "steve/slot_encoder.hpp"

#include <cmath>
#include <cstring>
#include <string>
#include <vector>

using steve::EncoderConfig;
using steve::Param;
using steve::Rng;
using steve::SlotEncoder;
using steve::Tape;
using steve::Tensor;

namespace {

template <typename T>
Tensor<T> rand_frame(int h, int w, Rng& rng) {
  Tensor<T> f({3, h, w});
  for (std::int64_t i = 0; i < f.numel(); ++i)
    f[i] = static_cast<T>(rng.uniform());
  return f;
}

EncoderConfig tiny_config(int slots = 3) {
  EncoderConfig cfg;
  cfg.num_slots = slots;
  cfg.slot_dim = 16;
  cfg.mlp_hidden = 16;
  cfg.cnn_channels = 8;
  return cfg;
}

template <typename T>
Param<T>* find_param(SlotEncoder<T>& enc, const std::string& name) {
  for (Param<T>* p : enc.params().all())
    if (p->name == name) return p;
  return nullptr;
}

template <typename T>
double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  REQUIRE(a.same_shape(b));
  double worst = 0.0;
  for (std::int64_t i = 0; i < a.numel(); ++i)
    worst = std::max(worst, std::abs(static_cast<double>(a[i]) -
                                     static_cast<double>(b[i])));
  return worst;
}

template <typename T>
Tensor<T> permute_rows(const Tensor<T>& x, const std::vector<int>& perm) {
  Tensor<T> out(x.shape());
  const int c = x.cols();
  for (int i = 0; i < static_cast<int>(perm.size()); ++i)
    for (int j = 0; j < c; ++j) out.at(i, j) = x.at(perm[i], j);
  return out;
}

}  // namespace

TEST_CASE("backbone feature geometry at both input sizes") {
  Rng data(3);
  {
    Rng init(1);
    SlotEncoder<float> enc(steve::encoder_config_for_image(64, 4), init);
    Tape<float> t;
    auto fm = enc.backbone_features(t, rand_frame<float>(64, 64, data));
    CHECK(t.value(fm.e).rows() == 4096);
    CHECK(t.value(fm.e).cols() == 32);
    CHECK(fm.h_enc == 64);
    CHECK(fm.w_enc == 64);
  }
  {
    Rng init(1);
    SlotEncoder<float> enc(steve::encoder_config_for_image(128, 4), init);
    Tape<float> t;
    auto fm = enc.backbone_features(t, rand_frame<float>(128, 128, data));
    CHECK(t.value(fm.e).rows() == 4096);
    CHECK(t.value(fm.e).cols() == 64);
    CHECK(fm.h_enc == 64);
    CHECK(fm.w_enc == 64);
  }
}

TEST_CASE("backbone is pure and rejects bad frames") {
  Rng init(5);
  SlotEncoder<float> enc(tiny_config(), init);
  Rng data(9);
  const Tensor<float> frame = rand_frame<float>(16, 16, data);
  Tape<float> t;
  auto a = enc.backbone_features(t, frame);
  auto b = enc.backbone_features(t, frame);
  const Tensor<float> av = t.value(a.e);
  const Tensor<float> bv = t.value(b.e);
  CHECK(max_abs_diff(av, bv) == 0.0);
  CHECK_THROWS_AS(enc.backbone_features(t, Tensor<float>({1, 16, 16})),
                  std::invalid_argument);
}

TEST_CASE("slot initialization: shape, degenerate spread, determinism") {
  Rng init(11);
  EncoderConfig cfg;
  cfg.num_slots = 4;
  SlotEncoder<float> enc(cfg, init);

  Tape<float> t;
  Rng draw(21);
  auto batch = enc.init_slots_batch(t, 3, draw);
  REQUIRE(batch.size() == 3);
  for (auto s : batch) {
    CHECK(t.value(s).rows() == 4);
    CHECK(t.value(s).cols() == 192);
  }

  // Collapse the spread: every slot must equal the learned mean.
  Param<float>* mu = find_param(enc, "encoder.slot_mu");
  Param<float>* ls = find_param(enc, "encoder.slot_log_sigma");
  REQUIRE(mu != nullptr);
  REQUIRE(ls != nullptr);
  ls->value.fill(-40.0f);
  Rng draw2(22);
  auto collapsed = enc.init_slots(t, enc.slot_noise(draw2));
  for (int n = 0; n < 4; ++n)
    for (int d = 0; d < 192; ++d)
      CHECK(std::abs(t.value(collapsed).at(n, d) - mu->value[d]) <= 1e-6f);

  // Same seed, same draw.
  Rng a(77), b(77);
  CHECK(max_abs_diff(enc.slot_noise(a), enc.slot_noise(b)) == 0.0);
}

TEST_CASE("single slot gets uniform attention and the mean readout") {
  Rng init(13);
  SlotEncoder<double> enc(tiny_config(1), init);
  Rng data(31);
  Tape<double> t;
  auto fm = enc.backbone_features(t, rand_frame<double>(12, 12, data));
  Rng draw(1);
  auto s0 = enc.init_slots(t, enc.slot_noise(draw));
  auto corr = enc.corrector_step(t, s0, fm.e);

  const Tensor<double> att = t.value(corr.attention);
  REQUIRE(att.rows() == 1);
  REQUIRE(att.cols() == 144);
  for (std::int64_t i = 0; i < att.numel(); ++i) CHECK(att[i] == 1.0);

  // r_1 must be the unweighted mean of the value projections, up to the
  // epsilon in the denominator.
  const Tensor<double> values = t.value(enc.project_values(t, fm.e));
  const Tensor<double> readout = t.value(corr.readout);
  REQUIRE(readout.rows() == 1);
  for (int d = 0; d < readout.cols(); ++d) {
    double mean = 0.0;
    for (int i = 0; i < values.rows(); ++i) mean += values.at(i, d);
    mean /= static_cast<double>(values.rows());
    CHECK(std::abs(readout.at(0, d) - mean) <= 1e-7);
  }
}

TEST_CASE("attention normalizes over slots at every location, iteration, frame") {
  Rng init(17);
  SlotEncoder<float> enc(tiny_config(3), init);
  Rng data(41);
  std::vector<Tensor<float>> frames;
  for (int i = 0; i < 2; ++i) frames.push_back(rand_frame<float>(12, 12, data));

  Tape<float> t;
  Rng draw(2);
  auto res = enc.encode_video(t, frames, enc.init_slots(t, enc.slot_noise(draw)));
  REQUIRE(res.attention_iters.size() == 2);
  for (const auto& frame_maps : res.attention_iters) {
    REQUIRE(static_cast<int>(frame_maps.size()) == enc.config().corrector_iters);
    for (auto map : frame_maps) {
      const Tensor<float> a = t.value(map);
      REQUIRE(a.rows() == 3);
      REQUIRE(a.cols() == 144);
      for (int j = 0; j < a.cols(); ++j) {
        float col = 0.0f;
        for (int i = 0; i < a.rows(); ++i) {
          CHECK(a.at(i, j) >= 0.0f);
          col += a.at(i, j);
        }
        CHECK(std::abs(col - 1.0f) <= 1e-5f);
      }
    }
  }
}

TEST_CASE("encode_video: shapes, determinism, finiteness") {
  Rng init(19);
  SlotEncoder<float> enc(tiny_config(3), init);
  Rng data(43);
  std::vector<Tensor<float>> frames;
  for (int i = 0; i < 3; ++i) frames.push_back(rand_frame<float>(16, 16, data));

  const Tensor<float> eps = [&] {
    Rng draw(4);
    return enc.slot_noise(draw);
  }();

  auto run = [&](Tape<float>& t) {
    return enc.encode_video(t, frames, enc.init_slots(t, eps));
  };

  Tape<float> t1, t2;
  auto r1 = run(t1);
  auto r2 = run(t2);
  REQUIRE(r1.pre.size() == 3);
  REQUIRE(r1.post.size() == 3);
  REQUIRE(r1.attention.size() == 3);
  CHECK(r1.h_enc == 16);
  CHECK(r1.w_enc == 16);
  for (int f = 0; f < 3; ++f) {
    const Tensor<float> pre = t1.value(r1.pre[f]);
    CHECK(pre.rows() == 3);
    CHECK(pre.cols() == 16);
    CHECK(t1.value(r1.attention[f]).cols() == 256);
    for (std::int64_t i = 0; i < pre.numel(); ++i)
      CHECK(std::isfinite(pre[i]));
    CHECK(max_abs_diff(pre, t2.value(r2.pre[f])) == 0.0);
    CHECK(max_abs_diff(t1.value(r1.post[f]), t2.value(r2.post[f])) == 0.0);
  }

  Tape<float> t3;
  CHECK_THROWS_AS(enc.encode_video(t3, {}, enc.init_slots(t3, eps)),
                  std::invalid_argument);
}

TEST_CASE("permuting initial slots permutes every output identically") {
  Rng init(23);
  SlotEncoder<double> enc(tiny_config(3), init);
  Rng data(47);
  std::vector<Tensor<double>> frames;
  for (int i = 0; i < 2; ++i) frames.push_back(rand_frame<double>(12, 12, data));

  Rng draw(5);
  const Tensor<double> eps = enc.slot_noise(draw);
  const std::vector<int> perm = {2, 0, 1};
  const Tensor<double> eps_p = permute_rows(eps, perm);

  Tape<double> t;
  auto base = enc.encode_video(t, frames, enc.init_slots(t, eps));
  auto perd = enc.encode_video(t, frames, enc.init_slots(t, eps_p));

  for (int f = 0; f < 2; ++f) {
    CHECK(max_abs_diff(t.value(perd.pre[f]),
                       permute_rows(t.value(base.pre[f]), perm)) <= 1e-5);
    CHECK(max_abs_diff(t.value(perd.post[f]),
                       permute_rows(t.value(base.post[f]), perm)) <= 1e-5);
    CHECK(max_abs_diff(t.value(perd.attention[f]),
                       permute_rows(t.value(base.attention[f]), perm)) <= 1e-5);
  }
}

TEST_CASE("gradients reach the learned slot initialization") {
  EncoderConfig cfg;
  cfg.num_slots = 2;
  cfg.slot_dim = 8;
  cfg.mlp_hidden = 8;
  cfg.cnn_channels = 4;
  Rng init(29);
  SlotEncoder<double> enc(cfg, init);

  Rng data(53);
  std::vector<Tensor<double>> frames;
  for (int i = 0; i < 2; ++i) frames.push_back(rand_frame<double>(8, 8, data));
  Rng draw(6);
  const Tensor<double> eps = enc.slot_noise(draw);
  Tensor<double> w({2, 8});
  for (std::int64_t i = 0; i < w.numel(); ++i) w[i] = data.uniform(-1.0, 1.0);

  auto eval_loss = [&]() -> double {
    Tape<double> t;
    auto res = enc.encode_video(t, frames, enc.init_slots(t, eps));
    auto loss = t.sum(t.mul(res.pre.back(), t.input(w)));
    return t.value(loss)[0];
  };

  enc.params().zero_grad();
  {
    Tape<double> t;
    auto res = enc.encode_video(t, frames, enc.init_slots(t, eps));
    t.backward(t.sum(t.mul(res.pre.back(), t.input(w))));
  }

  const double h = 1e-5;
  for (const char* name : {"encoder.slot_mu", "encoder.slot_log_sigma"}) {
    Param<double>* p = find_param(enc, name);
    REQUIRE(p != nullptr);
    double max_grad = 0.0;
    for (int i = 0; i < 8; ++i) {
      const double saved = p->value[i];
      p->value[i] = saved + h;
      const double lp = eval_loss();
      p->value[i] = saved - h;
      const double lm = eval_loss();
      p->value[i] = saved;
      const double fd = (lp - lm) / (2.0 * h);
      const double an = p->grad[i];
      const double rel = std::abs(fd - an) /
                         std::max({std::abs(fd), std::abs(an), 1e-8});
      CHECK(rel < 1e-3);
      max_grad = std::max(max_grad, std::abs(an));
    }
    CHECK(max_grad > 0.0);
  }
}
