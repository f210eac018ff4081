// SPDX-License-Identifier: Apache-2.0
//
// Gradient checks for every tape op against double-precision central finite
// differences, plus tensor/RNG fundamentals. These are the ground truth the
// model-level gradient tests build on.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "steve/autodiff.hpp"
#include "steve/nn.hpp"
#include "steve/rng.hpp"
#include "steve/tensor.hpp"

#include <cmath>
#include <functional>
#include <vector>

using steve::Param;
using steve::Rng;
using steve::Tape;
using steve::Tensor;

namespace {

using D = double;
using TapeD = Tape<D>;
using Var = TapeD::Var;
using Builder = std::function<Var(TapeD&, const std::vector<Var>&)>;

Tensor<D> rand_tensor(std::vector<int> shape, Rng& rng, double lo = -1.0,
                      double hi = 1.0) {
  Tensor<D> t(std::move(shape));
  for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

double eval(const Builder& build, const std::vector<Tensor<D>>& inputs) {
  TapeD tape;
  std::vector<Var> vars;
  vars.reserve(inputs.size());
  for (const auto& x : inputs) vars.push_back(tape.leaf(x));
  return tape.value(build(tape, vars))[0];
}

/// Max relative error between analytic gradients and central differences,
/// taken over every element of every input.
double gradcheck(const Builder& build, std::vector<Tensor<D>> inputs,
                 double h = 1e-5) {
  TapeD tape;
  std::vector<Var> vars;
  for (const auto& x : inputs) vars.push_back(tape.leaf(x));
  Var loss = build(tape, vars);
  REQUIRE(tape.value(loss).numel() == 1);
  tape.backward(loss);
  std::vector<Tensor<D>> analytic;
  for (Var v : vars) {
    Tensor<D> g = tape.grad(v);
    if (g.empty()) g = Tensor<D>(tape.value(v).shape());
    analytic.push_back(std::move(g));
  }

  double worst = 0.0;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    for (std::int64_t j = 0; j < inputs[i].numel(); ++j) {
      const double x0 = inputs[i][j];
      inputs[i][j] = x0 + h;
      const double fp = eval(build, inputs);
      inputs[i][j] = x0 - h;
      const double fm = eval(build, inputs);
      inputs[i][j] = x0;
      const double fd = (fp - fm) / (2.0 * h);
      const double a = analytic[i][j];
      const double denom = std::max({std::fabs(a), std::fabs(fd), 1e-6});
      worst = std::max(worst, std::fabs(a - fd) / denom);
    }
  }
  return worst;
}

/// Contract a non-scalar output to a scalar with fixed weights so every
/// output element contributes a distinct cotangent.
Var contract(TapeD& t, Var y, const Tensor<D>& w) {
  return t.sum(t.mul(y, t.input(w)));
}

}  // namespace

TEST_CASE("tensor basics") {
  Tensor<float> t({2, 3});
  CHECK(t.numel() == 6);
  CHECK(t.rank() == 2);
  CHECK(t.rows() == 2);
  CHECK(t.cols() == 3);
  for (std::int64_t i = 0; i < 6; ++i) CHECK(t[i] == 0.0f);
  t.at(1, 2) = 5.0f;
  CHECK(t[5] == 5.0f);  // row-major layout

  auto r = t.reshaped({3, 2});
  CHECK(r.rows() == 3);
  CHECK(r[5] == 5.0f);
  CHECK_THROWS(t.reshaped({4, 2}));
  CHECK_THROWS(Tensor<float>({2, -1}));

  auto m = steve::as_matrix(t);
  CHECK(m(1, 2) == 5.0f);
  m(0, 0) = 7.0f;
  CHECK(t[0] == 7.0f);
}

TEST_CASE("rng determinism and stream independence") {
  Rng a(123), b(123), c(124);
  bool same = true, diff = false;
  for (int i = 0; i < 100; ++i) {
    const auto x = a.next_u64();
    same = same && (x == b.next_u64());
    diff = diff || (x != c.next_u64());
  }
  CHECK(same);
  CHECK(diff);

  CHECK(Rng::mix(1, 2) != Rng::mix(2, 1));

  Rng r(7);
  for (int i = 0; i < 1000; ++i) {
    const double u = r.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    const std::uint64_t k = r.uniform_int(10);
    CHECK(k < 10);
    CHECK(std::isfinite(r.normal()));
    CHECK(std::isfinite(r.gumbel()));
  }
}

TEST_CASE("elementwise op gradients") {
  Rng rng(1);
  const auto w = rand_tensor({3, 4}, rng);
  const auto x = rand_tensor({3, 4}, rng);
  const auto y = rand_tensor({3, 4}, rng);

  SUBCASE("add") {
    CHECK(gradcheck([&](TapeD& t, const std::vector<Var>& v) {
      return contract(t, t.add(v[0], v[1]), w);
    }, {x, y}) < 1e-6);
  }
  SUBCASE("sub") {
    CHECK(gradcheck([&](TapeD& t, const std::vector<Var>& v) {
      return contract(t, t.sub(v[0], v[1]), w);
    }, {x, y}) < 1e-6);
  }
  SUBCASE("mul") {
    CHECK(gradcheck([&](TapeD& t, const std::vector<Var>& v) {
      return contract(t, t.mul(v[0], v[1]), w);
    }, {x, y}) < 1e-6);
  }
  SUBCASE("scale") {
    CHECK(gradcheck([&](TapeD& t, const std::vector<Var>& v) {
      return contract(t, t.scale(v[0], -2.5), w);
    }, {x}) < 1e-6);
  }
  SUBCASE("add_const") {
    CHECK(gradcheck([&](TapeD& t, const std::vector<Var>& v) {
      return contract(t, t.add_const(v[0], y), w);
    }, {x}) < 1e-6);
  }
  SUBCASE("sigmoid") {
    CHECK(gradcheck([&](TapeD& t, const std::vector<Var>& v) {
      return contract(t, t.sigmoid(v[0]), w);
    }, {x}) < 1e-6);
  }
  SUBCASE("tanh") {
    CHECK(gradcheck([&](TapeD& t, const std::vector<Var>& v) {
      return contract(t, t.tanh_op(v[0]), w);
    }, {x}) < 1e-6);
  }
  SUBCASE("exp") {
    CHECK(gradcheck([&](TapeD& t, const std::vector<Var>& v) {
      return contract(t, t.exp_op(v[0]), w);
    }, {x}) < 1e-6);
  }
  SUBCASE("relu away from the kink") {
    Tensor<D> xr = x;
    for (std::int64_t i = 0; i < xr.numel(); ++i)
      if (std::fabs(xr[i]) < 0.05) xr[i] = 0.1;
    CHECK(gradcheck([&](TapeD& t, const std::vector<Var>& v) {
      return contract(t, t.relu(v[0]), w);
    }, {xr}) < 1e-6);
  }
}

TEST_CASE("shape op gradients") {
  Rng rng(2);
  const auto x = rand_tensor({3, 4}, rng);
  const auto y = rand_tensor({2, 4}, rng);

  SUBCASE("reshape") {
    const auto w = rand_tensor({4, 3}, rng);
    CHECK(gradcheck([&](TapeD& t, const std::vector<Var>& v) {
      return contract(t, t.reshape(v[0], {4, 3}), w);
    }, {x}) < 1e-6);
  }
  SUBCASE("transpose2d") {
    const auto w = rand_tensor({4, 3}, rng);
    CHECK(gradcheck([&](TapeD& t, const std::vector<Var>& v) {
      return contract(t, t.transpose2d(v[0]), w);
    }, {x}) < 1e-6);
  }
  SUBCASE("slice_cols") {
    const auto w = rand_tensor({3, 2}, rng);
    CHECK(gradcheck([&](TapeD& t, const std::vector<Var>& v) {
      return contract(t, t.slice_cols(v[0], 1, 2), w);
    }, {x}) < 1e-6);
  }
  SUBCASE("concat_cols") {
    const auto w = rand_tensor({3, 8}, rng);
    CHECK(gradcheck([&](TapeD& t, const std::vector<Var>& v) {
      return contract(t, t.concat_cols({v[0], v[1]}), w);
    }, {x, rand_tensor({3, 4}, rng)}) < 1e-6);
  }
  SUBCASE("slice_rows") {
    const auto w = rand_tensor({2, 4}, rng);
    CHECK(gradcheck([&](TapeD& t, const std::vector<Var>& v) {
      return contract(t, t.slice_rows(v[0], 1, 2), w);
    }, {x}) < 1e-6);
  }
  SUBCASE("concat_rows") {
    const auto w = rand_tensor({5, 4}, rng);
    CHECK(gradcheck([&](TapeD& t, const std::vector<Var>& v) {
      return contract(t, t.concat_rows(v[0], v[1]), w);
    }, {x, y}) < 1e-6);
  }
}

TEST_CASE("matmul gradients for all transpose combinations") {
  Rng rng(3);
  const auto w = rand_tensor({3, 5}, rng);
  const auto a = rand_tensor({3, 4}, rng);
  const auto b = rand_tensor({4, 5}, rng);
  const auto at = rand_tensor({4, 3}, rng);
  const auto bt = rand_tensor({5, 4}, rng);

  CHECK(gradcheck([&](TapeD& t, const std::vector<Var>& v) {
    return contract(t, t.matmul(v[0], v[1], false, false), w);
  }, {a, b}) < 1e-6);
  CHECK(gradcheck([&](TapeD& t, const std::vector<Var>& v) {
    return contract(t, t.matmul(v[0], v[1], true, false), w);
  }, {at, b}) < 1e-6);
  CHECK(gradcheck([&](TapeD& t, const std::vector<Var>& v) {
    return contract(t, t.matmul(v[0], v[1], false, true), w);
  }, {a, bt}) < 1e-6);
  CHECK(gradcheck([&](TapeD& t, const std::vector<Var>& v) {
    return contract(t, t.matmul(v[0], v[1], true, true), w);
  }, {at, bt}) < 1e-6);
}

TEST_CASE("broadcast and reduction gradients") {
  Rng rng(4);
  const auto w = rand_tensor({3, 4}, rng);
  const auto x = rand_tensor({3, 4}, rng);
  const auto row = rand_tensor({4}, rng);
  const auto col = rand_tensor({3}, rng);

  SUBCASE("add_rowvec") {
    CHECK(gradcheck([&](TapeD& t, const std::vector<Var>& v) {
      return contract(t, t.add_rowvec(v[0], v[1]), w);
    }, {x, row}) < 1e-6);
  }
  SUBCASE("mul_rowvec") {
    CHECK(gradcheck([&](TapeD& t, const std::vector<Var>& v) {
      return contract(t, t.mul_rowvec(v[0], v[1]), w);
    }, {x, row}) < 1e-6);
  }
  SUBCASE("mul_colvec") {
    CHECK(gradcheck([&](TapeD& t, const std::vector<Var>& v) {
      return contract(t, t.mul_colvec(v[0], v[1]), w);
    }, {x, col}) < 1e-6);
  }
  SUBCASE("div_colvec") {
    auto d = rand_tensor({3}, rng, 0.5, 2.0);
    CHECK(gradcheck([&](TapeD& t, const std::vector<Var>& v) {
      return contract(t, t.div_colvec(v[0], v[1], 1e-8), w);
    }, {x, d}) < 1e-6);
  }
  SUBCASE("row_sum") {
    const auto wr = rand_tensor({3}, rng);
    CHECK(gradcheck([&](TapeD& t, const std::vector<Var>& v) {
      return contract(t, t.row_sum(v[0]), wr);
    }, {x}) < 1e-6);
  }
  SUBCASE("sum and mean") {
    CHECK(gradcheck([&](TapeD& t, const std::vector<Var>& v) {
      return t.sum(v[0]);
    }, {x}) < 1e-6);
    CHECK(gradcheck([&](TapeD& t, const std::vector<Var>& v) {
      return t.mean(v[0]);
    }, {x}) < 1e-6);
  }
  SUBCASE("squared_error_sum") {
    const auto y = rand_tensor({3, 4}, rng);
    CHECK(gradcheck([&](TapeD& t, const std::vector<Var>& v) {
      return t.squared_error_sum(v[0], v[1]);
    }, {x, y}) < 1e-6);
  }
}

TEST_CASE("softmax family gradients and normalization") {
  Rng rng(5);
  const auto x = rand_tensor({4, 6}, rng, -3.0, 3.0);
  const auto w = rand_tensor({4, 6}, rng);

  SUBCASE("softmax_rows") {
    CHECK(gradcheck([&](TapeD& t, const std::vector<Var>& v) {
      return contract(t, t.softmax_rows(v[0]), w);
    }, {x}) < 1e-6);
    TapeD t;
    auto y = t.value(t.softmax_rows(t.input(x)));
    for (int i = 0; i < 4; ++i) {
      double s = 0;
      for (int j = 0; j < 6; ++j) s += y.at(i, j);
      CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
    }
  }
  SUBCASE("softmax_cols") {
    CHECK(gradcheck([&](TapeD& t, const std::vector<Var>& v) {
      return contract(t, t.softmax_cols(v[0]), w);
    }, {x}) < 1e-6);
    TapeD t;
    auto y = t.value(t.softmax_cols(t.input(x)));
    for (int j = 0; j < 6; ++j) {
      double s = 0;
      for (int i = 0; i < 4; ++i) s += y.at(i, j);
      CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
    }
  }
  SUBCASE("log_softmax_rows") {
    CHECK(gradcheck([&](TapeD& t, const std::vector<Var>& v) {
      return contract(t, t.log_softmax_rows(v[0]), w);
    }, {x}) < 1e-6);
  }
  SUBCASE("softmax is shift invariant") {
    TapeD t;
    auto y1 = t.value(t.softmax_rows(t.input(x)));
    Tensor<D> shifted = x;
    for (std::int64_t i = 0; i < shifted.numel(); ++i) shifted[i] += 100.0;
    auto y2 = t.value(t.softmax_rows(t.input(shifted)));
    for (std::int64_t i = 0; i < y1.numel(); ++i)
      CHECK(y1[i] == doctest::Approx(y2[i]).epsilon(1e-9));
  }
}

TEST_CASE("layer_norm gradient") {
  Rng rng(6);
  const auto x = rand_tensor({3, 8}, rng);
  const auto gamma = rand_tensor({8}, rng, 0.5, 1.5);
  const auto beta = rand_tensor({8}, rng);
  const auto w = rand_tensor({3, 8}, rng);
  CHECK(gradcheck([&](TapeD& t, const std::vector<Var>& v) {
    return contract(t, t.layer_norm(v[0], v[1], v[2]), w);
  }, {x, gamma, beta}) < 1e-5);

  TapeD t;
  auto ones = Tensor<D>::full({8}, 1.0);
  auto zeros = Tensor<D>({8});
  auto y = t.value(t.layer_norm(t.input(x), t.input(ones), t.input(zeros)));
  for (int i = 0; i < 3; ++i) {
    double m = 0, var = 0;
    for (int j = 0; j < 8; ++j) m += y.at(i, j);
    m /= 8;
    for (int j = 0; j < 8; ++j) var += (y.at(i, j) - m) * (y.at(i, j) - m);
    var /= 8;
    CHECK(m == doctest::Approx(0.0).epsilon(1e-9));
    CHECK(var == doctest::Approx(1.0).epsilon(1e-4));
  }
}

TEST_CASE("conv2d gradients") {
  Rng rng(7);
  SUBCASE("5x5 stride 1 pad 2 preserves size") {
    const auto x = rand_tensor({2, 6, 6}, rng);
    const auto wt = rand_tensor({3, 2 * 5 * 5}, rng, -0.3, 0.3);
    const auto b = rand_tensor({3}, rng);
    const auto w = rand_tensor({3, 6, 6}, rng);
    CHECK(gradcheck([&](TapeD& t, const std::vector<Var>& v) {
      return contract(t, t.conv2d(v[0], v[1], v[2], 5, 5, 1, 2), w);
    }, {x, wt, b}) < 1e-5);
  }
  SUBCASE("4x4 stride 4 patchifier") {
    const auto x = rand_tensor({3, 8, 8}, rng);
    const auto wt = rand_tensor({5, 3 * 4 * 4}, rng, -0.3, 0.3);
    const auto b = rand_tensor({5}, rng);
    const auto w = rand_tensor({5, 2, 2}, rng);
    CHECK(gradcheck([&](TapeD& t, const std::vector<Var>& v) {
      return contract(t, t.conv2d(v[0], v[1], v[2], 4, 4, 4, 0), w);
    }, {x, wt, b}) < 1e-5);
  }
  SUBCASE("stride 2 with padding") {
    const auto x = rand_tensor({2, 7, 7}, rng);
    const auto wt = rand_tensor({2, 2 * 3 * 3}, rng, -0.3, 0.3);
    const auto b = rand_tensor({2}, rng);
    const auto w = rand_tensor({2, 4, 4}, rng);
    CHECK(gradcheck([&](TapeD& t, const std::vector<Var>& v) {
      return contract(t, t.conv2d(v[0], v[1], v[2], 3, 3, 2, 1), w);
    }, {x, wt, b}) < 1e-5);
  }
  SUBCASE("1x1 conv") {
    const auto x = rand_tensor({4, 3, 3}, rng);
    const auto wt = rand_tensor({6, 4}, rng, -0.3, 0.3);
    const auto b = rand_tensor({6}, rng);
    const auto w = rand_tensor({6, 3, 3}, rng);
    CHECK(gradcheck([&](TapeD& t, const std::vector<Var>& v) {
      return contract(t, t.conv2d(v[0], v[1], v[2], 1, 1, 1, 0), w);
    }, {x, wt, b}) < 1e-5);
  }
}

TEST_CASE("conv2d matches a direct convolution oracle") {
  Rng rng(8);
  const int ci = 2, h = 5, w = 5, co = 3, k = 3, stride = 2, pad = 1;
  const auto x = rand_tensor({ci, h, w}, rng);
  const auto wt = rand_tensor({co, ci * k * k}, rng);
  const auto b = rand_tensor({co}, rng);
  TapeD t;
  auto y = t.value(t.conv2d(t.input(x), t.input(wt), t.input(b), k, k, stride, pad));

  const int ho = (h + 2 * pad - k) / stride + 1;
  const int wo = (w + 2 * pad - k) / stride + 1;
  REQUIRE(y.dim(0) == co);
  REQUIRE(y.dim(1) == ho);
  REQUIRE(y.dim(2) == wo);
  for (int oc = 0; oc < co; ++oc)
    for (int oy = 0; oy < ho; ++oy)
      for (int ox = 0; ox < wo; ++ox) {
        double acc = b[oc];
        for (int c = 0; c < ci; ++c)
          for (int dy = 0; dy < k; ++dy)
            for (int dx = 0; dx < k; ++dx) {
              const int iy = oy * stride - pad + dy;
              const int ix = ox * stride - pad + dx;
              if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
              acc += x[(static_cast<std::int64_t>(c) * h + iy) * w + ix] *
                     wt.at(oc, (c * k + dy) * k + dx);
            }
        CHECK(y[(static_cast<std::int64_t>(oc) * ho + oy) * wo + ox] ==
              doctest::Approx(acc).epsilon(1e-10));
      }
}

TEST_CASE("pixel_shuffle and zero_upsample") {
  Rng rng(9);
  SUBCASE("pixel_shuffle value oracle") {
    // [r^2, 1, 1] becomes the r x r block laid out row by row.
    Tensor<D> x({4, 1, 1}, {1.0, 2.0, 3.0, 4.0});
    TapeD t;
    auto y = t.value(t.pixel_shuffle(t.input(x), 2));
    REQUIRE(y.dim(0) == 1);
    REQUIRE(y.dim(1) == 2);
    REQUIRE(y.dim(2) == 2);
    CHECK(y[0] == 1.0);
    CHECK(y[1] == 2.0);
    CHECK(y[2] == 3.0);
    CHECK(y[3] == 4.0);
  }
  SUBCASE("pixel_shuffle gradient") {
    const auto x = rand_tensor({8, 3, 3}, rng);
    const auto w = rand_tensor({2, 6, 6}, rng);
    CHECK(gradcheck([&](TapeD& t, const std::vector<Var>& v) {
      return contract(t, t.pixel_shuffle(v[0], 2), w);
    }, {x}) < 1e-6);
  }
  SUBCASE("zero_upsample places values on the stride grid") {
    Tensor<D> x({1, 2, 2}, {1.0, 2.0, 3.0, 4.0});
    TapeD t;
    auto y = t.value(t.zero_upsample(t.input(x), 2, 1));
    REQUIRE(y.dim(1) == 4);
    REQUIRE(y.dim(2) == 4);
    CHECK(y[0] == 1.0);
    CHECK(y[2] == 2.0);
    CHECK(y[8] == 3.0);
    CHECK(y[10] == 4.0);
    double total = 0;
    for (std::int64_t i = 0; i < y.numel(); ++i) total += y[i];
    CHECK(total == 10.0);
  }
  SUBCASE("zero_upsample gradient") {
    const auto x = rand_tensor({2, 3, 3}, rng);
    const auto w = rand_tensor({2, 5, 5}, rng);
    CHECK(gradcheck([&](TapeD& t, const std::vector<Var>& v) {
      return contract(t, t.zero_upsample(v[0], 2, 0), w);
    }, {x}) < 1e-6);
  }
}

TEST_CASE("embed_rows gradient scatters into the table") {
  Rng rng(10);
  const auto table = rand_tensor({5, 3}, rng);
  const std::vector<int> idx = {2, 0, 2, 4};
  const auto w = rand_tensor({4, 3}, rng);
  CHECK(gradcheck([&](TapeD& t, const std::vector<Var>& v) {
    return contract(t, t.embed_rows(v[0], idx), w);
  }, {table}) < 1e-6);
}

TEST_CASE("nll_rows matches manual cross entropy") {
  Rng rng(11);
  const auto x = rand_tensor({3, 5}, rng);
  const std::vector<int> targets = {1, 4, 0};
  CHECK(gradcheck([&](TapeD& t, const std::vector<Var>& v) {
    return t.nll_rows(t.log_softmax_rows(v[0]), targets);
  }, {x}) < 1e-6);

  TapeD t;
  auto logp = t.log_softmax_rows(t.input(x));
  const double loss = t.value(t.nll_rows(logp, targets))[0];
  double manual = 0;
  for (int i = 0; i < 3; ++i) manual -= t.value(logp).at(i, targets[i]);
  CHECK(loss == doctest::Approx(manual).epsilon(1e-12));
}

TEST_CASE("straight_through passes values forward and gradients back") {
  Rng rng(12);
  const auto soft = rand_tensor({2, 4}, rng);
  Tensor<D> hard({2, 4});
  hard.at(0, 1) = 1.0;
  hard.at(1, 3) = 1.0;
  const auto w = rand_tensor({2, 4}, rng);

  TapeD t;
  auto s = t.leaf(soft);
  auto st = t.straight_through(s, hard);
  for (std::int64_t i = 0; i < hard.numel(); ++i)
    CHECK(t.value(st)[i] == hard[i]);
  t.backward(contract(t, st, w));
  for (std::int64_t i = 0; i < w.numel(); ++i)
    CHECK(t.grad(s)[i] == doctest::Approx(w[i]));
}

TEST_CASE("detach blocks gradient flow") {
  Rng rng(13);
  const auto x = rand_tensor({2, 3}, rng);
  TapeD t;
  auto v = t.leaf(x);
  auto d = t.detach(v);
  auto loss = t.sum(t.mul(d, d));
  t.backward(loss);
  CHECK(t.grad(v).empty());
}

TEST_CASE("shared subexpressions accumulate") {
  // f(x) = sum(x*x + x), df/dx = 2x + 1.
  Rng rng(14);
  const auto x = rand_tensor({3, 3}, rng);
  TapeD t;
  auto v = t.leaf(x);
  t.backward(t.add(t.sum(t.mul(v, v)), t.sum(v)));
  for (std::int64_t i = 0; i < x.numel(); ++i)
    CHECK(t.grad(v)[i] == doctest::Approx(2 * x[i] + 1).epsilon(1e-12));
}

TEST_CASE("unused branches leave no gradient and cause no harm") {
  Rng rng(15);
  const auto x = rand_tensor({2, 2}, rng);
  TapeD t;
  auto v = t.leaf(x);
  auto used = t.sum(v);
  auto unused = t.sigmoid(v);
  (void)unused;
  t.backward(used);
  for (std::int64_t i = 0; i < x.numel(); ++i)
    CHECK(t.grad(v)[i] == doctest::Approx(1.0));
}

TEST_CASE("parameter gradients accumulate across tapes") {
  Rng rng(16);
  Param<D> p;
  p.name = "w";
  p.value = rand_tensor({2, 2}, rng);
  p.zero_grad();
  for (int rep = 0; rep < 3; ++rep) {
    TapeD t;
    t.backward(t.sum(t.param(p)));
  }
  for (std::int64_t i = 0; i < 4; ++i) CHECK(p.grad[i] == doctest::Approx(3.0));

  p.frozen = true;
  p.zero_grad();
  TapeD t;
  auto v = t.param(p);
  t.backward(t.sum(t.mul(v, v)));
  for (std::int64_t i = 0; i < 4; ++i) CHECK(p.grad[i] == 0.0);
}

TEST_CASE("dropout uses an inverted mask and matches its own gradient") {
  Rng rng(17);
  const auto x = rand_tensor({8, 8}, rng);
  TapeD t;
  auto v = t.leaf(x);
  Rng drop(99);
  auto y = t.dropout(v, 0.5, drop);
  const Tensor<D> yv = t.value(y);  // copied: later ops may relocate the tape
  int kept = 0;
  for (std::int64_t i = 0; i < yv.numel(); ++i) {
    const bool zero = yv[i] == 0.0;
    const bool scaled = std::fabs(yv[i] - 2.0 * x[i]) < 1e-12;
    CHECK((zero || scaled));
    kept += scaled ? 1 : 0;
  }
  CHECK(kept > 10);
  CHECK(kept < 54);
  t.backward(t.sum(y));
  for (std::int64_t i = 0; i < yv.numel(); ++i) {
    const double expect = (yv[i] == 0.0 && x[i] != 0.0) ? 0.0 : 2.0;
    CHECK(t.grad(v)[i] == doctest::Approx(expect));
  }

  TapeD t2;
  auto v2 = t2.leaf(x);
  CHECK(t2.dropout(v2, 0.0, drop) == v2);
}

TEST_CASE("gru cell gradient") {
  Rng rng(18);
  steve::GRUCell<D> cell("gru", 3, 4, rng);
  const auto x = rand_tensor({2, 3}, rng);
  const auto h = rand_tensor({2, 4}, rng);
  const auto w = rand_tensor({2, 4}, rng);
  CHECK(gradcheck([&](TapeD& t, const std::vector<Var>& v) {
    return contract(t, cell.apply(t, v[0], v[1]), w);
  }, {x, h}) < 1e-6);

  // Fully open update gate copies the previous state: with z ~ 1, h' ~ h.
  steve::GRUCell<D> copy_cell("copy", 3, 4, rng);
  copy_cell.ih.b.value.fill(0.0);
  copy_cell.hh.b.value.fill(0.0);
  for (int j = 4; j < 8; ++j) {
    copy_cell.ih.b.value[j] = 50.0;  // update-gate bias
  }
  TapeD t;
  auto out = t.value(copy_cell.apply(t, t.input(x), t.input(h)));
  for (std::int64_t i = 0; i < h.numel(); ++i)
    CHECK(out[i] == doctest::Approx(h[i]).epsilon(1e-9));
}

TEST_CASE("multi-head attention gradient and causal masking") {
  Rng rng(19);
  steve::MultiHeadAttention<D> mha("mha", 8, 2, rng);
  const auto q = rand_tensor({4, 8}, rng);
  const auto m = rand_tensor({5, 8}, rng);
  const auto w = rand_tensor({4, 8}, rng);
  CHECK(gradcheck([&](TapeD& t, const std::vector<Var>& v) {
    return contract(t, mha.apply(t, v[0], v[1]), w);
  }, {q, m}) < 1e-5);

  // Self-attention under a causal mask: output row i ignores rows > i.
  const auto mask = steve::causal_mask<D>(4);
  const auto x = rand_tensor({4, 8}, rng);
  TapeD t0;
  auto base = t0.value(mha.apply(t0, t0.input(x), t0.input(x), &mask));
  Tensor<D> xp = x;
  for (int j = 0; j < 8; ++j) xp.at(3, j) += 1.0;  // perturb the last row
  TapeD t1;
  auto pert = t1.value(mha.apply(t1, t1.input(xp), t1.input(xp), &mask));
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 8; ++j)
      CHECK(base.at(i, j) == doctest::Approx(pert.at(i, j)).epsilon(1e-12));
  bool changed = false;
  for (int j = 0; j < 8; ++j)
    changed = changed || std::fabs(base.at(3, j) - pert.at(3, j)) > 1e-9;
  CHECK(changed);
}

TEST_CASE("linear layer applies W x^T + b with registered params") {
  Rng rng(20);
  steve::Linear<D> lin("lin", 3, 2, rng);
  steve::ParamSet<D> ps;
  lin.reg(ps);
  CHECK(ps.count() == 3 * 2 + 2);

  const auto x = rand_tensor({4, 3}, rng);
  TapeD t;
  auto y = t.value(lin.apply(t, t.input(x)));
  for (int i = 0; i < 4; ++i)
    for (int o = 0; o < 2; ++o) {
      double acc = lin.b.value[o];
      for (int j = 0; j < 3; ++j) acc += x.at(i, j) * lin.w.value.at(o, j);
      CHECK(y.at(i, o) == doctest::Approx(acc).epsilon(1e-12));
    }
}
