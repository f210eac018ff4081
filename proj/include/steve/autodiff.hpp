// SPDX-License-Identifier: Apache-2.0
//
// Reverse-mode autodiff on a dynamic tape. Values are dense tensors; each op
// records a closure that propagates cotangents to its inputs. Parameters are
// bound by pointer so their gradients accumulate in place across tapes, which
// is what batched training relies on.

#ifndef STEVE_AUTODIFF_HPP
#define STEVE_AUTODIFF_HPP

#include "steve/rng.hpp"
#include "steve/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <functional>
#include <limits>
#include <string>
#include <utility>
#include <vector>

namespace steve {

/// Trainable parameter: named value + accumulated gradient. `frozen` detaches
/// it from every tape it is bound to.
template <typename T>
struct Param {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;
  bool frozen = false;

  void zero_grad() {
    if (grad.numel() != value.numel()) grad = Tensor<T>(value.shape());
    grad.fill(T(0));
  }
};

namespace conv_detail {

/// x: [Ci, H, W] -> cols: [Ci*kh*kw, Ho*Wo], zero padding.
template <typename T>
void im2col(const T* x, int ci, int h, int w, int kh, int kw, int stride,
            int pad, int ho, int wo, T* cols) {
  const std::int64_t plane = static_cast<std::int64_t>(h) * w;
  const std::int64_t out_plane = static_cast<std::int64_t>(ho) * wo;
  std::int64_t row = 0;
  for (int c = 0; c < ci; ++c) {
    for (int dy = 0; dy < kh; ++dy) {
      for (int dx = 0; dx < kw; ++dx, ++row) {
        T* dst = cols + row * out_plane;
        const T* src = x + c * plane;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * stride - pad + dy;
          if (iy < 0 || iy >= h) {
            std::fill(dst, dst + wo, T(0));
            dst += wo;
            continue;
          }
          const T* src_row = src + static_cast<std::int64_t>(iy) * w;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * stride - pad + dx;
            *dst++ = (ix >= 0 && ix < w) ? src_row[ix] : T(0);
          }
        }
      }
    }
  }
}

/// Adjoint of im2col: scatter-add cols back into the input layout.
template <typename T>
void col2im(const T* cols, int ci, int h, int w, int kh, int kw, int stride,
            int pad, int ho, int wo, T* x) {
  const std::int64_t plane = static_cast<std::int64_t>(h) * w;
  const std::int64_t out_plane = static_cast<std::int64_t>(ho) * wo;
  std::int64_t row = 0;
  for (int c = 0; c < ci; ++c) {
    for (int dy = 0; dy < kh; ++dy) {
      for (int dx = 0; dx < kw; ++dx, ++row) {
        const T* src = cols + row * out_plane;
        T* dst = x + c * plane;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * stride - pad + dy;
          if (iy < 0 || iy >= h) {
            src += wo;
            continue;
          }
          T* dst_row = dst + static_cast<std::int64_t>(iy) * w;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * stride - pad + dx;
            if (ix >= 0 && ix < w) dst_row[ix] += src[ox];
          }
          src += wo;
        }
      }
    }
  }
}

}  // namespace conv_detail

template <typename T>
class Tape {
public:
  using Var = int;

  /// Leaf holding a constant (no gradient).
  Var input(Tensor<T> v) { return push(std::move(v), false, nullptr); }

  /// Leaf that wants a gradient (e.g. finite-difference probes).
  Var leaf(Tensor<T> v) { return push(std::move(v), true, nullptr); }

  /// Bind a parameter. The node reads the parameter's storage directly and
  /// its cotangent accumulates straight into p.grad.
  Var param(Param<T>& p) {
    Node n;
    n.ext_value = &p.value;
    n.ext_grad = p.frozen ? nullptr : &p.grad;
    n.needs_grad = !p.frozen;
    nodes_.push_back(std::move(n));
    return static_cast<Var>(nodes_.size()) - 1;
  }

  const Tensor<T>& value(Var v) const {
    const Node& n = nodes_[static_cast<std::size_t>(v)];
    return n.ext_value ? *n.ext_value : n.value;
  }

  /// Gradient of a node after backward(); empty tensor if none flowed.
  const Tensor<T>& grad(Var v) const {
    const Node& n = nodes_[static_cast<std::size_t>(v)];
    return n.ext_grad ? *n.ext_grad : n.grad;
  }

  // ---- elementwise ---------------------------------------------------------

  Var add(Var a, Var b) {
    check(value(a).same_shape(value(b)), "add: shape mismatch " +
          value(a).shape_str() + " vs " + value(b).shape_str());
    Tensor<T> out(value(a).shape());
    const auto& av = value(a);
    const auto& bv = value(b);
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = av[i] + bv[i];
    return push(std::move(out), needs(a) || needs(b), [a, b](Tape& t, Var self) {
      const Tensor<T>& g = t.node_grad(self);
      if (t.needs(a)) t.accumulate(a, g);
      if (t.needs(b)) t.accumulate(b, g);
    });
  }

  Var sub(Var a, Var b) {
    check(value(a).same_shape(value(b)), "sub: shape mismatch");
    Tensor<T> out(value(a).shape());
    const auto& av = value(a);
    const auto& bv = value(b);
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = av[i] - bv[i];
    return push(std::move(out), needs(a) || needs(b), [a, b](Tape& t, Var self) {
      const Tensor<T>& g = t.node_grad(self);
      if (t.needs(a)) t.accumulate(a, g);
      if (t.needs(b)) {
        Tensor<T>& gb = t.grad_buffer(b);
        for (std::int64_t i = 0; i < g.numel(); ++i) gb[i] -= g[i];
      }
    });
  }

  Var mul(Var a, Var b) {
    check(value(a).same_shape(value(b)), "mul: shape mismatch");
    Tensor<T> out(value(a).shape());
    const auto& av = value(a);
    const auto& bv = value(b);
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = av[i] * bv[i];
    return push(std::move(out), needs(a) || needs(b), [a, b](Tape& t, Var self) {
      const Tensor<T>& g = t.node_grad(self);
      const auto& av = t.value(a);
      const auto& bv = t.value(b);
      if (t.needs(a)) {
        Tensor<T>& ga = t.grad_buffer(a);
        for (std::int64_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * bv[i];
      }
      if (t.needs(b)) {
        Tensor<T>& gb = t.grad_buffer(b);
        for (std::int64_t i = 0; i < g.numel(); ++i) gb[i] += g[i] * av[i];
      }
    });
  }

  Var scale(Var a, T s) {
    Tensor<T> out(value(a).shape());
    const auto& av = value(a);
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = av[i] * s;
    return push(std::move(out), needs(a), [a, s](Tape& t, Var self) {
      const Tensor<T>& g = t.node_grad(self);
      Tensor<T>& ga = t.grad_buffer(a);
      for (std::int64_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * s;
    });
  }

  /// x + c for a constant tensor c (e.g. attention masks, injected noise).
  Var add_const(Var a, const Tensor<T>& c) {
    check(value(a).same_shape(c), "add_const: shape mismatch");
    Tensor<T> out(value(a).shape());
    const auto& av = value(a);
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = av[i] + c[i];
    return push(std::move(out), needs(a), [a](Tape& t, Var self) {
      t.accumulate(a, t.node_grad(self));
    });
  }

  Var relu(Var a) {
    Tensor<T> out(value(a).shape());
    const auto& av = value(a);
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = av[i] > T(0) ? av[i] : T(0);
    return push(std::move(out), needs(a), [a](Tape& t, Var self) {
      const Tensor<T>& g = t.node_grad(self);
      const auto& av = t.value(a);
      Tensor<T>& ga = t.grad_buffer(a);
      for (std::int64_t i = 0; i < g.numel(); ++i)
        if (av[i] > T(0)) ga[i] += g[i];
    });
  }

  Var sigmoid(Var a) {
    Tensor<T> out(value(a).shape());
    const auto& av = value(a);
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = T(1) / (T(1) + std::exp(-av[i]));
    return push(std::move(out), needs(a), [a](Tape& t, Var self) {
      const Tensor<T>& g = t.node_grad(self);
      const Tensor<T>& y = t.value(self);
      Tensor<T>& ga = t.grad_buffer(a);
      for (std::int64_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * y[i] * (T(1) - y[i]);
    });
  }

  Var tanh_op(Var a) {
    Tensor<T> out(value(a).shape());
    const auto& av = value(a);
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = std::tanh(av[i]);
    return push(std::move(out), needs(a), [a](Tape& t, Var self) {
      const Tensor<T>& g = t.node_grad(self);
      const Tensor<T>& y = t.value(self);
      Tensor<T>& ga = t.grad_buffer(a);
      for (std::int64_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * (T(1) - y[i] * y[i]);
    });
  }

  Var exp_op(Var a) {
    Tensor<T> out(value(a).shape());
    const auto& av = value(a);
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = std::exp(av[i]);
    return push(std::move(out), needs(a), [a](Tape& t, Var self) {
      const Tensor<T>& g = t.node_grad(self);
      const Tensor<T>& y = t.value(self);
      Tensor<T>& ga = t.grad_buffer(a);
      for (std::int64_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * y[i];
    });
  }

  // ---- shape ---------------------------------------------------------------

  Var reshape(Var a, std::vector<int> shape) {
    Tensor<T> out = value(a).reshaped(std::move(shape));
    return push(std::move(out), needs(a), [a](Tape& t, Var self) {
      const Tensor<T>& g = t.node_grad(self);
      Tensor<T>& ga = t.grad_buffer(a);
      for (std::int64_t i = 0; i < g.numel(); ++i) ga[i] += g[i];
    });
  }

  Var transpose2d(Var a) {
    const Tensor<T>& av = value(a);
    const int r = av.rows(), c = av.cols();
    Tensor<T> out({c, r});
    as_matrix(out) = as_matrix(av).transpose();
    return push(std::move(out), needs(a), [a, r, c](Tape& t, Var self) {
      const Tensor<T>& g = t.node_grad(self);
      Tensor<T>& ga = t.grad_buffer(a);
      as_matrix(ga, r, c) += as_matrix(g, c, r).transpose();
    });
  }

  Var slice_cols(Var a, int c0, int n) {
    const Tensor<T>& av = value(a);
    const int r = av.rows(), c = av.cols();
    check(c0 >= 0 && c0 + n <= c, "slice_cols: out of range");
    Tensor<T> out({r, n});
    as_matrix(out) = as_matrix(av).middleCols(c0, n);
    return push(std::move(out), needs(a), [a, c0, n, r, c](Tape& t, Var self) {
      const Tensor<T>& g = t.node_grad(self);
      Tensor<T>& ga = t.grad_buffer(a);
      as_matrix(ga, r, c).middleCols(c0, n) += as_matrix(g, r, n);
    });
  }

  Var concat_cols(const std::vector<Var>& parts) {
    check(!parts.empty(), "concat_cols: empty");
    const int r = value(parts[0]).rows();
    int c = 0;
    bool ng = false;
    for (Var p : parts) {
      check(value(p).rows() == r, "concat_cols: row mismatch");
      c += value(p).cols();
      ng = ng || needs(p);
    }
    Tensor<T> out({r, c});
    int at = 0;
    for (Var p : parts) {
      const int pc = value(p).cols();
      as_matrix(out).middleCols(at, pc) = as_matrix(value(p));
      at += pc;
    }
    return push(std::move(out), ng, [parts, r, c](Tape& t, Var self) {
      const Tensor<T>& g = t.node_grad(self);
      int at = 0;
      for (Var p : parts) {
        const int pc = t.value(p).cols();
        if (t.needs(p)) {
          Tensor<T>& gp = t.grad_buffer(p);
          as_matrix(gp, r, pc) += as_matrix(g, r, c).middleCols(at, pc);
        }
        at += pc;
      }
    });
  }

  Var slice_rows(Var a, int r0, int n) {
    const Tensor<T>& av = value(a);
    const int r = av.rows(), c = av.cols();
    check(r0 >= 0 && r0 + n <= r, "slice_rows: out of range");
    Tensor<T> out({n, c});
    std::copy(av.data() + static_cast<std::int64_t>(r0) * c,
              av.data() + static_cast<std::int64_t>(r0 + n) * c, out.data());
    return push(std::move(out), needs(a), [a, r0, n, c](Tape& t, Var self) {
      const Tensor<T>& g = t.node_grad(self);
      Tensor<T>& ga = t.grad_buffer(a);
      T* dst = ga.data() + static_cast<std::int64_t>(r0) * c;
      for (std::int64_t i = 0; i < static_cast<std::int64_t>(n) * c; ++i) dst[i] += g[i];
    });
  }

  Var concat_rows(Var a, Var b) {
    const Tensor<T>& av = value(a);
    const Tensor<T>& bv = value(b);
    check(av.cols() == bv.cols(), "concat_rows: col mismatch");
    const int c = av.cols();
    Tensor<T> out({av.rows() + bv.rows(), c});
    std::copy(av.data(), av.data() + av.numel(), out.data());
    std::copy(bv.data(), bv.data() + bv.numel(), out.data() + av.numel());
    const std::int64_t na = av.numel();
    return push(std::move(out), needs(a) || needs(b), [a, b, na](Tape& t, Var self) {
      const Tensor<T>& g = t.node_grad(self);
      if (t.needs(a)) {
        Tensor<T>& ga = t.grad_buffer(a);
        for (std::int64_t i = 0; i < na; ++i) ga[i] += g[i];
      }
      if (t.needs(b)) {
        Tensor<T>& gb = t.grad_buffer(b);
        for (std::int64_t i = na; i < g.numel(); ++i) gb[i - na] += g[i];
      }
    });
  }

  // ---- linear algebra ------------------------------------------------------

  /// C = op(A) * op(B) with optional transposes.
  Var matmul(Var a, Var b, bool ta = false, bool tb = false) {
    const Tensor<T>& av = value(a);
    const Tensor<T>& bv = value(b);
    const int m = ta ? av.cols() : av.rows();
    const int ka = ta ? av.rows() : av.cols();
    const int kb = tb ? bv.cols() : bv.rows();
    const int n = tb ? bv.rows() : bv.cols();
    check(ka == kb, "matmul: inner dims " + std::to_string(ka) + " vs " + std::to_string(kb));
    Tensor<T> out({m, n});
    auto A = as_matrix(av);
    auto B = as_matrix(bv);
    auto C = as_matrix(out);
    if (!ta && !tb) C.noalias() = A * B;
    else if (ta && !tb) C.noalias() = A.transpose() * B;
    else if (!ta && tb) C.noalias() = A * B.transpose();
    else C.noalias() = A.transpose() * B.transpose();
    return push(std::move(out), needs(a) || needs(b), [a, b, ta, tb](Tape& t, Var self) {
      const Tensor<T>& gt = t.node_grad(self);
      auto G = as_matrix(gt);
      const Tensor<T>& av2 = t.value(a);
      const Tensor<T>& bv2 = t.value(b);
      auto A = as_matrix(av2);
      auto B = as_matrix(bv2);
      if (t.needs(a)) {
        auto GA = as_matrix(t.grad_buffer(a));
        if (!ta && !tb) GA.noalias() += G * B.transpose();
        else if (!ta && tb) GA.noalias() += G * B;
        else if (ta && !tb) GA.noalias() += B * G.transpose();
        else GA.noalias() += B.transpose() * G.transpose();
      }
      if (t.needs(b)) {
        auto GB = as_matrix(t.grad_buffer(b));
        if (!ta && !tb) GB.noalias() += A.transpose() * G;
        else if (ta && !tb) GB.noalias() += A * G;
        else if (!ta && tb) GB.noalias() += G.transpose() * A;
        else GB.noalias() += G.transpose() * A.transpose();
      }
    });
  }

  /// y[r, :] = x[r, :] + v  (bias broadcast over rows).
  Var add_rowvec(Var x, Var v) {
    const Tensor<T>& xv = value(x);
    const Tensor<T>& vv = value(v);
    const int r = xv.rows(), c = xv.cols();
    check(vv.numel() == c, "add_rowvec: width mismatch");
    Tensor<T> out({r, c});
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < c; ++j)
        out.at(i, j) = xv.at(i, j) + vv[j];
    return push(std::move(out), needs(x) || needs(v), [x, v, r, c](Tape& t, Var self) {
      const Tensor<T>& g = t.node_grad(self);
      if (t.needs(x)) t.accumulate(x, g);
      if (t.needs(v)) {
        Tensor<T>& gv = t.grad_buffer(v);
        for (int i = 0; i < r; ++i)
          for (int j = 0; j < c; ++j)
            gv[j] += g[static_cast<std::int64_t>(i) * c + j];
      }
    });
  }

  /// y[r, :] = x[r, :] * v  (per-column scaling broadcast over rows).
  Var mul_rowvec(Var x, Var v) {
    const Tensor<T>& xv = value(x);
    const Tensor<T>& vv = value(v);
    const int r = xv.rows(), c = xv.cols();
    check(vv.numel() == c, "mul_rowvec: width mismatch");
    Tensor<T> out({r, c});
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < c; ++j)
        out.at(i, j) = xv.at(i, j) * vv[j];
    return push(std::move(out), needs(x) || needs(v), [x, v, r, c](Tape& t, Var self) {
      const Tensor<T>& g = t.node_grad(self);
      const Tensor<T>& xv2 = t.value(x);
      const Tensor<T>& vv2 = t.value(v);
      if (t.needs(x)) {
        Tensor<T>& gx = t.grad_buffer(x);
        for (int i = 0; i < r; ++i)
          for (int j = 0; j < c; ++j)
            gx[static_cast<std::int64_t>(i) * c + j] +=
                g[static_cast<std::int64_t>(i) * c + j] * vv2[j];
      }
      if (t.needs(v)) {
        Tensor<T>& gv = t.grad_buffer(v);
        for (int i = 0; i < r; ++i)
          for (int j = 0; j < c; ++j)
            gv[j] += g[static_cast<std::int64_t>(i) * c + j] *
                     xv2[static_cast<std::int64_t>(i) * c + j];
      }
    });
  }

  /// y[r, c] = x[r, c] * s[r]  (per-row scaling).
  Var mul_colvec(Var x, Var s) {
    const Tensor<T>& xv = value(x);
    const Tensor<T>& sv = value(s);
    const int r = xv.rows(), c = xv.cols();
    check(sv.numel() == r, "mul_colvec: height mismatch");
    Tensor<T> out({r, c});
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < c; ++j)
        out.at(i, j) = xv.at(i, j) * sv[i];
    return push(std::move(out), needs(x) || needs(s), [x, s, r, c](Tape& t, Var self) {
      const Tensor<T>& g = t.node_grad(self);
      const Tensor<T>& xv2 = t.value(x);
      const Tensor<T>& sv2 = t.value(s);
      if (t.needs(x)) {
        Tensor<T>& gx = t.grad_buffer(x);
        for (int i = 0; i < r; ++i)
          for (int j = 0; j < c; ++j)
            gx[static_cast<std::int64_t>(i) * c + j] +=
                g[static_cast<std::int64_t>(i) * c + j] * sv2[i];
      }
      if (t.needs(s)) {
        Tensor<T>& gs = t.grad_buffer(s);
        for (int i = 0; i < r; ++i) {
          T acc = T(0);
          for (int j = 0; j < c; ++j)
            acc += g[static_cast<std::int64_t>(i) * c + j] *
                   xv2[static_cast<std::int64_t>(i) * c + j];
          gs[i] += acc;
        }
      }
    });
  }

  /// y[r, c] = x[r, c] / (d[r] + eps). The epsilon keeps empty-row
  /// normalizations finite.
  Var div_colvec(Var x, Var d, T eps) {
    const Tensor<T>& xv = value(x);
    const Tensor<T>& dv = value(d);
    const int r = xv.rows(), c = xv.cols();
    check(dv.numel() == r, "div_colvec: height mismatch");
    Tensor<T> out({r, c});
    for (int i = 0; i < r; ++i) {
      const T inv = T(1) / (dv[i] + eps);
      for (int j = 0; j < c; ++j) out.at(i, j) = xv.at(i, j) * inv;
    }
    return push(std::move(out), needs(x) || needs(d), [x, d, eps, r, c](Tape& t, Var self) {
      const Tensor<T>& g = t.node_grad(self);
      const Tensor<T>& y = t.value(self);
      const Tensor<T>& dv2 = t.value(d);
      if (t.needs(x)) {
        Tensor<T>& gx = t.grad_buffer(x);
        for (int i = 0; i < r; ++i) {
          const T inv = T(1) / (dv2[i] + eps);
          for (int j = 0; j < c; ++j)
            gx[static_cast<std::int64_t>(i) * c + j] +=
                g[static_cast<std::int64_t>(i) * c + j] * inv;
        }
      }
      if (t.needs(d)) {
        Tensor<T>& gd = t.grad_buffer(d);
        for (int i = 0; i < r; ++i) {
          const T inv = T(1) / (dv2[i] + eps);
          T acc = T(0);
          for (int j = 0; j < c; ++j)
            acc += g[static_cast<std::int64_t>(i) * c + j] *
                   y[static_cast<std::int64_t>(i) * c + j];
          gd[i] -= acc * inv;
        }
      }
    });
  }

  /// [R, C] -> [R] row sums.
  Var row_sum(Var x) {
    const Tensor<T>& xv = value(x);
    const int r = xv.rows(), c = xv.cols();
    Tensor<T> out({r});
    for (int i = 0; i < r; ++i) {
      T acc = T(0);
      for (int j = 0; j < c; ++j) acc += xv.at(i, j);
      out[i] = acc;
    }
    return push(std::move(out), needs(x), [x, r, c](Tape& t, Var self) {
      const Tensor<T>& g = t.node_grad(self);
      Tensor<T>& gx = t.grad_buffer(x);
      for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j)
          gx[static_cast<std::int64_t>(i) * c + j] += g[i];
    });
  }

  Var sum(Var x) {
    const Tensor<T>& xv = value(x);
    T acc = T(0);
    for (std::int64_t i = 0; i < xv.numel(); ++i) acc += xv[i];
    return push(Tensor<T>::scalar(acc), needs(x), [x](Tape& t, Var self) {
      const T g = t.node_grad(self)[0];
      Tensor<T>& gx = t.grad_buffer(x);
      for (std::int64_t i = 0; i < gx.numel(); ++i) gx[i] += g;
    });
  }

  Var mean(Var x) {
    const std::int64_t n = value(x).numel();
    return scale(sum(x), T(1) / static_cast<T>(n));
  }

  /// sum((a - b)^2) over all elements.
  Var squared_error_sum(Var a, Var b) {
    check(value(a).same_shape(value(b)), "squared_error_sum: shape mismatch");
    const Tensor<T>& av = value(a);
    const Tensor<T>& bv = value(b);
    T acc = T(0);
    for (std::int64_t i = 0; i < av.numel(); ++i) {
      const T d = av[i] - bv[i];
      acc += d * d;
    }
    return push(Tensor<T>::scalar(acc), needs(a) || needs(b), [a, b](Tape& t, Var self) {
      const T g = t.node_grad(self)[0];
      const Tensor<T>& av2 = t.value(a);
      const Tensor<T>& bv2 = t.value(b);
      if (t.needs(a)) {
        Tensor<T>& ga = t.grad_buffer(a);
        for (std::int64_t i = 0; i < ga.numel(); ++i)
          ga[i] += T(2) * (av2[i] - bv2[i]) * g;
      }
      if (t.needs(b)) {
        Tensor<T>& gb = t.grad_buffer(b);
        for (std::int64_t i = 0; i < gb.numel(); ++i)
          gb[i] -= T(2) * (av2[i] - bv2[i]) * g;
      }
    });
  }

  // ---- nn ------------------------------------------------------------------

  Var softmax_rows(Var x) { return softmax_impl(x, /*over_rows=*/true); }

  /// Softmax over the row (slot) axis: each column sums to 1.
  Var softmax_cols(Var x) { return softmax_impl(x, /*over_rows=*/false); }

  Var log_softmax_rows(Var x) {
    const Tensor<T>& xv = value(x);
    const int r = xv.rows(), c = xv.cols();
    Tensor<T> out({r, c});
    for (int i = 0; i < r; ++i) {
      T mx = -std::numeric_limits<T>::infinity();
      for (int j = 0; j < c; ++j) mx = std::max(mx, xv.at(i, j));
      T lse = T(0);
      for (int j = 0; j < c; ++j) lse += std::exp(xv.at(i, j) - mx);
      lse = mx + std::log(lse);
      for (int j = 0; j < c; ++j) out.at(i, j) = xv.at(i, j) - lse;
    }
    return push(std::move(out), needs(x), [x, r, c](Tape& t, Var self) {
      const Tensor<T>& g = t.node_grad(self);
      const Tensor<T>& y = t.value(self);
      Tensor<T>& gx = t.grad_buffer(x);
      for (int i = 0; i < r; ++i) {
        T gsum = T(0);
        for (int j = 0; j < c; ++j) gsum += g[static_cast<std::int64_t>(i) * c + j];
        for (int j = 0; j < c; ++j) {
          const std::int64_t k = static_cast<std::int64_t>(i) * c + j;
          gx[k] += g[k] - std::exp(y[k]) * gsum;
        }
      }
    });
  }

  /// Row-wise LayerNorm with affine gamma/beta of width C.
  Var layer_norm(Var x, Var gamma, Var beta, T eps = T(1e-5)) {
    const Tensor<T>& xv = value(x);
    const int r = xv.rows(), c = xv.cols();
    check(value(gamma).numel() == c && value(beta).numel() == c,
          "layer_norm: affine width mismatch");
    Tensor<T> out({r, c});
    Tensor<T> xhat({r, c});
    Tensor<T> inv_std({r});
    const Tensor<T>& gv = value(gamma);
    const Tensor<T>& bv = value(beta);
    for (int i = 0; i < r; ++i) {
      T m = T(0);
      for (int j = 0; j < c; ++j) m += xv.at(i, j);
      m /= static_cast<T>(c);
      T var = T(0);
      for (int j = 0; j < c; ++j) {
        const T d = xv.at(i, j) - m;
        var += d * d;
      }
      var /= static_cast<T>(c);
      const T is = T(1) / std::sqrt(var + eps);
      inv_std[i] = is;
      for (int j = 0; j < c; ++j) {
        const T xh = (xv.at(i, j) - m) * is;
        xhat.at(i, j) = xh;
        out.at(i, j) = xh * gv[j] + bv[j];
      }
    }
    Var self = push(std::move(out), needs(x) || needs(gamma) || needs(beta), nullptr);
    nodes_[static_cast<std::size_t>(self)].saved.push_back(std::move(xhat));
    nodes_[static_cast<std::size_t>(self)].saved.push_back(std::move(inv_std));
    nodes_[static_cast<std::size_t>(self)].back = [x, gamma, beta, r, c](Tape& t, Var sv) {
      const Tensor<T>& g = t.node_grad(sv);
      const Tensor<T>& xh = t.nodes_[static_cast<std::size_t>(sv)].saved[0];
      const Tensor<T>& is = t.nodes_[static_cast<std::size_t>(sv)].saved[1];
      const Tensor<T>& gv2 = t.value(gamma);
      if (t.needs(gamma)) {
        Tensor<T>& gg = t.grad_buffer(gamma);
        for (int i = 0; i < r; ++i)
          for (int j = 0; j < c; ++j)
            gg[j] += g[static_cast<std::int64_t>(i) * c + j] *
                     xh[static_cast<std::int64_t>(i) * c + j];
      }
      if (t.needs(beta)) {
        Tensor<T>& gb = t.grad_buffer(beta);
        for (int i = 0; i < r; ++i)
          for (int j = 0; j < c; ++j)
            gb[j] += g[static_cast<std::int64_t>(i) * c + j];
      }
      if (t.needs(x)) {
        Tensor<T>& gx = t.grad_buffer(x);
        for (int i = 0; i < r; ++i) {
          T mean_dxhat = T(0), mean_dxhat_xhat = T(0);
          for (int j = 0; j < c; ++j) {
            const std::int64_t k = static_cast<std::int64_t>(i) * c + j;
            const T dxh = g[k] * gv2[j];
            mean_dxhat += dxh;
            mean_dxhat_xhat += dxh * xh[k];
          }
          mean_dxhat /= static_cast<T>(c);
          mean_dxhat_xhat /= static_cast<T>(c);
          for (int j = 0; j < c; ++j) {
            const std::int64_t k = static_cast<std::int64_t>(i) * c + j;
            const T dxh = g[k] * gv2[j];
            gx[k] += is[i] * (dxh - mean_dxhat - xh[k] * mean_dxhat_xhat);
          }
        }
      }
    };
    return self;
  }

  /// conv2d: x [Ci, H, W], w [Co, Ci*kh*kw], b [Co] -> [Co, Ho, Wo].
  /// The im2col buffer is recomputed in backward to keep tape memory small.
  Var conv2d(Var x, Var w, Var b, int kh, int kw, int stride, int pad) {
    const Tensor<T>& xv = value(x);
    check(xv.rank() == 3, "conv2d: input must be [C,H,W]");
    const int ci = xv.dim(0), h = xv.dim(1), wd = xv.dim(2);
    const Tensor<T>& wv = value(w);
    const int co = wv.rows();
    check(wv.cols() == ci * kh * kw, "conv2d: weight shape mismatch");
    check(value(b).numel() == co, "conv2d: bias mismatch");
    const int ho = (h + 2 * pad - kh) / stride + 1;
    const int wo = (wd + 2 * pad - kw) / stride + 1;
    check(ho > 0 && wo > 0, "conv2d: output collapses to zero");
    Tensor<T> cols({ci * kh * kw, ho * wo});
    conv_detail::im2col(xv.data(), ci, h, wd, kh, kw, stride, pad, ho, wo, cols.data());
    Tensor<T> out({co, ho, wo});
    as_matrix(out, co, ho * wo).noalias() = as_matrix(wv) * as_matrix(cols);
    const Tensor<T>& bv = value(b);
    for (int oc = 0; oc < co; ++oc) {
      T* p = out.data() + static_cast<std::int64_t>(oc) * ho * wo;
      for (int i = 0; i < ho * wo; ++i) p[i] += bv[oc];
    }
    return push(std::move(out), needs(x) || needs(w) || needs(b),
                [x, w, b, kh, kw, stride, pad, ci, h, wd, co, ho, wo](Tape& t, Var self) {
      const Tensor<T>& g = t.node_grad(self);
      auto G = as_matrix(g, co, ho * wo);
      if (t.needs(b)) {
        Tensor<T>& gb = t.grad_buffer(b);
        for (int oc = 0; oc < co; ++oc) {
          T acc = T(0);
          const T* p = g.data() + static_cast<std::int64_t>(oc) * ho * wo;
          for (int i = 0; i < ho * wo; ++i) acc += p[i];
          gb[oc] += acc;
        }
      }
      if (t.needs(w)) {
        const Tensor<T>& xv2 = t.value(x);
        Tensor<T> cols({ci * kh * kw, ho * wo});
        conv_detail::im2col(xv2.data(), ci, h, wd, kh, kw, stride, pad, ho, wo, cols.data());
        auto GW = as_matrix(t.grad_buffer(w));
        GW.noalias() += G * as_matrix(cols).transpose();
      }
      if (t.needs(x)) {
        const Tensor<T>& wv2 = t.value(w);
        Tensor<T> dcols({ci * kh * kw, ho * wo});
        as_matrix(dcols).noalias() = as_matrix(wv2).transpose() * G;
        Tensor<T>& gx = t.grad_buffer(x);
        conv_detail::col2im(dcols.data(), ci, h, wd, kh, kw, stride, pad, ho, wo, gx.data());
      }
    });
  }

  /// [C*r^2, H, W] -> [C, H*r, W*r]; input channel c*r^2 + dy*r + dx feeds
  /// output pixel (y*r+dy, x*r+dx) of channel c.
  Var pixel_shuffle(Var x, int r) {
    const Tensor<T>& xv = value(x);
    check(xv.rank() == 3, "pixel_shuffle: input must be [C,H,W]");
    const int cin = xv.dim(0), h = xv.dim(1), w = xv.dim(2);
    check(cin % (r * r) == 0, "pixel_shuffle: channels not divisible by r^2");
    const int cout = cin / (r * r);
    Tensor<T> out({cout, h * r, w * r});
    for (int c = 0; c < cout; ++c)
      for (int dy = 0; dy < r; ++dy)
        for (int dx = 0; dx < r; ++dx) {
          const T* src = xv.data() +
              (static_cast<std::int64_t>(c) * r * r + dy * r + dx) * h * w;
          for (int y = 0; y < h; ++y)
            for (int xx = 0; xx < w; ++xx)
              out[(static_cast<std::int64_t>(c) * h * r + y * r + dy) * (w * r) +
                  xx * r + dx] = src[static_cast<std::int64_t>(y) * w + xx];
        }
    return push(std::move(out), needs(x), [x, r, cout, h, w](Tape& t, Var self) {
      const Tensor<T>& g = t.node_grad(self);
      Tensor<T>& gx = t.grad_buffer(x);
      for (int c = 0; c < cout; ++c)
        for (int dy = 0; dy < r; ++dy)
          for (int dx = 0; dx < r; ++dx) {
            T* dst = gx.data() +
                (static_cast<std::int64_t>(c) * r * r + dy * r + dx) * h * w;
            for (int y = 0; y < h; ++y)
              for (int xx = 0; xx < w; ++xx)
                dst[static_cast<std::int64_t>(y) * w + xx] +=
                    g[(static_cast<std::int64_t>(c) * h * r + y * r + dy) * (w * r) +
                      xx * r + dx];
          }
    });
  }

  /// Zero-stuffing upsample used to express transposed convolutions:
  /// [C, H, W] -> [C, (H-1)*s+1+extra, (W-1)*s+1+extra].
  Var zero_upsample(Var x, int s, int extra) {
    const Tensor<T>& xv = value(x);
    check(xv.rank() == 3, "zero_upsample: input must be [C,H,W]");
    const int c = xv.dim(0), h = xv.dim(1), w = xv.dim(2);
    const int ho = (h - 1) * s + 1 + extra;
    const int wo = (w - 1) * s + 1 + extra;
    Tensor<T> out({c, ho, wo});
    for (int ch = 0; ch < c; ++ch)
      for (int y = 0; y < h; ++y)
        for (int xx = 0; xx < w; ++xx)
          out[(static_cast<std::int64_t>(ch) * ho + y * s) * wo + xx * s] =
              xv[(static_cast<std::int64_t>(ch) * h + y) * w + xx];
    return push(std::move(out), needs(x), [x, s, c, h, w, ho, wo](Tape& t, Var self) {
      const Tensor<T>& g = t.node_grad(self);
      Tensor<T>& gx = t.grad_buffer(x);
      for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y < h; ++y)
          for (int xx = 0; xx < w; ++xx)
            gx[(static_cast<std::int64_t>(ch) * h + y) * w + xx] +=
                g[(static_cast<std::int64_t>(ch) * ho + y * s) * wo + xx * s];
    });
  }

  /// Row gather from an embedding table [V, D] by integer indices.
  Var embed_rows(Var table, std::vector<int> idx) {
    const Tensor<T>& tv = value(table);
    const int v = tv.rows(), d = tv.cols();
    Tensor<T> out({static_cast<int>(idx.size()), d});
    for (std::size_t i = 0; i < idx.size(); ++i) {
      check(idx[i] >= 0 && idx[i] < v, "embed_rows: index out of vocabulary");
      std::copy(tv.data() + static_cast<std::int64_t>(idx[i]) * d,
                tv.data() + static_cast<std::int64_t>(idx[i] + 1) * d,
                out.data() + static_cast<std::int64_t>(i) * d);
    }
    return push(std::move(out), needs(table),
                [table, idx = std::move(idx), d](Tape& t, Var self) {
      const Tensor<T>& g = t.node_grad(self);
      Tensor<T>& gt = t.grad_buffer(table);
      for (std::size_t i = 0; i < idx.size(); ++i) {
        T* dst = gt.data() + static_cast<std::int64_t>(idx[i]) * d;
        const T* src = g.data() + static_cast<std::int64_t>(i) * d;
        for (int j = 0; j < d; ++j) dst[j] += src[j];
      }
    });
  }

  /// Inverted dropout: scales survivors by 1/(1-rate). Pass rate 0 to bypass.
  Var dropout(Var x, T rate, Rng& rng) {
    if (rate <= T(0)) return x;
    const Tensor<T>& xv = value(x);
    Tensor<T> mask(xv.shape());
    const T keep = T(1) - rate;
    const T inv = T(1) / keep;
    for (std::int64_t i = 0; i < mask.numel(); ++i)
      mask[i] = rng.uniform() < static_cast<double>(keep) ? inv : T(0);
    Tensor<T> out(xv.shape());
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = xv[i] * mask[i];
    Var self = push(std::move(out), needs(x), nullptr);
    nodes_[static_cast<std::size_t>(self)].saved.push_back(std::move(mask));
    nodes_[static_cast<std::size_t>(self)].back = [x](Tape& t, Var sv) {
      const Tensor<T>& g = t.node_grad(sv);
      const Tensor<T>& m = t.nodes_[static_cast<std::size_t>(sv)].saved[0];
      Tensor<T>& gx = t.grad_buffer(x);
      for (std::int64_t i = 0; i < g.numel(); ++i) gx[i] += g[i] * m[i];
    };
    return self;
  }

  /// Cut the graph: value passes through, gradient does not.
  Var detach(Var x) { return input(value(x)); }

  /// Straight-through estimator: forward value is `hard`, gradient flows to
  /// `soft` unchanged.
  Var straight_through(Var soft, Tensor<T> hard) {
    check(value(soft).same_shape(hard), "straight_through: shape mismatch");
    return push(std::move(hard), needs(soft), [soft](Tape& t, Var self) {
      t.accumulate(soft, t.node_grad(self));
    });
  }

  /// Sum over rows of -logp[r, target_r] for log-probability rows.
  Var nll_rows(Var logp, std::vector<int> targets) {
    const Tensor<T>& lv = value(logp);
    const int r = lv.rows(), c = lv.cols();
    check(static_cast<int>(targets.size()) == r, "nll_rows: target count mismatch");
    T acc = T(0);
    for (int i = 0; i < r; ++i) {
      check(targets[i] >= 0 && targets[i] < c, "nll_rows: target out of range");
      acc -= lv.at(i, targets[i]);
    }
    return push(Tensor<T>::scalar(acc), needs(logp),
                [logp, targets = std::move(targets), c](Tape& t, Var self) {
      const T g = t.node_grad(self)[0];
      Tensor<T>& gl = t.grad_buffer(logp);
      for (std::size_t i = 0; i < targets.size(); ++i)
        gl[static_cast<std::int64_t>(i) * c + targets[i]] -= g;
    });
  }

  // ---- engine --------------------------------------------------------------

  bool needs(Var v) const { return nodes_[static_cast<std::size_t>(v)].needs_grad; }

  /// Reverse pass from a scalar node. Parameter gradients accumulate into
  /// their Param::grad buffers (not zeroed here).
  void backward(Var loss) {
    check(value(loss).numel() == 1, "backward: loss must be scalar");
    grad_buffer(loss)[0] = T(1);
    for (Var v = loss; v >= 0; --v) {
      Node& n = nodes_[static_cast<std::size_t>(v)];
      if (!n.needs_grad || !n.back) continue;
      if (n.grad.empty()) continue;  // no cotangent reached this node
      n.back(*this, v);
    }
  }

  std::size_t size() const { return nodes_.size(); }

private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    const Tensor<T>* ext_value = nullptr;  // parameter binding
    Tensor<T>* ext_grad = nullptr;
    bool needs_grad = false;
    std::function<void(Tape&, Var)> back;
    std::vector<Tensor<T>> saved;
  };

  Var push(Tensor<T> v, bool needs_grad, std::function<void(Tape&, Var)> back) {
    Node n;
    n.value = std::move(v);
    n.needs_grad = needs_grad;
    if (needs_grad) n.back = std::move(back);
    nodes_.push_back(std::move(n));
    return static_cast<Var>(nodes_.size()) - 1;
  }

  /// Mutable gradient buffer for a node, created zeroed on first use. For
  /// bound parameters this is the Param's own grad tensor.
  Tensor<T>& grad_buffer(Var v) {
    Node& n = nodes_[static_cast<std::size_t>(v)];
    if (n.ext_grad) {
      if (n.ext_grad->numel() != n.ext_value->numel())
        *n.ext_grad = Tensor<T>(n.ext_value->shape());
      return *n.ext_grad;
    }
    if (n.grad.empty()) n.grad = Tensor<T>(n.ext_value ? n.ext_value->shape()
                                                       : n.value.shape());
    return n.grad;
  }

  const Tensor<T>& node_grad(Var v) {
    return grad_buffer(v);
  }

  void accumulate(Var v, const Tensor<T>& g) {
    Tensor<T>& dst = grad_buffer(v);
    for (std::int64_t i = 0; i < g.numel(); ++i) dst[i] += g[i];
  }

  Var softmax_impl(Var x, bool over_rows) {
    const Tensor<T>& xv = value(x);
    const int r = xv.rows(), c = xv.cols();
    Tensor<T> out({r, c});
    if (over_rows) {
      for (int i = 0; i < r; ++i) {
        T mx = -std::numeric_limits<T>::infinity();
        for (int j = 0; j < c; ++j) mx = std::max(mx, xv.at(i, j));
        T z = T(0);
        for (int j = 0; j < c; ++j) {
          out.at(i, j) = std::exp(xv.at(i, j) - mx);
          z += out.at(i, j);
        }
        for (int j = 0; j < c; ++j) out.at(i, j) /= z;
      }
    } else {
      for (int j = 0; j < c; ++j) {
        T mx = -std::numeric_limits<T>::infinity();
        for (int i = 0; i < r; ++i) mx = std::max(mx, xv.at(i, j));
        T z = T(0);
        for (int i = 0; i < r; ++i) {
          out.at(i, j) = std::exp(xv.at(i, j) - mx);
          z += out.at(i, j);
        }
        for (int i = 0; i < r; ++i) out.at(i, j) /= z;
      }
    }
    return push(std::move(out), needs(x), [x, r, c, over_rows](Tape& t, Var self) {
      const Tensor<T>& g = t.node_grad(self);
      const Tensor<T>& y = t.value(self);
      Tensor<T>& gx = t.grad_buffer(x);
      if (over_rows) {
        for (int i = 0; i < r; ++i) {
          T dot = T(0);
          for (int j = 0; j < c; ++j) {
            const std::int64_t k = static_cast<std::int64_t>(i) * c + j;
            dot += g[k] * y[k];
          }
          for (int j = 0; j < c; ++j) {
            const std::int64_t k = static_cast<std::int64_t>(i) * c + j;
            gx[k] += y[k] * (g[k] - dot);
          }
        }
      } else {
        for (int j = 0; j < c; ++j) {
          T dot = T(0);
          for (int i = 0; i < r; ++i) {
            const std::int64_t k = static_cast<std::int64_t>(i) * c + j;
            dot += g[k] * y[k];
          }
          for (int i = 0; i < r; ++i) {
            const std::int64_t k = static_cast<std::int64_t>(i) * c + j;
            gx[k] += y[k] * (g[k] - dot);
          }
        }
      }
    });
  }

  // Deque keeps references from value()/grad() stable while ops are pushed.
  std::deque<Node> nodes_;
};

}  // namespace steve

#endif  // STEVE_AUTODIFF_HPP
