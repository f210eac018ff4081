// SPDX-License-Identifier: Apache-2.0
//
// Layer library on top of the tape: parameter containers, linear/conv/norm
// layers, a GRU cell, and multi-head attention builders. Initialization is
// fully determined by the Rng handed in, so models are reproducible from a
// seed.

#ifndef STEVE_NN_HPP
#define STEVE_NN_HPP

#include "steve/autodiff.hpp"
#include "steve/rng.hpp"
#include "steve/tensor.hpp"

#include <cmath>
#include <string>
#include <utility>
#include <vector>

namespace steve {

/// Registry of parameters owned by a model. Pointers stay stable because
/// members register themselves; the set only stores addresses.
template <typename T>
class ParamSet {
public:
  void add(Param<T>* p) { params_.push_back(p); }
  void add(ParamSet<T>& other) {
    for (Param<T>* p : other.params_) params_.push_back(p);
  }
  const std::vector<Param<T>*>& all() const { return params_; }

  void zero_grad() {
    for (Param<T>* p : params_) p->zero_grad();
  }
  void set_frozen(bool f) {
    for (Param<T>* p : params_) p->frozen = f;
  }
  std::int64_t count() const {
    std::int64_t n = 0;
    for (Param<T>* p : params_) n += p->value.numel();
    return n;
  }

private:
  std::vector<Param<T>*> params_;
};

namespace init {

/// U(-1/sqrt(fan_in), 1/sqrt(fan_in)), the convention for linear and conv
/// weights and their biases.
template <typename T>
Tensor<T> uniform_fan_in(std::vector<int> shape, int fan_in, Rng& rng) {
  Tensor<T> t(std::move(shape));
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (std::int64_t i = 0; i < t.numel(); ++i)
    t[i] = static_cast<T>(rng.uniform(-bound, bound));
  return t;
}

/// N(0, std), used for embedding tables and positional parameters.
template <typename T>
Tensor<T> normal(std::vector<int> shape, double std_dev, Rng& rng) {
  Tensor<T> t(std::move(shape));
  for (std::int64_t i = 0; i < t.numel(); ++i)
    t[i] = static_cast<T>(rng.normal() * std_dev);
  return t;
}

}  // namespace init

/// y = x W^T + b with W stored [out, in].
template <typename T>
struct Linear {
  Param<T> w, b;
  bool has_bias = true;

  Linear() = default;
  Linear(const std::string& name, int in, int out, Rng& rng, bool bias = true)
      : has_bias(bias) {
    w.name = name + ".w";
    w.value = init::uniform_fan_in<T>({out, in}, in, rng);
    b.name = name + ".b";
    b.value = bias ? init::uniform_fan_in<T>({out}, in, rng)
                   : Tensor<T>({out});
  }

  void reg(ParamSet<T>& ps) {
    ps.add(&w);
    if (has_bias) ps.add(&b);
  }

  typename Tape<T>::Var apply(Tape<T>& t, typename Tape<T>::Var x) const {
    auto y = t.matmul(x, t.param(const_cast<Param<T>&>(w)), false, true);
    if (has_bias) y = t.add_rowvec(y, t.param(const_cast<Param<T>&>(b)));
    return y;
  }
};

/// conv2d wrapper; weight stored [out, in*kh*kw].
template <typename T>
struct Conv2d {
  Param<T> w, b;
  int kh = 0, kw = 0, stride = 1, pad = 0;

  Conv2d() = default;
  Conv2d(const std::string& name, int in, int out, int k, int stride_, int pad_,
         Rng& rng)
      : kh(k), kw(k), stride(stride_), pad(pad_) {
    const int fan_in = in * k * k;
    w.name = name + ".w";
    w.value = init::uniform_fan_in<T>({out, fan_in}, fan_in, rng);
    b.name = name + ".b";
    b.value = init::uniform_fan_in<T>({out}, fan_in, rng);
  }

  void reg(ParamSet<T>& ps) {
    ps.add(&w);
    ps.add(&b);
  }

  typename Tape<T>::Var apply(Tape<T>& t, typename Tape<T>::Var x) const {
    return t.conv2d(x, t.param(const_cast<Param<T>&>(w)),
                    t.param(const_cast<Param<T>&>(b)), kh, kw, stride, pad);
  }
};

/// LayerNorm with learned affine, gamma=1 beta=0 at init.
template <typename T>
struct LayerNorm {
  Param<T> gamma, beta;

  LayerNorm() = default;
  LayerNorm(const std::string& name, int width) {
    gamma.name = name + ".gamma";
    gamma.value = Tensor<T>::full({width}, T(1));
    beta.name = name + ".beta";
    beta.value = Tensor<T>({width});
  }

  void reg(ParamSet<T>& ps) {
    ps.add(&gamma);
    ps.add(&beta);
  }

  typename Tape<T>::Var apply(Tape<T>& t, typename Tape<T>::Var x) const {
    return t.layer_norm(x, t.param(const_cast<Param<T>&>(gamma)),
                        t.param(const_cast<Param<T>&>(beta)));
  }
};

/// GRU cell over row-batched states. Gate layout in the stacked projections
/// is [reset | update | candidate], i.e.
///   r = sigmoid(W_ir x + b_ir + W_hr h + b_hr)
///   z = sigmoid(W_iz x + b_iz + W_hz h + b_hz)
///   n = tanh(W_in x + b_in + r * (W_hn h + b_hn))
///   h' = (1 - z) * n + z * h
template <typename T>
struct GRUCell {
  Linear<T> ih, hh;
  int hidden = 0;

  GRUCell() = default;
  GRUCell(const std::string& name, int in, int hidden_, Rng& rng)
      : ih(name + ".ih", in, 3 * hidden_, rng),
        hh(name + ".hh", hidden_, 3 * hidden_, rng),
        hidden(hidden_) {}

  void reg(ParamSet<T>& ps) {
    ih.reg(ps);
    hh.reg(ps);
  }

  typename Tape<T>::Var apply(Tape<T>& t, typename Tape<T>::Var x,
                              typename Tape<T>::Var h) const {
    auto gi = ih.apply(t, x);
    auto gh = hh.apply(t, h);
    auto r = t.sigmoid(t.add(t.slice_cols(gi, 0, hidden),
                             t.slice_cols(gh, 0, hidden)));
    auto z = t.sigmoid(t.add(t.slice_cols(gi, hidden, hidden),
                             t.slice_cols(gh, hidden, hidden)));
    auto n = t.tanh_op(t.add(t.slice_cols(gi, 2 * hidden, hidden),
                             t.mul(r, t.slice_cols(gh, 2 * hidden, hidden))));
    // h' = n + z * (h - n)
    return t.add(n, t.mul(z, t.sub(h, n)));
  }
};

/// Multi-head attention. Query rows attend over key/value rows; an optional
/// additive mask (e.g. causal) is applied to the pre-softmax scores of every
/// head.
template <typename T>
struct MultiHeadAttention {
  Linear<T> q_proj, k_proj, v_proj, o_proj;
  int heads = 1;
  int dim = 0;

  MultiHeadAttention() = default;
  MultiHeadAttention(const std::string& name, int dim_, int heads_, Rng& rng)
      : q_proj(name + ".q", dim_, dim_, rng),
        k_proj(name + ".k", dim_, dim_, rng),
        v_proj(name + ".v", dim_, dim_, rng),
        o_proj(name + ".o", dim_, dim_, rng),
        heads(heads_),
        dim(dim_) {
    check(dim_ % heads_ == 0, "attention: dim not divisible by heads");
  }

  void reg(ParamSet<T>& ps) {
    q_proj.reg(ps);
    k_proj.reg(ps);
    v_proj.reg(ps);
    o_proj.reg(ps);
  }

  typename Tape<T>::Var apply(Tape<T>& t, typename Tape<T>::Var query,
                              typename Tape<T>::Var memory,
                              const Tensor<T>* mask = nullptr) const {
    const int dh = dim / heads;
    auto q = q_proj.apply(t, query);
    auto k = k_proj.apply(t, memory);
    auto v = v_proj.apply(t, memory);
    std::vector<typename Tape<T>::Var> outs;
    outs.reserve(heads);
    const T inv_sqrt = T(1) / static_cast<T>(std::sqrt(static_cast<double>(dh)));
    for (int h = 0; h < heads; ++h) {
      auto qh = t.slice_cols(q, h * dh, dh);
      auto kh = t.slice_cols(k, h * dh, dh);
      auto vh = t.slice_cols(v, h * dh, dh);
      auto scores = t.scale(t.matmul(qh, kh, false, true), inv_sqrt);
      if (mask) scores = t.add_const(scores, *mask);
      outs.push_back(t.matmul(t.softmax_rows(scores), vh));
    }
    return o_proj.apply(t, t.concat_cols(outs));
  }
};

/// Additive causal mask for an L x L score matrix: 0 on and below the
/// diagonal, -1e9 above it.
template <typename T>
Tensor<T> causal_mask(int l) {
  Tensor<T> m({l, l});
  for (int i = 0; i < l; ++i)
    for (int j = i + 1; j < l; ++j) m.at(i, j) = T(-1e9);
  return m;
}

}  // namespace steve

#endif  // STEVE_NN_HPP
