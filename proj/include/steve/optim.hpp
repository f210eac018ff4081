// SPDX-License-Identifier: Apache-2.0
//
// Adam with decoupled parameter groups (one learning rate each) and global
// gradient-norm clipping across all groups jointly.

#ifndef STEVE_OPTIM_HPP
#define STEVE_OPTIM_HPP

#include "steve/autodiff.hpp"
#include "steve/nn.hpp"
#include "steve/tensor.hpp"

#include <cmath>
#include <vector>

namespace steve {

template <typename T>
class Adam {
public:
  struct Group {
    std::vector<Param<T>*> params;
    double peak_lr;
  };

  explicit Adam(std::vector<Group> groups, double beta1 = 0.9,
                double beta2 = 0.999, double eps = 1e-8)
      : groups_(std::move(groups)), beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (auto& g : groups_) {
      state_.emplace_back();
      for (Param<T>* p : g.params) {
        state_.back().push_back(
            {Tensor<T>(p->value.shape()), Tensor<T>(p->value.shape())});
      }
    }
  }

  const std::vector<Group>& groups() const { return groups_; }

  void zero_grad() {
    for (auto& g : groups_)
      for (Param<T>* p : g.params) p->zero_grad();
  }

  double global_grad_norm() const {
    double total = 0.0;
    for (const auto& g : groups_)
      for (const Param<T>* p : g.params)
        for (std::int64_t i = 0; i < p->grad.numel(); ++i) {
          const double v = static_cast<double>(p->grad[i]);
          total += v * v;
        }
    return std::sqrt(total);
  }

  /// Scales every gradient so the global norm is at most `max_norm`.
  /// Returns the pre-clip norm.
  double clip_global_norm(double max_norm) {
    const double norm = global_grad_norm();
    if (norm > max_norm && norm > 0.0) {
      const T scale = static_cast<T>(max_norm / norm);
      for (auto& g : groups_)
        for (Param<T>* p : g.params)
          for (std::int64_t i = 0; i < p->grad.numel(); ++i)
            p->grad[i] *= scale;
    }
    return norm;
  }

  /// One update with per-group learning rates (same order as the groups).
  void step(const std::vector<double>& lrs) {
    check(lrs.size() == groups_.size(), "adam: one learning rate per group");
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t gi = 0; gi < groups_.size(); ++gi) {
      const double lr = lrs[gi];
      for (std::size_t pi = 0; pi < groups_[gi].params.size(); ++pi) {
        Param<T>* p = groups_[gi].params[pi];
        if (p->frozen) continue;
        Tensor<T>& m = state_[gi][pi].m;
        Tensor<T>& v = state_[gi][pi].v;
        for (std::int64_t i = 0; i < p->value.numel(); ++i) {
          const double g = static_cast<double>(p->grad[i]);
          const double mi = beta1_ * static_cast<double>(m[i]) + (1.0 - beta1_) * g;
          const double vi = beta2_ * static_cast<double>(v[i]) + (1.0 - beta2_) * g * g;
          m[i] = static_cast<T>(mi);
          v[i] = static_cast<T>(vi);
          p->value[i] -= static_cast<T>(lr * (mi / bc1) /
                                        (std::sqrt(vi / bc2) + eps_));
        }
      }
    }
  }

  std::int64_t steps_taken() const { return t_; }

private:
  struct Moments {
    Tensor<T> m, v;
  };

  std::vector<Group> groups_;
  std::vector<std::vector<Moments>> state_;
  double beta1_, beta2_, eps_;
  std::int64_t t_ = 0;
};

}  // namespace steve

#endif  // STEVE_OPTIM_HPP
