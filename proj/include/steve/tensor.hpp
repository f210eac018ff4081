// SPDX-License-Identifier: Apache-2.0
//
// Dense row-major tensor with a small shape vector, plus Eigen matrix views.

#ifndef STEVE_TENSOR_HPP
#define STEVE_TENSOR_HPP

#include <Eigen/Dense>

#include <cstdint>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace steve {

[[noreturn]] inline void fail(const std::string& msg) {
  throw std::invalid_argument(msg);
}

inline void check(bool cond, const std::string& msg) {
  if (!cond) fail(msg);
}

/// Contiguous row-major tensor of rank 0..4. Value semantics; shapes are
/// explicit and checked by the ops that consume them.
template <typename T>
class Tensor {
public:
  Tensor() = default;

  explicit Tensor(std::vector<int> shape)
      : shape_(std::move(shape)), data_(checked_numel(shape_), T(0)) {}

  Tensor(std::vector<int> shape, std::vector<T> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    check(static_cast<std::int64_t>(data_.size()) == checked_numel(shape_),
          "tensor: data size does not match shape");
  }

  static Tensor zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }

  static Tensor full(std::vector<int> shape, T v) {
    Tensor t(std::move(shape));
    std::fill(t.data_.begin(), t.data_.end(), v);
    return t;
  }

  static Tensor scalar(T v) { return Tensor({1}, {v}); }

  const std::vector<int>& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_.at(static_cast<std::size_t>(i)); }
  std::int64_t numel() const { return static_cast<std::int64_t>(data_.size()); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  T& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
  const T& operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

  /// Rank-2 accessors.
  int rows() const {
    check(rank() == 2, "tensor: rows() on rank " + std::to_string(rank()));
    return shape_[0];
  }
  int cols() const {
    check(rank() == 2, "tensor: cols() on rank " + std::to_string(rank()));
    return shape_[1];
  }
  T& at(int r, int c) { return data_[static_cast<std::size_t>(r) * shape_[1] + c]; }
  const T& at(int r, int c) const { return data_[static_cast<std::size_t>(r) * shape_[1] + c]; }

  /// Same data, new shape (must preserve numel).
  Tensor reshaped(std::vector<int> shape) const {
    check(checked_numel(shape) == numel(), "tensor: reshape changes element count");
    return Tensor(std::move(shape), data_);
  }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  std::string shape_str() const {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < shape_.size(); ++i) os << (i ? "," : "") << shape_[i];
    os << "]";
    return os.str();
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  static std::int64_t checked_numel(const std::vector<int>& shape) {
    std::int64_t n = 1;
    for (int d : shape) {
      check(d >= 0, "tensor: negative dimension");
      n *= d;
    }
    return n;
  }

private:
  std::vector<int> shape_;
  std::vector<T> data_;
};

template <typename T>
using EigenMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<EigenMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const EigenMat<T>>;

/// View a tensor's flat storage as an Eigen row-major matrix of the given shape.
template <typename T>
MatMap<T> as_matrix(Tensor<T>& t, int rows, int cols) {
  check(t.numel() == static_cast<std::int64_t>(rows) * cols, "as_matrix: size mismatch");
  return MatMap<T>(t.data(), rows, cols);
}

template <typename T>
ConstMatMap<T> as_matrix(const Tensor<T>& t, int rows, int cols) {
  check(t.numel() == static_cast<std::int64_t>(rows) * cols, "as_matrix: size mismatch");
  return ConstMatMap<T>(t.data(), rows, cols);
}

template <typename T>
MatMap<T> as_matrix(Tensor<T>& t) {
  return as_matrix(t, t.rows(), t.cols());
}

template <typename T>
ConstMatMap<T> as_matrix(const Tensor<T>& t) {
  return as_matrix(t, t.rows(), t.cols());
}

}  // namespace steve

#endif  // STEVE_TENSOR_HPP
