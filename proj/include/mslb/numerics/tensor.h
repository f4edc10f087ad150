// SPDX-License-Identifier: Apache-2.0
//
// Dense tensors with reverse-mode automatic differentiation.
//
// Every tensor is stored as a row-major matrix; rank-1 tensors are 1 x n rows
// that remember their declared rank for serialization. Operations build a
// dynamic graph while gradient recording is enabled (see NoGradGuard).
#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "mslb/error.h"

namespace mslb::num {

using Index = Eigen::Index;

template <typename T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

namespace detail {

template <typename T>
struct Node {
  Matrix<T> value;
  Matrix<T> grad;  // empty until something flows into it
  int rank = 2;
  bool requires_grad = false;
  bool backward_done = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  bool is_leaf() const { return parents.empty() && !backward; }

  template <typename Expr>
  void accumulate(const Expr& g) {
    if (grad.size() == 0) {
      grad = g;
    } else {
      grad += g;
    }
  }
  void accumulate(Matrix<T>&& g) {
    if (grad.size() == 0) {
      grad = std::move(g);
    } else {
      grad += g;
    }
  }
};

inline thread_local bool g_grad_enabled = true;

}  // namespace detail

/// Disables graph recording for its lifetime (inference, optimizer updates).
class NoGradGuard {
 public:
  NoGradGuard() : prev_(detail::g_grad_enabled) { detail::g_grad_enabled = false; }
  ~NoGradGuard() { detail::g_grad_enabled = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

inline bool grad_enabled() { return detail::g_grad_enabled; }

/// x * 0 is 0 for finite x and NaN otherwise, so the vectorized sum is NaN
/// exactly when some entry is not finite.
template <typename T>
bool all_finite(const Matrix<T>& m) {
  return !std::isnan((m.array() * T(0)).sum());
}

template <typename T>
void check_finite(const Matrix<T>& m, const std::string& what) {
  if (!all_finite(m)) throw NumericError("non-finite value in " + what);
}

template <typename T>
class Tensor {
 public:
  using Scalar = T;
  using NodePtr = std::shared_ptr<detail::Node<T>>;

  Tensor() = default;
  explicit Tensor(NodePtr node) : node_(std::move(node)) {}

  static Tensor from(Matrix<T> value, bool requires_grad = false, int rank = 2) {
    auto node = std::make_shared<detail::Node<T>>();
    node->value = std::move(value);
    node->requires_grad = requires_grad;
    node->rank = rank;
    return Tensor(std::move(node));
  }
  static Tensor zeros(Index rows, Index cols, bool requires_grad = false) {
    return from(Matrix<T>::Zero(rows, cols), requires_grad);
  }
  static Tensor vector(Index n, T fill, bool requires_grad = false) {
    return from(Matrix<T>::Constant(1, n, fill), requires_grad, 1);
  }
  static Tensor scalar(T v) { return from(Matrix<T>::Constant(1, 1, v)); }

  bool defined() const { return static_cast<bool>(node_); }
  Index rows() const { return node_->value.rows(); }
  Index cols() const { return node_->value.cols(); }
  Index numel() const { return node_->value.size(); }
  int rank() const { return node_->rank; }
  std::vector<Index> shape() const {
    if (node_->rank == 1) return {cols()};
    return {rows(), cols()};
  }

  const Matrix<T>& value() const { return node_->value; }
  /// Direct mutable access; only valid on leaves (parameters).
  Matrix<T>& mutable_value() { return node_->value; }
  T item() const {
    if (numel() != 1) throw ContractError("item() on tensor with " + std::to_string(numel()) + " elements");
    return node_->value(0, 0);
  }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }
  bool has_grad() const { return node_->grad.size() != 0; }
  const Matrix<T>& grad() const { return node_->grad; }
  Matrix<T>& mutable_grad() { return node_->grad; }
  void zero_grad() { node_->grad.resize(0, 0); }

  /// Deep copy of the value into a fresh leaf.
  Tensor clone() const { return from(node_->value, node_->requires_grad, node_->rank); }
  /// Same storage semantics as clone() but never records gradients.
  Tensor detach() const { return from(node_->value, false, node_->rank); }

  const NodePtr& node() const { return node_; }
  bool same_node(const Tensor& o) const { return node_ == o.node_; }

 private:
  NodePtr node_;
};

/// Runs reverse-mode accumulation from a scalar loss. Leaves that require
/// gradients receive (accumulated) grads; intermediate nodes are released, so
/// a second backward on the same graph is a contract error.
template <typename T>
void backward(const Tensor<T>& loss);

template <typename T>
using NamedTensor = std::pair<std::string, Tensor<T>>;

}  // namespace mslb::num
