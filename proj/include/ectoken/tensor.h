// Copyright 2026 The ectoken Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Dense float64 tensors with tape-based reverse-mode differentiation.
//
// A Tensor is a cheap handle onto a graph node. Operations build new nodes
// that remember their parents only when at least one input requires a
// gradient and gradient recording is enabled on the calling thread.

#ifndef ECTOKEN_TENSOR_H_
#define ECTOKEN_TENSOR_H_

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace ectoken {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_string(const Shape& shape);

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
  }
};

}  // namespace detail

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(const Shape& shape, bool requires_grad = false);
  static Tensor full(const Shape& shape, double value,
                     bool requires_grad = false);
  static Tensor from(const Shape& shape, std::vector<double> values,
                     bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t dim(int axis) const;
  std::size_t rank() const { return shape().size(); }
  std::size_t numel() const;

  std::span<const double> data() const;
  //! Writable view of the value buffer. Only meaningful on leaves.
  std::span<double> mutable_data();
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  bool has_grad() const;

  double item() const;
  double at(std::initializer_list<std::size_t> index) const;

  bool requires_grad() const;
  void set_requires_grad(bool flag);
  void zero_grad();

  //! Leaf copy of the value with no history.
  Tensor detach() const;

  //! Runs reverse accumulation from this scalar. Returns the number of graph
  //! nodes visited.
  std::size_t backward() const;

  //! Internal: graph node access for op implementations.
  const std::shared_ptr<detail::Node>& node() const { return node_; }
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<detail::Node> node_;
};

//! Disables graph recording on this thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

// Elementwise binary ops broadcast NumPy-style (right-aligned, size 1 expands).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);

Tensor scale(const Tensor& x, double factor);
Tensor add_scalar(const Tensor& x, double offset);
Tensor neg(const Tensor& x);

Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor sqrt(const Tensor& x);
Tensor square(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor softplus(const Tensor& x);
Tensor gelu(const Tensor& x);
Tensor tanh(const Tensor& x);

//! a[..., m, k] x b[k, n]  or  a[B..., m, k] x b[B..., k, n].
//! With transpose_b, b is read as [..., n, k].
Tensor matmul(const Tensor& a, const Tensor& b, bool transpose_b = false);

Tensor reshape(const Tensor& x, const Shape& shape);
Tensor permute(const Tensor& x, const std::vector<std::size_t>& axes);
Tensor concat(const std::vector<Tensor>& parts, int axis);
Tensor slice(const Tensor& x, int axis, std::size_t start, std::size_t length);
//! Gathers entries along axis 0.
Tensor index_select(const Tensor& x, std::span<const std::size_t> rows);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor sum_axis(const Tensor& x, int axis);
Tensor mean_axis(const Tensor& x, int axis);

Tensor softmax(const Tensor& x, int axis = -1);
Tensor log_softmax(const Tensor& x, int axis = -1);
//! Normalizes over the last axis with variance epsilon 1e-5, then gain/bias.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias);
//! Divides each last-axis row by its L2 norm.
Tensor l2_normalize(const Tensor& x);

//! Euclidean distances between rows: a[..., L, P], b[..., M, P] -> [..., L, M].
Tensor pdist(const Tensor& a, const Tensor& b);

//! Forward value of `quantized`, gradient routed to `input` unchanged.
Tensor straight_through(const Tensor& input, const Tensor& quantized);

Tensor mse(const Tensor& prediction, const Tensor& target);
//! Mean cross-entropy of logits [N, C] against class ids.
Tensor cross_entropy(const Tensor& logits, std::span<const int> targets);
//! Mean binary cross-entropy from probabilities (clamped away from 0 and 1).
Tensor binary_cross_entropy(const Tensor& prob, std::span<const double> targets);
//! Same loss evaluated from logits, stable for large magnitudes.
Tensor binary_cross_entropy_with_logits(const Tensor& logits,
                                        std::span<const double> targets);

}  // namespace ectoken

#endif  // ECTOKEN_TENSOR_H_
