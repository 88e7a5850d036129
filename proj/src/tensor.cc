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

#include "ectoken/tensor.h"

#include <cblas.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <unordered_set>
#include <utility>

namespace ectoken {

using detail::Node;
using NodePtr = std::shared_ptr<Node>;

namespace {

thread_local bool g_grad_enabled = true;

Tensor make_result(Shape shape, std::vector<double> value,
                   std::vector<NodePtr> parents,
                   std::function<void(Node&)> backward) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  if (g_grad_enabled) {
    bool needs = std::any_of(parents.begin(), parents.end(),
                             [](const NodePtr& p) { return p->requires_grad; });
    if (needs) {
      node->requires_grad = true;
      node->parents = std::move(parents);
      node->backward_fn = std::move(backward);
    }
  }
  return Tensor(std::move(node));
}

std::size_t normalize_axis(int axis, std::size_t rank) {
  int r = static_cast<int>(rank);
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) {
    throw std::invalid_argument("axis " + std::to_string(axis) +
                                " out of range for rank " +
                                std::to_string(rank));
  }
  return static_cast<std::size_t>(axis);
}

// Splits a shape around `axis` into (outer, n, inner) extents.
void split_extents(const Shape& shape, std::size_t axis, std::size_t& outer,
                   std::size_t& n, std::size_t& inner) {
  outer = 1;
  inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= shape[i];
  n = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) inner *= shape[i];
}

struct BroadcastPlan {
  Shape out;
  std::vector<std::size_t> a_strides;
  std::vector<std::size_t> b_strides;
  bool same = false;
};

BroadcastPlan plan_broadcast(const Shape& a, const Shape& b) {
  BroadcastPlan plan;
  if (a == b) {
    plan.out = a;
    plan.same = true;
    return plan;
  }
  std::size_t rank = std::max(a.size(), b.size());
  plan.out.assign(rank, 1);
  Shape pa(rank, 1), pb(rank, 1);
  std::copy(a.begin(), a.end(), pa.begin() + (rank - a.size()));
  std::copy(b.begin(), b.end(), pb.begin() + (rank - b.size()));
  for (std::size_t d = 0; d < rank; ++d) {
    if (pa[d] != pb[d] && pa[d] != 1 && pb[d] != 1) {
      throw std::invalid_argument("cannot broadcast " + shape_string(a) +
                                  " with " + shape_string(b));
    }
    plan.out[d] = std::max(pa[d], pb[d]);
  }
  plan.a_strides.assign(rank, 0);
  plan.b_strides.assign(rank, 0);
  std::size_t sa = 1, sb = 1;
  for (std::size_t d = rank; d-- > 0;) {
    plan.a_strides[d] = pa[d] == 1 ? 0 : sa;
    plan.b_strides[d] = pb[d] == 1 ? 0 : sb;
    sa *= pa[d];
    sb *= pb[d];
  }
  return plan;
}

template <class F>
void broadcast_loop(const BroadcastPlan& plan, F&& f) {
  std::size_t n = shape_numel(plan.out);
  if (plan.same) {
    for (std::size_t i = 0; i < n; ++i) f(i, i, i);
    return;
  }
  std::size_t rank = plan.out.size();
  std::vector<std::size_t> idx(rank, 0);
  std::size_t ia = 0, ib = 0;
  for (std::size_t o = 0; o < n; ++o) {
    f(o, ia, ib);
    for (std::size_t d = rank; d-- > 0;) {
      ++idx[d];
      ia += plan.a_strides[d];
      ib += plan.b_strides[d];
      if (idx[d] < plan.out[d]) break;
      ia -= plan.a_strides[d] * plan.out[d];
      ib -= plan.b_strides[d] * plan.out[d];
      idx[d] = 0;
    }
  }
}

// Fwd(x, y) -> z ; Dx(x, y, z) and Dy(x, y, z) are local partials.
template <class Fwd, class Dx, class Dy>
Tensor binary_op(const Tensor& a, const Tensor& b, Fwd fwd, Dx dx, Dy dy) {
  auto plan = plan_broadcast(a.shape(), b.shape());
  const auto& av = a.node()->value;
  const auto& bv = b.node()->value;
  std::vector<double> out(shape_numel(plan.out));
  broadcast_loop(plan, [&](std::size_t o, std::size_t ia, std::size_t ib) {
    out[o] = fwd(av[ia], bv[ib]);
  });
  NodePtr an = a.node(), bn = b.node();
  return make_result(plan.out, std::move(out), {an, bn},
                     [an, bn, plan, dx, dy](Node& self) {
                       const auto& g = self.grad;
                       const auto& z = self.value;
                       if (an->requires_grad) an->ensure_grad();
                       if (bn->requires_grad) bn->ensure_grad();
                       broadcast_loop(plan, [&](std::size_t o, std::size_t ia,
                                                std::size_t ib) {
                         double x = an->value[ia], y = bn->value[ib];
                         if (an->requires_grad) an->grad[ia] += g[o] * dx(x, y, z[o]);
                         if (bn->requires_grad) bn->grad[ib] += g[o] * dy(x, y, z[o]);
                       });
                     });
}

// Fwd(x) -> y ; D(x, y) is the local derivative.
template <class Fwd, class D>
Tensor unary_op(const Tensor& x, Fwd fwd, D deriv) {
  const auto& xv = x.node()->value;
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = fwd(xv[i]);
  NodePtr xn = x.node();
  return make_result(x.shape(), std::move(out), {xn}, [xn, deriv](Node& self) {
    xn->ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      xn->grad[i] += self.grad[i] * deriv(xn->value[i], self.value[i]);
    }
  });
}

// Products at least this large go to BLAS; per-head attention blocks stay on
// the plain loops where call overhead would dominate.
constexpr std::size_t kBlasMinWork = 8192;

bool use_blas(std::size_t M, std::size_t K, std::size_t N) { return M * K * N >= kBlasMinWork; }

// C[M x N] += A[M x K] * B[K x N]
void gemm_nn(const double* A, const double* B, double* C, std::size_t M,
             std::size_t K, std::size_t N) {
  if (use_blas(M, K, N)) {
    cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans, int(M), int(N), int(K), 1.0, A,
                int(K), B, int(N), 1.0, C, int(N));
    return;
  }
  for (std::size_t i = 0; i < M; ++i) {
    double* c = C + i * N;
    const double* a = A + i * K;
    for (std::size_t p = 0; p < K; ++p) {
      double av = a[p];
      if (av == 0.0) continue;
      const double* b = B + p * N;
      for (std::size_t j = 0; j < N; ++j) c[j] += av * b[j];
    }
  }
}

// C[M x N] += A[M x K] * B[N x K]^T
void gemm_nt(const double* A, const double* B, double* C, std::size_t M,
             std::size_t K, std::size_t N) {
  if (use_blas(M, K, N)) {
    cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasTrans, int(M), int(N), int(K), 1.0, A,
                int(K), B, int(K), 1.0, C, int(N));
    return;
  }
  for (std::size_t i = 0; i < M; ++i) {
    const double* a = A + i * K;
    double* c = C + i * N;
    for (std::size_t j = 0; j < N; ++j) {
      const double* b = B + j * K;
      double acc = 0.0;
      for (std::size_t p = 0; p < K; ++p) acc += a[p] * b[p];
      c[j] += acc;
    }
  }
}

// C[M x N] += A[K x M]^T * B[K x N]
void gemm_tn(const double* A, const double* B, double* C, std::size_t M,
             std::size_t K, std::size_t N) {
  if (use_blas(M, K, N)) {
    cblas_dgemm(CblasRowMajor, CblasTrans, CblasNoTrans, int(M), int(N), int(K), 1.0, A,
                int(M), B, int(N), 1.0, C, int(N));
    return;
  }
  for (std::size_t p = 0; p < K; ++p) {
    const double* a = A + p * M;
    const double* b = B + p * N;
    for (std::size_t i = 0; i < M; ++i) {
      double av = a[i];
      if (av == 0.0) continue;
      double* c = C + i * N;
      for (std::size_t j = 0; j < N; ++j) c[j] += av * b[j];
    }
  }
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                shape_string(a.shape()) + " vs " +
                                shape_string(b.shape()));
  }
}

}  // namespace

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

// ---------------------------------------------------------------------------
// Tensor

Tensor Tensor::zeros(const Shape& shape, bool requires_grad) {
  return full(shape, 0.0, requires_grad);
}

Tensor Tensor::full(const Shape& shape, double value, bool requires_grad) {
  return from(shape, std::vector<double>(shape_numel(shape), value),
              requires_grad);
}

Tensor Tensor::from(const Shape& shape, std::vector<double> values,
                    bool requires_grad) {
  if (shape_numel(shape) != values.size()) {
    throw std::invalid_argument("Tensor::from: shape " + shape_string(shape) +
                                " does not hold " +
                                std::to_string(values.size()) + " values");
  }
  auto node = std::make_shared<Node>();
  node->shape = shape;
  node->value = std::move(values);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from({1}, {value}, requires_grad);
}

const Shape& Tensor::shape() const { return node_->shape; }

std::size_t Tensor::dim(int axis) const {
  return node_->shape[normalize_axis(axis, node_->shape.size())];
}

std::size_t Tensor::numel() const { return node_->value.size(); }

std::span<const double> Tensor::data() const { return node_->value; }
std::span<double> Tensor::mutable_data() { return node_->value; }

std::span<const double> Tensor::grad() const { return node_->grad; }
std::span<double> Tensor::mutable_grad() {
  node_->ensure_grad();
  return node_->grad;
}
bool Tensor::has_grad() const { return node_->grad.size() == node_->value.size(); }

double Tensor::item() const {
  if (numel() != 1) {
    throw std::invalid_argument("item() on tensor of shape " +
                                shape_string(shape()));
  }
  return node_->value[0];
}

double Tensor::at(std::initializer_list<std::size_t> index) const {
  const Shape& s = shape();
  if (index.size() != s.size()) throw std::invalid_argument("at(): rank mismatch");
  std::size_t off = 0;
  std::size_t d = 0;
  for (std::size_t i : index) {
    if (i >= s[d]) throw std::out_of_range("at(): index out of range");
    off = off * s[d] + i;
    ++d;
  }
  return node_->value[off];
}

bool Tensor::requires_grad() const { return node_->requires_grad; }
void Tensor::set_requires_grad(bool flag) { node_->requires_grad = flag; }

void Tensor::zero_grad() {
  if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

Tensor Tensor::detach() const { return from(shape(), node_->value, false); }

std::size_t Tensor::backward() const {
  if (numel() != 1) {
    throw std::invalid_argument("backward() requires a scalar, got " +
                                shape_string(shape()));
  }
  if (!node_->requires_grad) return 0;

  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(node_.get(), 0);
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      Node* p = n->parents[next++].get();
      if (p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  node_->ensure_grad();
  node_->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
  }
  return order.size();
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool grad_enabled() { return g_grad_enabled; }

// ---------------------------------------------------------------------------
// Elementwise

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, [](double x, double y) { return x + y; },
      [](double, double, double) { return 1.0; },
      [](double, double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, [](double x, double y) { return x - y; },
      [](double, double, double) { return 1.0; },
      [](double, double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, [](double x, double y) { return x * y; },
      [](double, double y, double) { return y; },
      [](double x, double, double) { return x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, [](double x, double y) { return x / y; },
      [](double, double y, double) { return 1.0 / y; },
      [](double x, double y, double) { return -x / (y * y); });
}

Tensor scale(const Tensor& x, double factor) {
  return unary_op(
      x, [factor](double v) { return v * factor; },
      [factor](double, double) { return factor; });
}

Tensor add_scalar(const Tensor& x, double offset) {
  return unary_op(
      x, [offset](double v) { return v + offset; },
      [](double, double) { return 1.0; });
}

Tensor neg(const Tensor& x) { return scale(x, -1.0); }

Tensor exp(const Tensor& x) {
  return unary_op(
      x, [](double v) { return std::exp(v); },
      [](double, double y) { return y; });
}

Tensor log(const Tensor& x) {
  return unary_op(
      x, [](double v) { return std::log(v); },
      [](double v, double) { return 1.0 / v; });
}

Tensor sqrt(const Tensor& x) {
  return unary_op(
      x, [](double v) { return std::sqrt(v); },
      [](double, double y) { return y > 0.0 ? 0.5 / y : 0.0; });
}

Tensor square(const Tensor& x) {
  return unary_op(
      x, [](double v) { return v * v; },
      [](double v, double) { return 2.0 * v; });
}

Tensor sigmoid(const Tensor& x) {
  return unary_op(
      x,
      [](double v) {
        if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
        double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor softplus(const Tensor& x) {
  return unary_op(
      x,
      [](double v) { return std::max(v, 0.0) + std::log1p(std::exp(-std::abs(v))); },
      [](double v, double) {
        if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
        double e = std::exp(v);
        return e / (1.0 + e);
      });
}

Tensor tanh(const Tensor& x) {
  return unary_op(
      x, [](double v) { return std::tanh(v); },
      [](double, double y) { return 1.0 - y * y; });
}

Tensor gelu(const Tensor& x) {
  // tanh approximation
  constexpr double kC = 0.7978845608028654;  // sqrt(2/pi)
  constexpr double kA = 0.044715;
  return unary_op(
      x,
      [](double v) {
        return 0.5 * v * (1.0 + std::tanh(kC * (v + kA * v * v * v)));
      },
      [](double v, double) {
        double u = kC * (v + kA * v * v * v);
        double t = std::tanh(u);
        double du = kC * (1.0 + 3.0 * kA * v * v);
        return 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du;
      });
}

// ---------------------------------------------------------------------------
// Linear algebra and layout

Tensor matmul(const Tensor& a, const Tensor& b, bool transpose_b) {
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  if (as.size() < 2 || bs.size() < 2) {
    throw std::invalid_argument("matmul needs rank >= 2 operands");
  }
  std::size_t K = as.back();
  std::size_t M = as[as.size() - 2];
  std::size_t bk = transpose_b ? bs.back() : bs[bs.size() - 2];
  std::size_t N = transpose_b ? bs[bs.size() - 2] : bs.back();
  if (bk != K) {
    throw std::invalid_argument("matmul inner dims differ: " + shape_string(as) +
                                " x " + shape_string(bs));
  }
  bool shared_b = bs.size() == 2;
  std::size_t batch = 1;
  if (!shared_b) {
    if (bs.size() != as.size() ||
        !std::equal(as.begin(), as.end() - 2, bs.begin())) {
      throw std::invalid_argument("matmul batch dims differ: " +
                                  shape_string(as) + " x " + shape_string(bs));
    }
    for (std::size_t i = 0; i + 2 < as.size(); ++i) batch *= as[i];
  } else {
    // Fold all leading dims of a into rows.
    M = a.numel() / K;
  }
  Shape out_shape(as.begin(), as.end() - 1);
  out_shape.push_back(N);
  std::vector<double> out(batch * M * N, 0.0);
  const double* A = a.node()->value.data();
  const double* B = b.node()->value.data();
  std::size_t a_step = M * K, b_step = shared_b ? 0 : K * N, c_step = M * N;
  for (std::size_t t = 0; t < batch; ++t) {
    if (transpose_b) {
      gemm_nt(A + t * a_step, B + t * b_step, out.data() + t * c_step, M, K, N);
    } else {
      gemm_nn(A + t * a_step, B + t * b_step, out.data() + t * c_step, M, K, N);
    }
  }
  NodePtr an = a.node(), bn = b.node();
  return make_result(
      std::move(out_shape), std::move(out), {an, bn},
      [an, bn, batch, M, K, N, a_step, b_step, c_step, transpose_b](Node& self) {
        const double* G = self.grad.data();
        if (an->requires_grad) {
          an->ensure_grad();
          for (std::size_t t = 0; t < batch; ++t) {
            const double* Bt = bn->value.data() + t * b_step;
            double* dA = an->grad.data() + t * a_step;
            if (transpose_b) {
              gemm_nn(G + t * c_step, Bt, dA, M, N, K);
            } else {
              gemm_nt(G + t * c_step, Bt, dA, M, N, K);
            }
          }
        }
        if (bn->requires_grad) {
          bn->ensure_grad();
          for (std::size_t t = 0; t < batch; ++t) {
            const double* At = an->value.data() + t * a_step;
            double* dB = bn->grad.data() + t * b_step;
            if (transpose_b) {
              gemm_tn(G + t * c_step, At, dB, N, M, K);
            } else {
              gemm_tn(At, G + t * c_step, dB, K, M, N);
            }
          }
        }
      });
}

Tensor reshape(const Tensor& x, const Shape& shape) {
  if (shape_numel(shape) != x.numel()) {
    throw std::invalid_argument("reshape " + shape_string(x.shape()) + " -> " +
                                shape_string(shape));
  }
  NodePtr xn = x.node();
  return make_result(shape, xn->value, {xn}, [xn](Node& self) {
    xn->ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) xn->grad[i] += self.grad[i];
  });
}

Tensor permute(const Tensor& x, const std::vector<std::size_t>& axes) {
  const Shape& in = x.shape();
  std::size_t rank = in.size();
  if (axes.size() != rank) throw std::invalid_argument("permute: rank mismatch");
  std::vector<std::size_t> in_strides(rank, 1);
  for (std::size_t d = rank; d-- > 1;) in_strides[d - 1] = in_strides[d] * in[d];
  Shape out_shape(rank);
  std::vector<std::size_t> src_strides(rank);
  std::vector<bool> seen(rank, false);
  for (std::size_t d = 0; d < rank; ++d) {
    if (axes[d] >= rank || seen[axes[d]]) {
      throw std::invalid_argument("permute: invalid axes");
    }
    seen[axes[d]] = true;
    out_shape[d] = in[axes[d]];
    src_strides[d] = in_strides[axes[d]];
  }
  std::size_t n = x.numel();
  // map[o] = input flat offset of output element o
  auto map = std::make_shared<std::vector<std::size_t>>(n);
  {
    std::vector<std::size_t> idx(rank, 0);
    std::size_t off = 0;
    for (std::size_t o = 0; o < n; ++o) {
      (*map)[o] = off;
      for (std::size_t d = rank; d-- > 0;) {
        ++idx[d];
        off += src_strides[d];
        if (idx[d] < out_shape[d]) break;
        off -= src_strides[d] * out_shape[d];
        idx[d] = 0;
      }
    }
  }
  const auto& xv = x.node()->value;
  std::vector<double> out(n);
  for (std::size_t o = 0; o < n; ++o) out[o] = xv[(*map)[o]];
  NodePtr xn = x.node();
  return make_result(std::move(out_shape), std::move(out), {xn},
                     [xn, map](Node& self) {
                       xn->ensure_grad();
                       for (std::size_t o = 0; o < self.grad.size(); ++o) {
                         xn->grad[(*map)[o]] += self.grad[o];
                       }
                     });
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) throw std::invalid_argument("concat of nothing");
  const Shape& first = parts[0].shape();
  std::size_t ax = normalize_axis(axis, first.size());
  Shape out_shape = first;
  out_shape[ax] = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    if (s.size() != first.size()) throw std::invalid_argument("concat: rank mismatch");
    for (std::size_t d = 0; d < s.size(); ++d) {
      if (d != ax && s[d] != first[d]) {
        throw std::invalid_argument("concat: shape mismatch " + shape_string(s) +
                                    " vs " + shape_string(first));
      }
    }
    out_shape[ax] += s[ax];
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < ax; ++d) outer *= first[d];
  for (std::size_t d = ax + 1; d < first.size(); ++d) inner *= first[d];
  std::vector<std::size_t> chunk(parts.size());
  std::size_t row = out_shape[ax] * inner;
  for (std::size_t i = 0; i < parts.size(); ++i) chunk[i] = parts[i].shape()[ax] * inner;
  std::vector<double> out(outer * row);
  std::vector<NodePtr> nodes;
  std::size_t col = 0;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    const auto& v = parts[i].node()->value;
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(v.begin() + o * chunk[i], chunk[i], out.begin() + o * row + col);
    }
    col += chunk[i];
    nodes.push_back(parts[i].node());
  }
  return make_result(std::move(out_shape), std::move(out), nodes,
                     [nodes, chunk, outer, row](Node& self) {
                       std::size_t c = 0;
                       for (std::size_t i = 0; i < nodes.size(); ++i) {
                         if (nodes[i]->requires_grad) {
                           nodes[i]->ensure_grad();
                           auto& g = nodes[i]->grad;
                           for (std::size_t o = 0; o < outer; ++o) {
                             for (std::size_t k = 0; k < chunk[i]; ++k) {
                               g[o * chunk[i] + k] += self.grad[o * row + c + k];
                             }
                           }
                         }
                         c += chunk[i];
                       }
                     });
}

Tensor slice(const Tensor& x, int axis, std::size_t start, std::size_t length) {
  const Shape& s = x.shape();
  std::size_t ax = normalize_axis(axis, s.size());
  if (start + length > s[ax]) {
    throw std::invalid_argument("slice [" + std::to_string(start) + ", +" +
                                std::to_string(length) + ") exceeds axis of " +
                                std::to_string(s[ax]));
  }
  std::size_t outer, n, inner;
  split_extents(s, ax, outer, n, inner);
  Shape out_shape = s;
  out_shape[ax] = length;
  std::vector<double> out(outer * length * inner);
  const auto& v = x.node()->value;
  for (std::size_t o = 0; o < outer; ++o) {
    std::copy_n(v.begin() + (o * n + start) * inner, length * inner,
                out.begin() + o * length * inner);
  }
  NodePtr xn = x.node();
  return make_result(std::move(out_shape), std::move(out), {xn},
                     [xn, outer, n, inner, start, length](Node& self) {
                       xn->ensure_grad();
                       for (std::size_t o = 0; o < outer; ++o) {
                         for (std::size_t k = 0; k < length * inner; ++k) {
                           xn->grad[(o * n + start) * inner + k] +=
                               self.grad[o * length * inner + k];
                         }
                       }
                     });
}

Tensor index_select(const Tensor& x, std::span<const std::size_t> rows) {
  const Shape& s = x.shape();
  if (s.empty()) throw std::invalid_argument("index_select on rank-0 tensor");
  std::size_t width = x.numel() / s[0];
  Shape out_shape = s;
  out_shape[0] = rows.size();
  std::vector<double> out(rows.size() * width);
  const auto& v = x.node()->value;
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] >= s[0]) throw std::out_of_range("index_select: row out of range");
    std::copy_n(v.begin() + rows[r] * width, width, out.begin() + r * width);
  }
  NodePtr xn = x.node();
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  return make_result(std::move(out_shape), std::move(out), {xn},
                     [xn, idx = std::move(idx), width](Node& self) {
                       xn->ensure_grad();
                       for (std::size_t r = 0; r < idx.size(); ++r) {
                         for (std::size_t k = 0; k < width; ++k) {
                           xn->grad[idx[r] * width + k] += self.grad[r * width + k];
                         }
                       }
                     });
}

// ---------------------------------------------------------------------------
// Reductions

Tensor sum(const Tensor& x) {
  const auto& v = x.node()->value;
  double s = std::accumulate(v.begin(), v.end(), 0.0);
  NodePtr xn = x.node();
  return make_result({1}, {s}, {xn}, [xn](Node& self) {
    xn->ensure_grad();
    for (double& g : xn->grad) g += self.grad[0];
  });
}

Tensor mean(const Tensor& x) {
  return scale(sum(x), 1.0 / static_cast<double>(x.numel()));
}

Tensor sum_axis(const Tensor& x, int axis) {
  const Shape& s = x.shape();
  std::size_t ax = normalize_axis(axis, s.size());
  std::size_t outer, n, inner;
  split_extents(s, ax, outer, n, inner);
  Shape out_shape;
  for (std::size_t d = 0; d < s.size(); ++d) {
    if (d != ax) out_shape.push_back(s[d]);
  }
  if (out_shape.empty()) out_shape.push_back(1);
  std::vector<double> out(outer * inner, 0.0);
  const auto& v = x.node()->value;
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t k = 0; k < n; ++k) {
      const double* src = v.data() + (o * n + k) * inner;
      double* dst = out.data() + o * inner;
      for (std::size_t i = 0; i < inner; ++i) dst[i] += src[i];
    }
  }
  NodePtr xn = x.node();
  return make_result(std::move(out_shape), std::move(out), {xn},
                     [xn, outer, n, inner](Node& self) {
                       xn->ensure_grad();
                       for (std::size_t o = 0; o < outer; ++o) {
                         for (std::size_t k = 0; k < n; ++k) {
                           for (std::size_t i = 0; i < inner; ++i) {
                             xn->grad[(o * n + k) * inner + i] +=
                                 self.grad[o * inner + i];
                           }
                         }
                       }
                     });
}

Tensor mean_axis(const Tensor& x, int axis) {
  std::size_t ax = normalize_axis(axis, x.rank());
  return scale(sum_axis(x, axis), 1.0 / static_cast<double>(x.shape()[ax]));
}

// ---------------------------------------------------------------------------
// Normalizations

Tensor softmax(const Tensor& x, int axis) {
  const Shape& s = x.shape();
  std::size_t ax = normalize_axis(axis, s.size());
  std::size_t outer, n, inner;
  split_extents(s, ax, outer, n, inner);
  const auto& v = x.node()->value;
  std::vector<double> out(v.size());
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t i = 0; i < inner; ++i) {
      std::size_t base = o * n * inner + i;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < n; ++k) mx = std::max(mx, v[base + k * inner]);
      double z = 0.0;
      for (std::size_t k = 0; k < n; ++k) {
        double e = std::exp(v[base + k * inner] - mx);
        out[base + k * inner] = e;
        z += e;
      }
      for (std::size_t k = 0; k < n; ++k) out[base + k * inner] /= z;
    }
  }
  NodePtr xn = x.node();
  return make_result(s, std::move(out), {xn}, [xn, outer, n, inner](Node& self) {
    xn->ensure_grad();
    const auto& y = self.value;
    const auto& g = self.grad;
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t i = 0; i < inner; ++i) {
        std::size_t base = o * n * inner + i;
        double dot = 0.0;
        for (std::size_t k = 0; k < n; ++k) {
          dot += g[base + k * inner] * y[base + k * inner];
        }
        for (std::size_t k = 0; k < n; ++k) {
          std::size_t j = base + k * inner;
          xn->grad[j] += y[j] * (g[j] - dot);
        }
      }
    }
  });
}

Tensor log_softmax(const Tensor& x, int axis) {
  const Shape& s = x.shape();
  std::size_t ax = normalize_axis(axis, s.size());
  std::size_t outer, n, inner;
  split_extents(s, ax, outer, n, inner);
  const auto& v = x.node()->value;
  std::vector<double> out(v.size());
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t i = 0; i < inner; ++i) {
      std::size_t base = o * n * inner + i;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < n; ++k) mx = std::max(mx, v[base + k * inner]);
      double z = 0.0;
      for (std::size_t k = 0; k < n; ++k) z += std::exp(v[base + k * inner] - mx);
      double lse = mx + std::log(z);
      for (std::size_t k = 0; k < n; ++k) {
        out[base + k * inner] = v[base + k * inner] - lse;
      }
    }
  }
  NodePtr xn = x.node();
  return make_result(s, std::move(out), {xn}, [xn, outer, n, inner](Node& self) {
    xn->ensure_grad();
    const auto& y = self.value;
    const auto& g = self.grad;
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t i = 0; i < inner; ++i) {
        std::size_t base = o * n * inner + i;
        double gs = 0.0;
        for (std::size_t k = 0; k < n; ++k) gs += g[base + k * inner];
        for (std::size_t k = 0; k < n; ++k) {
          std::size_t j = base + k * inner;
          xn->grad[j] += g[j] - std::exp(y[j]) * gs;
        }
      }
    }
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias) {
  constexpr double kEps = 1e-5;
  std::size_t D = x.shape().back();
  if (gain.numel() != D || bias.numel() != D) {
    throw std::invalid_argument("layer_norm: gain/bias width mismatch");
  }
  std::size_t rows = x.numel() / D;
  const auto& v = x.node()->value;
  const auto& gv = gain.node()->value;
  const auto& bv = bias.node()->value;
  std::vector<double> out(v.size());
  auto xhat = std::make_shared<std::vector<double>>(v.size());
  auto inv_std = std::make_shared<std::vector<double>>(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = v.data() + r * D;
    double mu = 0.0;
    for (std::size_t k = 0; k < D; ++k) mu += xr[k];
    mu /= static_cast<double>(D);
    double var = 0.0;
    for (std::size_t k = 0; k < D; ++k) var += (xr[k] - mu) * (xr[k] - mu);
    var /= static_cast<double>(D);
    double is = 1.0 / std::sqrt(var + kEps);
    (*inv_std)[r] = is;
    for (std::size_t k = 0; k < D; ++k) {
      double h = (xr[k] - mu) * is;
      (*xhat)[r * D + k] = h;
      out[r * D + k] = h * gv[k] + bv[k];
    }
  }
  NodePtr xn = x.node(), gn = gain.node(), bn = bias.node();
  return make_result(
      x.shape(), std::move(out), {xn, gn, bn},
      [xn, gn, bn, xhat, inv_std, rows, D](Node& self) {
        const auto& g = self.grad;
        if (gn->requires_grad) gn->ensure_grad();
        if (bn->requires_grad) bn->ensure_grad();
        if (xn->requires_grad) xn->ensure_grad();
        std::vector<double> dh(D);
        for (std::size_t r = 0; r < rows; ++r) {
          double m1 = 0.0, m2 = 0.0;
          for (std::size_t k = 0; k < D; ++k) {
            double gk = g[r * D + k];
            double h = (*xhat)[r * D + k];
            if (gn->requires_grad) gn->grad[k] += gk * h;
            if (bn->requires_grad) bn->grad[k] += gk;
            dh[k] = gk * gn->value[k];
            m1 += dh[k];
            m2 += dh[k] * h;
          }
          if (!xn->requires_grad) continue;
          m1 /= static_cast<double>(D);
          m2 /= static_cast<double>(D);
          for (std::size_t k = 0; k < D; ++k) {
            double h = (*xhat)[r * D + k];
            xn->grad[r * D + k] += (*inv_std)[r] * (dh[k] - m1 - h * m2);
          }
        }
      });
}

Tensor l2_normalize(const Tensor& x) {
  constexpr double kFloor = 1e-12;
  std::size_t D = x.shape().back();
  std::size_t rows = x.numel() / D;
  const auto& v = x.node()->value;
  std::vector<double> out(v.size());
  auto norms = std::make_shared<std::vector<double>>(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (std::size_t k = 0; k < D; ++k) s += v[r * D + k] * v[r * D + k];
    double nrm = std::max(std::sqrt(s), kFloor);
    (*norms)[r] = nrm;
    for (std::size_t k = 0; k < D; ++k) out[r * D + k] = v[r * D + k] / nrm;
  }
  NodePtr xn = x.node();
  return make_result(x.shape(), std::move(out), {xn},
                     [xn, norms, rows, D](Node& self) {
                       xn->ensure_grad();
                       const auto& y = self.value;
                       const auto& g = self.grad;
                       for (std::size_t r = 0; r < rows; ++r) {
                         double dot = 0.0;
                         for (std::size_t k = 0; k < D; ++k) {
                           dot += g[r * D + k] * y[r * D + k];
                         }
                         for (std::size_t k = 0; k < D; ++k) {
                           xn->grad[r * D + k] +=
                               (g[r * D + k] - y[r * D + k] * dot) / (*norms)[r];
                         }
                       }
                     });
}

Tensor pdist(const Tensor& a, const Tensor& b) {
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  if (as.size() < 2 || bs.size() != as.size() || as.back() != bs.back() ||
      !std::equal(as.begin(), as.end() - 2, bs.begin())) {
    throw std::invalid_argument("pdist: incompatible shapes " + shape_string(as) +
                                " and " + shape_string(bs));
  }
  std::size_t P = as.back();
  std::size_t L = as[as.size() - 2];
  std::size_t M = bs[bs.size() - 2];
  std::size_t batch = a.numel() / (L * P);
  Shape out_shape(as.begin(), as.end() - 1);
  out_shape.push_back(M);
  std::vector<double> out(batch * L * M);
  const auto& av = a.node()->value;
  const auto& bv = b.node()->value;
  for (std::size_t t = 0; t < batch; ++t) {
    for (std::size_t l = 0; l < L; ++l) {
      const double* pa = av.data() + (t * L + l) * P;
      for (std::size_t m = 0; m < M; ++m) {
        const double* pb = bv.data() + (t * M + m) * P;
        double s = 0.0;
        for (std::size_t c = 0; c < P; ++c) {
          double d = pa[c] - pb[c];
          s += d * d;
        }
        out[(t * L + l) * M + m] = std::sqrt(s);
      }
    }
  }
  NodePtr an = a.node(), bn = b.node();
  return make_result(
      std::move(out_shape), std::move(out), {an, bn},
      [an, bn, batch, L, M, P](Node& self) {
        if (an->requires_grad) an->ensure_grad();
        if (bn->requires_grad) bn->ensure_grad();
        for (std::size_t t = 0; t < batch; ++t) {
          for (std::size_t l = 0; l < L; ++l) {
            std::size_t ia = (t * L + l) * P;
            for (std::size_t m = 0; m < M; ++m) {
              std::size_t o = (t * L + l) * M + m;
              double d = self.value[o];
              if (d == 0.0) continue;
              double coef = self.grad[o] / d;
              std::size_t ib = (t * M + m) * P;
              for (std::size_t c = 0; c < P; ++c) {
                double diff = an->value[ia + c] - bn->value[ib + c];
                if (an->requires_grad) an->grad[ia + c] += coef * diff;
                if (bn->requires_grad) bn->grad[ib + c] -= coef * diff;
              }
            }
          }
        }
      });
}

Tensor straight_through(const Tensor& input, const Tensor& quantized) {
  check_same_shape(input, quantized, "straight_through");
  NodePtr in = input.node();
  return make_result(input.shape(), quantized.node()->value, {in},
                     [in](Node& self) {
                       in->ensure_grad();
                       for (std::size_t i = 0; i < self.grad.size(); ++i) {
                         in->grad[i] += self.grad[i];
                       }
                     });
}

// ---------------------------------------------------------------------------
// Losses

Tensor mse(const Tensor& prediction, const Tensor& target) {
  check_same_shape(prediction, target, "mse");
  const auto& p = prediction.node()->value;
  const auto& t = target.node()->value;
  double n = static_cast<double>(p.size());
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) s += (p[i] - t[i]) * (p[i] - t[i]);
  NodePtr pn = prediction.node(), tn = target.node();
  return make_result({1}, {s / n}, {pn, tn}, [pn, tn, n](Node& self) {
    double g = self.grad[0] * 2.0 / n;
    if (pn->requires_grad) pn->ensure_grad();
    if (tn->requires_grad) tn->ensure_grad();
    for (std::size_t i = 0; i < pn->value.size(); ++i) {
      double d = g * (pn->value[i] - tn->value[i]);
      if (pn->requires_grad) pn->grad[i] += d;
      if (tn->requires_grad) tn->grad[i] -= d;
    }
  });
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> targets) {
  if (logits.rank() != 2) throw std::invalid_argument("cross_entropy expects [N, C]");
  std::size_t N = logits.shape()[0], C = logits.shape()[1];
  if (targets.size() != N) throw std::invalid_argument("cross_entropy: target count");
  if (N == 0) throw std::invalid_argument("cross_entropy of zero rows");
  const auto& v = logits.node()->value;
  auto probs = std::make_shared<std::vector<double>>(v.size());
  double loss = 0.0;
  for (std::size_t i = 0; i < N; ++i) {
    int t = targets[i];
    if (t < 0 || static_cast<std::size_t>(t) >= C) {
      throw std::out_of_range("cross_entropy: class id out of range");
    }
    const double* row = v.data() + i * C;
    double mx = *std::max_element(row, row + C);
    double z = 0.0;
    for (std::size_t c = 0; c < C; ++c) z += std::exp(row[c] - mx);
    for (std::size_t c = 0; c < C; ++c) (*probs)[i * C + c] = std::exp(row[c] - mx) / z;
    loss += mx + std::log(z) - row[t];
  }
  std::vector<int> tgt(targets.begin(), targets.end());
  NodePtr ln = logits.node();
  return make_result({1}, {loss / static_cast<double>(N)}, {ln},
                     [ln, probs, tgt = std::move(tgt), N, C](Node& self) {
                       ln->ensure_grad();
                       double g = self.grad[0] / static_cast<double>(N);
                       for (std::size_t i = 0; i < N; ++i) {
                         for (std::size_t c = 0; c < C; ++c) {
                           double onehot = static_cast<int>(c) == tgt[i] ? 1.0 : 0.0;
                           ln->grad[i * C + c] += g * ((*probs)[i * C + c] - onehot);
                         }
                       }
                     });
}

Tensor binary_cross_entropy(const Tensor& prob, std::span<const double> targets) {
  static constexpr double kClamp = 1e-12;
  const auto& p = prob.node()->value;
  if (targets.size() != p.size()) throw std::invalid_argument("bce: target count");
  double n = static_cast<double>(p.size());
  double loss = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    double q = std::clamp(p[i], kClamp, 1.0 - kClamp);
    loss -= targets[i] * std::log(q) + (1.0 - targets[i]) * std::log(1.0 - q);
  }
  std::vector<double> y(targets.begin(), targets.end());
  NodePtr pn = prob.node();
  return make_result({1}, {loss / n}, {pn}, [pn, y = std::move(y), n](Node& self) {
    pn->ensure_grad();
    double g = self.grad[0] / n;
    for (std::size_t i = 0; i < y.size(); ++i) {
      double q = std::clamp(pn->value[i], kClamp, 1.0 - kClamp);
      pn->grad[i] += g * (q - y[i]) / (q * (1.0 - q));
    }
  });
}

Tensor binary_cross_entropy_with_logits(const Tensor& logits,
                                        std::span<const double> targets) {
  const auto& z = logits.node()->value;
  if (targets.size() != z.size()) throw std::invalid_argument("bce: target count");
  double n = static_cast<double>(z.size());
  double loss = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    loss += std::max(z[i], 0.0) - z[i] * targets[i] +
            std::log1p(std::exp(-std::abs(z[i])));
  }
  std::vector<double> y(targets.begin(), targets.end());
  NodePtr zn = logits.node();
  return make_result({1}, {loss / n}, {zn}, [zn, y = std::move(y), n](Node& self) {
    zn->ensure_grad();
    double g = self.grad[0] / n;
    for (std::size_t i = 0; i < y.size(); ++i) {
      double v = zn->value[i];
      double s = v >= 0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
      zn->grad[i] += g * (s - y[i]);
    }
  });
}

}  // namespace ectoken
