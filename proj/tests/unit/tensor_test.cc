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

#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "ectoken/grad_check.h"
#include "ectoken/nn.h"
#include "test_util.h"

namespace ectoken {
namespace {

using testing::positive_tensor;
using testing::random_tensor;
using testing::small_shapes;

constexpr double kGradTol = 1e-4;

TEST(Softplus, Values) {
  EXPECT_DOUBLE_EQ(softplus(Tensor::scalar(0.0)).item(), 0.6931471805599453);
  EXPECT_NEAR(softplus(Tensor::scalar(100.0)).item(), 100.0, 1e-12);
  Tensor x = Tensor::scalar(0.0, true);
  softplus(x).backward();
  EXPECT_DOUBLE_EQ(x.grad()[0], 0.5);
}

TEST(Softmax, Values) {
  Tensor a = softmax(Tensor::from({2}, {0.0, 0.0}));
  EXPECT_DOUBLE_EQ(a.data()[0], 0.5);
  Tensor b = softmax(Tensor::from({2}, {1000.0, 0.0}));
  EXPECT_NEAR(b.data()[0], 1.0, 1e-15);
  EXPECT_TRUE(std::isfinite(b.data()[1]));
  Tensor c = softmax(Tensor::from({3}, {1.0, 2.0, 3.0}));
  double z = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(c.data()[i], std::exp(i + 1.0) / z, 1e-12);
}

TEST(Softmax, RowsSumToOneOnEveryAxis) {
  Rng rng(3);
  Tensor x = random_tensor({2, 3, 4}, rng, false, 3.0);
  for (int axis : {0, 1, 2}) {
    Tensor s = softmax(x, axis);
    Tensor total = sum_axis(s, axis);
    for (double v : total.data()) EXPECT_NEAR(v, 1.0, 1e-12);
  }
}

TEST(LayerNorm, ConstantAndMoments) {
  Tensor g = Tensor::full({3}, 1.0), b = Tensor::zeros({3});
  Tensor y = layer_norm(Tensor::from({3}, {1.0, 1.0, 1.0}), g, b);
  for (double v : y.data()) EXPECT_EQ(v, 0.0);

  Rng rng(5);
  Tensor x = random_tensor({4, 64}, rng, false, 2.0);
  Tensor g64 = Tensor::full({64}, 1.0), b64 = Tensor::zeros({64});
  Tensor z = layer_norm(x, g64, b64);
  for (std::size_t r = 0; r < 4; ++r) {
    double m = 0.0, v = 0.0;
    for (std::size_t k = 0; k < 64; ++k) m += z.data()[r * 64 + k];
    m /= 64;
    for (std::size_t k = 0; k < 64; ++k) v += std::pow(z.data()[r * 64 + k] - m, 2);
    v /= 64;
    EXPECT_NEAR(m, 0.0, 1e-12);
    EXPECT_NEAR(v, 1.0, 1e-3);  // eps in the variance
  }
}

TEST(LayerNorm, GradientTight) {
  Rng rng(7);
  Tensor x = random_tensor({3, 5}, rng);
  Tensor g = random_tensor({5}, rng), b = random_tensor({5}, rng);
  Tensor w = random_tensor({3, 5}, rng, false);
  double err = grad_check([&] { return sum(mul(layer_norm(x, g, b), w)); }, {x, g, b}, 1e-5);
  EXPECT_LT(err, 1e-6);
}

TEST(GradCheck, Square) {
  double err = grad_check([](const Tensor& x) { return sum(square(x)); }, Tensor::scalar(3.0, true));
  EXPECT_LT(err, 1e-8);
}

// Every differentiable elementwise op on three shapes.
TEST(Gradients, Elementwise) {
  Rng rng(11);
  using Fn = std::function<Tensor(const Tensor&)>;
  std::vector<std::pair<const char*, Fn>> unary = {
      {"exp", [](const Tensor& x) { return exp(x); }},
      {"log", [](const Tensor& x) { return log(x); }},
      {"sqrt", [](const Tensor& x) { return sqrt(x); }},
      {"square", [](const Tensor& x) { return square(x); }},
      {"sigmoid", [](const Tensor& x) { return sigmoid(x); }},
      {"softplus", [](const Tensor& x) { return softplus(x); }},
      {"gelu", [](const Tensor& x) { return gelu(x); }},
      {"tanh", [](const Tensor& x) { return tanh(x); }},
      {"neg", [](const Tensor& x) { return neg(x); }},
      {"scale", [](const Tensor& x) { return scale(x, -1.7); }},
      {"add_scalar", [](const Tensor& x) { return add_scalar(x, 0.3); }},
      {"softmax", [](const Tensor& x) { return softmax(x); }},
      {"log_softmax", [](const Tensor& x) { return log_softmax(x, 0); }},
      {"l2_normalize", [](const Tensor& x) { return l2_normalize(x); }},
  };
  for (const Shape& shape : small_shapes()) {
    for (auto& [name, f] : unary) {
      Tensor x = positive_tensor(shape, rng);
      Tensor w = random_tensor(shape, rng, false);
      double err = grad_check([&] { return sum(mul(f(x), w)); }, {x});
      EXPECT_LT(err, kGradTol) << name << " " << shape_string(shape);
    }
  }
}

TEST(Gradients, BroadcastBinary) {
  Rng rng(13);
  std::vector<std::pair<Shape, Shape>> pairs = {{{3}, {3}}, {{2, 4}, {4}}, {{2, 3, 1}, {1, 5}}};
  for (auto& [sa, sb] : pairs) {
    Tensor a = positive_tensor(sa, rng), b = positive_tensor(sb, rng);
    for (int op = 0; op < 4; ++op) {
      auto f = [&] {
        Tensor y = op == 0 ? add(a, b) : op == 1 ? sub(a, b) : op == 2 ? mul(a, b) : div(a, b);
        return sum(square(y));
      };
      EXPECT_LT(grad_check(f, {a, b}), kGradTol) << op;
    }
  }
}

TEST(Gradients, Matmul) {
  Rng rng(17);
  struct Case {
    Shape a, b;
    bool tb;
  };
  std::vector<Case> cases = {{{3, 4}, {4, 2}, false},
                             {{2, 3, 4}, {4, 5}, false},
                             {{2, 3, 4}, {2, 5, 4}, true},
                             {{2, 2, 3, 4}, {2, 2, 4, 3}, false}};
  for (auto& c : cases) {
    Tensor a = random_tensor(c.a, rng), b = random_tensor(c.b, rng);
    double err = grad_check([&] { return sum(square(matmul(a, b, c.tb))); }, {a, b});
    EXPECT_LT(err, kGradTol) << shape_string(c.a) << "x" << shape_string(c.b);
  }
}

TEST(Matmul, MatchesLoop) {
  Rng rng(19);
  Tensor a = random_tensor({2, 3, 4}, rng, false), b = random_tensor({2, 5, 4}, rng, false);
  Tensor c = matmul(a, b, true);
  ASSERT_EQ(c.shape(), (Shape{2, 3, 5}));
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t j = 0; j < 5; ++j) {
        double s = 0.0;
        for (std::size_t k = 0; k < 4; ++k) s += a.at({n, i, k}) * b.at({n, j, k});
        EXPECT_NEAR(c.at({n, i, j}), s, 1e-12);
      }
}

TEST(Gradients, ShapeOps) {
  Rng rng(23);
  for (const Shape& shape : small_shapes()) {
    Tensor x = random_tensor(shape, rng);
    Tensor y = random_tensor(shape, rng);
    int last = static_cast<int>(shape.size()) - 1;
    EXPECT_LT(grad_check([&] { return sum(square(concat({x, y}, last))); }, {x, y}), kGradTol);
    EXPECT_LT(grad_check([&] { return sum(square(slice(x, last, 1, 2))); }, {x}), kGradTol);
    EXPECT_LT(grad_check([&] { return sum(square(reshape(x, {x.numel()}))); }, {x}), kGradTol);
    EXPECT_LT(grad_check([&] { return sum(mul(sum_axis(x, 0), sum_axis(y, 0))); }, {x, y}),
              kGradTol);
    EXPECT_LT(grad_check([&] { return sum(square(mean_axis(x, last))); }, {x}), kGradTol);
    EXPECT_LT(grad_check([&] { return mean(square(x)); }, {x}), kGradTol);
  }
  Tensor x = random_tensor({2, 3, 4}, rng);
  Tensor w = random_tensor({4, 2, 3}, rng, false);
  EXPECT_LT(grad_check([&] { return sum(mul(permute(x, {2, 0, 1}), w)); }, {x}), kGradTol);
  std::vector<std::size_t> rows = {2, 0, 2, 1};
  Tensor t = random_tensor({3, 4}, rng);
  EXPECT_LT(grad_check([&] { return sum(square(index_select(t, rows))); }, {t}), kGradTol);
}

TEST(Gradients, LayerNormShapes) {
  Rng rng(29);
  for (const Shape& shape : small_shapes()) {
    Tensor x = random_tensor(shape, rng);
    Tensor g = random_tensor({shape.back()}, rng), b = random_tensor({shape.back()}, rng);
    Tensor w = random_tensor(shape, rng, false);
    EXPECT_LT(grad_check([&] { return sum(mul(layer_norm(x, g, b), w)); }, {x, g, b}),
              kGradTol);
  }
}

TEST(Pdist, Values) {
  Tensor a = Tensor::from({1, 3}, {0, 0, 0}), b = Tensor::from({1, 3}, {3, 4, 0});
  EXPECT_DOUBLE_EQ(pdist(a, b).item(), 5.0);
  EXPECT_EQ(pdist(a, a).item(), 0.0);

  Rng rng(31);
  Tensor p = random_tensor({2, 4, 3}, rng, false), q = random_tensor({2, 5, 3}, rng, false);
  Tensor d = pdist(p, q);
  ASSERT_EQ(d.shape(), (Shape{2, 4, 5}));
  for (std::size_t h = 0; h < 2; ++h)
    for (std::size_t l = 0; l < 4; ++l)
      for (std::size_t m = 0; m < 5; ++m) {
        double s = 0.0;
        for (std::size_t k = 0; k < 3; ++k) s += std::pow(p.at({h, l, k}) - q.at({h, m, k}), 2);
        EXPECT_NEAR(d.at({h, l, m}), std::sqrt(s), 1e-12);
      }
}

TEST(Gradients, Pdist) {
  Rng rng(37);
  std::vector<std::pair<Shape, Shape>> cases = {
      {{3, 3}, {2, 3}}, {{2, 4, 3}, {2, 4, 3}}, {{2, 2, 3, 9}, {2, 2, 4, 9}}};
  for (auto& [sa, sb] : cases) {
    Tensor a = random_tensor(sa, rng), b = random_tensor(sb, rng);
    EXPECT_LT(grad_check([&] { return sum(square(pdist(a, b))); }, {a, b}), kGradTol);
  }
}

TEST(Losses, Values) {
  Tensor a = Tensor::from({2}, {1.0, 2.0});
  EXPECT_EQ(mse(a, a).item(), 0.0);
  EXPECT_DOUBLE_EQ(mse(a, Tensor::from({2}, {2.0, 3.0})).item(), 1.0);

  std::vector<int> t = {2};
  Tensor uniform = Tensor::zeros({1, 10});
  EXPECT_NEAR(cross_entropy(uniform, t).item(), std::log(10.0), 1e-12);
  Tensor sharp = Tensor::from({1, 3}, {0.0, 0.0, 200.0});
  EXPECT_LT(cross_entropy(sharp, t).item(), 1e-80);

  std::vector<double> y = {1.0, 0.0};
  EXPECT_NEAR(binary_cross_entropy(Tensor::from({2}, {1.0, 0.0}), y).item(), 0.0, 1e-11);
  EXPECT_NEAR(binary_cross_entropy_with_logits(Tensor::zeros({2}), y).item(), std::log(2.0),
              1e-12);
}

TEST(Gradients, Losses) {
  Rng rng(41);
  for (std::size_t n : {1, 3, 6}) {
    Tensor logits = random_tensor({n, 4}, rng);
    std::vector<int> t(n);
    for (std::size_t i = 0; i < n; ++i) t[i] = static_cast<int>(rng.index(4));
    EXPECT_LT(grad_check([&] { return cross_entropy(logits, t); }, {logits}), kGradTol);

    std::vector<double> y(n);
    for (double& v : y) v = rng.bernoulli(0.5) ? 1.0 : 0.0;
    std::vector<double> pv(n);
    for (double& v : pv) v = rng.uniform(0.1, 0.9);
    Tensor p = Tensor::from({n}, pv, true);
    EXPECT_LT(grad_check([&] { return binary_cross_entropy(p, y); }, {p}), kGradTol);
    Tensor z = random_tensor({n}, rng);
    EXPECT_LT(grad_check([&] { return binary_cross_entropy_with_logits(z, y); }, {z}), kGradTol);
    Tensor a = random_tensor({n, 2}, rng), b = random_tensor({n, 2}, rng);
    EXPECT_LT(grad_check([&] { return mse(a, b); }, {a, b}), kGradTol);
  }
}

TEST(Backward, LinearityOfLosses) {
  Rng rng(43);
  Tensor x = random_tensor({3, 4}, rng);
  auto f1 = [&] { return sum(square(x)); };
  auto f2 = [&] { return mean(exp(x)); };
  f1().backward();
  std::vector<double> g1(x.grad().begin(), x.grad().end());
  x.zero_grad();
  f2().backward();
  std::vector<double> g2(x.grad().begin(), x.grad().end());
  x.zero_grad();
  add(f1(), f2()).backward();
  for (std::size_t i = 0; i < g1.size(); ++i) EXPECT_NEAR(x.grad()[i], g1[i] + g2[i], 1e-12);
}

TEST(Backward, VisitsSharedNodeOnce) {
  Tensor x = Tensor::from({2}, {1.0, 2.0}, true);
  Tensor y = square(x);
  Tensor z = add(y, y);  // y reached by two edges
  std::size_t visited = sum(z).backward();
  EXPECT_EQ(visited, 4u);  // x, y, z, sum
  EXPECT_DOUBLE_EQ(x.grad()[0], 4.0);
  EXPECT_DOUBLE_EQ(x.grad()[1], 8.0);
}

TEST(Tensor, ShapeInvariants) {
  EXPECT_THROW(Tensor::from({2, 2}, {1.0, 2.0}), std::exception);
  Tensor x = Tensor::from({2, 3}, std::vector<double>(6, 1.0), true);
  sum(square(x)).backward();
  EXPECT_EQ(x.grad().size(), x.numel());
}

TEST(NoGrad, SkipsRecording) {
  Tensor x = Tensor::from({2}, {1.0, 2.0}, true);
  NoGradGuard guard;
  Tensor y = square(x);
  EXPECT_FALSE(y.requires_grad());
}

TEST(StraightThrough, CopiesGradient) {
  Tensor h = Tensor::from({2}, {0.3, 0.4}, true);
  Tensor q = Tensor::from({2}, {1.0, 0.0});
  Tensor st = straight_through(h, q);
  EXPECT_EQ(st.data()[0], 1.0);
  Tensor w = Tensor::from({2}, {2.0, -3.0});
  sum(mul(st, w)).backward();
  EXPECT_EQ(h.grad()[0], 2.0);
  EXPECT_EQ(h.grad()[1], -3.0);
}

TEST(Adam, MatchesReferenceUpdate) {
  Tensor p = Tensor::from({1}, {1.0}, true);
  Adam opt({p}, {.lr = 0.1});
  double m = 0.0, v = 0.0, ref = 1.0;
  for (int t = 1; t <= 3; ++t) {
    opt.zero_grad();
    sum(square(p)).backward();
    double g = 2.0 * ref;
    opt.step();
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    double mh = m / (1 - std::pow(0.9, t)), vh = v / (1 - std::pow(0.999, t));
    ref -= 0.1 * mh / (std::sqrt(vh) + 1e-8);
    EXPECT_NEAR(p.data()[0], ref, 1e-12);
  }
}

TEST(Adam, Defaults) {
  Adam::Options o;
  EXPECT_EQ(o.lr, 3e-5);
  EXPECT_EQ(o.beta1, 0.9);
  EXPECT_EQ(o.beta2, 0.999);
  EXPECT_EQ(o.eps, 1e-8);
}

TEST(Ema, Buffer) {
  std::vector<double> buf = {1.0, 2.0};
  std::vector<double> s = {3.0, 4.0};
  ema_update(buf, s, 0.75);
  EXPECT_DOUBLE_EQ(buf[0], 1.5);
  EXPECT_DOUBLE_EQ(buf[1], 2.5);
}

}  // namespace
}  // namespace ectoken
