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

#include "ectoken/quantizer.h"

#include <gtest/gtest.h>

#include <cmath>

#include "ectoken/error.h"
#include "ectoken/grad_check.h"
#include "test_util.h"

namespace ectoken {
namespace {

using testing::random_tensor;

Codebook two_axis_book() {
  Rng rng(0);
  Codebook b = Codebook::random("u1", 2, 2, rng);
  b.codes = {1.0, 0.0, 0.0, 1.0};
  b.ema_embed_sum = b.codes;
  return b;
}

double norm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

TEST(SphericalProject, Values) {
  std::vector<double> v = {3.0, 4.0};
  auto u = spherical_project(v);
  EXPECT_DOUBLE_EQ(u[0], 0.6);
  EXPECT_DOUBLE_EQ(u[1], 0.8);
  EXPECT_EQ(spherical_project(u), u);
  Rng rng(1);
  for (int t = 0; t < 1000; ++t) {
    std::vector<double> r(7);
    for (double& x : r) x = rng.normal();
    EXPECT_NEAR(norm(spherical_project(r)), 1.0, 1e-12);
  }
  std::vector<double> tiny = {1e-13, 0.0};
  EXPECT_THROW(spherical_project(tiny), ValidationError);
}

TEST(Quantize, NearestAndTies) {
  Codebook b = two_axis_book();
  auto q = quantize(Tensor::from({1, 2}, {0.9, 0.1}), b);
  EXPECT_EQ(q.indices[0], 0u);
  auto exact = quantize(Tensor::from({1, 2}, {0.0, 1.0}), b);
  EXPECT_EQ(exact.indices[0], 1u);
  EXPECT_EQ(mse(exact.projected, exact.codes).item(), 0.0);
  auto tie = quantize(Tensor::from({1, 2}, {1.0, 1.0}), b);
  EXPECT_EQ(tie.indices[0], 0u);
  Codebook empty;
  empty.dim = 2;
  EXPECT_THROW(quantize(Tensor::from({1, 2}, {1.0, 0.0}), empty), ValidationError);
}

TEST(Quantize, MatchesExhaustiveSearch) {
  Rng rng(2);
  Codebook b = Codebook::random("a1", 32, 6, rng);
  Tensor h = random_tensor({50, 6}, rng, false);
  auto q = quantize(h, b);
  for (std::size_t r = 0; r < 50; ++r) {
    auto u = spherical_project(h.data().subspan(r * 6, 6));
    std::size_t best = 0;
    double best_d = 1e300;
    for (std::size_t j = 0; j < 32; ++j) {
      double d = 0.0;
      for (std::size_t k = 0; k < 6; ++k) d += std::pow(u[k] - b.codes[j * 6 + k], 2);
      if (d < best_d) best_d = d, best = j;
    }
    EXPECT_EQ(q.indices[r], best);
  }
}

TEST(Quantize, IdempotentOnCodes) {
  Rng rng(3);
  Codebook b = Codebook::random("u2", 64, 8, rng);
  Tensor codes = Tensor::from({64, 8}, b.codes);
  auto q = quantize(codes, b);
  for (std::size_t j = 0; j < 64; ++j) EXPECT_EQ(q.indices[j], j);
}

TEST(Quantize, StraightThroughCopiesGradientExactly) {
  Rng rng(4);
  Codebook b = Codebook::random("u1", 16, 4, rng);
  Tensor h = random_tensor({5, 4}, rng);
  auto q = quantize(h, b);
  for (std::size_t i = 0; i < q.output.numel(); ++i) EXPECT_EQ(q.output.data()[i], q.codes.data()[i]);
  // Gradient with respect to the projected input equals the gradient at the output.
  Tensor w = random_tensor({5, 4}, rng, false);
  Tensor p = q.projected.detach();
  p.set_requires_grad(true);
  Tensor out = straight_through(p, q.codes);
  sum(mul(out, w)).backward();
  for (std::size_t i = 0; i < p.numel(); ++i) EXPECT_EQ(p.grad()[i], w.data()[i]);
}

TEST(Commitment, ValuesAndStopGradient) {
  Tensor h = Tensor::from({2}, {1.0, 0.0}, true);
  Tensor e = Tensor::from({2}, {0.0, 0.0}, true);
  EXPECT_DOUBLE_EQ(commitment_loss(h, e).item(), 0.5);
  EXPECT_EQ(commitment_loss(h, h).item(), 0.0);

  commitment_loss(h, e, CommitmentDirection::kEncoder).backward();
  EXPECT_TRUE(h.has_grad());
  EXPECT_NE(h.grad()[0], 0.0);
  EXPECT_FALSE(e.has_grad() && (e.grad()[0] != 0.0 || e.grad()[1] != 0.0));

  h.zero_grad();
  e.zero_grad();
  commitment_loss(h, e, CommitmentDirection::kCode).backward();
  for (double g : h.grad()) EXPECT_EQ(g, 0.0);
  EXPECT_NE(e.grad()[0], 0.0);
}

TEST(Commitment, GradientCheckOnInput) {
  Rng rng(5);
  Codebook b = Codebook::random("u1", 8, 4, rng);
  for (std::size_t n : {1, 3, 7}) {
    Tensor h = random_tensor({n, 4}, rng);
    auto codes = quantize(h, b).codes;
    double err = grad_check([&] { return commitment_loss(l2_normalize(h), codes); }, {h});
    EXPECT_LT(err, 1e-4);
  }
}

TEST(Ema, DecayExtremes) {
  Codebook b = two_axis_book();
  b.decay = 0.0;
  std::vector<std::size_t> idx = {0};
  std::vector<double> h = {0.6, 0.8};
  ema_update(b, idx, h);
  EXPECT_NEAR(b.codes[0], 0.6, 1e-15);
  EXPECT_NEAR(b.codes[1], 0.8, 1e-15);
  EXPECT_EQ(b.codes[3], 1.0);  // unassigned

  Codebook c = two_axis_book();
  auto before = c.codes;
  c.decay = 1.0;
  ema_update(c, idx, h);
  EXPECT_EQ(c.codes, before);

  c.decay = 1.5;
  EXPECT_THROW(ema_update(c, idx, h), ValidationError);
}

TEST(Ema, ConvergesToProjectedClusterMean) {
  Rng rng(6);
  Codebook b = Codebook::random("a2", 1, 3, rng);
  std::vector<double> pts;
  double mean[3] = {0, 0, 0};
  for (int i = 0; i < 10; ++i) {
    auto u = spherical_project(std::vector<double>{1.0 + rng.normal(0, 0.2), 0.5 + rng.normal(0, 0.2),
                                                   -0.3 + rng.normal(0, 0.2)});
    pts.insert(pts.end(), u.begin(), u.end());
    for (int k = 0; k < 3; ++k) mean[k] += u[k];
  }
  auto target = spherical_project(std::vector<double>{mean[0], mean[1], mean[2]});
  std::vector<std::size_t> idx(10, 0);
  double previous = 1e300;
  for (int step = 1; step <= 2000; ++step) {
    ema_update(b, idx, pts);
    double d = 0.0;
    for (int k = 0; k < 3; ++k) d += std::pow(b.codes[k] - target[k], 2);
    d = std::sqrt(d);
    if (step > 2) EXPECT_LE(d, previous + 1e-15) << step;
    previous = d;
    EXPECT_NEAR(norm(b.code(0)), 1.0, 1e-6);
  }
  EXPECT_LT(previous, 1e-6);
}

TEST(Ema, CodesStayUnitNorm) {
  Rng rng(7);
  Codebook b = Codebook::random("u1", 16, 5, rng);
  for (int step = 0; step < 50; ++step) {
    Tensor h = random_tensor({20, 5}, rng, false);
    auto q = quantize(h, b);
    ema_update(b, q.indices, q.projected.data());
    for (std::size_t j = 0; j < 16; ++j) ASSERT_NEAR(norm(b.code(j)), 1.0, 1e-6);
    for (double s : b.ema_cluster_size) ASSERT_GE(s, 0.0);
  }
}

std::vector<double> two_clusters(Rng& rng, std::size_t per, std::vector<double>& c0,
                                 std::vector<double>& c1) {
  std::vector<double> buf;
  std::vector<double> s0(4, 0.0), s1(4, 0.0);
  for (std::size_t i = 0; i < per; ++i) {
    auto a = spherical_project(std::vector<double>{1 + rng.normal(0, 0.05), rng.normal(0, 0.05),
                                                   rng.normal(0, 0.05), rng.normal(0, 0.05)});
    auto b = spherical_project(std::vector<double>{rng.normal(0, 0.05), rng.normal(0, 0.05),
                                                   1 + rng.normal(0, 0.05), rng.normal(0, 0.05)});
    buf.insert(buf.end(), a.begin(), a.end());
    buf.insert(buf.end(), b.begin(), b.end());
    for (int k = 0; k < 4; ++k) s0[k] += a[k], s1[k] += b[k];
  }
  c0 = spherical_project(s0);
  c1 = spherical_project(s1);
  return buf;
}

TEST(Revival, NoDeadCodesLeavesBookUnchanged) {
  Rng rng(8);
  Codebook b = Codebook::random("u1", 4, 4, rng);
  std::fill(b.usage.begin(), b.usage.end(), 3);
  auto before = b.codes;
  std::vector<double> buf = {1, 0, 0, 0};
  auto report = kmeans_revive(b, buf, 1, rng);
  EXPECT_EQ(report.dead, 0u);
  EXPECT_EQ(b.codes, before);
  for (std::size_t u : b.usage) EXPECT_EQ(u, 0u);
}

TEST(Revival, SeparatesTwoClusters) {
  Rng rng(9);
  for (int trial = 0; trial < 10; ++trial) {
    Codebook b = Codebook::random("a1", 2, 4, rng);
    std::vector<double> c0, c1;
    auto buf = two_clusters(rng, 40, c0, c1);
    auto report = kmeans_revive(b, buf, 1, rng);
    EXPECT_EQ(report.dead, 2u);
    auto dist = [&](std::size_t j, const std::vector<double>& c) {
      double s = 0.0;
      for (int k = 0; k < 4; ++k) s += std::pow(b.codes[j * 4 + k] - c[k], 2);
      return std::sqrt(s);
    };
    bool straight = dist(0, c0) < 0.1 && dist(1, c1) < 0.1;
    bool swapped = dist(0, c1) < 0.1 && dist(1, c0) < 0.1;
    EXPECT_TRUE(straight || swapped) << trial;
  }
}

TEST(Revival, EveryRevivedCodeOwnsAPoint) {
  Rng rng(10);
  for (int trial = 0; trial < 10; ++trial) {
    Codebook b = Codebook::random("u2", 32, 6, rng);
    Tensor h = random_tensor({200, 6}, rng, false);
    // Concentrate usage: only a handful of codes alive.
    for (std::size_t j = 0; j < 32; ++j) b.usage[j] = j % 5 == 0 ? 4 : 0;
    auto flat = l2_normalize(h);
    std::vector<double> buf(flat.data().begin(), flat.data().end());
    auto report = kmeans_revive(b, buf, 1, rng);
    ASSERT_GT(report.dead, 0u);
    auto q = quantize(h, b);
    std::vector<std::size_t> count(32, 0);
    for (std::size_t j : q.indices) ++count[j];
    for (std::size_t j : report.revived) EXPECT_GE(count[j], 1u) << "code " << j;
    for (std::size_t j = 0; j < 32; ++j) ASSERT_NEAR(norm(b.code(j)), 1.0, 1e-9);
  }
}

TEST(Revival, SmallBufferSamplesWithReplacement) {
  Rng rng(11);
  Codebook b = Codebook::random("u1", 8, 3, rng);
  std::vector<double> buf = {1, 0, 0, 0, 1, 0};
  auto report = kmeans_revive(b, buf, 1, rng);
  EXPECT_TRUE(report.sampled_with_replacement);
  EXPECT_EQ(report.revived.size(), 8u);
  std::vector<double> none;
  b.usage.assign(8, 0);
  EXPECT_THROW(kmeans_revive(b, none, 1, rng), ValidationError);
}

TEST(Codebook, RecordAndPerplexity) {
  Rng rng(12);
  Codebook b = Codebook::random("u1", 4, 2, rng);
  b.recent_capacity = 3;
  std::vector<std::size_t> idx = {0, 1, 2, 3};
  std::vector<double> x = {1, 0, 0, 1, -1, 0, 0, -1};
  b.record(idx, x);
  EXPECT_NEAR(b.perplexity(), 4.0, 1e-12);
  EXPECT_EQ(b.recent_count, 3u);
  EXPECT_EQ(b.recent_inputs().size(), 6u);
  EXPECT_EQ(b.dead_count(1), 0u);
  b.reset_usage();
  EXPECT_EQ(b.dead_count(1), 4u);
  std::vector<std::size_t> same = {2, 2};
  b.record(same, std::vector<double>{1, 0, 1, 0});
  EXPECT_NEAR(b.perplexity(), 1.0, 1e-12);
}

TEST(Split, Halves) {
  Tensor h = Tensor::from({4}, {1, 2, 3, 4});
  auto [a, b] = split_hierarchical(h);
  EXPECT_EQ(std::vector<double>(a.data().begin(), a.data().end()), (std::vector<double>{1, 2}));
  EXPECT_EQ(std::vector<double>(b.data().begin(), b.data().end()), (std::vector<double>{3, 4}));
  Tensor joined = concat({a, b}, 0);
  for (int i = 0; i < 4; ++i) EXPECT_EQ(joined.data()[i], h.data()[i]);
  EXPECT_THROW(split_hierarchical(Tensor::from({3}, {1, 2, 3})), ValidationError);
}

TEST(Split, TwoBooksGiveIndependentIndices) {
  Rng rng(13);
  Codebook b1 = Codebook::random("u1", 8, 3, rng), b2 = Codebook::random("u2", 8, 3, rng);
  Tensor h = random_tensor({6, 6}, rng, false);
  auto [h1, h2] = split_hierarchical(h);
  auto q1 = quantize(h1, b1), q2 = quantize(h2, b2);
  EXPECT_EQ(q1.indices.size(), 6u);
  EXPECT_EQ(q2.indices.size(), 6u);
  // Changing the second half never moves the first index stream.
  Tensor g = h.detach();
  for (std::size_t r = 0; r < 6; ++r) g.mutable_data()[r * 6 + 4] += 3.0;
  EXPECT_EQ(quantize(split_hierarchical(g).first, b1).indices, q1.indices);
}

}  // namespace
}  // namespace ectoken
