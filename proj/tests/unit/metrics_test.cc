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

#include "ectoken/metrics.h"

#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "ectoken/error.h"
#include "ectoken/nn.h"

namespace ectoken {
namespace {

std::vector<double> randv(Rng& rng, std::size_t n) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.normal();
  return v;
}

// Direct textbook formula, two passes with a different association order.
double pearson_oracle(const std::vector<double>& x, const std::vector<double>& y) {
  double n = x.size(), sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sx += x[i];
    sy += y[i];
  }
  double mx = sx / n, my = sy / n;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
    sxy += (x[i] - mx) * (y[i] - my);
  }
  return sxy / std::sqrt(sxx) / std::sqrt(syy);
}

// O(n^2): rank = 1 + #less + (#equal - 1) / 2.
std::vector<double> rank_oracle(const std::vector<double>& x) {
  std::vector<double> r(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    double less = 0, equal = 0;
    for (double v : x) {
      less += v < x[i];
      equal += v == x[i];
    }
    r[i] = 1 + less + (equal - 1) / 2;
  }
  return r;
}

double auroc_oracle(const std::vector<int>& l, const std::vector<double>& s) {
  double num = 0, den = 0;
  for (std::size_t i = 0; i < l.size(); ++i) {
    for (std::size_t j = 0; j < l.size(); ++j) {
      if (l[i] == 1 && l[j] == 0) {
        den += 1;
        num += s[i] > s[j] ? 1.0 : s[i] == s[j] ? 0.5 : 0.0;
      }
    }
  }
  return num / den;
}

double auprc_oracle(const std::vector<int>& l, const std::vector<double>& s) {
  std::set<double, std::greater<>> thresholds(s.begin(), s.end());
  double P = 0;
  for (int v : l) P += v;
  double ap = 0, prev = 0;
  for (double t : thresholds) {
    double tp = 0, pp = 0;
    for (std::size_t i = 0; i < l.size(); ++i) {
      if (s[i] >= t) {
        pp += 1;
        tp += l[i];
      }
    }
    ap += (tp / P - prev) * (tp / pp);
    prev = tp / P;
  }
  return ap;
}

TEST(Pearson, Examples) {
  EXPECT_DOUBLE_EQ(*pearson(std::vector<double>{1, 2, 3}, std::vector<double>{2, 4, 6}), 1.0);
  EXPECT_DOUBLE_EQ(*pearson(std::vector<double>{1, 2, 3}, std::vector<double>{3, 2, 1}), -1.0);
  EXPECT_FALSE(pearson(std::vector<double>{1, 1, 1}, std::vector<double>{1, 2, 3}));
  EXPECT_FALSE(pearson(std::vector<double>{1}, std::vector<double>{1}));
  EXPECT_THROW(pearson(std::vector<double>{1, 2}, std::vector<double>{1}), ValidationError);
}

TEST(Pearson, MatchesOracleAndAffineInvariance) {
  Rng rng(1);
  for (int t = 0; t < 100; ++t) {
    auto x = randv(rng, 50), y = randv(rng, 50);
    double p = *pearson(x, y);
    EXPECT_NEAR(p, pearson_oracle(x, y), 1e-12);
    std::vector<double> z = x;
    for (double& v : z) v = 3.0 * v + 7.0;
    EXPECT_NEAR(*pearson(z, y), p, 1e-12);
  }
}

TEST(Spearman, ExamplesAndTies) {
  EXPECT_DOUBLE_EQ(*spearman(std::vector<double>{1, 2, 3}, std::vector<double>{1, 4, 9}), 1.0);
  EXPECT_DOUBLE_EQ(*spearman(std::vector<double>{1, 2, 3}, std::vector<double>{9, 4, 1}), -1.0);
  std::vector<double> x = {1, 2, 2, 3}, y = {1, 3, 2, 2};
  EXPECT_EQ(average_ranks(x), (std::vector<double>{1, 2.5, 2.5, 4}));
  EXPECT_NEAR(*spearman(x, y), pearson_oracle(rank_oracle(x), rank_oracle(y)), 1e-12);
  EXPECT_FALSE(spearman(std::vector<double>{2, 2, 2}, std::vector<double>{1, 2, 3}));
}

TEST(Spearman, MatchesOracleWithTiesAndMonotoneInvariance) {
  Rng rng(2);
  for (int t = 0; t < 50; ++t) {
    std::vector<double> x(50), y(50);
    for (double& v : x) v = std::round(rng.normal() * 3);  // many ties
    for (double& v : y) v = rng.normal();
    EXPECT_NEAR(*spearman(x, y), pearson_oracle(rank_oracle(x), rank_oracle(y)), 1e-10);
    std::vector<double> z = y;
    for (double& v : z) v = std::exp(v);
    EXPECT_NEAR(*spearman(x, z), *spearman(x, y), 1e-12);
  }
}

TEST(Rmse, Values) {
  EXPECT_DOUBLE_EQ(*rmse(std::vector<double>{1, 2}, std::vector<double>{1, 4}), std::sqrt(2.0));
  EXPECT_DOUBLE_EQ(*rmse(std::vector<double>{1, 2}, std::vector<double>{1, 2}), 0.0);
  EXPECT_FALSE(rmse(std::vector<double>{}, std::vector<double>{}));
}

TEST(Auroc, Examples) {
  std::vector<int> l = {0, 0, 1, 1};
  EXPECT_DOUBLE_EQ(*auroc(l, std::vector<double>{0.1, 0.2, 0.8, 0.9}), 1.0);
  EXPECT_DOUBLE_EQ(*auroc(l, std::vector<double>{0.9, 0.8, 0.2, 0.1}), 0.0);
  EXPECT_DOUBLE_EQ(*auroc(l, std::vector<double>{0.5, 0.5, 0.5, 0.5}), 0.5);
  EXPECT_FALSE(auroc(std::vector<int>{1, 1}, std::vector<double>{0.1, 0.2}));
}

TEST(Auroc, MatchesPairwiseOracleAndIsMonotoneInvariant) {
  Rng rng(3);
  for (int t = 0; t < 50; ++t) {
    std::vector<int> l(50);
    std::vector<double> s(50);
    for (int& v : l) v = rng.uniform() < 0.4;
    l[0] = 1;
    l[1] = 0;
    for (double& v : s) v = std::round(rng.normal() * 4) / 4;
    double a = *auroc(l, s);
    EXPECT_NEAR(a, auroc_oracle(l, s), 1e-10);
    for (double& v : s) v = std::atan(v) * 2 + 1;
    EXPECT_NEAR(*auroc(l, s), a, 1e-12);
  }
}

TEST(Auroc, RandomScoresNearHalf) {
  Rng rng(4);
  std::vector<int> l(4000);
  std::vector<double> s(4000);
  for (std::size_t i = 0; i < l.size(); ++i) {
    l[i] = rng.uniform() < 0.5;
    s[i] = rng.uniform();
  }
  EXPECT_NEAR(*auroc(l, s), 0.5, 0.03);
}

TEST(Auprc, ExamplesAndOracle) {
  EXPECT_DOUBLE_EQ(*auprc(std::vector<int>{0, 1, 1}, std::vector<double>{0.1, 0.7, 0.9}), 1.0);
  EXPECT_DOUBLE_EQ(*auprc(std::vector<int>{1, 1, 1}, std::vector<double>{0.3, 0.2, 0.1}), 1.0);
  EXPECT_FALSE(auprc(std::vector<int>{0, 0}, std::vector<double>{0.3, 0.2}));
  // Positives at ranks 1 and 3: (1/2)(1) + (1/2)(2/3).
  EXPECT_NEAR(*auprc(std::vector<int>{1, 0, 1}, std::vector<double>{0.9, 0.8, 0.7}),
              0.5 + 1.0 / 3.0, 1e-15);
  Rng rng(5);
  for (int t = 0; t < 50; ++t) {
    std::vector<int> l(50);
    std::vector<double> s(50);
    for (int& v : l) v = rng.uniform() < 0.3;
    l[7] = 1;
    for (double& v : s) v = std::round(rng.normal() * 4) / 4;
    double a = *auprc(l, s);
    EXPECT_NEAR(a, auprc_oracle(l, s), 1e-10);
    EXPECT_GE(a, 0.0);
    EXPECT_LE(a, 1.0);
  }
}

TEST(PerStructure, OppositeGlobalTrend) {
  // Within each group y rises with yhat, but group offsets reverse the global trend.
  std::vector<GroupRecord> r = {{"a", 10, 0}, {"a", 11, 1}, {"a", 12, 2},
                                {"b", 0, 10}, {"b", 1, 11}, {"b", 2, 12}};
  GroupMetric m = per_structure(&pearson, r);
  EXPECT_DOUBLE_EQ(*m.mean, 1.0);
  EXPECT_EQ(m.group_count, 2u);
  EXPECT_LT(regression_report(r).pearson.value(), 0.0);
}

TEST(PerStructure, ThreeGroupFixture) {
  std::vector<GroupRecord> r = {{"a", 1, 1}, {"a", 2, 3}, {"a", 3, 2},   // spearman 0.5
                                {"b", 1, 3}, {"b", 2, 2}, {"b", 3, 1},   // -1
                                {"c", 5, 1},                             // single ligand
                                {"d", 1, 4}, {"d", 2, 4}};               // zero variance
  GroupMetric m = per_structure(&spearman, r);
  EXPECT_EQ(m.group_count, 2u);
  EXPECT_NEAR(*m.mean, (0.5 - 1.0) / 2, 1e-12);
  EXPECT_EQ(m.per_group.count("c"), 0u);
  EXPECT_EQ(m.per_group.count("d"), 0u);
  EXPECT_FALSE(per_structure(&pearson, std::vector<GroupRecord>{{"x", 1, 2}}).mean);
}

TEST(PerStructure, SingleGroupIsPlainMetric) {
  Rng rng(6);
  std::vector<GroupRecord> r;
  std::vector<double> y, yh;
  for (int i = 0; i < 20; ++i) {
    r.push_back({"g", rng.normal(), rng.normal()});
    y.push_back(r.back().y);
    yh.push_back(r.back().yhat);
  }
  EXPECT_NEAR(*per_structure(&pearson, r).mean, *pearson(y, yh), 1e-15);
}

BindingComplex pocket(double ligand_x) {
  BindingComplex c;
  c.id = "p";
  c.protein = "prot";
  c.atoms = {{6, {0, 0, 0}, Chain::kReceptor, 1}, {7, {3, 0, 0}, Chain::kReceptor, 2},
             {8, {6, 0, 0}, Chain::kReceptor, 3}, {6, {ligand_x, 2.5, 0}, Chain::kLigand, 0}};
  c.rebuild_index_sets();
  return c;
}

TEST(KeyNodes, MatchBruteForceScan) {
  Rng rng(7);
  for (int t = 0; t < 10; ++t) {
    BindingComplex c;
    for (int i = 0; i < 30; ++i) {
      Atom a{1 + static_cast<int>(rng.index(10)),
             {rng.uniform(-6, 6), rng.uniform(-6, 6), rng.uniform(-6, 6)},
             i < 6 ? Chain::kLigand : Chain::kReceptor, i};
      c.atoms.push_back(a);
    }
    c.rebuild_index_sets();
    std::vector<std::size_t> oracle;
    for (std::size_t i = 0; i < c.size(); ++i) {
      if (c.atoms[i].chain != Chain::kReceptor) continue;
      bool near = false;
      for (std::size_t j = 0; j < c.size(); ++j) {
        if (c.atoms[j].chain == Chain::kLigand && distance(c.atoms[i].position, c.atoms[j].position) <= 4.0) near = true;
      }
      if (near) oracle.push_back(i);
    }
    EXPECT_EQ(key_node_atoms(c), oracle);
  }
}

TEST(KeyNodes, SimilarityMatrix) {
  BindingComplex p = pocket(1.5), q = pocket(3.0);
  // Key atoms: p -> {0, 1}; q -> {0, 1, 2}; shared -> {0, 1}.
  std::vector<double> rp = {1, 0, 0, 1, 5, 5, 9, 9}, rq = rp;
  KeyNodeSimilarity s = key_node_similarity(p, q, rp, rq, 2);
  ASSERT_EQ(s.size(), 2u);
  EXPECT_DOUBLE_EQ(s.at(0, 0), 1.0);
  EXPECT_DOUBLE_EQ(s.at(1, 1), 1.0);
  EXPECT_DOUBLE_EQ(s.at(0, 1), 0.0);  // orthogonal rows
  q.protein = "other";
  EXPECT_THROW(key_node_similarity(p, q, rp, rq, 2), ValidationError);
}

TEST(KeyNodes, NothingSharedWarns) {
  std::vector<std::string> warnings;
  auto old = set_warning_handler([&](const std::string& m) { warnings.push_back(m); });
  BindingComplex p = pocket(0.0), q = pocket(30.0);
  std::vector<double> r(8, 1.0);
  EXPECT_EQ(key_node_similarity(p, q, r, r, 2).size(), 0u);
  EXPECT_EQ(warnings.size(), 1u);
  set_warning_handler(old);
}

TEST(EvalReport, JsonRoundTripWithNulls) {
  EvalReport r;
  r.task = "lba";
  r.count = 3;
  r.pearson = 0.25;
  r.per_structure_spearman = -0.5;
  r.group_count = 2;
  r.group_pearson = {{"a", 0.1}};
  r.config_hash = 0xdeadbeefcafef00dull;
  r.seed = 7;
  std::string text = r.to_json();
  EXPECT_NE(text.find("\"rmse\": null"), std::string::npos);
  EvalReport s = EvalReport::from_json(text);
  EXPECT_EQ(s.pearson, r.pearson);
  EXPECT_FALSE(s.rmse);
  EXPECT_EQ(s.per_structure_spearman, r.per_structure_spearman);
  EXPECT_EQ(s.group_pearson, r.group_pearson);
  EXPECT_EQ(s.config_hash, r.config_hash);
  EXPECT_EQ(s.seed, 7u);
  EXPECT_EQ(s.to_json(), text);
}

}  // namespace
}  // namespace ectoken
