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

// Regression and ranking metrics, per-protein grouping, key-node similarity.
// Undefined values (zero variance, one class) are std::nullopt, never NaN.

#ifndef ECTOKEN_METRICS_H_
#define ECTOKEN_METRICS_H_

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ectoken/moldata.h"

namespace ectoken {

std::optional<double> pearson(std::span<const double> x, std::span<const double> y);
//! Pearson of average ranks.
std::optional<double> spearman(std::span<const double> x, std::span<const double> y);
std::optional<double> rmse(std::span<const double> y, std::span<const double> yhat);
//! P(score of a positive > score of a negative), ties counted half.
std::optional<double> auroc(std::span<const int> labels, std::span<const double> scores);
//! Average precision: sum over distinct thresholds of (recall step) * precision.
std::optional<double> auprc(std::span<const int> labels, std::span<const double> scores);

//! 1-based ranks; tied entries share the mean of their positions.
std::vector<double> average_ranks(std::span<const double> x);

struct GroupRecord {
  std::string group;
  double y = 0.0;
  double yhat = 0.0;
};

struct GroupMetric {
  std::optional<double> mean;
  std::size_t group_count = 0;              // groups that contributed
  std::map<std::string, double> per_group;  // only contributing groups
};

using Correlation = std::optional<double> (*)(std::span<const double>, std::span<const double>);

//! Metric within each group of >= 2 records with a defined value, averaged.
GroupMetric per_structure(Correlation metric, std::span<const GroupRecord> records);

//! Receptor atoms within `cutoff` of any ligand atom, ascending.
std::vector<std::size_t> key_node_atoms(const BindingComplex& complex, double cutoff = 4.0);

struct KeyNodeSimilarity {
  //! Matched receptor atoms as (index in p, index in q).
  std::vector<std::pair<std::size_t, std::size_t>> atoms;
  //! similarity[a * S + b] = cos(reps_p[atoms[a].first], reps_q[atoms[b].second]).
  std::vector<double> similarity;
  std::size_t size() const { return atoms.size(); }
  double at(std::size_t a, std::size_t b) const { return similarity[a * atoms.size() + b]; }
};

//! Receptor key atoms present in both complexes (same residue, type and position
//! within 1e-6) and their cross cosine similarities. reps are [N, C] row-major.
//! Warns and returns an empty result when nothing is shared.
KeyNodeSimilarity key_node_similarity(const BindingComplex& p, const BindingComplex& q,
                                      std::span<const double> reps_p,
                                      std::span<const double> reps_q, std::size_t width,
                                      double cutoff = 4.0);

struct EvalReport {
  std::string task;
  std::size_t count = 0;
  std::optional<double> pearson, spearman, rmse, auroc, auprc;
  std::optional<double> per_structure_pearson, per_structure_spearman;
  std::size_t group_count = 0;
  std::map<std::string, double> group_pearson, group_spearman;
  std::uint64_t config_hash = 0;
  std::uint64_t seed = 0;

  //! Fixed-key JSON; missing values are null.
  std::string to_json() const;
  static EvalReport from_json(const std::string& text);
};

//! Regression metrics plus per-structure correlations.
EvalReport regression_report(std::span<const GroupRecord> records);
//! Classification metrics with `labels` in {0, 1}.
EvalReport classification_report(std::span<const int> labels, std::span<const double> scores);

}  // namespace ectoken

#endif  // ECTOKEN_METRICS_H_
