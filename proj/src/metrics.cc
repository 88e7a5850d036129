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

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

#include "ectoken/error.h"

namespace ectoken {

namespace {

void require_same_length(std::size_t a, std::size_t b, const char* what) {
  if (a != b) {
    throw ValidationError(std::string(what) + ": length mismatch " + std::to_string(a) + " vs " +
                          std::to_string(b));
  }
}

}  // namespace

std::optional<double> pearson(std::span<const double> x, std::span<const double> y) {
  require_same_length(x.size(), y.size(), "pearson");
  std::size_t n = x.size();
  if (n < 2) return std::nullopt;
  double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < n; ++i) {
    double a = x[i] - mx, b = y[i] - my;
    sxy += a * b;
    sxx += a * a;
    syy += b * b;
  }
  if (sxx <= 0.0 || syy <= 0.0) return std::nullopt;
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

std::vector<double> average_ranks(std::span<const double> x) {
  std::vector<std::size_t> order(x.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<double> r(x.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && x[order[j + 1]] == x[order[i]]) ++j;
    double rank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[order[k]] = rank;
    i = j + 1;
  }
  return r;
}

std::optional<double> spearman(std::span<const double> x, std::span<const double> y) {
  require_same_length(x.size(), y.size(), "spearman");
  std::vector<double> rx = average_ranks(x), ry = average_ranks(y);
  return pearson(rx, ry);
}

std::optional<double> rmse(std::span<const double> y, std::span<const double> yhat) {
  require_same_length(y.size(), yhat.size(), "rmse");
  if (y.empty()) return std::nullopt;
  double s = 0;
  for (std::size_t i = 0; i < y.size(); ++i) s += (y[i] - yhat[i]) * (y[i] - yhat[i]);
  return std::sqrt(s / y.size());
}

std::optional<double> auroc(std::span<const int> labels, std::span<const double> scores) {
  require_same_length(labels.size(), scores.size(), "auroc");
  // Rank-sum form of the Mann-Whitney statistic; average ranks give ties 1/2.
  std::vector<double> r = average_ranks(scores);
  double pos = 0, neg = 0, rank_sum = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i]) {
      pos += 1;
      rank_sum += r[i];
    } else {
      neg += 1;
    }
  }
  if (pos == 0 || neg == 0) return std::nullopt;
  return (rank_sum - pos * (pos + 1) / 2) / (pos * neg);
}

std::optional<double> auprc(std::span<const int> labels, std::span<const double> scores) {
  require_same_length(labels.size(), scores.size(), "auprc");
  std::size_t total_pos = std::count_if(labels.begin(), labels.end(), [](int l) { return l != 0; });
  if (total_pos == 0) return std::nullopt;
  std::vector<std::size_t> order(labels.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  double ap = 0, tp = 0, seen = 0, prev_recall = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) {
      tp += labels[order[j]] != 0;
      seen += 1;
      ++j;
    }
    double recall = tp / total_pos;
    ap += (recall - prev_recall) * (tp / seen);
    prev_recall = recall;
    i = j;
  }
  return std::clamp(ap, 0.0, 1.0);
}

GroupMetric per_structure(Correlation metric, std::span<const GroupRecord> records) {
  std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> groups;
  for (const GroupRecord& r : records) {
    groups[r.group].first.push_back(r.y);
    groups[r.group].second.push_back(r.yhat);
  }
  GroupMetric out;
  double total = 0;
  for (const auto& [name, g] : groups) {
    if (g.first.size() < 2) continue;
    std::optional<double> v = metric(g.first, g.second);
    if (!v) continue;
    out.per_group[name] = *v;
    total += *v;
    ++out.group_count;
  }
  if (out.group_count > 0) out.mean = total / out.group_count;
  return out;
}

std::vector<std::size_t> key_node_atoms(const BindingComplex& c, double cutoff) {
  std::vector<std::size_t> out;
  double c2 = cutoff * cutoff;
  for (std::size_t r : c.receptor_index) {
    for (std::size_t l : c.ligand_index) {
      const Vec3 &a = c.atoms[r].position, &b = c.atoms[l].position;
      double d2 = (a[0] - b[0]) * (a[0] - b[0]) + (a[1] - b[1]) * (a[1] - b[1]) +
                  (a[2] - b[2]) * (a[2] - b[2]);
      if (d2 <= c2) {
        out.push_back(r);
        break;
      }
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

KeyNodeSimilarity key_node_similarity(const BindingComplex& p, const BindingComplex& q,
                                      std::span<const double> rp, std::span<const double> rq,
                                      std::size_t width, double cutoff) {
  if (width == 0 || rp.size() != p.size() * width || rq.size() != q.size() * width) {
    throw ValidationError("key_node_similarity: representation sizes do not match the complexes");
  }
  if (!p.protein.empty() && !q.protein.empty() && p.protein != q.protein) {
    throw ValidationError("key_node_similarity: complexes bind different proteins ('" + p.protein +
                          "' vs '" + q.protein + "')");
  }
  KeyNodeSimilarity out;
  std::vector<std::size_t> kq = key_node_atoms(q, cutoff);
  for (std::size_t i : key_node_atoms(p, cutoff)) {
    const Atom& a = p.atoms[i];
    for (std::size_t j : kq) {
      const Atom& b = q.atoms[j];
      if (a.residue == b.residue && a.type == b.type && distance(a.position, b.position) < 1e-6) {
        out.atoms.push_back({i, j});
        break;
      }
    }
  }
  if (out.atoms.empty()) {
    warn("key_node_similarity: no shared key atoms between '" + p.id + "' and '" + q.id + "'");
    return out;
  }
  auto norm = [&](std::span<const double> r, std::size_t i) {
    double s = 0;
    for (std::size_t k = 0; k < width; ++k) s += r[i * width + k] * r[i * width + k];
    return std::sqrt(s);
  };
  std::size_t S = out.atoms.size();
  out.similarity.assign(S * S, 0.0);
  for (std::size_t a = 0; a < S; ++a) {
    std::size_t i = out.atoms[a].first;
    double ni = norm(rp, i);
    for (std::size_t b = 0; b < S; ++b) {
      std::size_t j = out.atoms[b].second;
      double dot = 0;
      for (std::size_t k = 0; k < width; ++k) dot += rp[i * width + k] * rq[j * width + k];
      double den = ni * norm(rq, j);
      out.similarity[a * S + b] = den > 0 ? dot / den : 0.0;
    }
  }
  return out;
}

namespace {

nlohmann::json opt(const std::optional<double>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

std::optional<double> read_opt(const nlohmann::json& j, const char* key) {
  if (!j.contains(key) || j[key].is_null()) return std::nullopt;
  return j[key].get<double>();
}

}  // namespace

std::string EvalReport::to_json() const {
  nlohmann::json j;
  j["task"] = task;
  j["count"] = count;
  j["pearson"] = opt(pearson);
  j["spearman"] = opt(spearman);
  j["rmse"] = opt(rmse);
  j["auroc"] = opt(auroc);
  j["auprc"] = opt(auprc);
  j["per_structure_pearson"] = opt(per_structure_pearson);
  j["per_structure_spearman"] = opt(per_structure_spearman);
  j["group_count"] = group_count;
  nlohmann::json groups = nlohmann::json::object();
  for (const auto& [g, v] : group_pearson) groups[g]["pearson"] = v;
  for (const auto& [g, v] : group_spearman) groups[g]["spearman"] = v;
  j["groups"] = groups;
  std::ostringstream h;
  h << std::hex << std::setw(16) << std::setfill('0') << config_hash;
  j["config_hash"] = h.str();
  j["seed"] = seed;
  return j.dump(2) + "\n";
}

EvalReport EvalReport::from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("report: ") + e.what());
  }
  EvalReport r;
  r.task = j.value("task", "");
  r.count = j.value("count", std::size_t{0});
  r.pearson = read_opt(j, "pearson");
  r.spearman = read_opt(j, "spearman");
  r.rmse = read_opt(j, "rmse");
  r.auroc = read_opt(j, "auroc");
  r.auprc = read_opt(j, "auprc");
  r.per_structure_pearson = read_opt(j, "per_structure_pearson");
  r.per_structure_spearman = read_opt(j, "per_structure_spearman");
  r.group_count = j.value("group_count", std::size_t{0});
  if (j.contains("groups")) {
    for (const auto& [g, v] : j["groups"].items()) {
      if (v.contains("pearson")) r.group_pearson[g] = v["pearson"].get<double>();
      if (v.contains("spearman")) r.group_spearman[g] = v["spearman"].get<double>();
    }
  }
  r.config_hash = std::stoull(j.value("config_hash", std::string("0")), nullptr, 16);
  r.seed = j.value("seed", std::uint64_t{0});
  return r;
}

EvalReport regression_report(std::span<const GroupRecord> records) {
  EvalReport r;
  r.count = records.size();
  std::vector<double> y, yhat;
  for (const GroupRecord& g : records) {
    y.push_back(g.y);
    yhat.push_back(g.yhat);
  }
  r.pearson = pearson(y, yhat);
  r.spearman = spearman(y, yhat);
  r.rmse = rmse(y, yhat);
  GroupMetric gp = per_structure(&ectoken::pearson, records);
  GroupMetric gs = per_structure(&ectoken::spearman, records);
  r.per_structure_pearson = gp.mean;
  r.per_structure_spearman = gs.mean;
  r.group_count = std::max(gp.group_count, gs.group_count);
  r.group_pearson = gp.per_group;
  r.group_spearman = gs.per_group;
  return r;
}

EvalReport classification_report(std::span<const int> labels, std::span<const double> scores) {
  EvalReport r;
  r.count = labels.size();
  r.auroc = auroc(labels, scores);
  r.auprc = auprc(labels, scores);
  return r;
}

}  // namespace ectoken
