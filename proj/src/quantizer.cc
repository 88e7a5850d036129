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

#include <algorithm>
#include <cmath>
#include <limits>

#include "ectoken/error.h"

namespace ectoken {

namespace {

double sq_dist(const double* a, const double* b, std::size_t d) {
  double s = 0.0;
  for (std::size_t k = 0; k < d; ++k) {
    double t = a[k] - b[k];
    s += t * t;
  }
  return s;
}

void project_in_place(double* v, std::size_t d) {
  double s = 0.0;
  for (std::size_t k = 0; k < d; ++k) s += v[k] * v[k];
  double n = std::sqrt(s);
  if (n <= 1e-12) throw ValidationError("spherical projection of a degenerate vector");
  for (std::size_t k = 0; k < d; ++k) v[k] /= n;
}

}  // namespace

Codebook Codebook::random(std::string name, std::size_t size, std::size_t dim, Rng& rng,
                          double decay) {
  Codebook b;
  b.name = std::move(name);
  b.size = size;
  b.dim = dim;
  b.decay = decay;
  b.codes.resize(size * dim);
  for (double& v : b.codes) v = rng.normal();
  for (std::size_t j = 0; j < size; ++j) project_in_place(b.codes.data() + j * dim, dim);
  b.ema_cluster_size.assign(size, 1.0);
  b.ema_embed_sum = b.codes;
  b.usage.assign(size, 0);
  return b;
}

void Codebook::record(std::span<const std::size_t> indices,
                      std::span<const double> projected) {
  if (recent.size() != recent_capacity * dim) recent.assign(recent_capacity * dim, 0.0);
  for (std::size_t r = 0; r < indices.size(); ++r) {
    ++usage[indices[r]];
    if (recent_capacity == 0) continue;
    std::copy_n(projected.begin() + static_cast<std::ptrdiff_t>(r * dim), dim,
                recent.begin() + static_cast<std::ptrdiff_t>(recent_next * dim));
    recent_next = (recent_next + 1) % recent_capacity;
    recent_count = std::min(recent_count + 1, recent_capacity);
  }
}

std::vector<double> Codebook::recent_inputs() const {
  return {recent.begin(), recent.begin() + static_cast<std::ptrdiff_t>(recent_count * dim)};
}

std::size_t Codebook::dead_count(std::size_t threshold) const {
  return static_cast<std::size_t>(
      std::count_if(usage.begin(), usage.end(), [&](std::size_t u) { return u < threshold; }));
}

double Codebook::perplexity() const {
  double total = 0.0;
  for (std::size_t u : usage) total += static_cast<double>(u);
  if (total == 0.0) return 0.0;
  double h = 0.0;
  for (std::size_t u : usage) {
    if (u == 0) continue;
    double p = static_cast<double>(u) / total;
    h -= p * std::log(p);
  }
  return std::exp(h);
}

void Codebook::reset_usage() { std::fill(usage.begin(), usage.end(), 0); }

std::vector<double> spherical_project(std::span<const double> v) {
  std::vector<double> out(v.begin(), v.end());
  project_in_place(out.data(), out.size());
  return out;
}

std::size_t nearest_code(std::span<const double> unit, const Codebook& book,
                         double* squared_distance) {
  if (book.size == 0) throw ValidationError("quantize: codebook " + book.name + " is empty");
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < book.size; ++j) {
    double d = sq_dist(unit.data(), book.codes.data() + j * book.dim, book.dim);
    if (d < best_d) {
      best_d = d;
      best = j;
    }
  }
  if (squared_distance) *squared_distance = best_d;
  return best;
}

Quantized quantize(const Tensor& h, const Codebook& book) {
  if (book.size == 0) throw ValidationError("quantize: codebook " + book.name + " is empty");
  if (h.shape().back() != book.dim) {
    throw ValidationError("quantize: input width " + std::to_string(h.shape().back()) +
                          " != code width " + std::to_string(book.dim));
  }
  std::size_t n = h.numel() / book.dim;
  auto raw = h.data();
  for (std::size_t r = 0; r < n; ++r) {
    double s = 0.0;
    for (std::size_t k = 0; k < book.dim; ++k) {
      double v = raw[r * book.dim + k];
      if (!std::isfinite(v)) throw NumericalError("quantize: non-finite embedding");
      s += v * v;
    }
    if (std::sqrt(s) <= 1e-12) {
      throw ValidationError("quantize: degenerate (near-zero) embedding");
    }
  }
  Quantized q;
  q.projected = l2_normalize(h);
  auto pv = q.projected.data();
  std::vector<double> selected(n * book.dim);
  q.indices.resize(n);
  for (std::size_t r = 0; r < n; ++r) {
    std::size_t j = nearest_code(pv.subspan(r * book.dim, book.dim), book);
    q.indices[r] = j;
    std::copy_n(book.codes.begin() + static_cast<std::ptrdiff_t>(j * book.dim), book.dim,
                selected.begin() + static_cast<std::ptrdiff_t>(r * book.dim));
  }
  q.codes = Tensor::from(h.shape(), std::move(selected));
  q.output = straight_through(q.projected, q.codes);
  return q;
}

Tensor commitment_loss(const Tensor& projected, const Tensor& codes,
                       CommitmentDirection direction) {
  if (direction == CommitmentDirection::kEncoder) return mse(projected, codes.detach());
  return mse(projected.detach(), codes);
}

void ema_update(Codebook& book, std::span<const std::size_t> indices,
                std::span<const double> projected) {
  if (!(book.decay >= 0.0 && book.decay <= 1.0)) {
    throw ValidationError("ema_update: decay must lie in [0, 1]");
  }
  if (book.decay == 1.0) return;
  std::size_t d = book.dim;
  std::vector<double> count(book.size, 0.0);
  std::vector<double> sums(book.size * d, 0.0);
  for (std::size_t r = 0; r < indices.size(); ++r) {
    std::size_t j = indices[r];
    count[j] += 1.0;
    for (std::size_t k = 0; k < d; ++k) sums[j * d + k] += projected[r * d + k];
  }
  double lam = book.decay;
  for (std::size_t j = 0; j < book.size; ++j) {
    book.ema_cluster_size[j] = lam * book.ema_cluster_size[j] + (1.0 - lam) * count[j];
    for (std::size_t k = 0; k < d; ++k) {
      book.ema_embed_sum[j * d + k] =
          lam * book.ema_embed_sum[j * d + k] + (1.0 - lam) * sums[j * d + k];
    }
    if (count[j] == 0.0) continue;
    double denom = std::max(book.ema_cluster_size[j], book.epsilon);
    std::vector<double> c(d);
    for (std::size_t k = 0; k < d; ++k) c[k] = book.ema_embed_sum[j * d + k] / denom;
    project_in_place(c.data(), d);
    std::copy(c.begin(), c.end(), book.codes.begin() + static_cast<std::ptrdiff_t>(j * d));
  }
}

RevivalReport kmeans_revive(Codebook& book, std::span<const double> inputs,
                            std::size_t dead_threshold, Rng& rng, std::size_t iterations) {
  RevivalReport report;
  std::size_t d = book.dim;
  std::vector<std::size_t> dead;
  std::vector<bool> is_free(book.size, false);
  for (std::size_t j = 0; j < book.size; ++j) {
    if (book.usage[j] < dead_threshold) {
      dead.push_back(j);
      is_free[j] = true;
    }
  }
  report.dead = dead.size();
  if (dead.empty()) {
    book.reset_usage();
    return report;
  }
  std::size_t n = inputs.size() / d;
  if (n == 0) throw ValidationError("kmeans_revive: recent-input buffer is empty");

  std::vector<double> pts(inputs.begin(), inputs.end());
  if (n < dead.size()) {
    report.sampled_with_replacement = true;
    warn("kmeans_revive(" + book.name + "): " + std::to_string(n) + " buffered inputs for " +
         std::to_string(dead.size()) + " dead codes; sampling with replacement");
    while (pts.size() / d < dead.size()) {
      std::size_t r = rng.index(n);
      pts.insert(pts.end(), inputs.begin() + static_cast<std::ptrdiff_t>(r * d),
                 inputs.begin() + static_cast<std::ptrdiff_t>((r + 1) * d));
    }
    n = pts.size() / d;
  }
  for (std::size_t r = 0; r < n; ++r) project_in_place(pts.data() + r * d, d);

  // Nearest fixed (live) code distance per point, used for seeding.
  std::vector<double> best(n, std::numeric_limits<double>::infinity());
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t j = 0; j < book.size; ++j) {
      if (is_free[j]) continue;
      best[r] = std::min(best[r], sq_dist(pts.data() + r * d, book.codes.data() + j * d, d));
    }
  }
  // k-means++ style seeding of the free codes, relative to live codes.
  for (std::size_t j : dead) {
    double total = 0.0;
    for (std::size_t r = 0; r < n; ++r) total += std::isfinite(best[r]) ? best[r] : 4.0;
    std::size_t pick = rng.index(n);
    if (total > 0.0) {
      double u = rng.uniform() * total;
      for (std::size_t r = 0; r < n; ++r) {
        u -= std::isfinite(best[r]) ? best[r] : 4.0;
        if (u <= 0.0) {
          pick = r;
          break;
        }
      }
    }
    std::copy_n(pts.begin() + static_cast<std::ptrdiff_t>(pick * d), d,
                book.codes.begin() + static_cast<std::ptrdiff_t>(j * d));
    for (std::size_t r = 0; r < n; ++r) {
      best[r] = std::min(best[r], sq_dist(pts.data() + r * d, book.codes.data() + j * d, d));
    }
  }

  std::vector<std::size_t> assign(n);
  std::vector<double> err(n);
  auto assign_all = [&] {
    for (std::size_t r = 0; r < n; ++r) {
      double e;
      assign[r] = nearest_code({pts.data() + r * d, d}, book, &e);
      err[r] = e;
    }
  };
  for (std::size_t it = 0; it < iterations; ++it) {
    assign_all();
    std::vector<double> sums(book.size * d, 0.0);
    std::vector<std::size_t> count(book.size, 0);
    for (std::size_t r = 0; r < n; ++r) {
      ++count[assign[r]];
      for (std::size_t k = 0; k < d; ++k) sums[assign[r] * d + k] += pts[r * d + k];
    }
    bool moved = false;
    for (std::size_t j : dead) {
      std::vector<double> c(d);
      if (count[j] == 0) {
        std::size_t worst = static_cast<std::size_t>(
            std::max_element(err.begin(), err.end()) - err.begin());
        std::copy_n(pts.begin() + static_cast<std::ptrdiff_t>(worst * d), d, c.begin());
        err[worst] = 0.0;
      } else {
        for (std::size_t k = 0; k < d; ++k) c[k] = sums[j * d + k];
        double s = 0.0;
        for (double v : c) s += v * v;
        if (std::sqrt(s) <= 1e-12) continue;
        project_in_place(c.data(), d);
      }
      if (sq_dist(c.data(), book.codes.data() + j * d, d) > 1e-24) moved = true;
      std::copy(c.begin(), c.end(), book.codes.begin() + static_cast<std::ptrdiff_t>(j * d));
    }
    if (!moved) break;
  }

  // Every revived code must own at least one buffer point.
  std::vector<bool> used_as_seed(n, false);
  for (std::size_t guard = 0; guard < dead.size() + 1; ++guard) {
    assign_all();
    std::vector<std::size_t> count(book.size, 0);
    for (std::size_t r = 0; r < n; ++r) ++count[assign[r]];
    bool all_owned = true;
    for (std::size_t j : dead) {
      if (count[j] > 0) continue;
      all_owned = false;
      std::size_t worst = n;
      double worst_err = -1.0;
      for (std::size_t r = 0; r < n; ++r) {
        if (!used_as_seed[r] && count[assign[r]] > 1 && err[r] > worst_err) {
          worst_err = err[r];
          worst = r;
        }
      }
      if (worst == n) break;
      used_as_seed[worst] = true;
      --count[assign[worst]];
      ++count[j];
      std::copy_n(pts.begin() + static_cast<std::ptrdiff_t>(worst * d), d,
                  book.codes.begin() + static_cast<std::ptrdiff_t>(j * d));
    }
    if (all_owned) break;
  }

  for (std::size_t j : dead) {
    book.ema_cluster_size[j] = 1.0;
    std::copy_n(book.codes.begin() + static_cast<std::ptrdiff_t>(j * d), d,
                book.ema_embed_sum.begin() + static_cast<std::ptrdiff_t>(j * d));
  }
  report.revived = dead;
  book.reset_usage();
  return report;
}

RevivalReport kmeans_revive(Codebook& book, std::size_t dead_threshold, Rng& rng) {
  return kmeans_revive(book, book.recent_inputs(), dead_threshold, rng);
}

std::pair<Tensor, Tensor> split_hierarchical(const Tensor& h) {
  std::size_t D = h.shape().back();
  if (D % 2 != 0) {
    throw ValidationError("split_hierarchical: width " + std::to_string(D) + " is odd");
  }
  return {slice(h, -1, 0, D / 2), slice(h, -1, D / 2, D / 2)};
}

}  // namespace ectoken
