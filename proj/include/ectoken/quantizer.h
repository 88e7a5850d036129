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

// Spherical vector quantization with EMA code updates and K-means revival.

#ifndef ECTOKEN_QUANTIZER_H_
#define ECTOKEN_QUANTIZER_H_

#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ectoken/nn.h"
#include "ectoken/tensor.h"

namespace ectoken {

struct Codebook {
  std::string name;
  std::size_t size = 0;
  std::size_t dim = 0;
  std::vector<double> codes;  // size x dim, unit rows
  std::vector<double> ema_cluster_size;
  std::vector<double> ema_embed_sum;  // size x dim
  std::vector<std::size_t> usage;     // assignments since the last revival
  double decay = 0.99;
  double epsilon = 1e-5;

  //! Ring buffer of recent projected inputs, rows of `dim`.
  std::vector<double> recent;
  std::size_t recent_capacity = 4096;
  std::size_t recent_next = 0;
  std::size_t recent_count = 0;

  static Codebook random(std::string name, std::size_t size, std::size_t dim, Rng& rng,
                         double decay = 0.99);

  std::span<const double> code(std::size_t j) const {
    return {codes.data() + j * dim, dim};
  }
  //! Counts usage and appends inputs to the recent buffer.
  void record(std::span<const std::size_t> indices, std::span<const double> projected);
  std::vector<double> recent_inputs() const;
  std::size_t dead_count(std::size_t threshold) const;
  double perplexity() const;
  void reset_usage();
};

//! v / |v|; throws ValidationError for |v| <= 1e-12.
std::vector<double> spherical_project(std::span<const double> v);

//! Index of the nearest code to a unit vector; ties go to the lowest index.
std::size_t nearest_code(std::span<const double> unit, const Codebook& book,
                         double* squared_distance = nullptr);

struct Quantized {
  std::vector<std::size_t> indices;
  Tensor projected;  // spherically projected input, differentiable
  Tensor codes;      // selected code vectors, constant
  Tensor output;     // code values forward, identity gradient to `projected`
};

//! h [N, d] -> per-row nearest codes.
Quantized quantize(const Tensor& h, const Codebook& book);

enum class CommitmentDirection {
  kEncoder,  // MSE(h, sg(e)): pulls encoder outputs toward their codes
  kCode,     // MSE(sg(h), e): literal form, only moves a differentiable code tensor
};

Tensor commitment_loss(const Tensor& projected, const Tensor& codes,
                       CommitmentDirection direction = CommitmentDirection::kEncoder);

//! EMA statistics update followed by re-projection of every assigned code.
void ema_update(Codebook& book, std::span<const std::size_t> indices,
                std::span<const double> projected);

struct RevivalReport {
  std::size_t dead = 0;
  std::vector<std::size_t> revived;
  bool sampled_with_replacement = false;
};

//! Re-seeds codes used fewer than `dead_threshold` times by spherical K-means
//! over `inputs` (rows of book.dim), with live codes held fixed. Resets usage.
RevivalReport kmeans_revive(Codebook& book, std::span<const double> inputs,
                            std::size_t dead_threshold, Rng& rng,
                            std::size_t iterations = 25);
//! Same, using the book's own recent-input buffer.
RevivalReport kmeans_revive(Codebook& book, std::size_t dead_threshold, Rng& rng);

//! [..., D] -> ([..., D/2], [..., D/2]); D must be even.
std::pair<Tensor, Tensor> split_hierarchical(const Tensor& h);

}  // namespace ectoken

#endif  // ECTOKEN_QUANTIZER_H_
