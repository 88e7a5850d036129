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

// Structure-aware (geometric) and classical multi-head attention stacks.
//
// Geometric attention logits are content logits minus a learned multiple of
// pairwise distances between gated copies of each point's coordinates. Gates
// come from invariant features, so with zero-centered coordinates the block is
// invariant to rotations, reflections and translations of the input points.

#ifndef ECTOKEN_GEOMHA_H_
#define ECTOKEN_GEOMHA_H_

#include <vector>

#include "ectoken/nn.h"
#include "ectoken/tensor.h"

namespace ectoken {

//! Number of gated coordinate copies per head.
inline constexpr std::size_t kGeoChannels = 3;

class GeoAttentionLayer : public Module {
 public:
  GeoAttentionLayer() = default;
  GeoAttentionLayer(std::size_t dim, std::size_t heads, Rng& rng);

  //! z [B, L, D] (or [L, D]), x [B, L, 3] zero-centered per sequence.
  //! When `attention` is given it receives the [B, H, L, L] weights.
  Tensor forward(const Tensor& z, const Tensor& x, Tensor* attention = nullptr) const;
  void collect(const std::string& prefix, std::vector<NamedTensor>& out) const override;

  std::size_t dim = 0;
  std::size_t heads = 0;
  LayerNorm norm_attn;
  LayerNorm norm_ffn;
  Linear q_iv, k_iv, value;
  Linear q_ge, k_ge;  // D -> H * kGeoChannels gates
  Linear out_proj;
  Tensor w_iv;  // scalar, scale softplus(w_iv) / sqrt(3)
  Tensor w_ge;  // scalar, distance penalty softplus(w_ge) / sqrt(3)
  FeedForward ffn;
};

class AttentionLayer : public Module {
 public:
  AttentionLayer() = default;
  AttentionLayer(std::size_t dim, std::size_t heads, Rng& rng);

  //! h [B, N, D] (or [N, D]).
  Tensor forward(const Tensor& h) const;
  void collect(const std::string& prefix, std::vector<NamedTensor>& out) const override;

  std::size_t dim = 0;
  std::size_t heads = 0;
  LayerNorm norm_attn;
  LayerNorm norm_ffn;
  Linear query, key, value, out_proj;
  FeedForward ffn;
};

class GeoTransformer : public Module {
 public:
  GeoTransformer() = default;
  GeoTransformer(std::size_t dim, std::size_t heads, std::size_t layers, Rng& rng);

  Tensor forward(const Tensor& z, const Tensor& x) const;
  //! Embedding at sequence position 0 of every sequence: [B, L, D] -> [B, D].
  Tensor encode_center(const Tensor& z, const Tensor& x) const;
  void collect(const std::string& prefix, std::vector<NamedTensor>& out) const override;

  std::vector<GeoAttentionLayer> layers;
};

class Transformer : public Module {
 public:
  Transformer() = default;
  Transformer(std::size_t dim, std::size_t heads, std::size_t layers, Rng& rng);

  Tensor forward(const Tensor& h) const;
  void collect(const std::string& prefix, std::vector<NamedTensor>& out) const override;

  std::vector<AttentionLayer> layers;
};

//! Single geometric attention block on one sequence: z [L, D], x [L, 3].
Tensor geo_attention(const Tensor& z, const Tensor& x, const GeoAttentionLayer& layer,
                     Tensor* attention = nullptr);

//! Classical stack over one set of rows: h [N, D].
Tensor classical_transformer(const Tensor& h, const Transformer& stack);

}  // namespace ectoken

#endif  // ECTOKEN_GEOMHA_H_
