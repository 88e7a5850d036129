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

// The two pretrained tokenizers.
//
// ECTokenizer turns atom-centered electron-density patches into two quantized
// streams (u1, u2) and is trained by density reconstruction plus masked atom
// typing. FATokenizer does the same from atom-only neighborhoods (a1, a2) and
// is trained by binned-distance and contact prediction plus masked typing.

#ifndef ECTOKEN_TOKENIZERS_H_
#define ECTOKEN_TOKENIZERS_H_

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "ectoken/geomha.h"
#include "ectoken/moldata.h"
#include "ectoken/nn.h"
#include "ectoken/quantizer.h"
#include "ectoken/tensor.h"

namespace ectoken {

inline constexpr int kDistanceBins = 20;

struct TokenizerConfig {
  std::size_t dim = 256;
  std::size_t heads = 8;
  std::size_t encoder_layers = 3;
  std::size_t decoder_layers = 3;
  std::size_t codebook_size = 2048;
  double codebook_decay = 0.99;
  PatchOptions patch;
  double mask_ratio = 0.1;
  double commitment_weight = 10.0;
  CommitmentDirection commitment_direction = CommitmentDirection::kEncoder;
  std::size_t decoder_neighbors = 8;   // atoms per density query
  std::size_t environment_size = 16;   // neighbor atoms per full-atom environment
  std::size_t query_count = 128;       // density targets sampled per step, 0 = all
  double density_scale = 0.1;          // targets are density * scale
  double interaction_cutoff = 6.0;
  bool structure_all_pairs = true;     // false: only pairs touching a masked atom
  bool mask_positions = true;          // geometry masking in the full-atom tokenizer
};

struct MaskPlan {
  std::vector<std::size_t> atoms;  // ascending
  int token = kMaskAtomType;

  bool contains(std::size_t i) const;
  bool empty() const { return atoms.empty(); }
};

//! round(ratio * n) atoms, at least one when n > 0 and ratio > 0.
MaskPlan make_mask_plan(std::size_t n, double ratio, Rng& rng);

//! [0,2) -> 0, [2,3) -> 1, ..., [19,20) -> 18, [20, inf) -> 19.
int bin_distance(double d);

using AtomPair = std::pair<std::size_t, std::size_t>;
//! Ordered pairs i != j with both atoms on the same chain side.
std::vector<AtomPair> intra_pairs(const BindingComplex& complex);
//! Ordered pairs with one atom in the receptor and the other in the ligand.
std::vector<AtomPair> inter_pairs(const BindingComplex& complex);

//! Q/K projections, elementwise product and difference, then an MLP per pair.
class PairwiseHead : public Module {
 public:
  PairwiseHead() = default;
  PairwiseHead(std::size_t in, std::size_t width, std::size_t out, Rng& rng);

  //! h [L, in] -> [L, L, out]; entry (i, j) uses prod = Q_j * K_i, diff = Q_j - K_i.
  Tensor operator()(const Tensor& h) const;
  void collect(const std::string& prefix, std::vector<NamedTensor>& out) const override;

  Linear query, key;
  FeedForward mlp;
};

//! Classical atom-level transformer mapping a code stream to atom-type logits.
class AtomDecoder : public Module {
 public:
  AtomDecoder() = default;
  AtomDecoder(std::size_t code_dim, std::size_t dim, std::size_t heads, std::size_t layers,
              Rng& rng);
  Tensor operator()(const Tensor& codes) const;  // [N, code_dim] -> [N, M]
  void collect(const std::string& prefix, std::vector<NamedTensor>& out) const override;

  Linear input;
  Transformer stack;
  Linear head;
};

struct MaskedAtomResult {
  Tensor loss;
  std::size_t correct = 0;
  std::size_t total = 0;
};

//! Cross-entropy over masked rows only; throws on an empty plan.
MaskedAtomResult masked_atom_loss(const Tensor& logits, const BindingComplex& complex,
                                  const MaskPlan& mask);

struct StreamPair {
  Tensor embedding;  // pre-quantization [N, D]
  Quantized first;
  Quantized second;
};

struct LossTerms {
  Tensor total;
  double reconstruction = 0.0;  // L^ec for the electron-cloud tokenizer, L^st otherwise
  double atom = 0.0;
  double interaction = 0.0;
  double commitment1 = 0.0;
  double commitment2 = 0.0;
  std::size_t masked_correct = 0;
  std::size_t masked_total = 0;
};

class ECTokenizer : public Module {
 public:
  ECTokenizer() = default;
  ECTokenizer(const TokenizerConfig& config, Rng& rng);

  //! Pre-quantization patch-center embeddings [N, D].
  Tensor embed(const BindingComplex& complex, const std::vector<Patch>& patches,
               const MaskPlan& mask) const;
  StreamPair encode(const BindingComplex& complex, const std::vector<Patch>& patches,
                    const MaskPlan& mask) const;
  //! codes [N, D/2] from the first book -> predicted scaled densities [Q].
  Tensor decode_density(const Tensor& codes, std::span<const Vec3> atom_positions,
                        std::span<const Vec3> queries) const;
  LossTerms losses(const BindingComplex& complex, const std::vector<Patch>& patches,
                   const DensityPoints& cloud, std::span<const std::size_t> query_indices,
                   const MaskPlan& mask, StreamPair* streams = nullptr) const;

  void collect(const std::string& prefix, std::vector<NamedTensor>& out) const override;
  std::vector<Codebook*> books() { return {&book1, &book2}; }

  TokenizerConfig config;
  Embedding atom_embed;   // rows 0..kMaskAtomType
  Embedding chain_embed;  // receptor, ligand
  Linear density_lift;
  GeoTransformer encoder;
  Codebook book1, book2;
  Linear patch_in;
  Transformer patch_stack;
  GeoTransformer electron_stack;
  Transformer cloud_stack;
  Linear density_head;
  AtomDecoder atom_decoder;
};

class FATokenizer : public Module {
 public:
  FATokenizer() = default;
  FATokenizer(const TokenizerConfig& config, Rng& rng);

  //! Each atom followed by its nearest other atoms.
  std::vector<std::vector<std::size_t>> environments(const BindingComplex& complex) const;
  Tensor embed(const BindingComplex& complex, const MaskPlan& mask,
               const MaskPlan& position_mask) const;
  StreamPair encode(const BindingComplex& complex, const MaskPlan& mask,
                    const MaskPlan& position_mask) const;
  //! codes [N, D/2] from the first book -> structure features [N, D].
  Tensor structure_features(const Tensor& codes) const;
  LossTerms losses(const BindingComplex& complex, const MaskPlan& mask,
                   StreamPair* streams = nullptr) const;

  void collect(const std::string& prefix, std::vector<NamedTensor>& out) const override;
  std::vector<Codebook*> books() { return {&book1, &book2}; }

  TokenizerConfig config;
  Embedding atom_embed;
  Embedding chain_embed;
  GeoTransformer encoder;
  Codebook book1, book2;
  Linear structure_in;
  Transformer structure_stack;
  PairwiseHead distance_head;     // 20 bins
  PairwiseHead interaction_head;  // 1 logit
  AtomDecoder atom_decoder;
};

//! Per-step random inputs for the electron-cloud tokenizer.
struct ECSample {
  std::vector<Patch> patches;
  MaskPlan mask;
  std::vector<std::size_t> queries;
};
ECSample make_ec_sample(const BindingComplex& complex, const DensityPoints& cloud,
                        const TokenizerConfig& config, Rng& rng);

//! Patches used at tokenization time: all points kept, K nearest taken.
std::vector<Patch> inference_patches(const BindingComplex& complex, const DensityPoints& cloud,
                                     const TokenizerConfig& config);

//! One optimizer step followed by EMA and usage updates of both books.
LossTerms ec_pretrain_step(ECTokenizer& tokenizer, Adam& optimizer,
                           const BindingComplex& complex, const DensityPoints& cloud,
                           const ECSample& sample);
LossTerms fa_pretrain_step(FATokenizer& tokenizer, Adam& optimizer,
                           const BindingComplex& complex, const MaskPlan& mask);

struct TokenizedComplex {
  std::string id;
  std::uint64_t seed = 0;
  std::uint64_t config_hash = 0;
  //! u1, u2, a1, a2 in that order.
  std::array<std::vector<std::size_t>, 4> indices;
  std::array<Tensor, 4> codes;  // [N, D/2] each
};

inline constexpr std::array<const char*, 4> kStreamNames = {"u1", "u2", "a1", "a2"};

TokenizedComplex tokenize(const ECTokenizer& ec, const FATokenizer& fa,
                          const BindingComplex& complex, const DensityPoints& cloud);

}  // namespace ectoken

#endif  // ECTOKEN_TOKENIZERS_H_
