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

#include "ectoken/tokenizers.h"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>

#include "ectoken/error.h"

namespace ectoken {

namespace {

Tensor positions_tensor(const std::vector<std::vector<Vec3>>& sequences) {
  std::size_t B = sequences.size(), L = sequences.empty() ? 0 : sequences[0].size();
  std::vector<double> v;
  v.reserve(B * L * 3);
  for (const auto& seq : sequences) {
    for (const Vec3& p : zero_center(seq)) v.insert(v.end(), p.begin(), p.end());
  }
  return Tensor::from({B, L, 3}, std::move(v));
}

std::size_t input_id(const BindingComplex& c, const MaskPlan& mask, std::size_t i) {
  return static_cast<std::size_t>(mask.contains(i) ? mask.token : c.atoms[i].type);
}

std::size_t chain_id(const BindingComplex& c, std::size_t i) {
  return static_cast<std::size_t>(c.atoms[i].chain);
}

void require_even(std::size_t dim) {
  if (dim == 0 || dim % 2 != 0) {
    throw ValidationError("model width must be a positive even number, got " +
                          std::to_string(dim));
  }
}

Tensor weighted_total(const Tensor& a, const Tensor& b, const Tensor& c1, const Tensor& c2,
                      double alpha) {
  return add(add(a, b), scale(add(c1, c2), alpha));
}

void check_loss(const LossTerms& t, const std::string& where) {
  if (!std::isfinite(t.total.item())) {
    throw NumericalError(where + ": non-finite loss (reconstruction=" +
                         std::to_string(t.reconstruction) + ", atom=" + std::to_string(t.atom) +
                         ", interaction=" + std::to_string(t.interaction) +
                         ", commitment=" + std::to_string(t.commitment1) + "/" +
                         std::to_string(t.commitment2) + ")");
  }
}

void update_books(Codebook& b1, Codebook& b2, const StreamPair& s) {
  ema_update(b1, s.first.indices, s.first.projected.data());
  b1.record(s.first.indices, s.first.projected.data());
  ema_update(b2, s.second.indices, s.second.projected.data());
  b2.record(s.second.indices, s.second.projected.data());
}

}  // namespace

bool MaskPlan::contains(std::size_t i) const {
  return std::binary_search(atoms.begin(), atoms.end(), i);
}

MaskPlan make_mask_plan(std::size_t n, double ratio, Rng& rng) {
  if (!(ratio >= 0.0 && ratio <= 1.0)) throw ValidationError("mask ratio must lie in [0, 1]");
  MaskPlan plan;
  auto count = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(n)));
  if (n > 0 && ratio > 0.0) count = std::max<std::size_t>(count, 1);
  count = std::min(count, n);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t i = 0; i < count; ++i) {
    std::size_t j = i + rng.index(n - i);
    std::swap(order[i], order[j]);
  }
  plan.atoms.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(count));
  std::sort(plan.atoms.begin(), plan.atoms.end());
  return plan;
}

int bin_distance(double d) {
  if (!(d >= 0.0)) throw ValidationError("bin_distance: distance must be >= 0");
  if (d < 2.0) return 0;
  if (d >= 20.0) return kDistanceBins - 1;
  return static_cast<int>(std::floor(d)) - 1;
}

std::vector<AtomPair> intra_pairs(const BindingComplex& c) {
  std::vector<AtomPair> out;
  for (std::size_t i = 0; i < c.size(); ++i)
    for (std::size_t j = 0; j < c.size(); ++j)
      if (i != j && c.atoms[i].chain == c.atoms[j].chain) out.emplace_back(i, j);
  return out;
}

std::vector<AtomPair> inter_pairs(const BindingComplex& c) {
  std::vector<AtomPair> out;
  for (std::size_t i = 0; i < c.size(); ++i)
    for (std::size_t j = 0; j < c.size(); ++j)
      if (c.atoms[i].chain != c.atoms[j].chain) out.emplace_back(i, j);
  return out;
}

PairwiseHead::PairwiseHead(std::size_t in, std::size_t width, std::size_t out, Rng& rng)
    : query(in, width, rng), key(in, width, rng), mlp(2 * width, width, out, rng) {}

Tensor PairwiseHead::operator()(const Tensor& h) const {
  std::size_t L = h.shape()[0];
  Tensor q = query(h), k = key(h);
  std::size_t w = q.shape()[1];
  Tensor qj = reshape(q, {1, L, w});
  Tensor ki = reshape(k, {L, 1, w});
  return mlp(concat({mul(qj, ki), sub(qj, ki)}, -1));
}

void PairwiseHead::collect(const std::string& p, std::vector<NamedTensor>& out) const {
  query.collect(p + "query.", out);
  key.collect(p + "key.", out);
  mlp.collect(p + "mlp.", out);
}

AtomDecoder::AtomDecoder(std::size_t code_dim, std::size_t dim, std::size_t heads,
                         std::size_t layers, Rng& rng)
    : input(code_dim, dim, rng),
      stack(dim, heads, layers, rng),
      head(dim, kNumAtomTypes, rng) {}

Tensor AtomDecoder::operator()(const Tensor& codes) const {
  return head(stack.forward(input(codes)));
}

void AtomDecoder::collect(const std::string& p, std::vector<NamedTensor>& out) const {
  input.collect(p + "input.", out);
  stack.collect(p + "stack.", out);
  head.collect(p + "head.", out);
}

MaskedAtomResult masked_atom_loss(const Tensor& logits, const BindingComplex& c,
                                  const MaskPlan& mask) {
  if (mask.empty()) throw ValidationError("masked atom loss needs at least one masked atom");
  Tensor rows = index_select(logits, mask.atoms);
  std::vector<int> targets;
  MaskedAtomResult r;
  std::size_t M = logits.shape()[1];
  for (std::size_t k = 0; k < mask.atoms.size(); ++k) {
    int t = c.atoms[mask.atoms[k]].type - 1;
    targets.push_back(t);
    auto row = rows.data().subspan(k * M, M);
    auto best = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
    if (best == t) ++r.correct;
  }
  r.total = targets.size();
  r.loss = cross_entropy(rows, targets);
  return r;
}

// ---- electron-cloud tokenizer

ECTokenizer::ECTokenizer(const TokenizerConfig& cfg, Rng& rng)
    : config(cfg),
      atom_embed(kMaskAtomType + 1, cfg.dim, rng),
      chain_embed(2, cfg.dim, rng),
      density_lift(1, cfg.dim, rng),
      encoder(cfg.dim, cfg.heads, cfg.encoder_layers, rng) {
  require_even(cfg.dim);
  std::size_t half = cfg.dim / 2;
  book1 = Codebook::random("u1", cfg.codebook_size, half, rng, cfg.codebook_decay);
  book2 = Codebook::random("u2", cfg.codebook_size, half, rng, cfg.codebook_decay);
  patch_in = Linear(half, cfg.dim, rng);
  patch_stack = Transformer(cfg.dim, cfg.heads, cfg.decoder_layers, rng);
  electron_stack = GeoTransformer(cfg.dim, cfg.heads, cfg.decoder_layers, rng);
  cloud_stack = Transformer(cfg.dim, cfg.heads, cfg.decoder_layers, rng);
  density_head = Linear(cfg.dim, 1, rng);
  atom_decoder = AtomDecoder(half, cfg.dim, cfg.heads, cfg.decoder_layers, rng);
}

Tensor ECTokenizer::embed(const BindingComplex& c, const std::vector<Patch>& patches,
                          const MaskPlan& mask) const {
  std::size_t N = c.size();
  if (patches.size() != N) {
    throw ValidationError("encode: " + std::to_string(patches.size()) + " patches for " +
                          std::to_string(N) + " atoms");
  }
  if (N == 0) throw ValidationError("encode: empty complex");
  std::size_t K = patches[0].member_values.size();
  std::vector<std::size_t> ids(N), chains(N);
  std::vector<double> values;
  values.reserve(N * K);
  std::vector<std::vector<Vec3>> seqs;
  seqs.reserve(N);
  for (std::size_t i = 0; i < N; ++i) {
    const Patch& p = patches[i];
    if (p.center_atom_index != i || p.member_values.size() != K) {
      throw ValidationError("encode: patch " + std::to_string(i) + " does not match its atom");
    }
    ids[i] = input_id(c, mask, i);
    chains[i] = chain_id(c, i);
    for (double u : p.member_values) values.push_back(u * config.density_scale);
    seqs.push_back(p.positions);
  }
  std::size_t D = config.dim;
  Tensor center = reshape(add(atom_embed(ids), chain_embed(chains)), {N, 1, D});
  Tensor members = density_lift(Tensor::from({N, K, 1}, std::move(values)));
  Tensor z = concat({center, members}, 1);
  return encoder.encode_center(z, positions_tensor(seqs));
}

StreamPair ECTokenizer::encode(const BindingComplex& c, const std::vector<Patch>& patches,
                               const MaskPlan& mask) const {
  StreamPair s;
  s.embedding = embed(c, patches, mask);
  auto [h1, h2] = split_hierarchical(s.embedding);
  s.first = quantize(h1, book1);
  s.second = quantize(h2, book2);
  return s;
}

Tensor ECTokenizer::decode_density(const Tensor& codes, std::span<const Vec3> atoms,
                                   std::span<const Vec3> queries) const {
  std::size_t N = atoms.size(), Q = queries.size(), D = config.dim;
  if (codes.rank() != 2 || codes.shape()[0] != N || codes.shape()[1] != D / 2) {
    throw ValidationError("decode: codes " + shape_string(codes.shape()) + " for " +
                          std::to_string(N) + " atoms, expected width " + std::to_string(D / 2));
  }
  std::size_t k = std::min(config.decoder_neighbors, N);
  if (k < config.decoder_neighbors) {
    static std::atomic<bool> warned{false};
    if (!warned.exchange(true)) {
      warn("decode: " + std::to_string(config.decoder_neighbors) +
           " neighbor atoms requested but the complex has " + std::to_string(N) +
           "; clamping");
    }
  }
  Tensor hpt = patch_stack.forward(patch_in(codes));
  std::vector<std::size_t> flat;
  flat.reserve(Q * k);
  std::vector<std::vector<Vec3>> seqs;
  seqs.reserve(Q);
  for (const Vec3& q : queries) {
    std::vector<Vec3> seq = {q};
    for (std::size_t a : knn(atoms, q, k)) {
      flat.push_back(a);
      seq.push_back(atoms[a]);
    }
    seqs.push_back(std::move(seq));
  }
  Tensor members = reshape(index_select(hpt, flat), {Q, k, D});
  Tensor z = concat({Tensor::zeros({Q, 1, D}), members}, 1);
  Tensor hpe = electron_stack.encode_center(z, positions_tensor(seqs));
  Tensor hec = cloud_stack.forward(hpe);
  return reshape(density_head(hec), {Q});
}

LossTerms ECTokenizer::losses(const BindingComplex& c, const std::vector<Patch>& patches,
                              const DensityPoints& cloud, std::span<const std::size_t> query_idx,
                              const MaskPlan& mask, StreamPair* out) const {
  StreamPair s = encode(c, patches, mask);
  std::vector<Vec3> queries;
  std::vector<double> target;
  for (std::size_t j : query_idx) {
    queries.push_back(cloud.positions.at(j));
    target.push_back(cloud.values[j] * config.density_scale);
  }
  auto positions = c.positions();
  Tensor pred = decode_density(s.first.output, positions, queries);
  std::size_t nq = target.size();
  Tensor rec = mse(pred, Tensor::from({nq}, std::move(target)));
  MaskedAtomResult at = masked_atom_loss(atom_decoder(s.second.output), c, mask);
  Tensor c1 = commitment_loss(s.first.projected, s.first.codes, config.commitment_direction);
  Tensor c2 = commitment_loss(s.second.projected, s.second.codes, config.commitment_direction);
  LossTerms t;
  t.total = weighted_total(rec, at.loss, c1, c2, config.commitment_weight);
  t.reconstruction = rec.item();
  t.atom = at.loss.item();
  t.commitment1 = c1.item();
  t.commitment2 = c2.item();
  t.masked_correct = at.correct;
  t.masked_total = at.total;
  if (out) *out = std::move(s);
  return t;
}

void ECTokenizer::collect(const std::string& p, std::vector<NamedTensor>& out) const {
  atom_embed.collect(p + "atom_embed.", out);
  chain_embed.collect(p + "chain_embed.", out);
  density_lift.collect(p + "density_lift.", out);
  encoder.collect(p + "encoder.", out);
  patch_in.collect(p + "patch_in.", out);
  patch_stack.collect(p + "patch_stack.", out);
  electron_stack.collect(p + "electron_stack.", out);
  cloud_stack.collect(p + "cloud_stack.", out);
  density_head.collect(p + "density_head.", out);
  atom_decoder.collect(p + "atom_decoder.", out);
}

// ---- full-atom tokenizer

FATokenizer::FATokenizer(const TokenizerConfig& cfg, Rng& rng)
    : config(cfg),
      atom_embed(kMaskAtomType + 1, cfg.dim, rng),
      chain_embed(2, cfg.dim, rng),
      encoder(cfg.dim, cfg.heads, cfg.encoder_layers, rng) {
  require_even(cfg.dim);
  std::size_t half = cfg.dim / 2;
  book1 = Codebook::random("a1", cfg.codebook_size, half, rng, cfg.codebook_decay);
  book2 = Codebook::random("a2", cfg.codebook_size, half, rng, cfg.codebook_decay);
  structure_in = Linear(half, cfg.dim, rng);
  structure_stack = Transformer(cfg.dim, cfg.heads, cfg.decoder_layers, rng);
  distance_head = PairwiseHead(cfg.dim, half, kDistanceBins, rng);
  interaction_head = PairwiseHead(cfg.dim, half, 1, rng);
  atom_decoder = AtomDecoder(half, cfg.dim, cfg.heads, cfg.decoder_layers, rng);
}

namespace {

std::vector<std::vector<std::size_t>> neighborhoods(std::span<const Vec3> pts,
                                                    std::size_t size) {
  std::size_t N = pts.size();
  std::size_t E = std::min(size, N == 0 ? 0 : N - 1);
  std::vector<std::vector<std::size_t>> envs(N);
  for (std::size_t i = 0; i < N; ++i) {
    auto near = knn(pts, pts[i], std::min(E + 1, N));
    std::vector<std::size_t> env = {i};
    for (std::size_t j : near) {
      if (j != i && env.size() < E + 1) env.push_back(j);
    }
    envs[i] = std::move(env);
  }
  return envs;
}

std::vector<Vec3> masked_coordinates(const BindingComplex& c, const MaskPlan& pmask) {
  std::vector<Vec3> pos = c.positions();
  for (std::size_t i : pmask.atoms) {
    Vec3 s{0, 0, 0};
    double n = 0;
    for (const Atom& a : c.atoms) {
      if (a.chain == c.atoms[i].chain && a.residue == c.atoms[i].residue) {
        for (int k = 0; k < 3; ++k) s[k] += a.position[k];
        n += 1;
      }
    }
    for (int k = 0; k < 3; ++k) pos[i][k] = s[k] / n;
  }
  return pos;
}

}  // namespace

std::vector<std::vector<std::size_t>> FATokenizer::environments(const BindingComplex& c) const {
  return neighborhoods(c.positions(), config.environment_size);
}

Tensor FATokenizer::embed(const BindingComplex& c, const MaskPlan& mask,
                          const MaskPlan& pmask) const {
  std::size_t N = c.size(), D = config.dim;
  if (N == 0) throw ValidationError("encode: empty complex");
  std::vector<Vec3> pos = masked_coordinates(c, pmask);
  auto envs = neighborhoods(pos, config.environment_size);
  std::size_t E = envs[0].size();
  std::vector<std::size_t> ids, chains;
  ids.reserve(N * E);
  chains.reserve(N * E);
  std::vector<std::vector<Vec3>> seqs;
  seqs.reserve(N);
  for (const auto& env : envs) {
    std::vector<Vec3> seq;
    for (std::size_t j : env) {
      ids.push_back(input_id(c, mask, j));
      chains.push_back(chain_id(c, j));
      seq.push_back(pos[j]);
    }
    seqs.push_back(std::move(seq));
  }
  Tensor z = reshape(add(atom_embed(ids), chain_embed(chains)), {N, E, D});
  return encoder.encode_center(z, positions_tensor(seqs));
}

StreamPair FATokenizer::encode(const BindingComplex& c, const MaskPlan& mask,
                               const MaskPlan& pmask) const {
  StreamPair s;
  s.embedding = embed(c, mask, pmask);
  auto [h1, h2] = split_hierarchical(s.embedding);
  s.first = quantize(h1, book1);
  s.second = quantize(h2, book2);
  return s;
}

Tensor FATokenizer::structure_features(const Tensor& codes) const {
  return structure_stack.forward(structure_in(codes));
}

LossTerms FATokenizer::losses(const BindingComplex& c, const MaskPlan& mask,
                              StreamPair* out) const {
  std::size_t N = c.size();
  MaskPlan pmask = config.mask_positions ? mask : MaskPlan{};
  StreamPair s = encode(c, mask, pmask);
  Tensor hst = structure_features(s.first.output);

  std::vector<AtomPair> intra = intra_pairs(c);
  if (!config.structure_all_pairs) {
    std::erase_if(intra, [&](const AtomPair& p) {
      return !mask.contains(p.first) && !mask.contains(p.second);
    });
  }
  Tensor st = Tensor::scalar(0.0);
  if (!intra.empty()) {
    std::vector<std::size_t> rows;
    std::vector<int> bins;
    for (auto [i, j] : intra) {
      rows.push_back(i * N + j);
      bins.push_back(bin_distance(distance(c.atoms[i].position, c.atoms[j].position)));
    }
    Tensor logits = reshape(distance_head(hst), {N * N, std::size_t(kDistanceBins)});
    st = cross_entropy(index_select(logits, rows), bins);
  }
  std::vector<AtomPair> inter = inter_pairs(c);
  Tensor it = Tensor::scalar(0.0);
  if (!inter.empty()) {
    std::vector<std::size_t> rows;
    std::vector<double> labels;
    for (auto [i, j] : inter) {
      rows.push_back(i * N + j);
      labels.push_back(distance(c.atoms[i].position, c.atoms[j].position) <=
                               config.interaction_cutoff
                           ? 1.0
                           : 0.0);
    }
    Tensor logits = reshape(interaction_head(hst), {N * N, 1});
    it = binary_cross_entropy_with_logits(reshape(index_select(logits, rows), {rows.size()}),
                                          labels);
  }
  MaskedAtomResult at = masked_atom_loss(atom_decoder(s.second.output), c, mask);
  Tensor c1 = commitment_loss(s.first.projected, s.first.codes, config.commitment_direction);
  Tensor c2 = commitment_loss(s.second.projected, s.second.codes, config.commitment_direction);
  LossTerms t;
  t.total = add(weighted_total(st, at.loss, c1, c2, config.commitment_weight), it);
  t.reconstruction = st.item();
  t.interaction = it.item();
  t.atom = at.loss.item();
  t.commitment1 = c1.item();
  t.commitment2 = c2.item();
  t.masked_correct = at.correct;
  t.masked_total = at.total;
  if (out) *out = std::move(s);
  return t;
}

void FATokenizer::collect(const std::string& p, std::vector<NamedTensor>& out) const {
  atom_embed.collect(p + "atom_embed.", out);
  chain_embed.collect(p + "chain_embed.", out);
  encoder.collect(p + "encoder.", out);
  structure_in.collect(p + "structure_in.", out);
  structure_stack.collect(p + "structure_stack.", out);
  distance_head.collect(p + "distance_head.", out);
  interaction_head.collect(p + "interaction_head.", out);
  atom_decoder.collect(p + "atom_decoder.", out);
}

// ---- training and inference helpers

ECSample make_ec_sample(const BindingComplex& c, const DensityPoints& cloud,
                        const TokenizerConfig& config, Rng& rng) {
  ECSample s;
  s.patches = patchify(cloud, c, config.patch, rng.engine()());
  s.mask = make_mask_plan(c.size(), config.mask_ratio, rng);
  std::size_t n = cloud.size();
  if (config.query_count == 0 || config.query_count >= n) {
    s.queries.resize(n);
    std::iota(s.queries.begin(), s.queries.end(), 0);
  } else {
    // Floyd's sampling without replacement, then sorted for a stable order.
    std::vector<std::size_t> picked;
    picked.reserve(config.query_count);
    std::vector<bool> taken(n, false);
    for (std::size_t j = n - config.query_count; j < n; ++j) {
      std::size_t t = rng.index(j + 1);
      if (taken[t]) t = j;
      taken[t] = true;
      picked.push_back(t);
    }
    std::sort(picked.begin(), picked.end());
    s.queries = std::move(picked);
  }
  return s;
}

std::vector<Patch> inference_patches(const BindingComplex& c, const DensityPoints& cloud,
                                     const TokenizerConfig& config) {
  PatchOptions opt = config.patch;
  opt.retain_ratio = 1.0;
  opt.k_max = opt.k;
  return patchify(cloud, c, opt, 0);
}

LossTerms ec_pretrain_step(ECTokenizer& tok, Adam& opt, const BindingComplex& c,
                           const DensityPoints& cloud, const ECSample& sample) {
  opt.zero_grad();
  StreamPair s;
  LossTerms t = tok.losses(c, sample.patches, cloud, sample.queries, sample.mask, &s);
  check_loss(t, "electron-cloud pretraining on " + c.id);
  t.total.backward();
  opt.step();
  update_books(tok.book1, tok.book2, s);
  return t;
}

LossTerms fa_pretrain_step(FATokenizer& tok, Adam& opt, const BindingComplex& c,
                           const MaskPlan& mask) {
  opt.zero_grad();
  StreamPair s;
  LossTerms t = tok.losses(c, mask, &s);
  check_loss(t, "full-atom pretraining on " + c.id);
  t.total.backward();
  opt.step();
  update_books(tok.book1, tok.book2, s);
  return t;
}

TokenizedComplex tokenize(const ECTokenizer& ec, const FATokenizer& fa,
                          const BindingComplex& c, const DensityPoints& cloud) {
  NoGradGuard no_grad;
  TokenizedComplex out;
  out.id = c.id;
  StreamPair u = ec.encode(c, inference_patches(c, cloud, ec.config), MaskPlan{});
  StreamPair a = fa.encode(c, MaskPlan{}, MaskPlan{});
  const Quantized* q[4] = {&u.first, &u.second, &a.first, &a.second};
  for (int s = 0; s < 4; ++s) {
    out.indices[s] = q[s]->indices;
    out.codes[s] = q[s]->codes;
  }
  return out;
}

}  // namespace ectoken
