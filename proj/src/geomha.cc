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

#include "ectoken/geomha.h"

#include <cmath>
#include <stdexcept>

#include "ectoken/error.h"

namespace ectoken {

namespace {

constexpr double kInvSqrt3 = 0.5773502691896258;

void check_finite(const Tensor& t, const char* what) {
  for (double v : t.data()) {
    if (!std::isfinite(v)) throw NumericalError(std::string(what) + " has non-finite entries");
  }
}

// [B, L, H*dh] -> [B, H, L, dh]
Tensor split_heads(const Tensor& t, std::size_t heads) {
  std::size_t B = t.shape()[0], L = t.shape()[1], W = t.shape()[2];
  return permute(reshape(t, {B, L, heads, W / heads}), {0, 2, 1, 3});
}

// [B, H, L, dh] -> [B, L, H*dh]
Tensor merge_heads(const Tensor& t) {
  std::size_t B = t.shape()[0], H = t.shape()[1], L = t.shape()[2], dh = t.shape()[3];
  return reshape(permute(t, {0, 2, 1, 3}), {B, L, H * dh});
}

Tensor as_batch(const Tensor& t) {
  if (t.rank() == 2) return reshape(t, {1, t.shape()[0], t.shape()[1]});
  return t;
}

double inverse_softplus(double y) { return std::log(std::expm1(y)); }

}  // namespace

GeoAttentionLayer::GeoAttentionLayer(std::size_t d, std::size_t h, Rng& rng)
    : dim(d),
      heads(h),
      norm_attn(d),
      norm_ffn(d),
      q_iv(d, d, rng),
      k_iv(d, d, rng),
      value(d, d, rng),
      q_ge(d, h * kGeoChannels, rng),
      k_ge(d, h * kGeoChannels, rng),
      out_proj(d, d, rng),
      ffn(d, 4 * d, d, rng) {
  if (h == 0 || d % h != 0) {
    throw ValidationError("head count " + std::to_string(h) + " must divide width " +
                          std::to_string(d));
  }
  // Gates start near 1 so the initial penalty is close to plain distances.
  for (Linear* g : {&q_ge, &k_ge}) {
    for (double& w : g->weight.mutable_data()) w *= 0.1;
  }
  double head_width = static_cast<double>(d / h);
  w_iv = Tensor::scalar(inverse_softplus(std::sqrt(3.0 / head_width)), true);
  w_ge = Tensor::scalar(0.0, true);
}

Tensor GeoAttentionLayer::forward(const Tensor& z_in, const Tensor& x_in,
                                  Tensor* attention) const {
  bool flat = z_in.rank() == 2;
  Tensor z = as_batch(z_in);
  Tensor x = as_batch(x_in);
  std::size_t B = z.shape()[0], L = z.shape()[1];
  if (x.shape() != Shape{B, L, 3}) {
    throw std::invalid_argument("geo attention: coordinates must be [B, L, 3], got " +
                                shape_string(x.shape()));
  }
  check_finite(z, "geo attention features");
  check_finite(x, "geo attention coordinates");

  Tensor zn = norm_attn(z);
  Tensor q = split_heads(q_iv(zn), heads);
  Tensor k = split_heads(k_iv(zn), heads);
  Tensor v = split_heads(value(zn), heads);
  Tensor content = mul(matmul(q, k, /*transpose_b=*/true),
                       scale(softplus(w_iv), kInvSqrt3));  // [B,H,L,L]

  Tensor xb = reshape(x, {B, 1, L, 1, 3});
  auto gated_points = [&](const Linear& gate) {
    Tensor g = add_scalar(split_heads(gate(zn), heads), 1.0);  // [B,H,L,C]
    g = reshape(g, {B, heads, L, kGeoChannels, 1});
    return reshape(mul(g, xb), {B, heads, L, kGeoChannels * 3});
  };
  Tensor geometric = mul(pdist(gated_points(q_ge), gated_points(k_ge)),
                         scale(softplus(w_ge), kInvSqrt3));

  Tensor weights = softmax(sub(content, geometric), -1);
  if (attention) *attention = weights;
  Tensor o = merge_heads(matmul(weights, v));
  Tensor y = add(z, out_proj(o));
  Tensor out = add(y, ffn(norm_ffn(y)));
  return flat ? reshape(out, z_in.shape()) : out;
}

void GeoAttentionLayer::collect(const std::string& p, std::vector<NamedTensor>& out) const {
  norm_attn.collect(p + "norm_attn.", out);
  norm_ffn.collect(p + "norm_ffn.", out);
  q_iv.collect(p + "q_iv.", out);
  k_iv.collect(p + "k_iv.", out);
  value.collect(p + "value.", out);
  q_ge.collect(p + "q_ge.", out);
  k_ge.collect(p + "k_ge.", out);
  out_proj.collect(p + "out_proj.", out);
  out.push_back({p + "w_iv", w_iv});
  out.push_back({p + "w_ge", w_ge});
  ffn.collect(p + "ffn.", out);
}

AttentionLayer::AttentionLayer(std::size_t d, std::size_t h, Rng& rng)
    : dim(d),
      heads(h),
      norm_attn(d),
      norm_ffn(d),
      query(d, d, rng),
      key(d, d, rng),
      value(d, d, rng),
      out_proj(d, d, rng),
      ffn(d, 4 * d, d, rng) {
  if (h == 0 || d % h != 0) {
    throw ValidationError("head count " + std::to_string(h) + " must divide width " +
                          std::to_string(d));
  }
}

Tensor AttentionLayer::forward(const Tensor& h_in) const {
  bool flat = h_in.rank() == 2;
  Tensor h = as_batch(h_in);
  Tensor hn = norm_attn(h);
  Tensor q = split_heads(query(hn), heads);
  Tensor k = split_heads(key(hn), heads);
  Tensor v = split_heads(value(hn), heads);
  double s = 1.0 / std::sqrt(static_cast<double>(dim / heads));
  Tensor weights = softmax(scale(matmul(q, k, true), s), -1);
  Tensor y = add(h, out_proj(merge_heads(matmul(weights, v))));
  Tensor out = add(y, ffn(norm_ffn(y)));
  return flat ? reshape(out, h_in.shape()) : out;
}

void AttentionLayer::collect(const std::string& p, std::vector<NamedTensor>& out) const {
  norm_attn.collect(p + "norm_attn.", out);
  norm_ffn.collect(p + "norm_ffn.", out);
  query.collect(p + "query.", out);
  key.collect(p + "key.", out);
  value.collect(p + "value.", out);
  out_proj.collect(p + "out_proj.", out);
  ffn.collect(p + "ffn.", out);
}

GeoTransformer::GeoTransformer(std::size_t dim, std::size_t heads, std::size_t n, Rng& rng) {
  for (std::size_t i = 0; i < n; ++i) layers.emplace_back(dim, heads, rng);
}

Tensor GeoTransformer::forward(const Tensor& z, const Tensor& x) const {
  Tensor h = z;
  for (const auto& layer : layers) h = layer.forward(h, x);
  return h;
}

Tensor GeoTransformer::encode_center(const Tensor& z, const Tensor& x) const {
  Tensor h = forward(as_batch(z), as_batch(x));
  std::size_t B = h.shape()[0], D = h.shape()[2];
  return reshape(slice(h, 1, 0, 1), {B, D});
}

void GeoTransformer::collect(const std::string& p, std::vector<NamedTensor>& out) const {
  for (std::size_t i = 0; i < layers.size(); ++i) {
    layers[i].collect(p + "layers." + std::to_string(i) + ".", out);
  }
}

Transformer::Transformer(std::size_t dim, std::size_t heads, std::size_t n, Rng& rng) {
  for (std::size_t i = 0; i < n; ++i) layers.emplace_back(dim, heads, rng);
}

Tensor Transformer::forward(const Tensor& h) const {
  Tensor out = h;
  for (const auto& layer : layers) out = layer.forward(out);
  return out;
}

void Transformer::collect(const std::string& p, std::vector<NamedTensor>& out) const {
  for (std::size_t i = 0; i < layers.size(); ++i) {
    layers[i].collect(p + "layers." + std::to_string(i) + ".", out);
  }
}

Tensor geo_attention(const Tensor& z, const Tensor& x, const GeoAttentionLayer& layer,
                     Tensor* attention) {
  return layer.forward(z, x, attention);
}

Tensor classical_transformer(const Tensor& h, const Transformer& stack) {
  return stack.forward(h);
}

}  // namespace ectoken
