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

#include "ectoken/nn.h"

#include <cmath>
#include <map>
#include <stdexcept>

namespace ectoken {

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b) {
  // splitmix64 finalizer over a simple combination
  auto mix = [](std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  return mix(mix(mix(base) ^ a) ^ (b * 0x632be59bd9b4e019ULL));
}

std::vector<NamedTensor> Module::named_parameters(const std::string& prefix) const {
  std::vector<NamedTensor> out;
  collect(prefix, out);
  return out;
}

std::vector<Tensor> Module::parameters() const {
  std::vector<Tensor> out;
  for (auto& nt : named_parameters()) out.push_back(nt.tensor);
  return out;
}

void Module::zero_grad() const {
  for (auto& p : parameters()) p.zero_grad();
}

Linear::Linear(std::size_t in, std::size_t out, Rng& rng, bool with_bias) {
  double limit = std::sqrt(6.0 / static_cast<double>(in + out));
  std::vector<double> w(in * out);
  for (double& v : w) v = rng.uniform(-limit, limit);
  weight = Tensor::from({in, out}, std::move(w), true);
  if (with_bias) bias = Tensor::zeros({out}, true);
}

Tensor Linear::operator()(const Tensor& x) const {
  Tensor y = matmul(x, weight);
  return bias.defined() ? add(y, bias) : y;
}

void Linear::collect(const std::string& prefix, std::vector<NamedTensor>& out) const {
  out.push_back({prefix + "weight", weight});
  if (bias.defined()) out.push_back({prefix + "bias", bias});
}

void Linear::zero_init() {
  for (double& v : weight.mutable_data()) v = 0.0;
  if (bias.defined()) {
    for (double& v : bias.mutable_data()) v = 0.0;
  }
}

LayerNorm::LayerNorm(std::size_t dim)
    : gain(Tensor::full({dim}, 1.0, true)), bias(Tensor::zeros({dim}, true)) {}

Tensor LayerNorm::operator()(const Tensor& x) const { return layer_norm(x, gain, bias); }

void LayerNorm::collect(const std::string& prefix, std::vector<NamedTensor>& out) const {
  out.push_back({prefix + "gain", gain});
  out.push_back({prefix + "bias", bias});
}

Embedding::Embedding(std::size_t count, std::size_t dim, Rng& rng) {
  std::vector<double> t(count * dim);
  for (double& v : t) v = rng.normal(0.0, 1.0);
  table = Tensor::from({count, dim}, std::move(t), true);
}

Tensor Embedding::operator()(std::span<const std::size_t> ids) const {
  return index_select(table, ids);
}

void Embedding::collect(const std::string& prefix, std::vector<NamedTensor>& out) const {
  out.push_back({prefix + "table", table});
}

FeedForward::FeedForward(std::size_t dim, std::size_t hidden, std::size_t out_dim,
                         Rng& rng)
    : in(dim, hidden, rng), out(hidden, out_dim, rng) {}

Tensor FeedForward::operator()(const Tensor& x) const { return out(gelu(in(x))); }

void FeedForward::collect(const std::string& prefix,
                          std::vector<NamedTensor>& o) const {
  in.collect(prefix + "in.", o);
  out.collect(prefix + "out.", o);
}

Adam::Adam(std::vector<Tensor> params, Options options)
    : params_(std::move(params)), options_(options) {
  for (auto& p : params_) {
    m_.emplace_back(p.numel(), 0.0);
    v_.emplace_back(p.numel(), 0.0);
  }
}

void Adam::step() {
  ++t_;
  double b1t = 1.0 - std::pow(options_.beta1, static_cast<double>(t_));
  double b2t = 1.0 - std::pow(options_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor& p = params_[i];
    if (!p.has_grad()) continue;
    auto g = p.grad();
    auto w = p.mutable_data();
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t k = 0; k < w.size(); ++k) {
      m[k] = options_.beta1 * m[k] + (1.0 - options_.beta1) * g[k];
      v[k] = options_.beta2 * v[k] + (1.0 - options_.beta2) * g[k] * g[k];
      double mh = m[k] / b1t;
      double vh = v[k] / b2t;
      w[k] -= options_.lr * mh / (std::sqrt(vh) + options_.eps);
    }
  }
}

void Adam::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

void ema_update(std::span<double> buffer, std::span<const double> sample,
                double decay) {
  if (buffer.size() != sample.size()) {
    throw std::invalid_argument("ema_update: size mismatch");
  }
  for (std::size_t i = 0; i < buffer.size(); ++i) {
    buffer[i] = decay * buffer[i] + (1.0 - decay) * sample[i];
  }
}

void copy_parameters(const Module& from, const Module& to) {
  std::map<std::string, Tensor> src;
  for (auto& nt : from.named_parameters()) src.emplace(nt.name, nt.tensor);
  for (auto& nt : to.named_parameters()) {
    auto it = src.find(nt.name);
    if (it == src.end()) throw std::invalid_argument("copy_parameters: missing " + nt.name);
    if (it->second.shape() != nt.tensor.shape()) {
      throw std::invalid_argument("copy_parameters: shape mismatch for " + nt.name);
    }
    Tensor dst = nt.tensor;
    auto d = dst.mutable_data();
    auto s = it->second.data();
    std::copy(s.begin(), s.end(), d.begin());
  }
}

void set_trainable(const Module& module, bool trainable) {
  for (Tensor t : module.parameters()) {
    t.set_requires_grad(trainable);
    if (!trainable) t.zero_grad();
  }
}

}  // namespace ectoken
