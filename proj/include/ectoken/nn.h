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

#ifndef ECTOKEN_NN_H_
#define ECTOKEN_NN_H_

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "ectoken/tensor.h"

namespace ectoken {

//! Seeded source for initialization and sampling.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  double uniform(double lo = 0.0, double hi = 1.0) {
    return std::uniform_real_distribution<double>(lo, hi)(engine_);
  }
  double normal(double mean = 0.0, double stddev = 1.0) {
    return std::normal_distribution<double>(mean, stddev)(engine_);
  }
  std::size_t index(std::size_t n) {
    return std::uniform_int_distribution<std::size_t>(0, n - 1)(engine_);
  }
  bool bernoulli(double p) { return uniform() < p; }
  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
};

//! Mixes several integers into a well-spread 64-bit seed.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b = 0);

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

class Module {
 public:
  virtual ~Module() = default;
  virtual void collect(const std::string& prefix,
                       std::vector<NamedTensor>& out) const = 0;

  std::vector<NamedTensor> named_parameters(const std::string& prefix = "") const;
  std::vector<Tensor> parameters() const;
  void zero_grad() const;
};

class Linear : public Module {
 public:
  Linear() = default;
  Linear(std::size_t in, std::size_t out, Rng& rng, bool bias = true);

  //! x[..., in] -> [..., out]
  Tensor operator()(const Tensor& x) const;
  void collect(const std::string& prefix, std::vector<NamedTensor>& out) const override;
  void zero_init();

  Tensor weight;  // [in, out]
  Tensor bias;    // [out], undefined when disabled
};

class LayerNorm : public Module {
 public:
  LayerNorm() = default;
  explicit LayerNorm(std::size_t dim);
  Tensor operator()(const Tensor& x) const;
  void collect(const std::string& prefix, std::vector<NamedTensor>& out) const override;

  Tensor gain;
  Tensor bias;
};

class Embedding : public Module {
 public:
  Embedding() = default;
  Embedding(std::size_t count, std::size_t dim, Rng& rng);
  Tensor operator()(std::span<const std::size_t> ids) const;
  void collect(const std::string& prefix, std::vector<NamedTensor>& out) const override;

  Tensor table;  // [count, dim]
};

//! Two-layer GELU MLP.
class FeedForward : public Module {
 public:
  FeedForward() = default;
  FeedForward(std::size_t dim, std::size_t hidden, std::size_t out, Rng& rng);
  Tensor operator()(const Tensor& x) const;
  void collect(const std::string& prefix, std::vector<NamedTensor>& out) const override;

  Linear in;
  Linear out;
};

//! First-moment/second-moment optimizer with bias correction.
class Adam {
 public:
  struct Options {
    double lr = 3e-5;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
  };

  Adam() = default;
  Adam(std::vector<Tensor> params, Options options);

  void step();
  void zero_grad();
  void set_lr(double lr) { options_.lr = lr; }
  const Options& options() const { return options_; }
  std::size_t steps() const { return t_; }

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  Options options_;
  std::size_t t_ = 0;
};

//! buffer <- decay * buffer + (1 - decay) * sample
void ema_update(std::span<double> buffer, std::span<const double> sample,
                double decay);

//! Copies values (not graph state) between identically named parameters.
void copy_parameters(const Module& from, const Module& to);

//! Toggles requires_grad on every parameter of `module`.
void set_trainable(const Module& module, bool trainable);

}  // namespace ectoken

#endif  // ECTOKEN_NN_H_
