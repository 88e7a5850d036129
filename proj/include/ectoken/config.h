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

// Run configuration: flat `key = value` text under [section] headers.
// The canonical form (fixed section order, sorted keys, round-trip number
// formatting) is what gets hashed and stamped into every artifact.

#ifndef ECTOKEN_CONFIG_H_
#define ECTOKEN_CONFIG_H_

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "ectoken/tokenizers.h"

namespace ectoken {

struct PretrainSettings {
  double lr = 3e-5;
  std::size_t epochs = 20;
  std::size_t max_steps = 0;  // 0: no cap; otherwise epochs shrink to fit
  bool revive = true;
  std::size_t dead_threshold = 1;
  std::size_t probe_size = 8;  // fixed validation complexes for the loss probe
  std::uint64_t seed = 1;
};

struct FinetuneSettings {
  std::string task = "lba";
  double lr = 1e-3;
  std::size_t epochs = 20;
  std::size_t max_steps = 0;
  std::size_t batch_size = 1;
  std::size_t fusion_hidden = 0;  // 0: model width
  std::size_t head_layers = 1;
  std::string pooling = "mean";
  bool unfreeze_tokenizers = false;
  std::string lep_threshold = "median";  // or a number
  std::uint64_t seed = 2;
};

struct DistillSettings {
  double lr = 1e-3;
  std::size_t epochs = 20;
  std::size_t max_steps = 0;
  std::size_t batch_size = 1;
  double task_weight = 1.0;
  std::size_t surrogate_hidden = 0;  // 0: model width
  bool train_tokenizer = false;
  bool train_fusion_head = true;
  bool task_reaches_surrogates = false;
  std::uint64_t seed = 3;
};

struct DataSettings {
  std::string dir = "data";
  std::size_t complexes = 64;
  std::size_t ligands_per_protein = 8;
  std::size_t atoms_min = 20;
  std::size_t atoms_max = 60;
  double valid_fraction = 0.125;
  double test_fraction = 0.25;
  double grid_spacing = 0.5;
  std::uint64_t seed = 0;
};

struct RunSettings {
  std::uint64_t seed = 0;
  int checkpoint_precision = 32;  // 32 or 64 bit parameter blobs
};

struct RunConfig {
  TokenizerConfig model;  // includes [patch]
  PretrainSettings pretrain;
  FinetuneSettings finetune;
  DistillSettings distill;
  DataSettings data;
  RunSettings run;

  static RunConfig parse(std::string_view text);
  static RunConfig load(const std::string& path);
  std::string canonical() const;
  std::uint64_t hash() const;
  //! Hash of [model] and [patch] only: what a checkpoint's weights depend on.
  std::uint64_t model_hash() const;
  void validate() const;
};

//! "section.key" for every field whose value differs.
std::vector<std::string> config_diff(const RunConfig& a, const RunConfig& b);
//! Fields of [model] and [patch] that differ.
std::vector<std::string> model_diff(const RunConfig& a, const RunConfig& b);

//! The tiny architecture used by the smoke tests and acceptance runs.
RunConfig tiny_config();

std::uint64_t fnv1a(std::string_view bytes);
std::string hex64(std::uint64_t v);

}  // namespace ectoken

#endif  // ECTOKEN_CONFIG_H_
