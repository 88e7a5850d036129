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

// "ECBK1" checkpoint container. Byte layout is in docs/formats.md.

#ifndef ECTOKEN_CHECKPOINT_H_
#define ECTOKEN_CHECKPOINT_H_

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "ectoken/nn.h"
#include "ectoken/quantizer.h"
#include "ectoken/tensor.h"

namespace ectoken {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Blob {
  std::string name;
  Shape shape;
  std::vector<double> values;
};

struct Checkpoint {
  std::uint64_t config_hash = 0;
  std::uint64_t seed = 0;
  std::string config_text;
  std::map<std::string, std::string> metadata;
  std::vector<Blob> blobs;
  int precision = 32;  // bits per stored value

  void save(const std::string& path) const;
  static Checkpoint load(const std::string& path);

  const Blob& blob(const std::string& name) const;
  bool has_blob(const std::string& name) const;
  const std::string& meta(const std::string& key) const;

  void add(const std::string& name, const Shape& shape, std::vector<double> values);
  void add_module(const Module& module, const std::string& prefix);
  void add_codebook(const Codebook& book, const std::string& prefix);
  //! Copies stored values into the module's parameters; names and shapes must match.
  void load_module(const Module& module, const std::string& prefix) const;
  void load_codebook(Codebook& book, const std::string& prefix) const;
};

}  // namespace ectoken

#endif  // ECTOKEN_CHECKPOINT_H_
