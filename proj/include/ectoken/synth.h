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

// Synthetic binding sites with contact-count affinity labels.
//
// Each protein is a bowl of residues; each complex places a short ligand
// chain at a random depth inside its protein's bowl, so ligands of the same
// protein differ mainly in how many close contacts they make.

#ifndef ECTOKEN_SYNTH_H_
#define ECTOKEN_SYNTH_H_

#include <cstdint>
#include <string>
#include <vector>

#include "ectoken/moldata.h"

namespace ectoken {

struct SynthOptions {
  std::size_t complexes = 64;
  //! Ligands per protein; proteins = ceil(complexes / ligands_per_protein).
  std::size_t ligands_per_protein = 8;
  std::size_t atoms_min = 20;
  std::size_t atoms_max = 60;
  std::uint64_t seed = 0;
  double label_offset = 4.0;
  double label_slope = 0.08;
  double label_noise = 0.15;
  double contact_cutoff = 4.0;
  double pocket_cutoff = 6.0;
};

//! Receptor-ligand pairs within `cutoff`.
std::size_t contact_count(const BindingComplex& complex, double cutoff = 4.0);

//! Pocket-extracted, labeled complexes, grouped by `protein`.
std::vector<BindingComplex> generate_complexes(const SynthOptions& options);

struct SplitSets {
  std::vector<BindingComplex> train, valid, test;
};

//! Splits whole proteins (never individual ligands) into train/valid/test.
SplitSets split_by_protein(const std::vector<BindingComplex>& complexes, double valid_fraction,
                           double test_fraction, std::uint64_t seed);

struct RelativePair {
  std::string first, second;
  double difference = 0.0;  // label(first) - label(second)
};

//! All ordered-by-id pairs of labeled complexes sharing a protein.
std::vector<RelativePair> relative_pairs(const std::vector<BindingComplex>& complexes);

}  // namespace ectoken

#endif  // ECTOKEN_SYNTH_H_
