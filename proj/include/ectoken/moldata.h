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

// Binding-site data model: complexes, electron-density grids, patches.

#ifndef ECTOKEN_MOLDATA_H_
#define ECTOKEN_MOLDATA_H_

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace ectoken {

class Rng;

using Vec3 = std::array<double, 3>;
using Mat3 = std::array<std::array<double, 3>, 3>;

//! Vocabulary {H, C, N, O, S, P, F, Cl, Br, other}; ids are 1-based.
inline constexpr int kNumAtomTypes = 10;
//! Extra id used in place of a masked atom type.
inline constexpr int kMaskAtomType = kNumAtomTypes + 1;

std::string_view atom_symbol(int type);
int atom_type_from_symbol(std::string_view symbol);
int atomic_number(int type);

enum class Chain : std::uint8_t { kReceptor = 0, kLigand = 1 };

struct Atom {
  int type = 0;
  Vec3 position{};
  Chain chain = Chain::kReceptor;
  int residue = 0;
};

struct BindingComplex {
  std::string id;
  //! Grouping key for per-protein metrics; empty when unknown.
  std::string protein;
  std::vector<Atom> atoms;
  std::optional<double> label;
  std::vector<std::size_t> receptor_index;
  std::vector<std::size_t> ligand_index;

  std::size_t size() const { return atoms.size(); }
  std::vector<Vec3> positions() const;
  void rebuild_index_sets();
  //! Throws ValidationError on non-finite positions or out-of-vocabulary types.
  void validate() const;
};

struct DensityPoints {
  std::vector<Vec3> positions;
  std::vector<double> values;
  std::size_t size() const { return values.size(); }
};

struct ElectronCloudGrid {
  Vec3 origin{};
  double spacing = 0.5;
  std::array<std::size_t, 3> dims{};
  //! x-fastest: index = ix + nx * (iy + ny * iz)
  std::vector<double> densities;

  std::size_t size() const { return densities.size(); }
  Vec3 position(std::size_t index) const;
  DensityPoints points() const;
  void validate() const;
};

struct Patch {
  std::size_t center_atom_index = 0;
  int center_type = 0;
  //! K + 1 entries; entry 0 is the center atom.
  std::vector<Vec3> positions;
  //! K sampled densities, aligned with positions[1..].
  std::vector<double> member_values;
  //! Indices into the density point list.
  std::vector<std::size_t> sampled_indices;
  //! The K_max nearest retained candidates the members were drawn from.
  std::vector<std::size_t> candidate_indices;
};

enum class SampleSign { kNegative, kPositive };

struct PatchOptions {
  std::size_t k = 16;
  std::size_t k_max = 32;
  double gamma = 0.1;
  double retain_ratio = 0.75;
  SampleSign sign = SampleSign::kNegative;
};

struct DensityModel {
  std::array<double, kNumAtomTypes + 1> sigma{};
  std::array<double, kNumAtomTypes + 1> amplitude{};
  static DensityModel standard();
};

// ---- I/O

std::vector<BindingComplex> load_complexes(const std::string& path);
void save_complexes(const std::string& path, std::span<const BindingComplex> complexes);
BindingComplex parse_complex_line(std::string_view line, std::size_t line_number = 0);
std::string format_complex_line(const BindingComplex& complex);

ElectronCloudGrid read_grid(const std::string& path);
void write_grid(const std::string& path, const ElectronCloudGrid& grid);

// ---- geometry

BindingComplex extract_pocket(const BindingComplex& complex, double cutoff = 6.0);

ElectronCloudGrid synth_density(const BindingComplex& complex, double spacing = 0.5,
                                double padding = 2.0,
                                const DensityModel& model = DensityModel::standard());

//! k nearest points to `query`, ascending by distance, ties to the lower index.
std::vector<std::size_t> knn(std::span<const Vec3> points, const Vec3& query,
                             std::size_t k);

std::vector<Vec3> zero_center(std::span<const Vec3> positions);
Vec3 centroid(std::span<const Vec3> positions);

//! First-draw selection probabilities over candidates at `distances`.
std::vector<double> selection_probabilities(std::span<const double> distances,
                                            double gamma, SampleSign sign);

std::vector<Patch> patchify(const DensityPoints& cloud, const BindingComplex& complex,
                            const PatchOptions& options, std::uint64_t seed);
std::vector<Patch> patchify(const ElectronCloudGrid& grid, const BindingComplex& complex,
                            const PatchOptions& options, std::uint64_t seed);

double distance(const Vec3& a, const Vec3& b);
Mat3 random_rotation(Rng& rng);
Vec3 rotate(const Mat3& r, const Vec3& v);
std::vector<Vec3> rigid_transform(std::span<const Vec3> positions, const Mat3& r,
                                  const Vec3& t);
BindingComplex rigid_transform(const BindingComplex& complex, const Mat3& r,
                               const Vec3& t);
DensityPoints rigid_transform(const DensityPoints& cloud, const Mat3& r, const Vec3& t);

}  // namespace ectoken

#endif  // ECTOKEN_MOLDATA_H_
