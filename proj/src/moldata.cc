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

#include "ectoken/moldata.h"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>

#include "ectoken/error.h"
#include "ectoken/nn.h"
#include <nlohmann/json.hpp>

namespace ectoken {

namespace {

constexpr std::array<std::string_view, kNumAtomTypes + 1> kSymbols = {
    "?", "H", "C", "N", "O", "S", "P", "F", "Cl", "Br", "X"};
constexpr std::array<int, kNumAtomTypes + 1> kAtomicNumbers = {0, 1,  6,  7,  8, 16,
                                                               15, 9, 17, 35, 6};

double squared_distance(const Vec3& a, const Vec3& b) {
  double dx = a[0] - b[0], dy = a[1] - b[1], dz = a[2] - b[2];
  return dx * dx + dy * dy + dz * dz;
}

// k smallest (d2, index) pairs among candidates, ascending.
std::vector<std::size_t> nearest_among(std::span<const Vec3> points,
                                       std::span<const std::size_t> candidates,
                                       const Vec3& query, std::size_t k) {
  // Bounded max-heap on (squared distance, index): one pass, k live entries.
  k = std::min(k, candidates.size());
  std::vector<std::pair<double, std::size_t>> heap;
  heap.reserve(k + 1);
  for (std::size_t c : candidates) {
    std::pair<double, std::size_t> e{squared_distance(points[c], query), c};
    if (heap.size() < k) {
      heap.push_back(e);
      std::push_heap(heap.begin(), heap.end());
    } else if (k > 0 && e < heap.front()) {
      std::pop_heap(heap.begin(), heap.end());
      heap.back() = e;
      std::push_heap(heap.begin(), heap.end());
    }
  }
  std::sort_heap(heap.begin(), heap.end());
  std::vector<std::size_t> out(heap.size());
  for (std::size_t i = 0; i < heap.size(); ++i) out[i] = heap[i].second;
  return out;
}

}  // namespace

std::string_view atom_symbol(int type) {
  if (type < 1 || type > kNumAtomTypes) return "?";
  return kSymbols[static_cast<std::size_t>(type)];
}

int atom_type_from_symbol(std::string_view symbol) {
  for (int t = 1; t <= kNumAtomTypes; ++t) {
    if (kSymbols[static_cast<std::size_t>(t)] == symbol) return t;
  }
  return kNumAtomTypes;  // other
}

int atomic_number(int type) {
  if (type < 1 || type > kNumAtomTypes) {
    throw ValidationError("unknown atom type " + std::to_string(type));
  }
  return kAtomicNumbers[static_cast<std::size_t>(type)];
}

DensityModel DensityModel::standard() {
  DensityModel m;
  for (int t = 1; t <= kNumAtomTypes; ++t) {
    m.sigma[static_cast<std::size_t>(t)] = t == 1 ? 0.4 : 0.7;
    m.amplitude[static_cast<std::size_t>(t)] = atomic_number(t);
  }
  return m;
}

// ---------------------------------------------------------------------------
// BindingComplex

std::vector<Vec3> BindingComplex::positions() const {
  std::vector<Vec3> out;
  out.reserve(atoms.size());
  for (const auto& a : atoms) out.push_back(a.position);
  return out;
}

void BindingComplex::rebuild_index_sets() {
  receptor_index.clear();
  ligand_index.clear();
  for (std::size_t i = 0; i < atoms.size(); ++i) {
    (atoms[i].chain == Chain::kLigand ? ligand_index : receptor_index).push_back(i);
  }
}

void BindingComplex::validate() const {
  for (std::size_t i = 0; i < atoms.size(); ++i) {
    const Atom& a = atoms[i];
    if (a.type < 1 || a.type > kNumAtomTypes) {
      throw ValidationError("complex " + id + ": unknown atom type " +
                            std::to_string(a.type) + " at atom " + std::to_string(i));
    }
    for (double c : a.position) {
      if (!std::isfinite(c)) {
        throw ValidationError("complex " + id + ": non-finite position at atom " +
                              std::to_string(i));
      }
    }
  }
  if (receptor_index.size() + ligand_index.size() != atoms.size()) {
    throw ValidationError("complex " + id + ": index sets do not cover all atoms");
  }
}

// ---------------------------------------------------------------------------
// ElectronCloudGrid

Vec3 ElectronCloudGrid::position(std::size_t index) const {
  std::size_t ix = index % dims[0];
  std::size_t iy = (index / dims[0]) % dims[1];
  std::size_t iz = index / (dims[0] * dims[1]);
  return {origin[0] + spacing * static_cast<double>(ix),
          origin[1] + spacing * static_cast<double>(iy),
          origin[2] + spacing * static_cast<double>(iz)};
}

DensityPoints ElectronCloudGrid::points() const {
  DensityPoints p;
  p.positions.resize(size());
  for (std::size_t i = 0; i < size(); ++i) p.positions[i] = position(i);
  p.values = densities;
  return p;
}

void ElectronCloudGrid::validate() const {
  if (!(spacing > 0.0)) throw ValidationError("grid spacing must be positive");
  if (dims[0] * dims[1] * dims[2] != densities.size()) {
    throw ValidationError("grid dims do not match density count");
  }
  for (double u : densities) {
    if (!(u >= 0.0)) throw ValidationError("grid densities must be nonnegative");
  }
}

// ---------------------------------------------------------------------------
// JSON-lines complexes

BindingComplex parse_complex_line(std::string_view line, std::size_t line_number) {
  auto where = [&] { return "line " + std::to_string(line_number) + ": "; };
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError(where() + "malformed JSON (" + e.what() + ")");
  }
  if (!j.is_object() || !j.contains("id") || !j["id"].is_string() ||
      !j.contains("atoms") || !j["atoms"].is_array()) {
    throw ValidationError(where() + "expected {\"id\": str, \"atoms\": [...]}");
  }
  BindingComplex c;
  c.id = j["id"].get<std::string>();
  if (j.contains("protein") && j["protein"].is_string()) {
    c.protein = j["protein"].get<std::string>();
  }
  if (j.contains("label") && !j["label"].is_null()) {
    if (!j["label"].is_number()) throw ValidationError(where() + "label must be a number");
    c.label = j["label"].get<double>();
  }
  for (const auto& a : j["atoms"]) {
    if (!a.is_array() || a.size() != 6 || !a[0].is_number_integer() ||
        !a[1].is_number() || !a[2].is_number() || !a[3].is_number() ||
        !a[4].is_string() || !a[5].is_number_integer()) {
      throw ValidationError(where() + "atom must be [type, x, y, z, \"R\"|\"L\", res]");
    }
    Atom atom;
    atom.type = a[0].get<int>();
    if (atom.type < 1) {
      throw ValidationError(where() + "atom type must be >= 1, got " +
                            std::to_string(atom.type));
    }
    if (atom.type > kNumAtomTypes) {
      throw ValidationError(where() + "unknown atom type " + std::to_string(atom.type));
    }
    atom.position = {a[1].get<double>(), a[2].get<double>(), a[3].get<double>()};
    std::string chain = a[4].get<std::string>();
    if (chain == "R") {
      atom.chain = Chain::kReceptor;
    } else if (chain == "L") {
      atom.chain = Chain::kLigand;
    } else {
      throw ValidationError(where() + "unknown chain tag \"" + chain + "\"");
    }
    atom.residue = a[5].get<int>();
    c.atoms.push_back(atom);
  }
  c.rebuild_index_sets();
  try {
    c.validate();
  } catch (const ValidationError& e) {
    throw ValidationError(where() + e.what());
  }
  return c;
}

std::string format_complex_line(const BindingComplex& c) {
  nlohmann::json j;
  j["id"] = c.id;
  if (!c.protein.empty()) j["protein"] = c.protein;
  nlohmann::json atoms = nlohmann::json::array();
  for (const auto& a : c.atoms) {
    atoms.push_back({a.type, a.position[0], a.position[1], a.position[2],
                     a.chain == Chain::kLigand ? "L" : "R", a.residue});
  }
  j["atoms"] = std::move(atoms);
  j["label"] = c.label ? nlohmann::json(*c.label) : nlohmann::json(nullptr);
  return j.dump();
}

std::vector<BindingComplex> load_complexes(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open " + path);
  std::vector<BindingComplex> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    out.push_back(parse_complex_line(line, n));
  }
  return out;
}

void save_complexes(const std::string& path, std::span<const BindingComplex> complexes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write " + path);
  for (const auto& c : complexes) out << format_complex_line(c) << '\n';
}

// ---------------------------------------------------------------------------
// Grid files

void write_grid(const std::string& path, const ElectronCloudGrid& grid) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write " + path);
  std::ostringstream header;
  header.precision(17);
  header << "ECG1\n"
         << "origin " << grid.origin[0] << ' ' << grid.origin[1] << ' '
         << grid.origin[2] << '\n'
         << "spacing " << grid.spacing << '\n'
         << "dims " << grid.dims[0] << ' ' << grid.dims[1] << ' ' << grid.dims[2]
         << '\n'
         << "data float32le " << grid.size() << '\n';
  out << header.str();
  std::vector<char> block(grid.size() * 4);
  for (std::size_t i = 0; i < grid.size(); ++i) {
    auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(grid.densities[i]));
    for (int b = 0; b < 4; ++b) {
      block[i * 4 + static_cast<std::size_t>(b)] = static_cast<char>((bits >> (8 * b)) & 0xffu);
    }
  }
  out.write(block.data(), static_cast<std::streamsize>(block.size()));
}

ElectronCloudGrid read_grid(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open " + path);
  std::string line;
  auto next = [&](const char* what) {
    if (!std::getline(in, line)) {
      throw ValidationError(path + ": truncated header, expected " + what);
    }
    return std::istringstream(line);
  };
  if (!std::getline(in, line) || line != "ECG1") {
    throw ValidationError(path + ": missing ECG1 magic");
  }
  ElectronCloudGrid g;
  std::string key;
  {
    auto s = next("origin");
    s >> key >> g.origin[0] >> g.origin[1] >> g.origin[2];
    if (key != "origin" || !s) throw ValidationError(path + ": bad origin line");
  }
  {
    auto s = next("spacing");
    s >> key >> g.spacing;
    if (key != "spacing" || !s) throw ValidationError(path + ": bad spacing line");
  }
  {
    auto s = next("dims");
    s >> key >> g.dims[0] >> g.dims[1] >> g.dims[2];
    if (key != "dims" || !s) throw ValidationError(path + ": bad dims line");
  }
  std::size_t count = 0;
  {
    auto s = next("data");
    std::string fmt;
    s >> key >> fmt >> count;
    if (key != "data" || fmt != "float32le" || !s) {
      throw ValidationError(path + ": bad data line");
    }
  }
  std::vector<unsigned char> block(count * 4);
  in.read(reinterpret_cast<char*>(block.data()), static_cast<std::streamsize>(block.size()));
  if (static_cast<std::size_t>(in.gcount()) != block.size()) {
    throw ValidationError(path + ": truncated density block");
  }
  g.densities.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    std::uint32_t bits = 0;
    for (int b = 0; b < 4; ++b) {
      bits |= static_cast<std::uint32_t>(block[i * 4 + static_cast<std::size_t>(b)]) << (8 * b);
    }
    g.densities[i] = std::bit_cast<float>(bits);
  }
  g.validate();
  return g;
}

// ---------------------------------------------------------------------------
// Geometry

double distance(const Vec3& a, const Vec3& b) { return std::sqrt(squared_distance(a, b)); }

BindingComplex extract_pocket(const BindingComplex& complex, double cutoff) {
  std::vector<Vec3> ligand;
  for (const auto& a : complex.atoms) {
    if (a.chain == Chain::kLigand) ligand.push_back(a.position);
  }
  if (ligand.empty()) {
    throw ValidationError("extract_pocket: complex " + complex.id + " has no ligand atoms");
  }
  double c2 = cutoff * cutoff;
  std::set<int> kept_residues;
  for (const auto& a : complex.atoms) {
    if (a.chain != Chain::kReceptor || kept_residues.count(a.residue)) continue;
    for (const auto& l : ligand) {
      if (squared_distance(a.position, l) <= c2) {
        kept_residues.insert(a.residue);
        break;
      }
    }
  }
  BindingComplex out;
  out.id = complex.id;
  out.protein = complex.protein;
  out.label = complex.label;
  for (const auto& a : complex.atoms) {
    if (a.chain == Chain::kLigand || kept_residues.count(a.residue)) out.atoms.push_back(a);
  }
  out.rebuild_index_sets();
  return out;
}

ElectronCloudGrid synth_density(const BindingComplex& complex, double spacing,
                                double padding, const DensityModel& model) {
  if (complex.atoms.empty()) throw ValidationError("synth_density: empty complex");
  if (!(spacing > 0.0)) throw ValidationError("synth_density: spacing must be positive");
  Vec3 lo{}, hi{};
  for (int d = 0; d < 3; ++d) {
    lo[d] = std::numeric_limits<double>::infinity();
    hi[d] = -std::numeric_limits<double>::infinity();
  }
  for (const auto& a : complex.atoms) {
    double s = model.sigma[static_cast<std::size_t>(a.type)];
    if (!(s > 0.0)) {
      throw ValidationError("synth_density: sigma must be positive for type " +
                            std::string(atom_symbol(a.type)));
    }
    for (int d = 0; d < 3; ++d) {
      lo[d] = std::min(lo[d], a.position[d]);
      hi[d] = std::max(hi[d], a.position[d]);
    }
  }
  ElectronCloudGrid g;
  g.spacing = spacing;
  // The lattice is shifted off the atoms by a fraction of a voxel. Aligned,
  // extreme atoms sit on lattice planes and see exactly tied neighbors, which
  // rounding under a rigid motion breaks differently.
  constexpr std::array<double, 3> kShift = {0.3183, 0.2071, 0.4142};
  for (int d = 0; d < 3; ++d) {
    g.origin[d] = lo[d] - padding - kShift[d] * spacing;
    g.dims[d] = static_cast<std::size_t>(std::ceil((hi[d] + padding - g.origin[d]) / spacing)) + 1;
  }
  g.densities.assign(g.dims[0] * g.dims[1] * g.dims[2], 0.0);
  // Contributions beyond 9 sigma are below 3e-18 of the amplitude.
  constexpr double kCutoffSigmas = 9.0;
  for (const auto& a : complex.atoms) {
    double s = model.sigma[static_cast<std::size_t>(a.type)];
    double amp = model.amplitude[static_cast<std::size_t>(a.type)];
    double inv2s2 = 1.0 / (2.0 * s * s);
    double r = kCutoffSigmas * s;
    std::array<std::size_t, 3> from{}, to{};
    for (int d = 0; d < 3; ++d) {
      double f = std::floor((a.position[d] - r - g.origin[d]) / spacing);
      double t = std::ceil((a.position[d] + r - g.origin[d]) / spacing);
      from[d] = static_cast<std::size_t>(std::max(0.0, f));
      to[d] = static_cast<std::size_t>(
          std::min(static_cast<double>(g.dims[d] - 1), std::max(0.0, t)));
    }
    for (std::size_t iz = from[2]; iz <= to[2]; ++iz) {
      double dz = g.origin[2] + spacing * static_cast<double>(iz) - a.position[2];
      for (std::size_t iy = from[1]; iy <= to[1]; ++iy) {
        double dy = g.origin[1] + spacing * static_cast<double>(iy) - a.position[1];
        for (std::size_t ix = from[0]; ix <= to[0]; ++ix) {
          double dx = g.origin[0] + spacing * static_cast<double>(ix) - a.position[0];
          double d2 = dx * dx + dy * dy + dz * dz;
          g.densities[ix + g.dims[0] * (iy + g.dims[1] * iz)] += amp * std::exp(-d2 * inv2s2);
        }
      }
    }
  }
  return g;
}

std::vector<std::size_t> knn(std::span<const Vec3> points, const Vec3& query,
                             std::size_t k) {
  if (k > points.size()) {
    throw ValidationError("knn: k=" + std::to_string(k) + " exceeds " +
                          std::to_string(points.size()) + " points");
  }
  std::vector<std::size_t> all(points.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  return nearest_among(points, all, query, k);
}

Vec3 centroid(std::span<const Vec3> positions) {
  Vec3 c{0.0, 0.0, 0.0};
  for (const auto& p : positions) {
    for (int d = 0; d < 3; ++d) c[d] += p[d];
  }
  for (int d = 0; d < 3; ++d) c[d] /= static_cast<double>(positions.size());
  return c;
}

std::vector<Vec3> zero_center(std::span<const Vec3> positions) {
  if (positions.empty()) throw ValidationError("zero_center: no positions");
  Vec3 c = centroid(positions);
  std::vector<Vec3> out(positions.begin(), positions.end());
  for (auto& p : out) {
    for (int d = 0; d < 3; ++d) p[d] -= c[d];
  }
  return out;
}

std::vector<double> selection_probabilities(std::span<const double> distances,
                                            double gamma, SampleSign sign) {
  double s = sign == SampleSign::kNegative ? -1.0 : 1.0;
  std::vector<double> logits(distances.size());
  for (std::size_t i = 0; i < distances.size(); ++i) logits[i] = s * distances[i] / gamma;
  double mx = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (double& l : logits) {
    l = std::exp(l - mx);
    z += l;
  }
  for (double& l : logits) l /= z;
  return logits;
}

std::vector<Patch> patchify(const DensityPoints& cloud, const BindingComplex& complex,
                            const PatchOptions& options, std::uint64_t seed) {
  if (options.k == 0 || options.k > options.k_max) {
    throw ValidationError("patchify: need 0 < K <= K_max");
  }
  if (!(options.retain_ratio > 0.0 && options.retain_ratio <= 1.0)) {
    throw ValidationError("patchify: r_in must lie in (0, 1]");
  }
  Rng rng(seed);
  std::vector<std::size_t> retained;
  retained.reserve(cloud.size());
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    if (options.retain_ratio >= 1.0 || rng.bernoulli(options.retain_ratio)) {
      retained.push_back(i);
    }
  }
  if (retained.size() < options.k) {
    throw ValidationError("patchify: only " + std::to_string(retained.size()) +
                          " retained density points for K=" + std::to_string(options.k) +
                          "; raise r_in or grid padding");
  }
  std::vector<Patch> patches;
  patches.reserve(complex.size());
  for (std::size_t i = 0; i < complex.size(); ++i) {
    const Atom& atom = complex.atoms[i];
    Patch p;
    p.center_atom_index = i;
    p.center_type = atom.type;
    p.candidate_indices = nearest_among(cloud.positions, retained, atom.position, options.k_max);
    std::size_t nc = p.candidate_indices.size();
    std::vector<bool> chosen(nc, false);
    if (options.k >= nc) {
      std::fill(chosen.begin(), chosen.end(), true);
    } else {
      std::vector<double> dist(nc);
      for (std::size_t c = 0; c < nc; ++c) {
        dist[c] = distance(cloud.positions[p.candidate_indices[c]], atom.position);
      }
      std::vector<double> weight = selection_probabilities(dist, options.gamma, options.sign);
      // Successive draws without replacement.
      for (std::size_t draw = 0; draw < options.k; ++draw) {
        double total = 0.0;
        for (std::size_t c = 0; c < nc; ++c) {
          if (!chosen[c]) total += weight[c];
        }
        double u = rng.uniform() * total;
        std::size_t pick = nc;
        for (std::size_t c = 0; c < nc; ++c) {
          if (chosen[c]) continue;
          pick = c;
          u -= weight[c];
          if (u < 0.0) break;
        }
        chosen[pick] = true;
      }
    }
    p.positions.push_back(atom.position);
    for (std::size_t c = 0; c < nc; ++c) {
      if (!chosen[c]) continue;
      std::size_t j = p.candidate_indices[c];
      p.sampled_indices.push_back(j);
      p.positions.push_back(cloud.positions[j]);
      p.member_values.push_back(cloud.values[j]);
    }
    patches.push_back(std::move(p));
  }
  return patches;
}

std::vector<Patch> patchify(const ElectronCloudGrid& grid, const BindingComplex& complex,
                            const PatchOptions& options, std::uint64_t seed) {
  return patchify(grid.points(), complex, options, seed);
}

Mat3 random_rotation(Rng& rng) {
  // Uniform unit quaternion.
  double u1 = rng.uniform(), u2 = rng.uniform(), u3 = rng.uniform();
  constexpr double kTwoPi = 6.283185307179586;
  double a = std::sqrt(1.0 - u1), b = std::sqrt(u1);
  double w = a * std::sin(kTwoPi * u2), x = a * std::cos(kTwoPi * u2);
  double y = b * std::sin(kTwoPi * u3), z = b * std::cos(kTwoPi * u3);
  return {{{1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)},
           {2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)},
           {2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)}}};
}

Vec3 rotate(const Mat3& r, const Vec3& v) {
  return {r[0][0] * v[0] + r[0][1] * v[1] + r[0][2] * v[2],
          r[1][0] * v[0] + r[1][1] * v[1] + r[1][2] * v[2],
          r[2][0] * v[0] + r[2][1] * v[1] + r[2][2] * v[2]};
}

std::vector<Vec3> rigid_transform(std::span<const Vec3> positions, const Mat3& r,
                                  const Vec3& t) {
  std::vector<Vec3> out;
  out.reserve(positions.size());
  for (const auto& p : positions) {
    Vec3 q = rotate(r, p);
    out.push_back({q[0] + t[0], q[1] + t[1], q[2] + t[2]});
  }
  return out;
}

BindingComplex rigid_transform(const BindingComplex& complex, const Mat3& r, const Vec3& t) {
  BindingComplex out = complex;
  for (auto& a : out.atoms) {
    Vec3 q = rotate(r, a.position);
    a.position = {q[0] + t[0], q[1] + t[1], q[2] + t[2]};
  }
  return out;
}

DensityPoints rigid_transform(const DensityPoints& cloud, const Mat3& r, const Vec3& t) {
  DensityPoints out;
  out.values = cloud.values;
  out.positions = rigid_transform(cloud.positions, r, t);
  return out;
}

}  // namespace ectoken
