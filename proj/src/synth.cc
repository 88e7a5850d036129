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

#include "ectoken/synth.h"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "ectoken/error.h"
#include "ectoken/nn.h"

namespace ectoken {

namespace {

constexpr double kBond = 1.5;

Vec3 random_unit(Rng& rng) {
  for (;;) {
    Vec3 v = {rng.normal(), rng.normal(), rng.normal()};
    double n = std::hypot(v[0], v[1], v[2]);
    if (n > 1e-9) return {v[0] / n, v[1] / n, v[2] / n};
  }
}

Vec3 step_from(const Vec3& p, const Vec3& dir, double len) {
  return {p[0] + len * dir[0], p[1] + len * dir[1], p[2] + len * dir[2]};
}

int pick_type(Rng& rng, const std::vector<std::pair<int, double>>& table) {
  double u = rng.uniform();
  for (auto [type, p] : table) {
    if ((u -= p) < 0.0) return type;
  }
  return table.back().first;
}

// H C N O S P F Cl Br other
const std::vector<std::pair<int, double>> kResidueTypes = {
    {2, 0.55}, {3, 0.15}, {4, 0.18}, {5, 0.05}, {1, 0.07}};
const std::vector<std::pair<int, double>> kLigandTypes = {
    {2, 0.55}, {3, 0.12}, {4, 0.16}, {1, 0.06}, {7, 0.04}, {8, 0.03}, {6, 0.02}, {9, 0.02}};

std::vector<Atom> make_protein(Rng& rng, int protein_index) {
  std::vector<Atom> atoms;
  double radius = rng.uniform(6.5, 8.0);
  std::size_t residues = 22 + rng.index(10);
  std::vector<Vec3> centers;
  for (std::size_t r = 0; r < residues * 20 && centers.size() < residues; ++r) {
    Vec3 dir = random_unit(rng);
    if (dir[2] > 0.35) continue;  // open mouth of the bowl
    Vec3 c = step_from({0, 0, 0}, dir, radius + rng.normal(0, 0.4));
    bool clash = std::any_of(centers.begin(), centers.end(),
                             [&](const Vec3& o) { return distance(o, c) < 3.2; });
    if (!clash) centers.push_back(c);
  }
  int res_id = protein_index * 1000;
  for (const Vec3& c : centers) {
    ++res_id;
    std::size_t n = 3 + rng.index(4);
    Vec3 p = c;
    // Backbone-like first three atoms, then a short side chain pointing inward.
    Vec3 inward = {-c[0], -c[1], -c[2]};
    double nrm = std::hypot(inward[0], inward[1], inward[2]);
    for (auto& v : inward) v /= nrm;
    for (std::size_t k = 0; k < n; ++k) {
      int type = k == 0 ? 3 : k == 1 ? 2 : k == 2 ? 4 : pick_type(rng, kResidueTypes);
      atoms.push_back({type, p, Chain::kReceptor, res_id});
      Vec3 d = random_unit(rng);
      if (k >= 2) {
        for (int a = 0; a < 3; ++a) d[a] = 0.5 * d[a] + 0.8 * inward[a];
        double m = std::hypot(d[0], d[1], d[2]);
        for (auto& v : d) v /= m;
      }
      p = step_from(p, d, kBond);
    }
  }
  return atoms;
}

bool place_ligand(Rng& rng, const std::vector<Atom>& receptor, std::vector<Atom>& out,
                  double gap) {
  std::size_t n = 5 + rng.index(9);
  double depth = rng.uniform(-3.5, 3.0);
  Vec3 start = {rng.normal(0, 0.7), rng.normal(0, 0.7), depth};
  auto clear = [&](const Vec3& p, double min_gap) {
    for (const Atom& a : receptor) {
      if (distance(a.position, p) < min_gap) return false;
    }
    for (const Atom& a : out) {
      if (distance(a.position, p) < 1.2) return false;
    }
    return true;
  };
  out.clear();
  if (!clear(start, gap)) return false;
  out.push_back({pick_type(rng, kLigandTypes), start, Chain::kLigand, 0});
  Vec3 p = start;
  for (std::size_t k = 1; k < n; ++k) {
    bool placed = false;
    for (int attempt = 0; attempt < 30 && !placed; ++attempt) {
      Vec3 q = step_from(p, random_unit(rng), kBond);
      if (clear(q, gap)) {
        out.push_back({pick_type(rng, kLigandTypes), q, Chain::kLigand, 0});
        p = q;
        placed = true;
      }
    }
    if (!placed) break;
  }
  return out.size() >= 4;
}

// Drops the receptor residues farthest from the ligand until the size fits.
void trim_to(BindingComplex& c, std::size_t max_atoms) {
  if (c.size() <= max_atoms) return;
  std::map<int, double> nearest;
  for (const Atom& a : c.atoms) {
    if (a.chain != Chain::kReceptor) continue;
    double best = 1e300;
    for (std::size_t l : c.ligand_index) best = std::min(best, distance(a.position, c.atoms[l].position));
    auto [it, fresh] = nearest.emplace(a.residue, best);
    if (!fresh) it->second = std::min(it->second, best);
  }
  std::vector<std::pair<double, int>> order;
  for (auto [res, d] : nearest) order.emplace_back(d, res);
  std::sort(order.begin(), order.end());
  while (c.size() > max_atoms && !order.empty()) {
    int res = order.back().second;
    order.pop_back();
    std::erase_if(c.atoms, [&](const Atom& a) {
      return a.chain == Chain::kReceptor && a.residue == res;
    });
    c.rebuild_index_sets();
  }
}

}  // namespace

std::size_t contact_count(const BindingComplex& c, double cutoff) {
  std::size_t n = 0;
  for (std::size_t r : c.receptor_index)
    for (std::size_t l : c.ligand_index)
      if (distance(c.atoms[r].position, c.atoms[l].position) <= cutoff) ++n;
  return n;
}

std::vector<BindingComplex> generate_complexes(const SynthOptions& o) {
  if (o.atoms_min > o.atoms_max || o.atoms_max < 5) {
    throw ValidationError("gen-data: need 5 <= atoms-max and atoms-min <= atoms-max");
  }
  if (o.ligands_per_protein == 0) throw ValidationError("gen-data: ligands per protein must be > 0");
  std::vector<BindingComplex> out;
  std::size_t proteins = (o.complexes + o.ligands_per_protein - 1) / o.ligands_per_protein;
  for (std::size_t p = 0; p < proteins && out.size() < o.complexes; ++p) {
    Rng rng(derive_seed(o.seed, p, 0x5eed));
    std::vector<Atom> receptor = make_protein(rng, static_cast<int>(p));
    char pid[32];
    std::snprintf(pid, sizeof pid, "prot%03zu", p);
    for (std::size_t l = 0; l < o.ligands_per_protein && out.size() < o.complexes; ++l) {
      BindingComplex best;
      for (int attempt = 0; attempt < 200; ++attempt) {
        std::vector<Atom> ligand;
        // Crowded bowls get a progressively smaller receptor clearance.
        double gap = 2.6 - 0.3 * (attempt / 50);
        if (!place_ligand(rng, receptor, ligand, gap)) continue;
        BindingComplex full;
        full.atoms = receptor;
        full.atoms.insert(full.atoms.end(), ligand.begin(), ligand.end());
        full.rebuild_index_sets();
        BindingComplex pocket = extract_pocket(full, o.pocket_cutoff);
        trim_to(pocket, o.atoms_max);
        best = std::move(pocket);
        if (best.size() >= o.atoms_min) break;
      }
      if (best.atoms.empty()) throw ValidationError("gen-data: could not place a ligand");
      char cid[32];
      std::snprintf(cid, sizeof cid, "c%05zu", out.size());
      best.id = cid;
      best.protein = pid;
      double contacts = static_cast<double>(contact_count(best, o.contact_cutoff));
      best.label = o.label_offset + o.label_slope * contacts + rng.normal(0.0, o.label_noise);
      out.push_back(std::move(best));
    }
  }
  return out;
}

SplitSets split_by_protein(const std::vector<BindingComplex>& cs, double valid_fraction,
                           double test_fraction, std::uint64_t seed) {
  if (valid_fraction < 0 || test_fraction < 0 || valid_fraction + test_fraction >= 1.0) {
    throw ValidationError("split fractions must be >= 0 and sum below 1");
  }
  std::vector<std::string> proteins;
  for (const auto& c : cs) {
    if (std::find(proteins.begin(), proteins.end(), c.protein) == proteins.end()) {
      proteins.push_back(c.protein);
    }
  }
  Rng rng(seed);
  std::shuffle(proteins.begin(), proteins.end(), rng.engine());
  auto n = static_cast<double>(proteins.size());
  auto n_test = static_cast<std::size_t>(std::llround(test_fraction * n));
  auto n_valid = static_cast<std::size_t>(std::llround(valid_fraction * n));
  std::map<std::string, int> where;
  for (std::size_t i = 0; i < proteins.size(); ++i) {
    where[proteins[i]] = i < n_test ? 2 : i < n_test + n_valid ? 1 : 0;
  }
  SplitSets s;
  for (const auto& c : cs) {
    int w = where[c.protein];
    (w == 0 ? s.train : w == 1 ? s.valid : s.test).push_back(c);
  }
  return s;
}

std::vector<RelativePair> relative_pairs(const std::vector<BindingComplex>& cs) {
  std::vector<RelativePair> out;
  for (std::size_t i = 0; i < cs.size(); ++i)
    for (std::size_t j = i + 1; j < cs.size(); ++j)
      if (cs[i].protein == cs[j].protein && cs[i].label && cs[j].label) {
        out.push_back({cs[i].id, cs[j].id, *cs[i].label - *cs[j].label});
      }
  return out;
}

}  // namespace ectoken
