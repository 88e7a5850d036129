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

#include "ectoken/config.h"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <sstream>

#include "ectoken/error.h"

namespace ectoken {

namespace {

struct Field {
  std::string section, key;
  std::function<std::string()> get;
  std::function<void(const std::string&)> set;
};

std::string fmt(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);  // shortest round-trip
  return std::string(buf, end);
}

std::string trim(std::string_view s) {
  std::size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string_view::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r");
  return std::string(s.substr(a, b - a + 1));
}

double to_double(const std::string& key, const std::string& v) {
  double out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size() || !std::isfinite(out)) {
    throw ValidationError("config: " + key + " = '" + v + "' is not a finite number");
  }
  return out;
}

std::uint64_t to_uint(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) {
    throw ValidationError("config: " + key + " = '" + v + "' is not a non-negative integer");
  }
  return out;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ValidationError("config: " + key + " = '" + v + "' is not a boolean");
}

template <class T>
Field num(const std::string& s, const std::string& k, T& ref) {
  std::string full = s + "." + k;
  if constexpr (std::is_floating_point_v<T>) {
    return {s, k, [&ref] { return fmt(ref); }, [&ref, full](const std::string& v) { ref = to_double(full, v); }};
  } else {
    return {s, k, [&ref] { return std::to_string(ref); },
            [&ref, full](const std::string& v) { ref = static_cast<T>(to_uint(full, v)); }};
  }
}

Field flag(const std::string& s, const std::string& k, bool& ref) {
  std::string full = s + "." + k;
  return {s, k, [&ref] { return std::string(ref ? "true" : "false"); },
          [&ref, full](const std::string& v) { ref = to_bool(full, v); }};
}

Field text(const std::string& s, const std::string& k, std::string& ref) {
  return {s, k, [&ref] { return ref; }, [&ref](const std::string& v) { ref = v; }};
}

const std::vector<std::string>& section_order() {
  static const std::vector<std::string> order = {"model", "patch", "pretrain", "finetune",
                                                 "distill", "data", "run"};
  return order;
}

// Field table bound to `c`; rebuilt on demand since it holds references.
std::vector<Field> fields(RunConfig& c) {
  TokenizerConfig& m = c.model;
  std::vector<Field> f = {
      num("model", "dim", m.dim),
      num("model", "heads", m.heads),
      num("model", "encoder_layers", m.encoder_layers),
      num("model", "decoder_layers", m.decoder_layers),
      num("model", "codebook_size", m.codebook_size),
      num("model", "codebook_decay", m.codebook_decay),
      num("model", "mask_ratio", m.mask_ratio),
      num("model", "commitment_weight", m.commitment_weight),
      {"model", "commitment_direction",
       [&m] {
         return std::string(m.commitment_direction == CommitmentDirection::kEncoder ? "encoder" : "code");
       },
       [&m](const std::string& v) {
         if (v == "encoder") m.commitment_direction = CommitmentDirection::kEncoder;
         else if (v == "code") m.commitment_direction = CommitmentDirection::kCode;
         else throw ValidationError("config: model.commitment_direction must be encoder or code, got '" + v + "'");
       }},
      num("model", "decoder_neighbors", m.decoder_neighbors),
      num("model", "environment_size", m.environment_size),
      num("model", "query_count", m.query_count),
      num("model", "density_scale", m.density_scale),
      num("model", "interaction_cutoff", m.interaction_cutoff),
      flag("model", "structure_all_pairs", m.structure_all_pairs),
      flag("model", "mask_positions", m.mask_positions),
      num("patch", "k", m.patch.k),
      num("patch", "k_max", m.patch.k_max),
      num("patch", "gamma", m.patch.gamma),
      num("patch", "retain_ratio", m.patch.retain_ratio),
      {"patch", "sign",
       [&m] { return std::string(m.patch.sign == SampleSign::kNegative ? "negative" : "positive"); },
       [&m](const std::string& v) {
         if (v == "negative") m.patch.sign = SampleSign::kNegative;
         else if (v == "positive") m.patch.sign = SampleSign::kPositive;
         else throw ValidationError("config: patch.sign must be negative or positive, got '" + v + "'");
       }},
      num("pretrain", "lr", c.pretrain.lr),
      num("pretrain", "epochs", c.pretrain.epochs),
      num("pretrain", "max_steps", c.pretrain.max_steps),
      flag("pretrain", "revive", c.pretrain.revive),
      num("pretrain", "dead_threshold", c.pretrain.dead_threshold),
      num("pretrain", "probe_size", c.pretrain.probe_size),
      num("pretrain", "seed", c.pretrain.seed),
      text("finetune", "task", c.finetune.task),
      num("finetune", "lr", c.finetune.lr),
      num("finetune", "epochs", c.finetune.epochs),
      num("finetune", "max_steps", c.finetune.max_steps),
      num("finetune", "batch_size", c.finetune.batch_size),
      num("finetune", "fusion_hidden", c.finetune.fusion_hidden),
      num("finetune", "head_layers", c.finetune.head_layers),
      text("finetune", "pooling", c.finetune.pooling),
      flag("finetune", "unfreeze_tokenizers", c.finetune.unfreeze_tokenizers),
      text("finetune", "lep_threshold", c.finetune.lep_threshold),
      num("finetune", "seed", c.finetune.seed),
      num("distill", "lr", c.distill.lr),
      num("distill", "epochs", c.distill.epochs),
      num("distill", "max_steps", c.distill.max_steps),
      num("distill", "batch_size", c.distill.batch_size),
      num("distill", "task_weight", c.distill.task_weight),
      num("distill", "surrogate_hidden", c.distill.surrogate_hidden),
      flag("distill", "train_tokenizer", c.distill.train_tokenizer),
      flag("distill", "train_fusion_head", c.distill.train_fusion_head),
      flag("distill", "task_reaches_surrogates", c.distill.task_reaches_surrogates),
      num("distill", "seed", c.distill.seed),
      text("data", "dir", c.data.dir),
      num("data", "complexes", c.data.complexes),
      num("data", "ligands_per_protein", c.data.ligands_per_protein),
      num("data", "atoms_min", c.data.atoms_min),
      num("data", "atoms_max", c.data.atoms_max),
      num("data", "valid_fraction", c.data.valid_fraction),
      num("data", "test_fraction", c.data.test_fraction),
      num("data", "grid_spacing", c.data.grid_spacing),
      num("data", "seed", c.data.seed),
      num("run", "seed", c.run.seed),
      {"run", "checkpoint_precision", [&c] { return std::to_string(c.run.checkpoint_precision); },
       [&c](const std::string& v) {
         if (v != "32" && v != "64") {
           throw ValidationError("config: run.checkpoint_precision must be 32 or 64, got '" + v + "'");
         }
         c.run.checkpoint_precision = std::stoi(v);
       }},
  };
  return f;
}

std::map<std::string, std::string> flat(const RunConfig& c) {
  RunConfig copy = c;
  std::map<std::string, std::string> out;
  for (const Field& f : fields(copy)) out[f.section + "." + f.key] = f.get();
  return out;
}

std::vector<std::string> diff_where(const RunConfig& a, const RunConfig& b,
                                    const std::function<bool(const std::string&)>& keep) {
  auto fa = flat(a), fb = flat(b);
  std::vector<std::string> out;
  for (const auto& [k, v] : fa) {
    if (keep(k) && fb.at(k) != v) out.push_back(k);
  }
  return out;
}

bool is_model_key(const std::string& k) { return k.rfind("model.", 0) == 0 || k.rfind("patch.", 0) == 0; }

}  // namespace

std::uint64_t fnv1a(std::string_view bytes) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char b : bytes) {
    h ^= b;
    h *= 1099511628211ull;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  std::ostringstream s;
  s << std::hex << std::setw(16) << std::setfill('0') << v;
  return s.str();
}

RunConfig RunConfig::parse(std::string_view text) {
  RunConfig c;
  std::vector<Field> table = fields(c);
  std::string section;
  std::size_t line_no = 0;
  std::istringstream in{std::string(text)};
  std::string raw;
  while (std::getline(in, raw)) {
    ++line_no;
    std::string line = trim(raw.substr(0, raw.find('#')));
    if (line.empty()) continue;
    std::string where = "config line " + std::to_string(line_no) + ": ";
    if (line.front() == '[') {
      if (line.back() != ']') throw ValidationError(where + "unterminated section header");
      section = trim(std::string_view(line).substr(1, line.size() - 2));
      auto& order = section_order();
      if (std::find(order.begin(), order.end(), section) == order.end()) {
        throw ValidationError(where + "unknown section [" + section + "]");
      }
      continue;
    }
    std::size_t eq = line.find('=');
    if (eq == std::string::npos) throw ValidationError(where + "expected key = value");
    if (section.empty()) throw ValidationError(where + "key outside of a section");
    std::string key = trim(std::string_view(line).substr(0, eq));
    std::string value = trim(std::string_view(line).substr(eq + 1));
    auto it = std::find_if(table.begin(), table.end(),
                           [&](const Field& f) { return f.section == section && f.key == key; });
    if (it == table.end()) throw ValidationError(where + "unknown key " + section + "." + key);
    try {
      it->set(value);
    } catch (const ValidationError& e) {
      throw ValidationError(where + e.what());
    }
  }
  c.validate();
  return c;
}

RunConfig RunConfig::load(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ValidationError("config: cannot open " + path);
  std::stringstream s;
  s << f.rdbuf();
  return parse(s.str());
}

std::string RunConfig::canonical() const {
  RunConfig copy = *this;
  std::vector<Field> table = fields(copy);
  std::ostringstream out;
  for (const std::string& section : section_order()) {
    std::vector<std::pair<std::string, std::string>> kv;
    for (const Field& f : table) {
      if (f.section == section) kv.push_back({f.key, f.get()});
    }
    std::sort(kv.begin(), kv.end());
    out << "[" << section << "]\n";
    for (const auto& [k, v] : kv) out << k << " = " << v << "\n";
  }
  return out.str();
}

std::uint64_t RunConfig::hash() const { return fnv1a(canonical()); }

std::uint64_t RunConfig::model_hash() const {
  std::string s;
  for (const auto& [k, v] : flat(*this)) {
    if (is_model_key(k)) s += k + "=" + v + "\n";
  }
  return fnv1a(s);
}

void RunConfig::validate() const {
  const TokenizerConfig& m = model;
  auto fail = [](const std::string& m) { throw ValidationError("config: " + m); };
  if (m.dim < 2 || m.dim % 2 != 0) fail("model.dim must be even and >= 2");
  if (m.heads == 0 || m.dim % m.heads != 0) fail("model.heads must divide model.dim");
  if ((m.dim / 2) % m.heads != 0) fail("model.heads must divide model.dim / 2");
  if (m.codebook_size == 0) fail("model.codebook_size must be positive");
  if (m.codebook_decay <= 0.0 || m.codebook_decay > 1.0) fail("model.codebook_decay must be in (0, 1]");
  if (m.mask_ratio < 0.0 || m.mask_ratio >= 1.0) fail("model.mask_ratio must be in [0, 1)");
  if (m.decoder_neighbors == 0) fail("model.decoder_neighbors must be positive");
  if (m.patch.k == 0 || m.patch.k > m.patch.k_max) fail("patch.k must be in [1, patch.k_max]");
  if (m.patch.retain_ratio <= 0.0 || m.patch.retain_ratio > 1.0) fail("patch.retain_ratio must be in (0, 1]");
  if (m.patch.gamma <= 0.0) fail("patch.gamma must be positive");
  if (finetune.task != "lba" && finetune.task != "relative" && finetune.task != "lep") {
    fail("finetune.task must be lba, relative or lep, got '" + finetune.task + "'");
  }
  if (finetune.pooling != "mean" && finetune.pooling != "sum") {
    fail("finetune.pooling must be mean or sum, got '" + finetune.pooling + "'");
  }
  if (finetune.lep_threshold != "median") to_double("finetune.lep_threshold", finetune.lep_threshold);
  if (finetune.batch_size == 0 || distill.batch_size == 0) fail("batch_size must be positive");
  if (data.atoms_min == 0 || data.atoms_min > data.atoms_max) fail("data.atoms_min must be in [1, data.atoms_max]");
  if (data.valid_fraction < 0 || data.test_fraction < 0 || data.valid_fraction + data.test_fraction >= 1.0) {
    fail("data.valid_fraction + data.test_fraction must be < 1");
  }
  if (data.grid_spacing <= 0) fail("data.grid_spacing must be positive");
}

std::vector<std::string> config_diff(const RunConfig& a, const RunConfig& b) {
  return diff_where(a, b, [](const std::string&) { return true; });
}

std::vector<std::string> model_diff(const RunConfig& a, const RunConfig& b) {
  return diff_where(a, b, is_model_key);
}

RunConfig tiny_config() {
  RunConfig c;
  c.model.dim = 32;
  c.model.heads = 4;
  c.model.encoder_layers = 2;
  c.model.decoder_layers = 2;
  c.model.codebook_size = 64;
  c.model.patch.k = 8;
  c.model.patch.k_max = 16;
  c.pretrain.lr = 2e-3;
  c.finetune.lr = 1e-3;
  c.distill.lr = 1e-3;
  return c;
}

}  // namespace ectoken
