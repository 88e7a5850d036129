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

#include "ectoken/pipeline.h"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

#include "ectoken/error.h"

namespace ectoken {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

constexpr const char* kDatasetFormat = "ectoken-dataset";
constexpr int kDatasetVersion = 1;

void say(const Logger& log, const std::string& m) {
  if (log) log(m);
}

std::string exact(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

double parse_exact(const std::string& s) {
  double v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) throw ValidationError("checkpoint: bad number '" + s + "'");
  return v;
}

std::string read_text(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw ValidationError("cannot open " + p.string());
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw ValidationError("cannot write " + p.string());
  out << text;
  if (!out) throw ValidationError("write failed for " + p.string());
}

Pooling parse_pooling(const std::string& s) { return s == "sum" ? Pooling::kSum : Pooling::kMean; }

std::vector<std::size_t> shuffled(std::size_t n, Rng& rng) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng.engine());
  return order;
}

void require_finite(double v, const std::string& where) {
  if (!std::isfinite(v)) throw NumericalError(where + ": non-finite loss");
}

std::size_t count_blobs(const Module& m) { return m.named_parameters().size(); }

void require_blob_count(const Checkpoint& c, std::size_t expected, const std::string& path) {
  if (c.blobs.size() != expected) {
    throw ValidationError("checkpoint " + path + ": " + std::to_string(c.blobs.size()) +
                          " blobs, model expects " + std::to_string(expected));
  }
}

constexpr std::size_t kBookBlobs = 4;

}  // namespace

// ---------------------------------------------------------------- datasets

Dataset Dataset::load(const std::string& dir) {
  fs::path root(dir);
  json manifest;
  try {
    manifest = json::parse(read_text(root / "manifest.json"));
  } catch (const json::exception& e) {
    throw ValidationError("dataset " + dir + ": bad manifest.json: " + e.what());
  }
  if (manifest.value("format", "") != kDatasetFormat || manifest.value("version", 0) != kDatasetVersion) {
    throw ValidationError("dataset " + dir + ": unsupported manifest format");
  }
  Dataset d;
  d.dir = dir;
  d.train = load_complexes((root / "train.jsonl").string());
  d.valid = load_complexes((root / "valid.jsonl").string());
  d.test = load_complexes((root / "test.jsonl").string());
  return d;
}

const std::vector<BindingComplex>& Dataset::split(const std::string& name) const {
  if (name == "train") return train;
  if (name == "valid") return valid;
  if (name == "test") return test;
  throw ValidationError("unknown split '" + name + "' (expected train, valid or test)");
}

const DensityPoints& Dataset::cloud(const std::string& id) const {
  auto it = clouds_.find(id);
  if (it != clouds_.end()) return it->second;
  fs::path p = fs::path(dir) / "grids" / (id + ".ecg");
  if (!fs::exists(p)) throw ValidationError("dataset: missing grid " + p.string());
  return clouds_.emplace(id, read_grid(p.string()).points()).first->second;
}

GeneratedCounts generate_dataset(const DataSettings& s, const std::string& dir) {
  SynthOptions o;
  o.complexes = s.complexes;
  o.ligands_per_protein = s.ligands_per_protein;
  o.atoms_min = s.atoms_min;
  o.atoms_max = s.atoms_max;
  o.seed = s.seed;
  std::vector<BindingComplex> all = generate_complexes(o);
  SplitSets sets = split_by_protein(all, s.valid_fraction, s.test_fraction, s.seed);

  fs::path root(dir);
  std::error_code ec;
  fs::create_directories(root / "grids", ec);
  if (ec) throw ValidationError("cannot create " + (root / "grids").string() + ": " + ec.message());

  save_complexes((root / "train.jsonl").string(), sets.train);
  save_complexes((root / "valid.jsonl").string(), sets.valid);
  save_complexes((root / "test.jsonl").string(), sets.test);

  GeneratedCounts n{sets.train.size(), sets.valid.size(), sets.test.size(), 0, 0};
  std::ostringstream pairs;
  pairs << "split,first,second,difference\n";
  for (const char* name : {"train", "valid", "test"}) {
    const auto& cs = std::string(name) == "train" ? sets.train : std::string(name) == "valid" ? sets.valid : sets.test;
    for (const BindingComplex& c : cs) {
      write_grid((root / "grids" / (c.id + ".ecg")).string(), synth_density(c, s.grid_spacing));
      ++n.grids;
    }
    for (const RelativePair& p : relative_pairs(cs)) {
      pairs << name << "," << p.first << "," << p.second << "," << exact(p.difference) << "\n";
      ++n.pairs;
    }
  }
  write_text(root / "pairs.csv", pairs.str());

  json m;
  m["format"] = kDatasetFormat;
  m["version"] = kDatasetVersion;
  m["seed"] = s.seed;
  m["complexes"] = all.size();
  m["splits"] = {{"train", n.train}, {"valid", n.valid}, {"test", n.test}};
  m["pairs"] = n.pairs;
  m["grid_spacing"] = s.grid_spacing;
  m["atoms"] = {{"min", s.atoms_min}, {"max", s.atoms_max}};
  m["ligands_per_protein"] = s.ligands_per_protein;
  m["label_model"] = {{"offset", o.label_offset}, {"slope", o.label_slope}, {"noise", o.label_noise},
                      {"contact_cutoff", o.contact_cutoff}};
  m["pocket_cutoff"] = o.pocket_cutoff;
  write_text(root / "manifest.json", m.dump(2) + "\n");
  return n;
}

// ---------------------------------------------------------------- checkpoints

std::uint64_t model_seed(const RunConfig& cfg, const char* role) {
  return derive_seed(cfg.run.seed, fnv1a(role));
}

Checkpoint new_checkpoint(const RunConfig& cfg, const std::string& kind) {
  Checkpoint c;
  c.config_hash = cfg.hash();
  c.seed = cfg.run.seed;
  c.config_text = cfg.canonical();
  c.precision = cfg.run.checkpoint_precision;
  c.metadata["kind"] = kind;
  c.metadata["model_hash"] = hex64(cfg.model_hash());
  return c;
}

RunConfig checkpoint_config(const Checkpoint& c, const std::string& kind) {
  if (c.meta("kind") != kind) {
    throw ValidationError("checkpoint holds a '" + c.meta("kind") + "' model, expected '" + kind + "'");
  }
  RunConfig cfg = RunConfig::parse(c.config_text);
  if (cfg.hash() != c.config_hash) throw ValidationError("checkpoint: stored config does not match its hash");
  return cfg;
}

void require_compatible(const RunConfig& stored, const RunConfig& given, const std::string& what) {
  std::vector<std::string> d = model_diff(stored, given);
  if (d.empty()) return;
  std::string list;
  for (const std::string& f : d) list += (list.empty() ? "" : ", ") + f;
  throw ValidationError(what + ": config hash mismatch (" + hex64(stored.model_hash()) + " vs " +
                        hex64(given.model_hash()) + "); differing fields: " + list);
}

std::string checkpoint_kind(const std::string& path) { return Checkpoint::load(path).meta("kind"); }

void save_ec(const ECTokenizer& t, const RunConfig& cfg, const std::string& path) {
  Checkpoint c = new_checkpoint(cfg, "ec");
  c.add_module(t, "ec.");
  c.add_codebook(t.book1, "ec.book1.");
  c.add_codebook(t.book2, "ec.book2.");
  c.save(path);
}

void save_fa(const FATokenizer& t, const RunConfig& cfg, const std::string& path) {
  Checkpoint c = new_checkpoint(cfg, "fa");
  c.add_module(t, "fa.");
  c.add_codebook(t.book1, "fa.book1.");
  c.add_codebook(t.book2, "fa.book2.");
  c.save(path);
}

namespace {

void add_task_metadata(Checkpoint& c, TaskKind task, const TaskHead& head, double threshold) {
  c.metadata["task"] = task_name(task);
  c.metadata["label_offset"] = exact(head.label_offset);
  c.metadata["label_scale"] = exact(head.label_scale);
  c.metadata["label_threshold"] = exact(threshold);
}

void read_task_metadata(const Checkpoint& c, TaskHead& head, double& threshold) {
  head.label_offset = parse_exact(c.meta("label_offset"));
  head.label_scale = parse_exact(c.meta("label_scale"));
  threshold = parse_exact(c.meta("label_threshold"));
}

RunConfig with_task(RunConfig cfg, const Checkpoint& c) {
  cfg.finetune.task = c.meta("task");
  return cfg;
}

}  // namespace

void save_teacher(const TeacherModel& m, const RunConfig& cfg, const std::string& path) {
  RunConfig stamped = cfg;
  stamped.finetune.task = task_name(m.task);
  Checkpoint c = new_checkpoint(stamped, "teacher");
  c.add_module(m, "");
  c.add_codebook(m.ec.book1, "ec.book1.");
  c.add_codebook(m.ec.book2, "ec.book2.");
  c.add_codebook(m.fa.book1, "fa.book1.");
  c.add_codebook(m.fa.book2, "fa.book2.");
  add_task_metadata(c, m.task, m.head, m.label_threshold);
  c.save(path);
}

void save_student(const StudentModel& m, const RunConfig& cfg, const std::string& path) {
  RunConfig stamped = cfg;
  stamped.finetune.task = task_name(m.task);
  Checkpoint c = new_checkpoint(stamped, "student");
  c.add_module(m, "");
  c.add_codebook(m.fa.book1, "fa.book1.");
  c.add_codebook(m.fa.book2, "fa.book2.");
  add_task_metadata(c, m.task, m.head, m.label_threshold);
  c.save(path);
}

ECTokenizer load_ec(const std::string& path, RunConfig* out) {
  Checkpoint c = Checkpoint::load(path);
  RunConfig cfg = checkpoint_config(c, "ec");
  Rng rng(0);
  ECTokenizer t(cfg.model, rng);
  require_blob_count(c, count_blobs(t) + 2 * kBookBlobs, path);
  c.load_module(t, "ec.");
  c.load_codebook(t.book1, "ec.book1.");
  c.load_codebook(t.book2, "ec.book2.");
  if (out) *out = cfg;
  return t;
}

FATokenizer load_fa(const std::string& path, RunConfig* out) {
  Checkpoint c = Checkpoint::load(path);
  RunConfig cfg = checkpoint_config(c, "fa");
  Rng rng(0);
  FATokenizer t(cfg.model, rng);
  require_blob_count(c, count_blobs(t) + 2 * kBookBlobs, path);
  c.load_module(t, "fa.");
  c.load_codebook(t.book1, "fa.book1.");
  c.load_codebook(t.book2, "fa.book2.");
  if (out) *out = cfg;
  return t;
}

TeacherModel make_teacher(const RunConfig& cfg, ECTokenizer ec, FATokenizer fa) {
  Rng rng(model_seed(cfg, "teacher-head"));
  std::size_t hidden = cfg.finetune.fusion_hidden ? cfg.finetune.fusion_hidden : cfg.model.dim;
  return TeacherModel(std::move(ec), std::move(fa), parse_task(cfg.finetune.task), hidden,
                      cfg.finetune.head_layers, parse_pooling(cfg.finetune.pooling), rng);
}

namespace {

StudentModel make_student(const RunConfig& cfg, const TeacherModel& t) {
  Rng rng(model_seed(cfg, "student"));
  std::size_t hidden = cfg.distill.surrogate_hidden ? cfg.distill.surrogate_hidden : cfg.model.dim;
  return StudentModel(t, hidden, rng);
}

TeacherModel teacher_skeleton(const RunConfig& cfg) {
  Rng rng(0);
  return make_teacher(cfg, ECTokenizer(cfg.model, rng), FATokenizer(cfg.model, rng));
}

}  // namespace

TeacherModel load_teacher(const std::string& path, RunConfig* out) {
  Checkpoint c = Checkpoint::load(path);
  RunConfig cfg = with_task(checkpoint_config(c, "teacher"), c);
  TeacherModel m = teacher_skeleton(cfg);
  require_blob_count(c, count_blobs(m) + 4 * kBookBlobs, path);
  c.load_module(m, "");
  c.load_codebook(m.ec.book1, "ec.book1.");
  c.load_codebook(m.ec.book2, "ec.book2.");
  c.load_codebook(m.fa.book1, "fa.book1.");
  c.load_codebook(m.fa.book2, "fa.book2.");
  read_task_metadata(c, m.head, m.label_threshold);
  if (out) *out = cfg;
  return m;
}

StudentModel load_student(const std::string& path, RunConfig* out) {
  Checkpoint c = Checkpoint::load(path);
  RunConfig cfg = with_task(checkpoint_config(c, "student"), c);
  StudentModel m = make_student(cfg, teacher_skeleton(cfg));
  require_blob_count(c, count_blobs(m) + 2 * kBookBlobs, path);
  c.load_module(m, "");
  c.load_codebook(m.fa.book1, "fa.book1.");
  c.load_codebook(m.fa.book2, "fa.book2.");
  read_task_metadata(c, m.head, m.label_threshold);
  if (out) *out = cfg;
  return m;
}

// ---------------------------------------------------------------- pretraining

std::size_t effective_epochs(std::size_t epochs, std::size_t max_steps, std::size_t n) {
  if (max_steps == 0 || n == 0) return epochs;
  return std::min(epochs, (max_steps + n - 1) / n);
}

namespace {

struct Accumulator {
  double rec = 0, atom = 0, inter = 0, c1 = 0, c2 = 0;
  std::size_t n = 0;
  void add(const LossTerms& t) {
    rec += t.reconstruction;
    atom += t.atom;
    inter += t.interaction;
    c1 += t.commitment1;
    c2 += t.commitment2;
    ++n;
  }
  void fill(EpochRow& r) const {
    double k = n ? 1.0 / n : 0.0;
    r.reconstruction = rec * k;
    r.atom = atom * k;
    r.interaction = inter * k;
    r.commitment1 = c1 * k;
    r.commitment2 = c2 * k;
  }
};

void end_of_epoch(std::vector<Codebook*> books, const PretrainSettings& s, Rng& rng, EpochRow& row,
                  const Logger& log) {
  row.perplexity1 = books[0]->perplexity();
  row.perplexity2 = books[1]->perplexity();
  row.dead1 = books[0]->dead_count(s.dead_threshold);
  row.dead2 = books[1]->dead_count(s.dead_threshold);
  for (Codebook* b : books) {
    if (s.revive) {
      RevivalReport r = kmeans_revive(*b, s.dead_threshold, rng);
      if (!r.revived.empty()) {
        say(log, "  " + b->name + ": revived " + std::to_string(r.revived.size()) + " of " +
                     std::to_string(r.dead) + " dead codes");
      }
    } else {
      b->reset_usage();
    }
  }
}

std::string row_log(const EpochRow& r, bool fa) {
  std::ostringstream s;
  s.precision(4);
  s << "epoch " << r.epoch << ": " << (fa ? "L_st " : "L_ec ") << r.reconstruction << "  L_at " << r.atom;
  if (fa) s << "  L_it " << r.interaction;
  s << "  cmt " << r.commitment1 << "/" << r.commitment2 << "  ppl " << r.perplexity1 << "/"
    << r.perplexity2 << "  probe " << r.probe_reconstruction << " acc " << r.probe_accuracy;
  return s.str();
}

template <class Tok, class Step, class Probe, class Save>
PretrainResult pretrain_loop(const RunConfig& cfg, const Dataset& data, Tok& tok, bool full_atom,
                             Rng& rng, Step step, Probe probe, Save save, const std::string& out,
                             const Logger& log) {
  const auto& train = data.train;
  if (train.empty()) throw ValidationError("pretrain: training split is empty");
  const PretrainSettings& s = cfg.pretrain;
  Adam opt(tok.parameters(), {.lr = s.lr});
  PretrainResult res;
  auto [p0, a0] = probe();
  res.probe_start = p0;
  res.probe_accuracy_start = a0;
  std::size_t epochs = effective_epochs(s.epochs, s.max_steps, train.size());
  for (std::size_t e = 1; e <= epochs; ++e) {
    Accumulator acc;
    for (std::size_t i : shuffled(train.size(), rng)) {
      if (s.max_steps && res.steps >= s.max_steps) break;
      LossTerms t;
      try {
        t = step(opt, train[i]);
      } catch (const NumericalError&) {
        if (!out.empty()) {
          save(out + ".failed");
          say(log, "non-finite loss; partial model written to " + out + ".failed");
        }
        throw;
      }
      if (res.steps == 0) res.first_step_reconstruction = t.reconstruction;
      ++res.steps;
      acc.add(t);
    }
    EpochRow row;
    row.epoch = e;
    acc.fill(row);
    end_of_epoch(tok.books(), s, rng, row, log);
    std::tie(row.probe_reconstruction, row.probe_accuracy) = probe();
    say(log, row_log(row, full_atom));
    res.epochs.push_back(row);
  }
  res.probe_end = res.epochs.empty() ? res.probe_start : res.epochs.back().probe_reconstruction;
  res.probe_accuracy_end = res.epochs.empty() ? res.probe_accuracy_start : res.epochs.back().probe_accuracy;
  if (!out.empty()) save(out);
  return res;
}

const std::vector<BindingComplex>& probe_source(const Dataset& d) {
  return d.valid.empty() ? d.train : d.valid;
}

}  // namespace

PretrainResult pretrain_ec(const RunConfig& cfg, const Dataset& data, ECTokenizer& tok,
                           const std::string& out, const Logger& log) {
  Rng rng(derive_seed(cfg.pretrain.seed, fnv1a("pretrain-ec")));
  Rng probe_rng(derive_seed(cfg.pretrain.seed, fnv1a("probe-ec")));
  const auto& src = probe_source(data);
  std::size_t P = std::min(cfg.pretrain.probe_size, src.size());
  std::vector<ECSample> samples;
  for (std::size_t i = 0; i < P; ++i) samples.push_back(make_ec_sample(src[i], data.cloud(src[i].id), cfg.model, probe_rng));
  auto probe = [&]() -> std::pair<double, double> {
    if (P == 0) return {0.0, 0.0};
    NoGradGuard g;
    double rec = 0;
    std::size_t hit = 0, total = 0;
    for (std::size_t i = 0; i < P; ++i) {
      LossTerms t = tok.losses(src[i], samples[i].patches, data.cloud(src[i].id), samples[i].queries, samples[i].mask);
      rec += t.reconstruction;
      hit += t.masked_correct;
      total += t.masked_total;
    }
    return {rec / P, total ? static_cast<double>(hit) / total : 0.0};
  };
  auto step = [&](Adam& opt, const BindingComplex& c) {
    const DensityPoints& cloud = data.cloud(c.id);
    return ec_pretrain_step(tok, opt, c, cloud, make_ec_sample(c, cloud, cfg.model, rng));
  };
  auto save = [&](const std::string& path) { save_ec(tok, cfg, path); };
  return pretrain_loop(cfg, data, tok, false, rng, step, probe, save, out, log);
}

PretrainResult pretrain_fa(const RunConfig& cfg, const Dataset& data, FATokenizer& tok,
                           const std::string& out, const Logger& log) {
  Rng rng(derive_seed(cfg.pretrain.seed, fnv1a("pretrain-fa")));
  Rng probe_rng(derive_seed(cfg.pretrain.seed, fnv1a("probe-fa")));
  const auto& src = probe_source(data);
  std::size_t P = std::min(cfg.pretrain.probe_size, src.size());
  std::vector<MaskPlan> masks;
  for (std::size_t i = 0; i < P; ++i) masks.push_back(make_mask_plan(src[i].size(), cfg.model.mask_ratio, probe_rng));
  auto probe = [&]() -> std::pair<double, double> {
    if (P == 0) return {0.0, 0.0};
    NoGradGuard g;
    double rec = 0;
    std::size_t hit = 0, total = 0;
    for (std::size_t i = 0; i < P; ++i) {
      LossTerms t = tok.losses(src[i], masks[i]);
      rec += t.reconstruction;
      hit += t.masked_correct;
      total += t.masked_total;
    }
    return {rec / P, total ? static_cast<double>(hit) / total : 0.0};
  };
  auto step = [&](Adam& opt, const BindingComplex& c) {
    return fa_pretrain_step(tok, opt, c, make_mask_plan(c.size(), cfg.model.mask_ratio, rng));
  };
  auto save = [&](const std::string& path) { save_fa(tok, cfg, path); };
  return pretrain_loop(cfg, data, tok, true, rng, step, probe, save, out, log);
}

void write_epoch_csv(const std::string& path, const std::vector<EpochRow>& rows, bool full_atom) {
  std::ostringstream s;
  s << "epoch," << (full_atom ? "loss_st" : "loss_ec")
    << ",loss_at,loss_it,loss_cmt1,loss_cmt2,perplexity1,perplexity2,dead1,dead2,probe_rec,probe_masked_acc\n";
  for (const EpochRow& r : rows) {
    s << r.epoch << "," << exact(r.reconstruction) << "," << exact(r.atom) << "," << exact(r.interaction)
      << "," << exact(r.commitment1) << "," << exact(r.commitment2) << "," << exact(r.perplexity1) << ","
      << exact(r.perplexity2) << "," << r.dead1 << "," << r.dead2 << "," << exact(r.probe_reconstruction)
      << "," << exact(r.probe_accuracy) << "\n";
  }
  write_text(path, s.str());
}

// ---------------------------------------------------------------- downstream

double lep_threshold(const FinetuneSettings& s, const std::vector<BindingComplex>& train) {
  if (s.lep_threshold != "median") return parse_exact(s.lep_threshold);
  std::vector<double> y;
  for (const BindingComplex& c : train) {
    if (c.label) y.push_back(*c.label);
  }
  if (y.empty()) throw ValidationError("lep: no labeled training complexes");
  std::sort(y.begin(), y.end());
  std::size_t n = y.size();
  return n % 2 ? y[n / 2] : 0.5 * (y[n / 2 - 1] + y[n / 2]);
}

namespace {

void require_labels(const std::vector<BindingComplex>& cs, TaskKind task, const std::string& split) {
  for (const BindingComplex& c : cs) {
    if (!c.label) {
      throw ValidationError(task_name(task) + " task needs labels, but complex '" + c.id + "' in " +
                            split + " has none");
    }
  }
}

struct IndexedPair {
  std::size_t first, second;
  double difference;
};

std::vector<IndexedPair> index_pairs(const std::vector<BindingComplex>& cs) {
  std::map<std::string, std::size_t> at;
  for (std::size_t i = 0; i < cs.size(); ++i) at[cs[i].id] = i;
  std::vector<IndexedPair> out;
  for (const RelativePair& p : relative_pairs(cs)) out.push_back({at.at(p.first), at.at(p.second), p.difference});
  return out;
}

double binarize(double y, double threshold) { return y > threshold ? 1.0 : 0.0; }

// Scores g(complex) for a whole split, plus the shared reporting.
EvalReport report_from_scores(TaskKind task, double threshold, const std::vector<BindingComplex>& cs,
                              const std::vector<double>& g, const RunConfig& cfg) {
  EvalReport r;
  if (task == TaskKind::kLep) {
    std::vector<int> labels;
    std::vector<double> p;
    for (std::size_t i = 0; i < cs.size(); ++i) {
      labels.push_back(static_cast<int>(binarize(*cs[i].label, threshold)));
      p.push_back(1.0 / (1.0 + std::exp(-g[i])));
    }
    r = classification_report(labels, p);
  } else {
    std::vector<GroupRecord> abs, rel;
    for (std::size_t i = 0; i < cs.size(); ++i) abs.push_back({cs[i].protein, *cs[i].label, g[i]});
    std::vector<int> sign;
    std::vector<double> pred;
    for (const IndexedPair& p : index_pairs(cs)) {
      double d = g[p.first] - g[p.second];
      rel.push_back({cs[p.first].protein, p.difference, d});
      if (p.difference != 0.0) {
        sign.push_back(p.difference > 0);
        pred.push_back(d);
      }
    }
    r = regression_report(task == TaskKind::kLba ? abs : rel);
    r.auroc = auroc(sign, pred);
    r.auprc = auprc(sign, pred);
    r.count = task == TaskKind::kLba ? abs.size() : rel.size();
  }
  r.task = task_name(task);
  r.config_hash = cfg.hash();
  r.seed = cfg.run.seed;
  return r;
}

template <class Fuse>
EvalReport evaluate_with(TaskKind task, double threshold, const TaskHead& head, Fuse fuse,
                         const std::vector<BindingComplex>& cs, const RunConfig& cfg, const std::string& split) {
  if (cs.empty()) throw ValidationError("evaluate: split '" + split + "' is empty");
  require_labels(cs, task, split);
  NoGradGuard g;
  std::vector<double> scores;
  for (const BindingComplex& c : cs) scores.push_back(head.score(fuse(c).fused).item());
  return report_from_scores(task, threshold, cs, scores, cfg);
}

}  // namespace

EvalReport evaluate(const TeacherModel& m, const Dataset& data, const std::string& split, const RunConfig& cfg) {
  auto fuse = [&](const BindingComplex& c) { return m.fuse(c, data.cloud(c.id)); };
  return evaluate_with(m.task, m.label_threshold, m.head, fuse, data.split(split), cfg, split);
}

EvalReport evaluate(const StudentModel& m, const Dataset& data, const std::string& split, const RunConfig& cfg) {
  auto fuse = [&](const BindingComplex& c) { return m.fuse(c); };
  return evaluate_with(m.task, m.label_threshold, m.head, fuse, data.split(split), cfg, split);
}

FinetuneResult finetune(const RunConfig& cfg, const Dataset& data, TeacherModel& t, const Logger& log) {
  const FinetuneSettings& s = cfg.finetune;
  const auto& train = data.train;
  if (train.empty()) throw ValidationError("finetune: training split is empty");
  require_labels(train, t.task, "train");

  std::vector<double> y;
  for (const BindingComplex& c : train) y.push_back(*c.label);
  double mean = std::accumulate(y.begin(), y.end(), 0.0) / y.size();
  double var = 0;
  for (double v : y) var += (v - mean) * (v - mean);
  double sd = std::max(std::sqrt(var / y.size()), 1e-6);
  if (t.task == TaskKind::kLep) {
    t.label_threshold = lep_threshold(s, train);
    t.head.label_offset = 0.0;
    t.head.label_scale = 1.0;
  } else {
    t.head.label_offset = t.task == TaskKind::kLba ? mean : 0.0;
    t.head.label_scale = sd;
  }

  std::vector<IndexedPair> pairs;
  if (t.task == TaskKind::kRelative) {
    pairs = index_pairs(train);
    if (pairs.empty()) throw ValidationError("relative task: no same-protein pairs in the training split");
  }

  std::vector<Tensor> params = t.finetune_parameters(s.unfreeze_tokenizers);
  Adam opt(params, {.lr = s.lr});
  Rng rng(derive_seed(s.seed, fnv1a("finetune")));

  // Frozen tokenizers give constant streams; compute them once.
  std::vector<Streams> cache;
  if (!s.unfreeze_tokenizers) {
    NoGradGuard g;
    for (const BindingComplex& c : train) cache.push_back(t.streams(c, data.cloud(c.id)));
  }
  auto fused = [&](std::size_t i) {
    if (!s.unfreeze_tokenizers) return t.fusion(cache[i]);
    return t.fuse(train[i], data.cloud(train[i].id));
  };
  auto item_loss = [&](std::size_t k) {
    switch (t.task) {
      case TaskKind::kLba: return task_loss(TaskKind::kLba, t.head, fused(k), *train[k].label);
      case TaskKind::kLep:
        return task_loss(TaskKind::kLep, t.head, fused(k), binarize(*train[k].label, t.label_threshold));
      case TaskKind::kRelative: {
        const IndexedPair& p = pairs[k];
        Tensor d = predict_relative(t.head, fused(p.first), fused(p.second));
        return mse(scale(d, 1.0 / t.head.label_scale), Tensor::from({1}, {p.difference / t.head.label_scale}));
      }
    }
    throw ValidationError("unknown task");
  };

  std::size_t items = t.task == TaskKind::kRelative ? pairs.size() : train.size();
  std::size_t B = s.batch_size;
  std::size_t batches = (items + B - 1) / B;
  FinetuneResult res;
  std::size_t epochs = effective_epochs(s.epochs, s.max_steps, batches);
  for (std::size_t e = 1; e <= epochs; ++e) {
    std::vector<std::size_t> order = shuffled(items, rng);
    double total = 0;
    std::size_t seen = 0;
    for (std::size_t b0 = 0; b0 < items; b0 += B) {
      if (s.max_steps && res.steps >= s.max_steps) break;
      std::size_t b1 = std::min(items, b0 + B);
      opt.zero_grad();
      Tensor loss = item_loss(order[b0]);
      for (std::size_t k = b0 + 1; k < b1; ++k) loss = add(loss, item_loss(order[k]));
      loss = scale(loss, 1.0 / (b1 - b0));
      require_finite(loss.item(), "finetune");
      loss.backward();
      opt.step();
      total += loss.item() * (b1 - b0);
      seen += b1 - b0;
      ++res.steps;
    }
    res.epoch_loss.push_back(seen ? total / seen : 0.0);
    std::ostringstream m;
    m << "epoch " << e << ": " << task_name(t.task) << " loss " << res.epoch_loss.back();
    say(log, m.str());
  }
  set_trainable(t, false);
  const char* split = data.valid.empty() ? "test" : "valid";
  if (!data.split(split).empty()) res.validation = evaluate(t, data, split, cfg);
  return res;
}

double mean_cosine(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape() || a.rank() != 2) throw ValidationError("mean_cosine: shape mismatch");
  std::size_t n = a.shape()[0], c = a.shape()[1];
  double total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    double dot = 0, na = 0, nb = 0;
    for (std::size_t k = 0; k < c; ++k) {
      double x = a.data()[i * c + k], y = b.data()[i * c + k];
      dot += x * y;
      na += x * x;
      nb += y * y;
    }
    double den = std::sqrt(na * nb);
    total += den > 0 ? dot / den : (na == nb ? 1.0 : 0.0);
  }
  return n ? total / n : 0.0;
}

DistillResult distill(const RunConfig& cfg, const Dataset& data, const TeacherModel& teacher,
                      StudentModel& student, const Logger& log) {
  if (!teacher.frozen()) throw ValidationError("distill: teacher must be frozen");
  const DistillSettings& s = cfg.distill;
  const auto& train = data.train;
  if (train.empty()) throw ValidationError("distill: training split is empty");
  bool use_labels = s.task_weight != 0.0 && teacher.task != TaskKind::kRelative;
  if (use_labels) require_labels(train, teacher.task, "train");

  std::vector<Tensor> params = student.distill_parameters(s.train_tokenizer, s.train_fusion_head);
  Adam opt(params, {.lr = s.lr});
  Rng rng(derive_seed(s.seed, fnv1a("distill")));

  std::vector<Tensor> targets;
  std::vector<StudentModel::AtomFeatures> features;
  {
    NoGradGuard g;
    for (const BindingComplex& c : train) {
      targets.push_back(teacher.fuse(c, data.cloud(c.id)).fused);
      if (!s.train_tokenizer) features.push_back(student.features(c));
    }
  }
  auto item_loss = [&](std::size_t i) {
    StudentModel::AtomFeatures f = s.train_tokenizer ? student.features(train[i]) : features[i];
    std::optional<double> label;
    if (use_labels) {
      label = teacher.task == TaskKind::kLep ? binarize(*train[i].label, teacher.label_threshold) : *train[i].label;
    }
    return distill_loss(student, f, targets[i], label, s.task_weight, s.task_reaches_surrogates).total;
  };

  DistillResult res;
  std::size_t B = s.batch_size;
  std::size_t batches = (train.size() + B - 1) / B;
  std::size_t epochs = effective_epochs(s.epochs, s.max_steps, batches);
  for (std::size_t e = 1; e <= epochs; ++e) {
    std::vector<std::size_t> order = shuffled(train.size(), rng);
    double total = 0;
    std::size_t seen = 0;
    for (std::size_t b0 = 0; b0 < order.size(); b0 += B) {
      if (s.max_steps && res.steps >= s.max_steps) break;
      std::size_t b1 = std::min(order.size(), b0 + B);
      opt.zero_grad();
      Tensor loss = item_loss(order[b0]);
      for (std::size_t k = b0 + 1; k < b1; ++k) loss = add(loss, item_loss(order[k]));
      loss = scale(loss, 1.0 / (b1 - b0));
      require_finite(loss.item(), "distill");
      loss.backward();
      opt.step();
      total += loss.item() * (b1 - b0);
      seen += b1 - b0;
      ++res.steps;
    }
    res.epoch_loss.push_back(seen ? total / seen : 0.0);
    std::ostringstream m;
    m << "epoch " << e << ": distill loss " << res.epoch_loss.back();
    say(log, m.str());
  }
  set_trainable(student, false);

  if (!data.test.empty()) {
    NoGradGuard g;
    double cos = 0;
    std::size_t atoms = 0;
    for (const BindingComplex& c : data.test) {
      cos += mean_cosine(student.fuse(c).fused, teacher.fuse(c, data.cloud(c.id)).fused) * c.size();
      atoms += c.size();
    }
    res.test_cosine = cos / atoms;
    bool labeled = std::all_of(data.test.begin(), data.test.end(), [](const BindingComplex& c) { return c.label.has_value(); });
    if (labeled) {
      res.teacher_report = evaluate(teacher, data, "test", cfg);
      res.student_report = evaluate(student, data, "test", cfg);
    }
  }
  return res;
}

std::string distill_report_json(const DistillResult& r, const RunConfig& cfg) {
  json j;
  j["config_hash"] = hex64(cfg.hash());
  j["seed"] = cfg.run.seed;
  j["steps"] = r.steps;
  j["test_mean_cosine"] = r.test_cosine;
  j["teacher"] = json::parse(r.teacher_report.to_json());
  j["student"] = json::parse(r.student_report.to_json());
  return j.dump(2) + "\n";
}

// ---------------------------------------------------------------- tokenize / timing

std::string tokenized_json_line(const TokenizedComplex& t) {
  json j;
  j["id"] = t.id;
  j["seed"] = t.seed;
  j["config_hash"] = hex64(t.config_hash);
  for (std::size_t s = 0; s < 4; ++s) j[kStreamNames[s]] = t.indices[s];
  return j.dump();
}

std::size_t tokenize_dataset(const ECTokenizer& ec, const FATokenizer& fa, const Dataset& data,
                             const RunConfig& cfg, const std::string& out_path) {
  std::ostringstream out;
  std::size_t n = 0;
  for (const auto* split : {&data.train, &data.valid, &data.test}) {
    for (const BindingComplex& c : *split) {
      TokenizedComplex t = tokenize(ec, fa, c, data.cloud(c.id));
      t.seed = cfg.run.seed;
      t.config_hash = cfg.hash();
      out << tokenized_json_line(t) << "\n";
      ++n;
    }
  }
  write_text(out_path, out.str());
  return n;
}

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

std::vector<const BindingComplex*> all_complexes(const Dataset& d) {
  std::vector<const BindingComplex*> out;
  for (const auto* split : {&d.train, &d.valid, &d.test}) {
    for (const BindingComplex& c : *split) out.push_back(&c);
  }
  return out;
}

template <class Forward>
TimingReport time_with(const Dataset& data, std::size_t repeats, bool needs_cloud, Forward forward) {
  if (repeats == 0) throw ValidationError("timing: repeats must be positive");
  std::vector<const BindingComplex*> cs = all_complexes(data);
  if (cs.empty()) throw ValidationError("timing: dataset is empty");
  TimingReport r;
  r.count = cs.size();
  r.repeats = repeats;
  if (needs_cloud) {
    double load = 0;
    for (const BindingComplex* c : cs) {
      auto t0 = Clock::now();
      data.cloud(c->id);
      load += ms_since(t0);
    }
    r.load_mean_ms = load / cs.size();
  }
  NoGradGuard g;
  std::vector<double> all;
  for (std::size_t k = 0; k < repeats; ++k) {
    double run = 0;
    for (const BindingComplex* c : cs) {
      auto t0 = Clock::now();
      forward(*c);
      double ms = ms_since(t0);
      all.push_back(ms);
      run += ms;
    }
    r.run_means_ms.push_back(run / cs.size());
  }
  r.mean_ms = std::accumulate(all.begin(), all.end(), 0.0) / all.size();
  std::vector<double> sorted = all;
  std::sort(sorted.begin(), sorted.end());
  std::size_t n = sorted.size();
  r.median_ms = n % 2 ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
  double mm = std::accumulate(r.run_means_ms.begin(), r.run_means_ms.end(), 0.0) / repeats;
  for (double v : r.run_means_ms) r.run_mean_variance += (v - mm) * (v - mm);
  r.run_mean_variance /= repeats;
  return r;
}

}  // namespace

TimingReport time_inference(const TeacherModel& m, const Dataset& data, std::size_t repeats) {
  return time_with(data, repeats, true, [&](const BindingComplex& c) {
    return m.head.score(m.fuse(c, data.cloud(c.id)).fused).item();
  });
}

TimingReport time_inference(const StudentModel& m, const Dataset& data, std::size_t repeats) {
  return time_with(data, repeats, false, [&](const BindingComplex& c) { return m.head.score(m.fuse(c).fused).item(); });
}

std::string TimingReport::to_json(const RunConfig& cfg) const {
  json j;
  j["config_hash"] = hex64(cfg.hash());
  j["seed"] = cfg.run.seed;
  j["count"] = count;
  j["repeats"] = repeats;
  j["mean_ms"] = mean_ms;
  j["median_ms"] = median_ms;
  j["run_means_ms"] = run_means_ms;
  j["run_mean_variance"] = run_mean_variance;
  j["load_mean_ms"] = load_mean_ms;
  return j.dump(2) + "\n";
}

}  // namespace ectoken
