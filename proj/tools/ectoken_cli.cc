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

// Command-line entry point. Exit codes: 0 success, 1 invalid input, 2 numerical failure.

#include <cstdio>
#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "ectoken/error.h"
#include "ectoken/pipeline.h"

namespace {

using namespace ectoken;

struct Common {
  std::string config_path;
  std::string data_dir;
  bool quiet = false;
};

Logger make_logger(const Common& c) {
  if (c.quiet) return {};
  return [](const std::string& m) { std::cerr << "[ectoken] " << m << "\n"; };
}

RunConfig resolve_config(const Common& c) {
  RunConfig cfg = c.config_path.empty() ? RunConfig{} : RunConfig::load(c.config_path);
  if (!c.data_dir.empty()) cfg.data.dir = c.data_dir;
  return cfg;
}

// Settings stored with a model win for architecture; a given config must agree.
RunConfig merge_with_checkpoint(const RunConfig& stored, const Common& c, const std::string& what) {
  if (c.config_path.empty()) {
    RunConfig cfg = stored;
    if (!c.data_dir.empty()) cfg.data.dir = c.data_dir;
    return cfg;
  }
  RunConfig given = resolve_config(c);
  require_compatible(stored, given, what);
  return given;
}

void write_file(const std::string& path, const std::string& text) {
  std::FILE* f = std::fopen(path.c_str(), "wb");
  if (!f) throw ValidationError("cannot write " + path);
  std::fwrite(text.data(), 1, text.size(), f);
  std::fclose(f);
}

void add_common(CLI::App* app, Common& c, bool with_config = true) {
  if (with_config) app->add_option("--config", c.config_path, "run configuration file");
  app->add_option("--data", c.data_dir, "dataset directory (overrides data.dir)");
  app->add_flag("--quiet", c.quiet, "suppress progress output");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Electron-cloud and full-atom tokenizers for binding-site modeling"};
  app.require_subcommand(1);
  Common common;

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "write a synthetic dataset");
  std::string gen_out;
  std::optional<std::size_t> n_complexes, atoms_min, atoms_max, per_protein;
  std::optional<std::uint64_t> gen_seed;
  std::optional<double> valid_frac, test_frac, spacing;
  gen->add_option("--out", gen_out, "output directory")->required();
  gen->add_option("--complexes", n_complexes, "number of complexes");
  gen->add_option("--atoms-min", atoms_min, "minimum atoms per pocket");
  gen->add_option("--atoms-max", atoms_max, "maximum atoms per pocket");
  gen->add_option("--ligands-per-protein", per_protein, "ligands sharing one protein");
  gen->add_option("--seed", gen_seed, "generator seed");
  gen->add_option("--valid-fraction", valid_frac, "fraction of proteins for validation");
  gen->add_option("--test-fraction", test_frac, "fraction of proteins for test");
  gen->add_option("--grid-spacing", spacing, "density grid spacing in angstrom");
  gen->add_option("--config", common.config_path, "run configuration file ([data] section)");
  gen->add_flag("--quiet", common.quiet, "suppress progress output");

  // pretrain-ec / pretrain-fa
  std::string pre_out, pre_csv;
  std::optional<std::size_t> pre_steps, pre_epochs;
  auto* pre_ec = app.add_subcommand("pretrain-ec", "pretrain the electron-cloud tokenizer");
  auto* pre_fa = app.add_subcommand("pretrain-fa", "pretrain the full-atom tokenizer");
  for (auto* sub : {pre_ec, pre_fa}) {
    add_common(sub, common);
    sub->add_option("--out", pre_out, "checkpoint path")->required();
    sub->add_option("--csv", pre_csv, "per-epoch loss table (default: <out>.csv)");
    sub->add_option("--max-steps", pre_steps, "cap on optimizer steps");
    sub->add_option("--epochs", pre_epochs, "epoch count");
  }

  // finetune
  auto* fine = app.add_subcommand("finetune", "train fusion and task head on pretrained tokenizers");
  std::string fine_task, fine_ec, fine_fa, fine_teacher, fine_out, fine_report;
  add_common(fine, common);
  fine->add_option("--task", fine_task, "lba, relative or lep")->check(CLI::IsMember({"lba", "relative", "lep"}));
  fine->add_option("--ec", fine_ec, "electron-cloud tokenizer checkpoint");
  fine->add_option("--fa", fine_fa, "full-atom tokenizer checkpoint");
  fine->add_option("--teacher", fine_teacher, "continue from a task checkpoint instead");
  fine->add_option("--out", fine_out, "task checkpoint path")->required();
  fine->add_option("--report", fine_report, "validation report (default: <out>.report.json)");

  // distill
  auto* dist = app.add_subcommand("distill", "distill a student that needs no electron cloud");
  std::string dist_teacher, dist_out, dist_report;
  add_common(dist, common);
  dist->add_option("--teacher", dist_teacher, "task checkpoint")->required();
  dist->add_option("--out", dist_out, "student checkpoint path")->required();
  dist->add_option("--report", dist_report, "comparison report (default: <out>.report.json)");

  // eval
  auto* ev = app.add_subcommand("eval", "evaluate a task or student checkpoint");
  std::string ev_model, ev_report, ev_split = "test";
  add_common(ev, common);
  ev->add_option("--model", ev_model, "teacher or student checkpoint")->required();
  ev->add_option("--report", ev_report, "report path")->required();
  ev->add_option("--split", ev_split, "train, valid or test")->check(CLI::IsMember({"train", "valid", "test"}));

  // tokenize
  auto* tok = app.add_subcommand("tokenize", "write the four code-index streams per complex");
  std::string tok_model, tok_ec, tok_fa, tok_out;
  add_common(tok, common);
  tok->add_option("--model", tok_model, "teacher checkpoint");
  tok->add_option("--ec", tok_ec, "electron-cloud tokenizer checkpoint");
  tok->add_option("--fa", tok_fa, "full-atom tokenizer checkpoint");
  tok->add_option("--out", tok_out, "JSON-lines output")->required();

  // timing
  auto* tim = app.add_subcommand("timing", "per-complex inference wall clock");
  std::string tim_model, tim_out;
  std::size_t repeats = 3;
  add_common(tim, common);
  tim->add_option("--model", tim_model, "teacher or student checkpoint")->required();
  tim->add_option("--repeats", repeats, "passes over the dataset");
  tim->add_option("--out", tim_out, "report path (default: print only)");

  // print-config
  auto* pc = app.add_subcommand("print-config", "print a configuration in canonical form");
  std::string preset = "default";
  pc->add_option("--preset", preset, "default or tiny")->check(CLI::IsMember({"default", "tiny"}));
  pc->add_option("--config", common.config_path, "configuration file to normalize instead");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  Logger log = make_logger(common);
  try {
    if (*pc) {
      RunConfig cfg = !common.config_path.empty() ? RunConfig::load(common.config_path)
                      : preset == "tiny"          ? tiny_config()
                                                  : RunConfig{};
      std::cout << cfg.canonical();
    } else if (*gen) {
      RunConfig cfg = resolve_config(common);
      DataSettings s = cfg.data;
      if (n_complexes) s.complexes = *n_complexes;
      if (atoms_min) s.atoms_min = *atoms_min;
      if (atoms_max) s.atoms_max = *atoms_max;
      if (per_protein) s.ligands_per_protein = *per_protein;
      if (gen_seed) s.seed = *gen_seed;
      if (valid_frac) s.valid_fraction = *valid_frac;
      if (test_frac) s.test_fraction = *test_frac;
      if (spacing) s.grid_spacing = *spacing;
      cfg.data = s;
      cfg.validate();
      GeneratedCounts n = generate_dataset(s, gen_out);
      if (log) {
        log("wrote " + std::to_string(n.train) + "/" + std::to_string(n.valid) + "/" +
            std::to_string(n.test) + " train/valid/test complexes, " + std::to_string(n.grids) +
            " grids, " + std::to_string(n.pairs) + " relative pairs to " + gen_out);
      }
    } else if (*pre_ec || *pre_fa) {
      RunConfig cfg = resolve_config(common);
      if (pre_steps) cfg.pretrain.max_steps = *pre_steps;
      if (pre_epochs) cfg.pretrain.epochs = *pre_epochs;
      Dataset data = Dataset::load(cfg.data.dir);
      std::string csv = pre_csv.empty() ? pre_out + ".csv" : pre_csv;
      if (*pre_ec) {
        Rng rng(model_seed(cfg, "ec"));
        ECTokenizer t(cfg.model, rng);
        PretrainResult r = pretrain_ec(cfg, data, t, pre_out, log);
        write_epoch_csv(csv, r.epochs, false);
      } else {
        Rng rng(model_seed(cfg, "fa"));
        FATokenizer t(cfg.model, rng);
        PretrainResult r = pretrain_fa(cfg, data, t, pre_out, log);
        write_epoch_csv(csv, r.epochs, true);
      }
      if (log) log("wrote " + pre_out + " and " + csv);
    } else if (*fine) {
      TeacherModel teacher;
      RunConfig cfg;
      if (!fine_teacher.empty()) {
        RunConfig stored;
        teacher = load_teacher(fine_teacher, &stored);
        cfg = merge_with_checkpoint(stored, common, "finetune");
        if (!fine_task.empty() && fine_task != task_name(teacher.task)) {
          throw ValidationError("finetune: --task " + fine_task + " does not match the checkpoint's task " +
                                task_name(teacher.task));
        }
        cfg.finetune.task = task_name(teacher.task);
      } else {
        if (fine_ec.empty() || fine_fa.empty()) throw ValidationError("finetune: need --ec and --fa (or --teacher)");
        RunConfig ec_cfg, fa_cfg;
        ECTokenizer ec = load_ec(fine_ec, &ec_cfg);
        FATokenizer fa = load_fa(fine_fa, &fa_cfg);
        require_compatible(ec_cfg, fa_cfg, "finetune (--ec vs --fa)");
        cfg = merge_with_checkpoint(ec_cfg, common, "finetune");
        if (!fine_task.empty()) cfg.finetune.task = fine_task;
        cfg.validate();
        teacher = make_teacher(cfg, std::move(ec), std::move(fa));
      }
      Dataset data = Dataset::load(cfg.data.dir);
      FinetuneResult r = finetune(cfg, data, teacher, log);
      save_teacher(teacher, cfg, fine_out);
      std::string report = fine_report.empty() ? fine_out + ".report.json" : fine_report;
      write_file(report, r.validation.to_json());
      if (log) log("wrote " + fine_out + " and " + report);
    } else if (*dist) {
      RunConfig stored;
      TeacherModel teacher = load_teacher(dist_teacher, &stored);
      RunConfig cfg = merge_with_checkpoint(stored, common, "distill");
      cfg.finetune.task = task_name(teacher.task);
      teacher.freeze();
      Dataset data = Dataset::load(cfg.data.dir);
      Rng rng(model_seed(cfg, "student"));
      std::size_t hidden = cfg.distill.surrogate_hidden ? cfg.distill.surrogate_hidden : cfg.model.dim;
      StudentModel student(teacher, hidden, rng);
      DistillResult r = distill(cfg, data, teacher, student, log);
      save_student(student, cfg, dist_out);
      std::string report = dist_report.empty() ? dist_out + ".report.json" : dist_report;
      write_file(report, distill_report_json(r, cfg));
      if (log) log("test mean cosine " + std::to_string(r.test_cosine) + "; wrote " + dist_out + " and " + report);
    } else if (*ev) {
      std::string kind = checkpoint_kind(ev_model);
      RunConfig stored;
      EvalReport rep;
      if (kind == "teacher") {
        TeacherModel m = load_teacher(ev_model, &stored);
        RunConfig cfg = merge_with_checkpoint(stored, common, "eval");
        rep = evaluate(m, Dataset::load(cfg.data.dir), ev_split, cfg);
      } else if (kind == "student") {
        StudentModel m = load_student(ev_model, &stored);
        RunConfig cfg = merge_with_checkpoint(stored, common, "eval");
        rep = evaluate(m, Dataset::load(cfg.data.dir), ev_split, cfg);
      } else {
        throw ValidationError("eval: '" + ev_model + "' holds a '" + kind + "' model; need a teacher or student");
      }
      write_file(ev_report, rep.to_json());
      if (log) log("wrote " + ev_report);
    } else if (*tok) {
      RunConfig stored;
      ECTokenizer ec;
      FATokenizer fa;
      if (!tok_model.empty()) {
        TeacherModel m = load_teacher(tok_model, &stored);
        ec = std::move(m.ec);
        fa = std::move(m.fa);
      } else {
        if (tok_ec.empty() || tok_fa.empty()) throw ValidationError("tokenize: need --model or both --ec and --fa");
        RunConfig fa_cfg;
        ec = load_ec(tok_ec, &stored);
        fa = load_fa(tok_fa, &fa_cfg);
        require_compatible(stored, fa_cfg, "tokenize (--ec vs --fa)");
      }
      RunConfig cfg = merge_with_checkpoint(stored, common, "tokenize");
      std::size_t n = tokenize_dataset(ec, fa, Dataset::load(cfg.data.dir), cfg, tok_out);
      if (log) log("tokenized " + std::to_string(n) + " complexes into " + tok_out);
    } else if (*tim) {
      std::string kind = checkpoint_kind(tim_model);
      RunConfig stored;
      TimingReport r;
      RunConfig cfg;
      if (kind == "teacher") {
        TeacherModel m = load_teacher(tim_model, &stored);
        cfg = merge_with_checkpoint(stored, common, "timing");
        r = time_inference(m, Dataset::load(cfg.data.dir), repeats);
      } else if (kind == "student") {
        StudentModel m = load_student(tim_model, &stored);
        cfg = merge_with_checkpoint(stored, common, "timing");
        r = time_inference(m, Dataset::load(cfg.data.dir), repeats);
      } else {
        throw ValidationError("timing: need a teacher or student checkpoint, got '" + kind + "'");
      }
      std::string text = r.to_json(cfg);
      std::cout << text;
      if (!tim_out.empty()) write_file(tim_out, text);
    }
  } catch (const NumericalError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
