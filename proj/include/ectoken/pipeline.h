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

// Experiment orchestration behind the command-line tool: datasets on disk,
// pretraining / finetuning / distillation loops, evaluation, tokenization
// and timing. Every function here is deterministic given its config.

#ifndef ECTOKEN_PIPELINE_H_
#define ECTOKEN_PIPELINE_H_

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ectoken/checkpoint.h"
#include "ectoken/config.h"
#include "ectoken/downstream.h"
#include "ectoken/metrics.h"
#include "ectoken/synth.h"
#include "ectoken/tokenizers.h"

namespace ectoken {

using Logger = std::function<void(const std::string&)>;

//! train/valid/test.jsonl, grids/<id>.ecg, pairs.csv, manifest.json.
struct Dataset {
  std::string dir;
  std::vector<BindingComplex> train, valid, test;

  static Dataset load(const std::string& dir);
  const std::vector<BindingComplex>& split(const std::string& name) const;
  //! Density samples for one complex, read from its grid file on first use.
  const DensityPoints& cloud(const std::string& id) const;

 private:
  mutable std::map<std::string, DensityPoints> clouds_;
};

struct GeneratedCounts {
  std::size_t train = 0, valid = 0, test = 0, grids = 0, pairs = 0;
};
//! Writes a synthetic dataset; identical settings give byte-identical files.
GeneratedCounts generate_dataset(const DataSettings& settings, const std::string& dir);

// ---- models and checkpoints ----

std::uint64_t model_seed(const RunConfig& config, const char* role);

Checkpoint new_checkpoint(const RunConfig& config, const std::string& kind);
//! Parses the stored config and checks the kind.
RunConfig checkpoint_config(const Checkpoint& ckpt, const std::string& kind);
//! Throws ValidationError naming every architecture field that differs.
void require_compatible(const RunConfig& stored, const RunConfig& given, const std::string& what);

void save_ec(const ECTokenizer& tok, const RunConfig& cfg, const std::string& path);
void save_fa(const FATokenizer& tok, const RunConfig& cfg, const std::string& path);
void save_teacher(const TeacherModel& model, const RunConfig& cfg, const std::string& path);
void save_student(const StudentModel& model, const RunConfig& cfg, const std::string& path);
ECTokenizer load_ec(const std::string& path, RunConfig* config = nullptr);
FATokenizer load_fa(const std::string& path, RunConfig* config = nullptr);
TeacherModel load_teacher(const std::string& path, RunConfig* config = nullptr);
StudentModel load_student(const std::string& path, RunConfig* config = nullptr);
//! The "kind" metadata of a checkpoint file (ec, fa, teacher, student).
std::string checkpoint_kind(const std::string& path);

// ---- pretraining ----

struct EpochRow {
  std::size_t epoch = 0;
  double reconstruction = 0, atom = 0, interaction = 0, commitment1 = 0, commitment2 = 0;
  double perplexity1 = 0, perplexity2 = 0;
  std::size_t dead1 = 0, dead2 = 0;  // before revival
  double probe_reconstruction = 0, probe_accuracy = 0;
};

struct PretrainResult {
  std::vector<EpochRow> epochs;
  std::size_t steps = 0;
  double probe_start = 0, probe_end = 0;                 // L^ec or L^st on the fixed probe
  double probe_accuracy_start = 0, probe_accuracy_end = 0;  // masked-atom accuracy on the probe
  double first_step_reconstruction = 0;
};

//! Epoch count after applying the max_steps cap to a dataset of `n` items.
std::size_t effective_epochs(std::size_t epochs, std::size_t max_steps, std::size_t n);

//! Trains from scratch (or continues `init` when given). On a non-finite loss
//! the partial model is written to `out + ".failed"` and NumericalError is rethrown.
PretrainResult pretrain_ec(const RunConfig& cfg, const Dataset& data, ECTokenizer& tok,
                           const std::string& out, const Logger& log = {});
PretrainResult pretrain_fa(const RunConfig& cfg, const Dataset& data, FATokenizer& tok,
                           const std::string& out, const Logger& log = {});
void write_epoch_csv(const std::string& path, const std::vector<EpochRow>& rows, bool full_atom);

// ---- downstream ----

//! Binarization threshold for activeness labels ("median" of train labels or a number).
double lep_threshold(const FinetuneSettings& s, const std::vector<BindingComplex>& train);

struct FinetuneResult {
  std::vector<double> epoch_loss;
  EvalReport validation;
  std::size_t steps = 0;
};

//! Builds a teacher from two pretrained tokenizers and trains fusion + head.
FinetuneResult finetune(const RunConfig& cfg, const Dataset& data, TeacherModel& teacher,
                        const Logger& log = {});
TeacherModel make_teacher(const RunConfig& cfg, ECTokenizer ec, FATokenizer fa);

struct DistillResult {
  std::vector<double> epoch_loss;
  double test_cosine = 0;  // mean per-atom cosine(student, teacher) on the test split
  EvalReport teacher_report, student_report;
  std::size_t steps = 0;
};
DistillResult distill(const RunConfig& cfg, const Dataset& data, const TeacherModel& teacher,
                      StudentModel& student, const Logger& log = {});
std::string distill_report_json(const DistillResult& r, const RunConfig& cfg);

//! Metrics of the model's task on one split; lba and relative also report
//! sign-AUROC/AUPRC over same-protein pairs.
EvalReport evaluate(const TeacherModel& model, const Dataset& data, const std::string& split,
                    const RunConfig& cfg);
EvalReport evaluate(const StudentModel& model, const Dataset& data, const std::string& split,
                    const RunConfig& cfg);
double mean_cosine(const Tensor& a, const Tensor& b);

// ---- tokenization and timing ----

//! One JSON line per complex with the four index streams.
std::string tokenized_json_line(const TokenizedComplex& t);
std::size_t tokenize_dataset(const ECTokenizer& ec, const FATokenizer& fa, const Dataset& data,
                             const RunConfig& cfg, const std::string& out_path);

struct TimingReport {
  std::size_t count = 0, repeats = 0;
  double mean_ms = 0, median_ms = 0, run_mean_variance = 0, load_mean_ms = 0;
  std::vector<double> run_means_ms;
  std::string to_json(const RunConfig& cfg) const;
};
TimingReport time_inference(const TeacherModel& model, const Dataset& data, std::size_t repeats);
TimingReport time_inference(const StudentModel& model, const Dataset& data, std::size_t repeats);

}  // namespace ectoken

#endif  // ECTOKEN_PIPELINE_H_
