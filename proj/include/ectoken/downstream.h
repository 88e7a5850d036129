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

// Token fusion, task heads and teacher-to-student distillation.

#ifndef ECTOKEN_DOWNSTREAM_H_
#define ECTOKEN_DOWNSTREAM_H_

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "ectoken/geomha.h"
#include "ectoken/nn.h"
#include "ectoken/tensor.h"
#include "ectoken/tokenizers.h"

namespace ectoken {

enum class TaskKind { kLba, kRelative, kLep };
enum class Pooling { kMean, kSum };

std::string task_name(TaskKind task);
TaskKind parse_task(const std::string& name);

using Streams = std::array<Tensor, 4>;  // u1, u2, a1, a2; each [N, C]

struct FusedRepresentation {
  Tensor fused;    // [N, C]
  Tensor weights;  // [N, 4], rows on the simplex
};

//! Per-atom softmax mixture of the four code streams.
class Fusion : public Module {
 public:
  Fusion() = default;
  Fusion(std::size_t code_dim, std::size_t hidden, Rng& rng);

  FusedRepresentation operator()(const Streams& streams) const;
  void collect(const std::string& prefix, std::vector<NamedTensor>& out) const override;

  std::size_t code_dim = 0;
  FeedForward mixer;  // 4C -> hidden -> 4, last layer zero-initialized
};

class TaskHead : public Module {
 public:
  TaskHead() = default;
  TaskHead(std::size_t code_dim, std::size_t dim, std::size_t heads, std::size_t layers,
           Pooling pooling, Rng& rng);

  //! Standardized score [1]: head(pool(stack(fused))).
  Tensor raw(const Tensor& fused) const;
  //! Score in label units [1]: label_offset + label_scale * raw.
  Tensor score(const Tensor& fused) const;
  void collect(const std::string& prefix, std::vector<NamedTensor>& out) const override;

  Pooling pooling = Pooling::kMean;
  Linear input;
  Transformer stack;
  Linear output;
  double label_offset = 0.0;
  double label_scale = 1.0;
};

Tensor predict_lba(const TaskHead& head, const FusedRepresentation& fused);
//! g(p) - g(q): exactly antisymmetric.
Tensor predict_relative(const TaskHead& head, const FusedRepresentation& p,
                        const FusedRepresentation& q);
Tensor predict_lep(const TaskHead& head, const FusedRepresentation& fused);

//! Both tokenizers plus fusion and task head.
class TeacherModel : public Module {
 public:
  TeacherModel() = default;
  TeacherModel(ECTokenizer ec, FATokenizer fa, TaskKind task, std::size_t fusion_hidden,
               std::size_t head_layers, Pooling pooling, Rng& rng);

  //! Code streams at inference settings (no masking, deterministic patches).
  Streams streams(const BindingComplex& complex, const DensityPoints& cloud) const;
  FusedRepresentation fuse(const BindingComplex& complex, const DensityPoints& cloud) const;

  void freeze();
  bool frozen() const;
  //! Trainable set for finetuning: fusion + head, plus tokenizers when unfrozen.
  std::vector<Tensor> finetune_parameters(bool unfreeze_tokenizers) const;
  void collect(const std::string& prefix, std::vector<NamedTensor>& out) const override;

  TaskKind task = TaskKind::kLba;
  double label_threshold = 0.0;  // activeness cut applied to raw labels
  ECTokenizer ec;
  FATokenizer fa;
  Fusion fusion;
  TaskHead head;
};

//! Electron-cloud-free model: a copy of the teacher's full-atom tokenizer,
//! fusion and head, with two learned surrogate streams standing in for u1, u2.
class StudentModel : public Module {
 public:
  StudentModel() = default;
  StudentModel(const TeacherModel& teacher, std::size_t surrogate_hidden, Rng& rng);

  struct AtomFeatures {
    Tensor embedding;  // pre-quantization full-atom embedding [N, D]
    Tensor a1, a2;     // quantized streams [N, C]
  };
  AtomFeatures features(const BindingComplex& complex) const;
  FusedRepresentation fuse(const AtomFeatures& features) const;
  FusedRepresentation fuse(const BindingComplex& complex) const;

  //! Surrogates, optionally fusion and head; the copied tokenizer stays fixed unless asked.
  std::vector<Tensor> distill_parameters(bool train_tokenizer, bool train_fusion_head = true) const;
  void collect(const std::string& prefix, std::vector<NamedTensor>& out) const override;

  TaskKind task = TaskKind::kLba;
  double label_threshold = 0.0;
  FATokenizer fa;
  FeedForward surrogate1, surrogate2;  // D -> hidden -> C, last layer zero-initialized
  Fusion fusion;
  TaskHead head;
};

//! Deep copies by construction plus value copy.
ECTokenizer clone(const ECTokenizer& tokenizer);
FATokenizer clone(const FATokenizer& tokenizer);

//! Task loss for one complex (absolute or activeness tasks). Affinity errors are
//! measured in standardized units, (score - y) / label_scale.
Tensor task_loss(TaskKind task, const TaskHead& head, const FusedRepresentation& fused,
                 double label);

struct DistillTerms {
  Tensor total;
  double embedding = 0.0;
  double task = 0.0;
};

//! MSE(student fused, teacher fused) + weight * task loss when a label exists.
//! By default the task term sees the surrogate streams through a stop-gradient,
//! so only fusion and head learn from labels and the surrogates track the teacher.
DistillTerms distill_loss(const StudentModel& student, const StudentModel::AtomFeatures& f,
                          const Tensor& teacher_fused, std::optional<double> label,
                          double task_weight, bool task_reaches_surrogates = false);

//! One student update; throws ValidationError if the teacher still has trainable
//! parameters.
DistillTerms distill_step(StudentModel& student, Adam& optimizer, const TeacherModel& teacher,
                          const BindingComplex& complex, const DensityPoints& cloud,
                          double task_weight = 1.0);

}  // namespace ectoken

#endif  // ECTOKEN_DOWNSTREAM_H_
