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

#include "ectoken/downstream.h"

#include <cmath>

#include "ectoken/error.h"

namespace ectoken {

std::string task_name(TaskKind t) {
  switch (t) {
    case TaskKind::kLba: return "lba";
    case TaskKind::kRelative: return "relative";
    case TaskKind::kLep: return "lep";
  }
  return "lba";
}

TaskKind parse_task(const std::string& s) {
  if (s == "lba") return TaskKind::kLba;
  if (s == "relative") return TaskKind::kRelative;
  if (s == "lep") return TaskKind::kLep;
  throw ValidationError("unknown task '" + s + "' (expected lba, relative or lep)");
}

Fusion::Fusion(std::size_t c, std::size_t hidden, Rng& rng)
    : code_dim(c), mixer(4 * c, hidden, 4, rng) {
  mixer.out.zero_init();
}

FusedRepresentation Fusion::operator()(const Streams& s) const {
  std::size_t N = s[0].shape()[0];
  for (const Tensor& t : s) {
    if (t.shape() != Shape{N, code_dim}) {
      throw ValidationError("fuse: stream shape " + shape_string(t.shape()) + " != [" +
                            std::to_string(N) + ", " + std::to_string(code_dim) + "]");
    }
  }
  FusedRepresentation r;
  r.weights = softmax(mixer(concat({s[0], s[1], s[2], s[3]}, 1)), -1);  // [N, 4]
  Tensor stacked = concat({reshape(s[0], {N, 1, code_dim}), reshape(s[1], {N, 1, code_dim}),
                           reshape(s[2], {N, 1, code_dim}), reshape(s[3], {N, 1, code_dim})},
                          1);
  r.fused = sum_axis(mul(stacked, reshape(r.weights, {N, 4, 1})), 1);
  return r;
}

void Fusion::collect(const std::string& p, std::vector<NamedTensor>& out) const {
  mixer.collect(p + "mixer.", out);
}

TaskHead::TaskHead(std::size_t c, std::size_t dim, std::size_t heads, std::size_t layers,
                   Pooling pool, Rng& rng)
    : pooling(pool), input(c, dim, rng), stack(dim, heads, layers, rng), output(dim, 1, rng) {}

Tensor TaskHead::raw(const Tensor& fused) const {
  Tensor h = stack.forward(input(fused));
  Tensor pooled = pooling == Pooling::kMean ? mean_axis(h, 0) : sum_axis(h, 0);
  return reshape(output(reshape(pooled, {1, pooled.numel()})), {1});
}

Tensor TaskHead::score(const Tensor& fused) const {
  return add_scalar(scale(raw(fused), label_scale), label_offset);
}

void TaskHead::collect(const std::string& p, std::vector<NamedTensor>& out) const {
  input.collect(p + "input.", out);
  stack.collect(p + "stack.", out);
  output.collect(p + "output.", out);
}

Tensor predict_lba(const TaskHead& head, const FusedRepresentation& f) {
  return head.score(f.fused);
}

Tensor predict_relative(const TaskHead& head, const FusedRepresentation& p,
                        const FusedRepresentation& q) {
  return sub(head.score(p.fused), head.score(q.fused));
}

Tensor predict_lep(const TaskHead& head, const FusedRepresentation& f) {
  return sigmoid(head.score(f.fused));
}

Tensor task_loss(TaskKind task, const TaskHead& head, const FusedRepresentation& f,
                 double label) {
  if (task == TaskKind::kLep) {
    std::vector<double> y = {label};
    return binary_cross_entropy_with_logits(head.score(f.fused), y);
  }
  if (task == TaskKind::kRelative) {
    throw ValidationError("relative task losses are defined on pairs");
  }
  double target = (label - head.label_offset) / head.label_scale;
  return mse(head.raw(f.fused), Tensor::from({1}, {target}));
}

ECTokenizer clone(const ECTokenizer& t) {
  Rng rng(0);
  ECTokenizer c(t.config, rng);
  copy_parameters(t, c);
  c.book1 = t.book1;
  c.book2 = t.book2;
  return c;
}

FATokenizer clone(const FATokenizer& t) {
  Rng rng(0);
  FATokenizer c(t.config, rng);
  copy_parameters(t, c);
  c.book1 = t.book1;
  c.book2 = t.book2;
  return c;
}

TeacherModel::TeacherModel(ECTokenizer e, FATokenizer f, TaskKind k, std::size_t fusion_hidden,
                           std::size_t head_layers, Pooling pooling, Rng& rng)
    : task(k), ec(std::move(e)), fa(std::move(f)) {
  if (ec.config.dim != fa.config.dim) {
    throw ValidationError("tokenizer widths differ: " + std::to_string(ec.config.dim) + " vs " +
                          std::to_string(fa.config.dim));
  }
  std::size_t c = ec.config.dim / 2;
  fusion = Fusion(c, fusion_hidden, rng);
  head = TaskHead(c, ec.config.dim, ec.config.heads, head_layers, pooling, rng);
}

Streams TeacherModel::streams(const BindingComplex& c, const DensityPoints& cloud) const {
  StreamPair u = ec.encode(c, inference_patches(c, cloud, ec.config), MaskPlan{});
  StreamPair a = fa.encode(c, MaskPlan{}, MaskPlan{});
  return {u.first.output, u.second.output, a.first.output, a.second.output};
}

FusedRepresentation TeacherModel::fuse(const BindingComplex& c, const DensityPoints& cloud) const {
  return fusion(streams(c, cloud));
}

void TeacherModel::freeze() { set_trainable(*this, false); }

bool TeacherModel::frozen() const {
  for (const Tensor& t : parameters()) {
    if (t.requires_grad()) return false;
  }
  return true;
}

std::vector<Tensor> TeacherModel::finetune_parameters(bool unfreeze) const {
  set_trainable(ec, unfreeze);
  set_trainable(fa, unfreeze);
  set_trainable(fusion, true);
  set_trainable(head, true);
  std::vector<Tensor> out = fusion.parameters();
  for (const Tensor& t : head.parameters()) out.push_back(t);
  if (unfreeze) {
    for (const Tensor& t : ec.parameters()) out.push_back(t);
    for (const Tensor& t : fa.parameters()) out.push_back(t);
  }
  return out;
}

void TeacherModel::collect(const std::string& p, std::vector<NamedTensor>& out) const {
  ec.collect(p + "ec.", out);
  fa.collect(p + "fa.", out);
  fusion.collect(p + "fusion.", out);
  head.collect(p + "head.", out);
}

StudentModel::StudentModel(const TeacherModel& t, std::size_t hidden, Rng& rng)
    : task(t.task), label_threshold(t.label_threshold), fa(clone(t.fa)) {
  std::size_t D = fa.config.dim, c = D / 2;
  surrogate1 = FeedForward(D, hidden, c, rng);
  surrogate2 = FeedForward(D, hidden, c, rng);
  surrogate1.out.zero_init();
  surrogate2.out.zero_init();
  fusion = Fusion(c, t.fusion.mixer.in.weight.shape()[1], rng);
  copy_parameters(t.fusion, fusion);
  head = TaskHead(c, D, fa.config.heads, t.head.stack.layers.size(), t.head.pooling, rng);
  copy_parameters(t.head, head);
  head.label_offset = t.head.label_offset;
  head.label_scale = t.head.label_scale;
}

StudentModel::AtomFeatures StudentModel::features(const BindingComplex& c) const {
  StreamPair a = fa.encode(c, MaskPlan{}, MaskPlan{});
  return {a.embedding, a.first.output, a.second.output};
}

FusedRepresentation StudentModel::fuse(const AtomFeatures& f) const {
  return fusion({surrogate1(f.embedding), surrogate2(f.embedding), f.a1, f.a2});
}

FusedRepresentation StudentModel::fuse(const BindingComplex& c) const { return fuse(features(c)); }

std::vector<Tensor> StudentModel::distill_parameters(bool train_tokenizer,
                                                     bool train_fusion_head) const {
  set_trainable(fa, train_tokenizer);
  set_trainable(fusion, train_fusion_head);
  set_trainable(head, train_fusion_head);
  std::vector<Tensor> out;
  std::vector<const Module*> parts = {&surrogate1, &surrogate2};
  if (train_fusion_head) {
    parts.push_back(&fusion);
    parts.push_back(&head);
  }
  for (const Module* m : parts) {
    set_trainable(*m, true);
    for (const Tensor& t : m->parameters()) out.push_back(t);
  }
  if (train_tokenizer) {
    for (const Tensor& t : fa.parameters()) out.push_back(t);
  }
  return out;
}

void StudentModel::collect(const std::string& p, std::vector<NamedTensor>& out) const {
  fa.collect(p + "fa.", out);
  surrogate1.collect(p + "surrogate1.", out);
  surrogate2.collect(p + "surrogate2.", out);
  fusion.collect(p + "fusion.", out);
  head.collect(p + "head.", out);
}

DistillTerms distill_loss(const StudentModel& s, const StudentModel::AtomFeatures& f,
                          const Tensor& teacher_fused, std::optional<double> label,
                          double weight, bool task_reaches_surrogates) {
  Tensor u1 = s.surrogate1(f.embedding), u2 = s.surrogate2(f.embedding);
  FusedRepresentation mine = s.fusion({u1, u2, f.a1, f.a2});
  DistillTerms t;
  Tensor emb = mse(mine.fused, teacher_fused.detach());
  t.embedding = emb.item();
  t.total = emb;
  if (label && weight != 0.0 && s.task != TaskKind::kRelative) {
    FusedRepresentation for_task =
        task_reaches_surrogates ? mine : s.fusion({u1.detach(), u2.detach(), f.a1, f.a2});
    Tensor task = task_loss(s.task, s.head, for_task, *label);
    t.task = task.item();
    t.total = add(emb, scale(task, weight));
  }
  return t;
}

DistillTerms distill_step(StudentModel& s, Adam& opt, const TeacherModel& teacher,
                          const BindingComplex& c, const DensityPoints& cloud, double weight) {
  if (!teacher.frozen()) {
    throw ValidationError("distill: teacher must be frozen (call freeze() after loading)");
  }
  Tensor target;
  {
    NoGradGuard no_grad;
    target = teacher.fuse(c, cloud).fused;
  }
  opt.zero_grad();
  std::optional<double> label = c.label;
  if (label && s.task == TaskKind::kLep) label = *label > s.label_threshold ? 1.0 : 0.0;
  DistillTerms t = distill_loss(s, s.features(c), target, label, weight);
  if (!std::isfinite(t.total.item())) throw NumericalError("distill: non-finite loss on " + c.id);
  t.total.backward();
  opt.step();
  return t;
}

}  // namespace ectoken
