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

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "ectoken/error.h"
#include "ectoken/grad_check.h"
#include "test_util.h"

namespace ectoken {
namespace {

using testing::random_tensor;

TokenizerConfig small_config() {
  TokenizerConfig c;
  c.dim = 8;
  c.heads = 2;
  c.encoder_layers = 1;
  c.decoder_layers = 1;
  c.codebook_size = 16;
  c.patch.k = 4;
  c.patch.k_max = 6;
  c.query_count = 12;
  c.decoder_neighbors = 3;
  c.environment_size = 4;
  return c;
}

BindingComplex random_complex(Rng& rng, std::size_t n) {
  BindingComplex c;
  c.id = "r";
  for (std::size_t i = 0; i < n; ++i) {
    Atom a;
    a.type = 1 + static_cast<int>(rng.index(kNumAtomTypes));
    a.position = {rng.uniform(-3, 3), rng.uniform(-3, 3), rng.uniform(-3, 3)};
    a.chain = i < n / 3 ? Chain::kLigand : Chain::kReceptor;
    a.residue = a.chain == Chain::kLigand ? 0 : 1 + static_cast<int>(i % 3);
    c.atoms.push_back(a);
  }
  c.label = 5.0;
  c.rebuild_index_sets();
  return c;
}

Streams random_streams(Rng& rng, std::size_t n, std::size_t c, bool grad = true) {
  return {random_tensor({n, c}, rng, grad), random_tensor({n, c}, rng, grad),
          random_tensor({n, c}, rng, grad), random_tensor({n, c}, rng, grad)};
}

TeacherModel small_teacher(Rng& rng, TaskKind task = TaskKind::kLba) {
  TokenizerConfig cfg = small_config();
  return TeacherModel(ECTokenizer(cfg, rng), FATokenizer(cfg, rng), task, 8, 1, Pooling::kMean,
                      rng);
}

TEST(Fusion, StartsUniform) {
  Rng rng(1);
  Fusion fusion(4, 8, rng);
  Streams s = random_streams(rng, 5, 4);
  FusedRepresentation r = fusion(s);
  ASSERT_EQ(r.weights.shape(), (Shape{5, 4}));
  for (double w : r.weights.data()) EXPECT_DOUBLE_EQ(w, 0.25);
  for (std::size_t i = 0; i < 20; ++i) {
    double mean = 0.25 * (s[0].data()[i] + s[1].data()[i] + s[2].data()[i] + s[3].data()[i]);
    EXPECT_NEAR(r.fused.data()[i], mean, 1e-14);
  }
}

TEST(Fusion, IdenticalStreamsFuseToThemselves) {
  Rng rng(2);
  Fusion fusion(4, 8, rng);
  for (double& w : fusion.mixer.out.weight.mutable_data()) w = rng.normal();
  Tensor x = random_tensor({3, 4}, rng, false);
  FusedRepresentation r = fusion({x, x, x, x});
  for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_NEAR(r.fused.data()[i], x.data()[i], 1e-12);
  for (std::size_t i = 0; i < 3; ++i) {
    double s = 0;
    for (std::size_t k = 0; k < 4; ++k) s += r.weights.data()[i * 4 + k];
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(Fusion, ShapeMismatchRejected) {
  Rng rng(3);
  Fusion fusion(4, 8, rng);
  Streams s = random_streams(rng, 3, 4);
  s[2] = random_tensor({2, 4}, rng);
  EXPECT_THROW(fusion(s), ValidationError);
}

TEST(Fusion, Gradient) {
  Rng rng(4);
  Fusion fusion(3, 5, rng);
  for (double& w : fusion.mixer.out.weight.mutable_data()) w = rng.normal(0, 0.5);
  Streams s = random_streams(rng, 4, 3);
  auto f = [&] { return sum(square(fusion(s).fused)); };
  EXPECT_LT(grad_check(f, {s[0], s[3], fusion.mixer.in.weight, fusion.mixer.out.weight}), 1e-4);
}

TEST(TaskHead, PermutationInvariantPooling) {
  Rng rng(5);
  for (Pooling p : {Pooling::kMean, Pooling::kSum}) {
    TaskHead head(4, 8, 2, 1, p, rng);
    Tensor x = random_tensor({6, 4}, rng, false);
    std::vector<double> rev;
    for (std::size_t i = 6; i-- > 0;) {
      for (std::size_t k = 0; k < 4; ++k) rev.push_back(x.data()[i * 4 + k]);
    }
    EXPECT_NEAR(head.score(x).item(), head.score(Tensor::from({6, 4}, rev)).item(), 1e-12);
  }
}

TEST(TaskHead, AffinityLossGradient) {
  Rng rng(6);
  TaskHead head(4, 8, 2, 1, Pooling::kMean, rng);
  head.label_offset = 3.0;
  head.label_scale = 2.0;
  FusedRepresentation fused{random_tensor({5, 4}, rng), {}};
  auto f = [&] { return task_loss(TaskKind::kLba, head, fused, 4.2); };
  EXPECT_LT(grad_check(f, {fused.fused, head.input.weight, head.output.weight,
                           head.stack.layers[0].ffn.in.weight}),
            1e-4);
  auto g = [&] { return task_loss(TaskKind::kLep, head, fused, 1.0); };
  EXPECT_LT(grad_check(g, {fused.fused, head.output.weight}), 1e-4);
}

TEST(Predict, RelativeIsExactlyAntisymmetric) {
  Rng rng(7);
  TaskHead head(4, 8, 2, 1, Pooling::kMean, rng);
  for (int t = 0; t < 20; ++t) {
    FusedRepresentation p{random_tensor({5, 4}, rng, false), {}};
    FusedRepresentation q{random_tensor({7, 4}, rng, false), {}};
    double pq = predict_relative(head, p, q).item(), qp = predict_relative(head, q, p).item();
    EXPECT_EQ(pq, -qp);
    EXPECT_EQ(predict_relative(head, p, p).item(), 0.0);
  }
}

TEST(Predict, ActivenessIsProbability) {
  Rng rng(8);
  TaskHead head(4, 8, 2, 1, Pooling::kMean, rng);
  head.output.zero_init();
  FusedRepresentation p{random_tensor({5, 4}, rng, false), {}};
  EXPECT_DOUBLE_EQ(predict_lep(head, p).item(), 0.5);
  for (double& w : head.output.weight.mutable_data()) w = rng.normal(0, 3);
  double v = predict_lep(head, p).item();
  EXPECT_GE(v, 0.0);
  EXPECT_LE(v, 1.0);
}

TEST(Teacher, FreezeStopsAllGradients) {
  Rng rng(9);
  TeacherModel t = small_teacher(rng);
  EXPECT_FALSE(t.frozen());
  t.freeze();
  EXPECT_TRUE(t.frozen());
  auto params = t.finetune_parameters(false);
  EXPECT_EQ(params.size(), t.fusion.parameters().size() + t.head.parameters().size());
  EXPECT_FALSE(t.frozen());
  for (const Tensor& p : t.ec.parameters()) EXPECT_FALSE(p.requires_grad());
}

TEST(Teacher, FusedShapes) {
  Rng rng(10);
  TeacherModel t = small_teacher(rng);
  BindingComplex c = random_complex(rng, 7);
  DensityPoints cloud = synth_density(c, 1.0).points();
  FusedRepresentation r = t.fuse(c, cloud);
  EXPECT_EQ(r.fused.shape(), (Shape{7, 4}));
  EXPECT_EQ(r.weights.shape(), (Shape{7, 4}));
}

TEST(Student, CopiesTeacherAndStartsWithZeroSurrogates) {
  Rng rng(11);
  TeacherModel t = small_teacher(rng);
  StudentModel s(t, 8, rng);
  BindingComplex c = random_complex(rng, 7);
  StudentModel::AtomFeatures f = s.features(c);
  StreamPair a = t.fa.encode(c, {}, {});
  EXPECT_EQ(f.a1.data().size(), a.first.output.data().size());
  for (std::size_t i = 0; i < f.a1.numel(); ++i) EXPECT_EQ(f.a1.data()[i], a.first.output.data()[i]);
  // With the electron streams zeroed, the teacher's fusion is exactly the student's.
  Tensor zero = Tensor::zeros(a.first.output.shape());
  FusedRepresentation teacher = t.fusion({zero, zero, a.first.output, a.second.output});
  DistillTerms d = distill_loss(s, f, teacher.fused, std::nullopt, 1.0);
  EXPECT_EQ(d.embedding, 0.0);
  // The copy is independent of the teacher.
  s.fa.atom_embed.table.mutable_data()[0] += 1.0;
  EXPECT_NE(s.fa.atom_embed.table.data()[0], t.fa.atom_embed.table.data()[0]);
}

TEST(Distill, LossGradient) {
  Rng rng(12);
  TeacherModel t = small_teacher(rng);
  StudentModel s(t, 8, rng);
  for (double& w : s.surrogate1.out.weight.mutable_data()) w = rng.normal(0, 0.3);
  for (double& w : s.surrogate2.out.weight.mutable_data()) w = rng.normal(0, 0.3);
  BindingComplex c = random_complex(rng, 6);
  Tensor target = random_tensor({6, 4}, rng, false);
  s.distill_parameters(false);
  auto f = [&] { return distill_loss(s, s.features(c), target, 5.0, 0.5, true).total; };
  EXPECT_LT(grad_check(f, {s.surrogate1.in.weight, s.surrogate2.out.weight,
                           s.fusion.mixer.in.weight, s.head.output.weight}),
            1e-4);
}

// Default: labels reach fusion and head only; surrogates see just the embedding term.
TEST(Distill, TaskTermStopsAtSurrogates) {
  Rng rng(15);
  TeacherModel t = small_teacher(rng);
  StudentModel s(t, 8, rng);
  for (double& w : s.surrogate1.out.weight.mutable_data()) w = rng.normal(0, 0.3);
  BindingComplex c = random_complex(rng, 6);
  Tensor target = random_tensor({6, 4}, rng, false);
  s.distill_parameters(false);
  auto grads = [&](std::optional<double> label) {
    s.zero_grad();
    distill_loss(s, s.features(c), target, label, 1.0).total.backward();
    auto g = s.surrogate1.in.weight.grad();
    return std::vector<double>(g.begin(), g.end());
  };
  EXPECT_EQ(grads(5.0), grads(std::nullopt));
  s.zero_grad();
  distill_loss(s, s.features(c), target, 5.0, 1.0).total.backward();
  double head_grad = 0;
  for (double v : s.head.output.weight.grad()) head_grad += std::abs(v);
  EXPECT_GT(head_grad, 0.0);
}

TEST(Distill, RequiresFrozenTeacher) {
  Rng rng(13);
  TeacherModel t = small_teacher(rng);
  StudentModel s(t, 8, rng);
  Adam opt(s.distill_parameters(false), {.lr = 1e-3});
  BindingComplex c = random_complex(rng, 6);
  DensityPoints cloud = synth_density(c, 1.0).points();
  EXPECT_THROW(distill_step(s, opt, t, c, cloud), ValidationError);
  t.freeze();
  DistillTerms d = distill_step(s, opt, t, c, cloud);
  EXPECT_TRUE(std::isfinite(d.total.item()));
}

TEST(Distill, StepsReduceEmbeddingGap) {
  Rng rng(14);
  TeacherModel t = small_teacher(rng);
  for (double& w : t.fusion.mixer.out.weight.mutable_data()) w = rng.normal(0, 0.5);
  t.freeze();
  StudentModel s(t, 16, rng);
  Adam opt(s.distill_parameters(false), {.lr = 1e-2});
  BindingComplex c = random_complex(rng, 8);
  DensityPoints cloud = synth_density(c, 1.0).points();
  double first = distill_step(s, opt, t, c, cloud, 0.0).embedding, last = first;
  for (int k = 0; k < 60; ++k) last = distill_step(s, opt, t, c, cloud, 0.0).embedding;
  EXPECT_LT(last, 0.5 * first);
}

TEST(Predict, InvariantToAtomOrderAndRigidMotion) {
  Rng rng(16);
  TeacherModel t = small_teacher(rng);
  for (double& w : t.fusion.mixer.out.weight.mutable_data()) w = rng.normal(0, 0.5);
  for (int trial = 0; trial < 50; ++trial) {
    BindingComplex c = random_complex(rng, 7);
    DensityPoints cloud = synth_density(c, 1.0).points();
    double base = predict_lba(t.head, t.fuse(c, cloud)).item();

    Mat3 r = random_rotation(rng);
    Vec3 shift = {rng.uniform(-4, 4), rng.uniform(-4, 4), rng.uniform(-4, 4)};
    BindingComplex moved = rigid_transform(c, r, shift);
    double m = predict_lba(t.head, t.fuse(moved, rigid_transform(cloud, r, shift))).item();
    EXPECT_NEAR(m, base, 1e-5);

    BindingComplex perm = c;
    std::shuffle(perm.atoms.begin(), perm.atoms.end(), rng.engine());
    perm.rebuild_index_sets();
    EXPECT_NEAR(predict_lba(t.head, t.fuse(perm, cloud)).item(), base, 1e-5);
  }
}

TEST(Tasks, NameRoundTrip) {
  for (TaskKind k : {TaskKind::kLba, TaskKind::kRelative, TaskKind::kLep}) {
    EXPECT_EQ(parse_task(task_name(k)), k);
  }
  EXPECT_THROW(parse_task("affinity"), ValidationError);
}

}  // namespace
}  // namespace ectoken
