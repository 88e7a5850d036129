# Copyright 2026 The ectoken Authors
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.

import math

import numpy as np
import pytest

import ectoken


@pytest.fixture(scope="module")
def setup(tmp_path_factory):
    root = tmp_path_factory.mktemp("ectoken")
    cfg = ectoken.configure(
        ectoken.RunConfig.tiny(),
        data__dir=str(root / "data"),
        data__complexes=12,
        data__ligands_per_protein=4,
        data__atoms_min=20,
        data__atoms_max=30,
        data__valid_fraction=0,
        data__test_fraction=0.34,
        pretrain__max_steps=4,
        finetune__epochs=2,
        distill__epochs=1,
    )
    counts = ectoken.generate_dataset(cfg, str(root / "data"))
    data = ectoken.Dataset.load(str(root / "data"))
    ec = ectoken.ECTokenizer(cfg)
    fa = ectoken.FATokenizer(cfg)
    ec_result = ectoken.pretrain_ec(cfg, data, ec, str(root / "ec.ckpt"))
    fa_result = ectoken.pretrain_fa(cfg, data, fa, str(root / "fa.ckpt"))
    return dict(root=root, cfg=cfg, counts=counts, data=data, ec=ec, fa=fa,
                ec_result=ec_result, fa_result=fa_result)


def test_config_overrides_and_errors():
    tiny = ectoken.RunConfig.tiny()
    cfg = ectoken.configure(tiny, data__complexes=16, run__seed=4)
    assert cfg.diff(tiny) == ["data.complexes", "run.seed"]
    assert cfg.hash() != tiny.hash()
    assert ectoken.RunConfig.parse(cfg.canonical()) == cfg
    with pytest.raises(ectoken.ValidationError):
        ectoken.configure(tiny, model__no_such_key=1)
    with pytest.raises(ValueError, match="line"):
        ectoken.RunConfig.parse("[model]\ndim = wide\n")


def test_dataset(setup):
    data, counts = setup["data"], setup["counts"]
    assert counts["train"] + counts["valid"] + counts["test"] == 12
    assert len(data.train) == counts["train"]
    c = data.test[0]
    assert c.positions.shape == (len(c), 3)
    assert len(c.types) == len(c)
    assert c.label is not None
    assert data.cloud_positions(c.id).shape[0] == len(data.cloud_values(c.id)) > 0
    train_proteins = {x.protein for x in data.train}
    assert all(x.protein not in train_proteins for x in data.test)


def test_pretraining_results(setup):
    r = setup["ec_result"]
    assert r["steps"] == 4
    assert len(r["epochs"]) == 1
    assert math.isfinite(r["probe_end"])
    assert ectoken.checkpoint_kind(str(setup["root"] / "ec.ckpt")) == "ec"
    assert ectoken.checkpoint_config(str(setup["root"] / "fa.ckpt")) == setup["cfg"]


def test_tokenize_is_deterministic_and_reloads(setup):
    data, ec, fa, root = setup["data"], setup["ec"], setup["fa"], setup["root"]
    c = data.test[0]
    a = ectoken.tokenize(ec, fa, data, c)
    b = ectoken.tokenize(ectoken.ECTokenizer.load(str(root / "ec.ckpt")),
                         ectoken.FATokenizer.load(str(root / "fa.ckpt")), data, c)
    assert a == b
    for stream in ("u1", "u2", "a1", "a2"):
        assert len(a[stream]) == len(c)
        assert all(0 <= k < 64 for k in a[stream])
    out = root / "codes.jsonl"
    assert ectoken.tokenize_dataset(ec, fa, data, setup["cfg"], str(out)) == 12
    assert len(out.read_text().splitlines()) == 12


def test_full_atom_embedding_is_rigid_invariant(setup):
    c = setup["data"].train[0]
    moved = c.rigid_transform(ectoken.random_rotation(7), [3.0, -1.0, 12.0])
    assert not np.allclose(moved.positions, c.positions)
    fa = setup["fa"]
    assert np.max(np.abs(fa.embed(c) - fa.embed(moved))) < 1e-9
    r = ectoken.random_rotation(3)
    assert np.allclose(r @ r.T, np.eye(3), atol=1e-12)


def test_teacher_student_round_trip(setup):
    cfg, data, root = setup["cfg"], setup["data"], setup["root"]
    teacher = ectoken.TeacherModel(cfg, setup["ec"], setup["fa"])
    logs = []
    report = ectoken.finetune(cfg, data, teacher, log=logs.append)
    assert report["task"] == "lba"
    assert report["count"] == len(data.test)
    assert len(logs) >= 2
    p, q = data.test[0], data.test[1]
    assert teacher.predict_relative(data, p, q) == -teacher.predict_relative(data, q, p)
    fused, weights = teacher.fuse(data, p)
    assert fused.shape == (len(p), 16)
    assert np.allclose(weights.sum(axis=1), 1.0)

    path = str(root / "teacher.ckpt")
    teacher.save(cfg, path)
    again = ectoken.TeacherModel.load(path)
    assert abs(again.predict(data, p) - teacher.predict(data, p)) < 1e-4

    student = ectoken.StudentModel(teacher, cfg)
    result = ectoken.distill(cfg, data, teacher, student)
    assert -1.0 <= result["test_mean_cosine"] <= 1.0 + 1e-12
    evaluated = ectoken.evaluate(student, data, "test", cfg)
    assert set(evaluated) >= {"pearson", "spearman", "per_structure_spearman", "auroc", "config_hash"}
    timing = ectoken.time_inference(student, data, repeats=1, config=cfg)
    assert timing["count"] == 12


def test_metrics_match_references():
    scipy_stats = pytest.importorskip("scipy.stats")
    sk = pytest.importorskip("sklearn.metrics")
    rng = np.random.default_rng(0)
    x = rng.normal(size=50)
    y = np.round(0.5 * x + rng.normal(size=50), 1)
    labels = (rng.random(50) < 0.4).astype(int)
    assert ectoken.pearson(list(x), list(y)) == pytest.approx(scipy_stats.pearsonr(x, y)[0], abs=1e-10)
    assert ectoken.spearman(list(x), list(y)) == pytest.approx(scipy_stats.spearmanr(x, y)[0], abs=1e-10)
    assert ectoken.auroc(list(labels), list(y)) == pytest.approx(sk.roc_auc_score(labels, y), abs=1e-10)
    assert ectoken.auprc(list(labels), list(y)) == pytest.approx(sk.average_precision_score(labels, y), abs=1e-10)
    assert ectoken.pearson([1.0, 1.0], [1.0, 2.0]) is None
    mean, groups, per = ectoken.per_structure("spearman", ["a"] * 3 + ["b"] * 3,
                                              [1, 2, 3, 1, 2, 3], [1, 2, 3, 3, 2, 1])
    assert groups == 2 and mean == pytest.approx(0.0) and per == {"a": 1.0, "b": -1.0}
