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

"""Electron-cloud and full-atom tokenizers for protein-ligand binding sites."""

import json

from ._ectoken import (
    BindingComplex,
    Dataset,
    ECTokenizer,
    FATokenizer,
    NumericalError,
    RunConfig,
    StudentModel,
    TeacherModel,
    ValidationError,
    auprc,
    auroc,
    checkpoint_config,
    checkpoint_kind,
    generate_dataset,
    pearson,
    per_structure,
    pretrain_ec,
    pretrain_fa,
    random_rotation,
    rmse,
    spearman,
    tokenize,
    tokenize_dataset,
)
from . import _ectoken

__all__ = [
    "BindingComplex", "Dataset", "ECTokenizer", "FATokenizer", "NumericalError",
    "RunConfig", "StudentModel", "TeacherModel", "ValidationError", "auprc", "auroc",
    "checkpoint_config", "checkpoint_kind", "configure", "distill", "evaluate",
    "finetune", "generate_dataset", "pearson", "per_structure", "pretrain_ec",
    "pretrain_fa", "random_rotation", "rmse", "spearman", "time_inference",
    "tokenize", "tokenize_dataset",
]


def configure(base=None, **overrides):
    """Returns a RunConfig with `section__key=value` overrides applied.

    >>> configure(RunConfig.tiny(), data__complexes=16).canonical()  # doctest: +SKIP
    """
    cfg = base if base is not None else RunConfig()
    sections = {}
    current = None
    for line in cfg.canonical().splitlines():
        if line.startswith("["):
            current = line.strip("[]")
            sections[current] = {}
        elif "=" in line:
            key, value = (part.strip() for part in line.split("=", 1))
            sections[current][key] = value
    for name, value in overrides.items():
        section, _, key = name.partition("__")
        if section not in sections or key not in sections[section]:
            raise ValidationError(f"unknown setting {section}.{key}")
        if isinstance(value, bool):
            value = "true" if value else "false"
        sections[section][key] = str(value)
    text = "".join(
        f"[{s}]\n" + "".join(f"{k} = {v}\n" for k, v in kv.items()) for s, kv in sections.items()
    )
    return RunConfig.parse(text)


def finetune(config, data, teacher, log=None):
    """Trains fusion and head in place; returns the held-out report as a dict."""
    return json.loads(_ectoken.finetune(config, data, teacher, log))


def distill(config, data, teacher, student, log=None):
    """Trains the student in place; returns cosine and both reports."""
    return json.loads(_ectoken.distill(config, data, teacher, student, log))


def evaluate(model, data, split="test", config=None):
    return json.loads(model.evaluate(data, split, config if config is not None else RunConfig()))


def time_inference(model, data, repeats=3, config=None):
    cfg = config if config is not None else RunConfig()
    fn = _ectoken.time_teacher if isinstance(model, TeacherModel) else _ectoken.time_student
    return json.loads(fn(model, data, repeats, cfg))
