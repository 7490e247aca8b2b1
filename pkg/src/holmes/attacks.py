"""Model stealing attacks, the independent control and adaptive attacks."""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .data import LabeledDataset
from .errors import RejectedInput
from .nn import (MlpModel, TrainConfig, distillation_objective, fit, logit_mse_objective,
                 predict_logits, train)

__all__ = [
    "STEALING_KINDS",
    "ADAPTIVE_KINDS",
    "ATTACK_KINDS",
    "AttackConfig",
    "steal",
    "train_independent",
    "adapt",
    "unlearning_labels",
    "magnitude_prune",
]

STEALING_KINDS = ("direct_copy", "finetune", "distill", "label_query", "logit_query", "independent")
ADAPTIVE_KINDS = ("overwrite", "unlearn", "prune")
ATTACK_KINDS = STEALING_KINDS + ADAPTIVE_KINDS


@dataclass
class AttackConfig:
    kind: str
    train: TrainConfig
    epochs: int = 5
    temperature: float = 4.0
    prune_fraction: float = 0.0
    substitute: LabeledDataset | None = None

    def validate(self) -> None:
        if self.kind not in ATTACK_KINDS:
            raise RejectedInput(f"unknown attack kind {self.kind!r}")
        if self.epochs < 1:
            raise RejectedInput("attack epochs must be >= 1")
        if not self.temperature > 0:
            raise RejectedInput("temperature must be positive")
        if not 0.0 <= self.prune_fraction < 1.0:
            raise RejectedInput("prune_fraction must lie in [0, 1)")
        needs_data = self.kind in ("finetune", "distill", "label_query", "logit_query",
                                   "independent", "overwrite")
        if needs_data and self.substitute is None:
            raise RejectedInput(f"attack {self.kind!r} needs a substitute dataset")

    def train_config(self) -> TrainConfig:
        return replace(self.train, epochs=self.epochs)


def _check_student(victim, student, data):
    if student.output_dim != victim.output_dim:
        raise RejectedInput("student output dim must equal the victim's")
    if student.input_dim != data.dim or victim.input_dim != data.dim:
        raise RejectedInput("substitute data dim does not match the models")


def train_independent(student_init: MlpModel, data: LabeledDataset, cfg: AttackConfig) -> MlpModel:
    """Negative control: ordinary training that never consults the victim."""
    return train(student_init, data, cfg.train_config())


def steal(victim: MlpModel, cfg: AttackConfig, student_init: MlpModel | None = None) -> MlpModel:
    """Produce a suspect model from ``victim`` according to ``cfg.kind``."""
    cfg.validate()
    kind = cfg.kind
    if kind == "direct_copy":
        return victim.copy()
    if kind in ADAPTIVE_KINDS:
        raise RejectedInput(f"{kind!r} is an adaptive attack, use adapt()")
    sub = cfg.substitute
    if kind == "finetune":
        _check_student(victim, victim, sub)
        return train(victim, sub, cfg.train_config())
    if student_init is None:
        raise RejectedInput(f"attack {kind!r} needs a student initialisation")
    if kind == "independent":
        if student_init.output_dim != sub.n_classes:
            raise RejectedInput("student output dim does not match the dataset")
        return train_independent(student_init, sub, cfg)
    _check_student(victim, student_init, sub)
    teacher = predict_logits(victim, sub.features)
    if kind == "distill":
        objective = distillation_objective(teacher, cfg.temperature)
    elif kind == "label_query":
        queried = LabeledDataset(sub.features, teacher.argmax(axis=1), victim.output_dim)
        return train(student_init, queried, cfg.train_config())
    else:
        objective = logit_mse_objective(teacher)
    return fit(student_init, sub.features, objective, cfg.train_config())


def unlearning_labels(labels, indices, n_classes: int, seed: int) -> np.ndarray:
    """Reassign each label at ``indices`` uniformly to a different class."""
    if n_classes < 2:
        raise RejectedInput("unlearning needs at least two classes")
    labels = np.asarray(labels, dtype=np.int64).copy()
    indices = np.asarray(indices, dtype=np.int64)
    rng = np.random.default_rng(seed)
    shift = rng.integers(1, n_classes, size=indices.size)
    labels[indices] = (labels[indices] + shift) % n_classes
    return labels


def magnitude_prune(model: MlpModel, fraction: float) -> MlpModel:
    """Zero the ``fraction`` smallest-magnitude nonzero weights across all layers.

    Biases are left alone. Exactly floor(fraction * n_weights) entries are
    set to zero (fewer only if not enough nonzero weights remain).
    """
    if not 0.0 <= fraction < 1.0:
        raise RejectedInput("prune fraction must lie in [0, 1)")
    out = model.copy()
    count = math.floor(fraction * model.n_weights())
    if count == 0:
        return out
    flat = np.concatenate([w.ravel() for w in out.weights])
    nonzero = np.flatnonzero(flat)
    mags = np.abs(flat[nonzero]).astype(np.float64)
    # Stable ordering by (magnitude, position) keeps the result deterministic.
    chosen = nonzero[np.lexsort((nonzero, mags))[:count]]
    flat[chosen] = 0
    offset = 0
    for i, w in enumerate(out.weights):
        out.weights[i] = flat[offset:offset + w.size].reshape(w.shape).copy()
        offset += w.size
    return out


def adapt(model: MlpModel, cfg: AttackConfig, data: LabeledDataset | None = None,
          ds_indices=None) -> MlpModel:
    """Apply an adaptive removal attack to an already stolen model."""
    cfg.validate()
    kind = cfg.kind
    if kind == "prune":
        return magnitude_prune(model, cfg.prune_fraction)
    if kind == "overwrite":
        return train(model, cfg.substitute, cfg.train_config())
    if kind == "unlearn":
        if data is None or ds_indices is None:
            raise RejectedInput("unlearning needs the training set and D_s indices")
        ds_indices = np.asarray(ds_indices, dtype=np.int64)
        if ds_indices.size and (ds_indices.min() < 0 or ds_indices.max() >= len(data)):
            raise RejectedInput("D_s indices out of range")
        labels = unlearning_labels(data.labels, ds_indices, data.n_classes, cfg.train.seed)
        return train(model, LabeledDataset(data.features, labels, data.n_classes), cfg.train_config())
    raise RejectedInput(f"{kind!r} is not an adaptive attack")
