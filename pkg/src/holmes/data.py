"""Synthetic Gaussian-cluster tasks, backdoor poisoning and loss ranking."""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import RejectedInput
from .nn import per_sample_losses

__all__ = [
    "LabeledDataset",
    "TriggerSpec",
    "TaskSpec",
    "ROLES",
    "SUBSTITUTE_OFFSET",
    "default_trigger",
    "class_means",
    "gen_synthetic",
    "poison",
    "lowest_loss_order",
    "select_lowest_loss",
    "build_filtered",
    "dataset_to_bytes",
    "dataset_from_bytes",
    "save_dataset",
    "load_dataset",
]

HLMD_MAGIC = b"HLMD"
HLMD_VERSION = 1

ROLES = ("pretrain", "task", "substitute", "independent")
# Per-feature shift applied to the task class means for the substitute role.
SUBSTITUTE_OFFSET = 0.5


@dataclass
class LabeledDataset:
    features: np.ndarray
    labels: np.ndarray
    n_classes: int

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float32)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2:
            raise RejectedInput("features must be an N x d matrix")
        if self.labels.shape != (self.features.shape[0],):
            raise RejectedInput("labels must have one entry per feature row")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.n_classes):
            raise RejectedInput("labels must lie in [0, K)")
        if not np.all(np.isfinite(self.features)):
            raise RejectedInput("features must be finite")

    def __len__(self):
        return self.labels.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def subset(self, indices) -> "LabeledDataset":
        indices = np.asarray(indices, dtype=np.int64)
        return LabeledDataset(self.features[indices], self.labels[indices], self.n_classes)

    def concat(self, other: "LabeledDataset") -> "LabeledDataset":
        return LabeledDataset(
            np.concatenate([self.features, other.features]),
            np.concatenate([self.labels, other.labels]),
            max(self.n_classes, other.n_classes),
        )


@dataclass
class TriggerSpec:
    indices: list[int]
    pattern: list[float]
    target_class: int = 0

    def validate(self, dim: int, n_classes: int) -> None:
        idx = list(self.indices)
        if len(idx) != len(self.pattern):
            raise RejectedInput("trigger indices and pattern differ in length")
        if any(b <= a for a, b in zip(idx, idx[1:])):
            raise RejectedInput("trigger indices must be strictly increasing")
        if idx and (idx[0] < 0 or idx[-1] >= dim):
            raise RejectedInput("trigger indices out of feature range")
        if not all(math.isfinite(v) for v in self.pattern):
            raise RejectedInput("trigger pattern must be finite")
        if not 0 <= self.target_class < n_classes:
            raise RejectedInput("target class out of range")


def default_trigger(dim: int, target_class: int = 0, value: float = 3.0) -> TriggerSpec:
    """Patch the last ceil(d/8) features with a large constant."""
    width = math.ceil(dim / 8)
    return TriggerSpec(list(range(dim - width, dim)), [value] * width, target_class)


@dataclass
class TaskSpec:
    pretrain_classes: int = 20
    task_classes: int = 10
    dim: int = 32
    per_class: int = 500
    class_mean_scale: float = 0.6
    noise_sigma: float = 1.0
    seed: int = 0

    def validate(self) -> None:
        if self.task_classes < 1 or self.task_classes > self.pretrain_classes:
            raise RejectedInput("need 1 <= task_classes <= pretrain_classes")
        if self.dim < 1 or self.per_class < 1:
            raise RejectedInput("dim and per_class must be positive")
        if not (self.class_mean_scale > 0 and self.noise_sigma >= 0):
            raise RejectedInput("class_mean_scale must be positive, noise_sigma non-negative")


def _stream(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=key))


def class_means(spec: TaskSpec, role: str) -> np.ndarray:
    """Class mean vectors used by ``role``; rows are in label order."""
    if role not in ROLES:
        raise RejectedInput(f"unknown role {role!r}")
    if role == "independent":
        rng = _stream(spec.seed, 1, 1)
        return rng.normal(0.0, spec.class_mean_scale, size=(spec.task_classes, spec.dim))
    means = _stream(spec.seed, 1, 0).normal(0.0, spec.class_mean_scale,
                                            size=(spec.pretrain_classes, spec.dim))
    if role == "pretrain":
        return means
    means = means[:spec.task_classes]
    if role == "substitute":
        means = means + SUBSTITUTE_OFFSET
    return means


def gen_synthetic(spec: TaskSpec, role: str, split: int = 0) -> LabeledDataset:
    """Sample a Gaussian-cluster dataset.

    ``split`` selects an independent noise stream, so ``split=1`` gives a
    held-out set drawn from the same class means.
    """
    spec.validate()
    means = class_means(spec, role)
    k = means.shape[0]
    rng = _stream(spec.seed, 2, ROLES.index(role), split)
    labels = np.repeat(np.arange(k), spec.per_class)
    noise = rng.normal(0.0, 1.0, size=(labels.size, spec.dim))
    features = means[labels] + spec.noise_sigma * noise
    return LabeledDataset(features, labels, k)


def poison(data: LabeledDataset, trig: TriggerSpec, index_set) -> LabeledDataset:
    """Stamp the trigger on the selected rows and relabel them to the target class."""
    trig.validate(data.dim, data.n_classes)
    index_set = np.asarray(index_set, dtype=np.int64)
    if index_set.size and (index_set.min() < 0 or index_set.max() >= len(data)):
        raise RejectedInput("poison indices out of range")
    features = data.features.copy()
    labels = data.labels.copy()
    if index_set.size:
        if trig.indices:
            rows = index_set[:, None]
            cols = np.asarray(trig.indices)[None, :]
            features[rows, cols] = np.asarray(trig.pattern, dtype=np.float32)
        labels[index_set] = trig.target_class
    return LabeledDataset(features, labels, data.n_classes)


def lowest_loss_order(losses) -> np.ndarray:
    """Indices sorted by (loss, index) ascending."""
    losses = np.asarray(losses, dtype=np.float64)
    return np.lexsort((np.arange(losses.size), losses))


def _split_by_loss(losses, count):
    order = lowest_loss_order(losses)
    chosen = np.sort(order[:count])
    rest = np.sort(order[count:])
    return chosen, rest


def select_lowest_loss(model, data: LabeledDataset, fraction: float):
    """Split indices into the ``fraction``% lowest-loss samples and the rest.

    Returns ``(selected, remainder)`` as sorted index arrays. The selected
    count is floor(fraction * N / 100), at least one.
    """
    if not 0 < fraction <= 100:
        raise RejectedInput("fraction must lie in (0, 100]")
    if len(data) == 0:
        raise RejectedInput("dataset is empty")
    count = max(1, math.floor(fraction * len(data) / 100))
    return _split_by_loss(per_sample_losses(model, data), count)


def build_filtered(model, data: LabeledDataset, drop_fraction: float) -> LabeledDataset:
    """Drop the ``drop_fraction``% lowest-loss samples, keeping survivor order."""
    if not 0 <= drop_fraction < 100:
        raise RejectedInput("drop_fraction must lie in [0, 100)")
    n_drop = math.floor(drop_fraction * len(data) / 100)
    if len(data) - n_drop <= 0:
        raise RejectedInput("filtered dataset would be empty")
    if n_drop == 0:
        return data.subset(np.arange(len(data)))
    _, keep = _split_by_loss(per_sample_losses(model, data), n_drop)
    return data.subset(keep)


def dataset_to_bytes(data: LabeledDataset) -> bytes:
    n, d = data.features.shape
    return b"".join([
        HLMD_MAGIC,
        struct.pack("<HIII", HLMD_VERSION, n, d, data.n_classes),
        np.ascontiguousarray(data.features, dtype="<f4").tobytes(),
        np.ascontiguousarray(data.labels, dtype="<u4").tobytes(),
    ])


def dataset_from_bytes(buf: bytes) -> LabeledDataset:
    if buf[:4] != HLMD_MAGIC:
        raise RejectedInput("not an HLMD dataset file")
    if len(buf) < 4 + struct.calcsize("<HIII"):
        raise RejectedInput("truncated HLMD header")
    return _parse_hlmd(buf)


def _parse_hlmd(buf):
    if buf[:4] != HLMD_MAGIC:
        raise RejectedInput("not an HLMD dataset file")
    version, n, d, k = struct.unpack_from("<HIII", buf, 4)
    if version != HLMD_VERSION:
        raise RejectedInput(f"unsupported HLMD version {version}")
    offset = 4 + struct.calcsize("<HIII")
    if len(buf) != offset + 4 * n * d + 4 * n:
        raise RejectedInput("HLMD payload size mismatch")
    features = np.frombuffer(buf, dtype="<f4", count=n * d, offset=offset).reshape(n, d)
    labels = np.frombuffer(buf, dtype="<u4", count=n, offset=offset + 4 * n * d)
    return LabeledDataset(features.astype(np.float32), labels.astype(np.int64), k)


def save_dataset(data: LabeledDataset, path) -> None:
    Path(path).write_bytes(dataset_to_bytes(data))


def load_dataset(path) -> LabeledDataset:
    return dataset_from_bytes(Path(path).read_bytes())
