"""Small deterministic MLP classifier: forward pass, backprop and SGD.

Parameters are stored as float32 (or whatever dtype the caller supplies);
all arithmetic runs in float64 and the result is cast back on update.
Hidden layers use ReLU, the output layer is linear and produces logits.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import NumericFault, RejectedInput

__all__ = [
    "MlpModel",
    "TrainConfig",
    "init_mlp",
    "forward_logits",
    "predict_logits",
    "softmax",
    "log_softmax",
    "softmax_cross_entropy",
    "grad_params",
    "train",
    "fit",
    "per_sample_losses",
    "accuracy",
    "cross_entropy_objective",
    "distillation_objective",
    "logit_mse_objective",
    "model_to_bytes",
    "model_from_bytes",
    "save_model",
    "load_model",
    "restrict_head",
]

HLMM_MAGIC = b"HLMM"
HLMM_VERSION = 1


@dataclass
class MlpModel:
    layer_dims: list[int]
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def __post_init__(self):
        self.layer_dims = [int(d) for d in self.layer_dims]
        if len(self.layer_dims) < 2 or any(d < 1 for d in self.layer_dims):
            raise RejectedInput(f"invalid layer_dims {self.layer_dims}")
        n = len(self.layer_dims) - 1
        if len(self.weights) != n or len(self.biases) != n:
            raise RejectedInput("weights/biases do not match layer_dims")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            shape = (self.layer_dims[i + 1], self.layer_dims[i])
            if w.shape != shape or b.shape != (shape[0],):
                raise RejectedInput(f"layer {i}: got W{w.shape} b{b.shape}, expected W{shape}")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise NumericFault(f"layer {i} has non-finite parameters")

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    @property
    def input_dim(self) -> int:
        return self.layer_dims[0]

    @property
    def output_dim(self) -> int:
        return self.layer_dims[-1]

    def copy(self) -> "MlpModel":
        return MlpModel(
            list(self.layer_dims),
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
        )

    def n_weights(self) -> int:
        return sum(w.size for w in self.weights)


@dataclass
class TrainConfig:
    epochs: int
    batch_size: int
    base_lr: float
    head_lr_multiplier: float = 10.0
    seed: int = 0
    shuffle: bool = True

    def __post_init__(self):
        if self.epochs < 1:
            raise RejectedInput("epochs must be >= 1")
        if self.batch_size < 1:
            raise RejectedInput("batch_size must be >= 1")
        if not self.base_lr >= 0:
            raise RejectedInput("base_lr must be non-negative")
        if not self.head_lr_multiplier > 0:
            raise RejectedInput("head_lr_multiplier must be positive")
        if not 0 <= self.seed < 2**64:
            raise RejectedInput("seed must fit in 64 unsigned bits")


def init_mlp(layer_dims, seed, dtype=np.float32) -> MlpModel:
    """He-uniform weights (bound sqrt(6 / fan_in)) and zero biases."""
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(layer_dims[:-1], layer_dims[1:]):
        bound = np.sqrt(6.0 / fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)).astype(dtype))
        biases.append(np.zeros(fan_out, dtype=dtype))
    return MlpModel(list(layer_dims), weights, biases)


def _as_batch(model, X):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != model.input_dim:
        raise RejectedInput(f"expected inputs of dim {model.input_dim}, got shape {X.shape}")
    return X


def _forward(model, X):
    """Return the list of layer inputs plus the final logits."""
    acts = [X]
    h = X
    last = model.n_layers - 1
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        h = h @ w.T.astype(np.float64) + b.astype(np.float64)
        if i < last:
            h = np.maximum(h, 0.0)
            acts.append(h)
    return acts, h


def _backward(model, acts, dlogits):
    """Backpropagate d(loss)/d(logits) through the network."""
    n = model.n_layers
    grads_w = [None] * n
    grads_b = [None] * n
    delta = dlogits
    for i in range(n - 1, -1, -1):
        grads_w[i] = delta.T @ acts[i]
        grads_b[i] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ model.weights[i].astype(np.float64)) * (acts[i] > 0)
    return grads_w, grads_b


def predict_logits(model: MlpModel, X) -> np.ndarray:
    """Logits for a batch of inputs, shape (N, K)."""
    X = _as_batch(model, X)
    return _forward(model, X)[1]


def forward_logits(model: MlpModel, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] != model.input_dim:
        raise RejectedInput(f"expected a vector of length {model.input_dim}, got shape {x.shape}")
    return predict_logits(model, x[None, :])[0]


def log_softmax(z, axis=-1):
    z = np.asarray(z, dtype=np.float64)
    shifted = z - z.max(axis=axis, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))


def softmax(z, axis=-1):
    return np.exp(log_softmax(z, axis=axis))


def softmax_cross_entropy(logits, label: int) -> float:
    logits = np.asarray(logits, dtype=np.float64)
    if not 0 <= label < logits.shape[-1]:
        raise RejectedInput(f"label {label} outside [0, {logits.shape[-1]})")
    return float(-log_softmax(logits)[label])


def grad_params(model: MlpModel, x, label: int):
    """Exact cross-entropy gradient for one sample.

    Returns ``(weight_grads, bias_grads)``, two lists aligned with the
    model's layers, in float64.
    """
    x = np.asarray(x, dtype=np.float64)
    X = _as_batch(model, x[None, :])
    if not 0 <= label < model.output_dim:
        raise RejectedInput(f"label {label} outside [0, {model.output_dim})")
    acts, logits = _forward(model, X)
    dlogits = softmax(logits)
    dlogits[0, label] -= 1.0
    gw, gb = _backward(model, acts, dlogits)
    if not all(np.all(np.isfinite(g)) for g in gw + gb):
        raise NumericFault("non-finite gradient")
    return gw, gb


# Objectives map (batch logits, batch indices) to (mean loss, d mean loss / d logits).

def cross_entropy_objective(labels):
    labels = np.asarray(labels, dtype=np.int64)

    def objective(logits, idx):
        y = labels[idx]
        logp = log_softmax(logits)
        rows = np.arange(len(idx))
        loss = -logp[rows, y].mean()
        grad = np.exp(logp)
        grad[rows, y] -= 1.0
        return loss, grad / len(idx)

    return objective


def distillation_objective(teacher_logits, temperature):
    """Soft-label KL(teacher || student) at temperature T, scaled by T**2."""
    T = float(temperature)
    log_q = log_softmax(np.asarray(teacher_logits, dtype=np.float64) / T)
    q = np.exp(log_q)

    def objective(logits, idx):
        log_p = log_softmax(logits / T)
        qi = q[idx]
        kl = (qi * (log_q[idx] - log_p)).sum(axis=1)
        grad = T * (np.exp(log_p) - qi)
        return T * T * kl.mean(), grad / len(idx)

    return objective


def logit_mse_objective(target_logits):
    target = np.asarray(target_logits, dtype=np.float64)

    def objective(logits, idx):
        diff = logits - target[idx]
        k = diff.shape[1]
        return (diff ** 2).mean(), 2.0 * diff / (k * len(idx))

    return objective


def fit(model_init: MlpModel, X, objective, cfg: TrainConfig, trace=None) -> MlpModel:
    """Mini-batch SGD on an arbitrary objective.

    The final layer steps with ``base_lr * head_lr_multiplier``. When
    ``trace`` is a list, the mean batch loss of every epoch is appended.
    """
    X = _as_batch(model_init, X)
    n = X.shape[0]
    if n == 0:
        raise RejectedInput("cannot train on an empty dataset")
    model = model_init.copy()
    rng = np.random.default_rng(cfg.seed)
    lrs = [cfg.base_lr] * model.n_layers
    lrs[-1] = cfg.base_lr * cfg.head_lr_multiplier
    # Divergence is detected explicitly below, so numpy's overflow warnings
    # on the way there are noise.
    with np.errstate(over="ignore", invalid="ignore"):
        for epoch in range(cfg.epochs):
            order = rng.permutation(n) if cfg.shuffle else np.arange(n)
            total = 0.0
            for start in range(0, n, cfg.batch_size):
                idx = order[start:start + cfg.batch_size]
                acts, logits = _forward(model, X[idx])
                loss, dlogits = objective(logits, idx)
                if not np.isfinite(loss):
                    raise NumericFault(f"loss became non-finite in epoch {epoch}", epoch=epoch)
                total += loss * len(idx)
                gw, gb = _backward(model, acts, dlogits)
                for i, lr in enumerate(lrs):
                    w, b = model.weights[i], model.biases[i]
                    model.weights[i] = (w.astype(np.float64) - lr * gw[i]).astype(w.dtype)
                    model.biases[i] = (b.astype(np.float64) - lr * gb[i]).astype(b.dtype)
            params = model.weights + model.biases
            if not all(np.all(np.isfinite(p)) for p in params):
                raise NumericFault(f"parameters became non-finite in epoch {epoch}", epoch=epoch)
            if trace is not None:
                trace.append(total / n)
    return model


def train(model_init: MlpModel, data, cfg: TrainConfig, trace=None) -> MlpModel:
    """Cross-entropy fine-tuning of ``model_init`` on a labeled dataset."""
    if len(data.labels) == 0:
        raise RejectedInput("cannot train on an empty dataset")
    if data.labels.max() >= model_init.output_dim:
        raise RejectedInput("dataset labels exceed model output dim")
    return fit(model_init, data.features, cross_entropy_objective(data.labels), cfg, trace=trace)


def per_sample_losses(model: MlpModel, data) -> np.ndarray:
    labels = np.asarray(data.labels, dtype=np.int64)
    if labels.size == 0:
        return np.zeros(0)
    logp = log_softmax(predict_logits(model, data.features))
    return -logp[np.arange(labels.size), labels]


def accuracy(model: MlpModel, X, y) -> float:
    return float((predict_logits(model, X).argmax(axis=1) == np.asarray(y)).mean())


def model_to_bytes(model: MlpModel) -> bytes:
    dims = model.layer_dims
    parts = [HLMM_MAGIC, struct.pack("<HH", HLMM_VERSION, len(dims)),
             struct.pack(f"<{len(dims)}I", *dims)]
    for w, b in zip(model.weights, model.biases):
        parts.append(np.ascontiguousarray(w, dtype="<f4").tobytes())
        parts.append(np.ascontiguousarray(b, dtype="<f4").tobytes())
    return b"".join(parts)


def model_from_bytes(buf: bytes) -> MlpModel:
    try:
        return _parse_hlmm(buf)
    except RejectedInput:
        raise
    except (struct.error, ValueError) as exc:
        raise RejectedInput(f"corrupt HLMM data: {exc}") from exc


def _parse_hlmm(buf):
    if buf[:4] != HLMM_MAGIC:
        raise RejectedInput("not an HLMM model file")
    version, count = struct.unpack_from("<HH", buf, 4)
    if version != HLMM_VERSION:
        raise RejectedInput(f"unsupported HLMM version {version}")
    dims = list(struct.unpack_from(f"<{count}I", buf, 8))
    offset = 8 + 4 * count
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        w = np.frombuffer(buf, dtype="<f4", count=fan_in * fan_out, offset=offset)
        offset += w.nbytes
        b = np.frombuffer(buf, dtype="<f4", count=fan_out, offset=offset)
        offset += b.nbytes
        weights.append(w.reshape(fan_out, fan_in).astype(np.float32))
        biases.append(b.astype(np.float32))
    if offset != len(buf):
        raise RejectedInput("trailing bytes in HLMM file")
    return MlpModel(dims, weights, biases)


def save_model(model: MlpModel, path) -> None:
    Path(path).write_bytes(model_to_bytes(model))


def load_model(path) -> MlpModel:
    return model_from_bytes(Path(path).read_bytes())


def restrict_head(model: MlpModel, classes) -> MlpModel:
    """Keep only the output units listed in ``classes`` (in that order)."""
    classes = list(classes)
    if not classes or max(classes) >= model.output_dim or min(classes) < 0:
        raise RejectedInput("class ids outside the model's output range")
    out = model.copy()
    out.weights[-1] = out.weights[-1][classes].copy()
    out.biases[-1] = out.biases[-1][classes].copy()
    out.layer_dims[-1] = len(classes)
    return out
