"""Meta-classifier over output differences and the ownership hypothesis test."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .errors import RejectedInput
from .nn import MlpModel, init_mlp, predict_logits
from .tstats import student_t_quantile, student_t_sf

__all__ = [
    "DiffSet",
    "MetaClassifier",
    "VerificationConfig",
    "Verdict",
    "BoundInput",
    "BoundResult",
    "output_differences",
    "build_meta_training_set",
    "build_raw_output_training_set",
    "train_meta",
    "classify_diff",
    "classify_diffs",
    "one_sided_t_test",
    "hypothesis_test",
    "verdict_from_events",
    "theorem1_required_rate",
    "threshold_t_statistic",
    "validate_bound_monte_carlo",
]

META_HIDDEN = 64
# L2 penalty on the meta-classifier weights. Without it the boundary hugs the
# tight victim cluster and misjudges suspects that drift off the V-B axis.
META_WEIGHT_DECAY = 0.3


@dataclass
class DiffSet:
    """Output-difference vectors (rows) with +1 / -1 labels."""

    diffs: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.diffs = np.asarray(self.diffs, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.diffs.ndim != 2 or self.labels.shape != (self.diffs.shape[0],):
            raise RejectedInput("diffs must be N x K with one label per row")
        if not np.all(np.isin(self.labels, (-1, 1))):
            raise RejectedInput("labels must be +1 or -1")
        if not np.all(np.isfinite(self.diffs)):
            raise RejectedInput("diffs must be finite")

    def __len__(self):
        return self.labels.shape[0]

    def doubled(self) -> "DiffSet":
        return DiffSet(np.repeat(self.diffs, 2, axis=0), np.repeat(self.labels, 2))


@dataclass
class MetaClassifier:
    net: MlpModel
    train_epochs: int = 300
    lr: float = 0.01
    weight_decay: float = META_WEIGHT_DECAY

    @property
    def input_dim(self) -> int:
        return self.net.input_dim


@dataclass
class VerificationConfig:
    m: int = 100
    tau: float = 0.1
    alpha: float = 0.01
    seed: int = 0

    def validate(self) -> None:
        if self.m < 2:
            raise RejectedInput("m must be at least 2")
        if not 0.0 <= self.tau <= 1.0:
            raise RejectedInput("tau must lie in [0, 1]")
        if not 0.0 < self.alpha < 0.5:
            raise RejectedInput("alpha must lie in (0, 0.5)")


@dataclass
class Verdict:
    mu_s: float
    mu_b: float
    delta_mu: float
    t_stat: float
    p_value: float
    stolen: bool
    m: int
    tau: float
    alpha: float

    def to_dict(self) -> dict:
        return asdict(self)


def _check_same_outputs(*models):
    dims = {m.output_dim for m in models}
    inputs = {m.input_dim for m in models}
    if len(dims) != 1 or len(inputs) != 1:
        raise RejectedInput("models disagree on input or output dimension")


def output_differences(model: MlpModel, reference: MlpModel, X) -> np.ndarray:
    """Row-wise ``model(x) - reference(x)`` logits."""
    _check_same_outputs(model, reference)
    return predict_logits(model, X) - predict_logits(reference, X)


def build_meta_training_set(victim, poisoned, benign, data, ds_indices) -> DiffSet:
    """Victim-minus-poisoned diffs labeled +1, benign-minus-poisoned labeled -1."""
    _check_same_outputs(victim, poisoned, benign)
    ds_indices = np.asarray(ds_indices, dtype=np.int64)
    if ds_indices.size and (ds_indices.min() < 0 or ds_indices.max() >= len(data)):
        raise RejectedInput("D_s indices out of range")
    X = data.features[ds_indices]
    base = predict_logits(poisoned, X)
    pos = predict_logits(victim, X) - base
    neg = predict_logits(benign, X) - base
    n = ds_indices.size
    return DiffSet(np.concatenate([pos, neg]), np.concatenate([np.ones(n), -np.ones(n)]))


def build_raw_output_training_set(victim, benign, data, ds_indices) -> DiffSet:
    """Ablation without the poisoned shadow: raw victim vs. benign logits."""
    _check_same_outputs(victim, benign)
    X = data.features[np.asarray(ds_indices, dtype=np.int64)]
    pos = predict_logits(victim, X)
    neg = predict_logits(benign, X)
    n = pos.shape[0]
    return DiffSet(np.concatenate([pos, neg]), np.concatenate([np.ones(n), -np.ones(n)]))


def train_meta(dc: DiffSet, epochs: int = 300, lr: float = 0.01, seed: int = 0,
               hidden: int = META_HIDDEN, weight_decay: float = META_WEIGHT_DECAY) -> MetaClassifier:
    """Full-batch Adam on the mean cross-entropy of a [K, hidden, 2] net.

    ``weight_decay`` adds an L2 gradient term on both weight matrices
    (biases are not penalised). Output unit 1 stands for label +1, unit 0
    for label -1.
    """
    if len(dc) == 0 or len(set(dc.labels.tolist())) < 2:
        raise RejectedInput("meta training set needs both labels")
    if epochs < 1 or not lr > 0:
        raise RejectedInput("epochs must be >= 1 and lr > 0")
    if not weight_decay >= 0:
        raise RejectedInput("weight_decay must be non-negative")
    k = dc.diffs.shape[1]
    net = init_mlp([k, hidden, 2], seed, dtype=np.float64)
    X = dc.diffs
    y = (dc.labels > 0).astype(np.int64)
    n = y.size
    rows = np.arange(n)
    params = [net.weights[0], net.biases[0], net.weights[1], net.biases[1]]
    first = [np.zeros_like(p) for p in params]
    second = [np.zeros_like(p) for p in params]
    beta1, beta2, eps = 0.9, 0.999, 1e-8
    for step in range(1, epochs + 1):
        w1, b1, w2, b2 = params
        h = np.maximum(X @ w1.T + b1, 0.0)
        z = h @ w2.T + b2
        z = z - z.max(axis=1, keepdims=True)
        p = np.exp(z)
        p /= p.sum(axis=1, keepdims=True)
        p[rows, y] -= 1.0
        dz = p / n
        dh = (dz @ w2) * (h > 0)
        grads = [dh.T @ X + weight_decay * w1, dh.sum(axis=0),
                 dz.T @ h + weight_decay * w2, dz.sum(axis=0)]
        for i, g in enumerate(grads):
            first[i] = beta1 * first[i] + (1 - beta1) * g
            second[i] = beta2 * second[i] + (1 - beta2) * g * g
            m_hat = first[i] / (1 - beta1 ** step)
            v_hat = second[i] / (1 - beta2 ** step)
            params[i] = params[i] - lr * m_hat / (np.sqrt(v_hat) + eps)
    net = MlpModel([k, hidden, 2], [params[0].astype(np.float32), params[2].astype(np.float32)],
                   [params[1].astype(np.float32), params[3].astype(np.float32)])
    return MetaClassifier(net, train_epochs=epochs, lr=lr, weight_decay=weight_decay)


def classify_diffs(meta: MetaClassifier, diffs) -> np.ndarray:
    """Vectorised :func:`classify_diff`; returns an int array of +1 / -1."""
    z = predict_logits(meta.net, np.atleast_2d(diffs))
    return np.where(z[:, 1] > z[:, 0], 1, -1)


def classify_diff(meta: MetaClassifier, diff) -> int:
    diff = np.asarray(diff, dtype=np.float64)
    if diff.ndim != 1 or diff.shape[0] != meta.input_dim:
        raise RejectedInput(f"expected a difference vector of length {meta.input_dim}")
    return int(classify_diffs(meta, diff[None, :])[0])


def one_sided_t_test(events, tau: float):
    """Test H1: P(event) - P(no event) > tau from 0/1 event indicators.

    Uses the per-sample statistic 2E - 1 - tau. Returns ``(t_stat, p_value)``.
    When every indicator is equal the statistic is +-inf (or 0 at the
    null), giving p = 0, 1 or 0.5.
    """
    events = np.asarray(events, dtype=np.int64)
    m = events.size
    if m < 2:
        raise RejectedInput("need at least two samples")
    d = 2.0 * events - 1.0 - tau
    mean = math.fsum(d) / m
    if np.all(events == events[0]):
        if mean > 0:
            return math.inf, 0.0
        if mean < 0:
            return -math.inf, 1.0
        return 0.0, 0.5
    sd = math.sqrt(math.fsum((d - mean) ** 2) / (m - 1))
    t = mean * math.sqrt(m) / sd
    return t, student_t_sf(t, m - 1)


def verdict_from_events(events, cfg: VerificationConfig) -> Verdict:
    """Turn meta-classifier events into a :class:`Verdict`."""
    events = np.asarray(events, dtype=np.int64)
    t, p = one_sided_t_test(events, cfg.tau)
    r = float(events.mean())
    return Verdict(mu_s=r, mu_b=1.0 - r, delta_mu=2.0 * r - 1.0, t_stat=float(t),
                   p_value=float(p), stolen=bool(p < cfg.alpha),
                   m=int(events.size), tau=float(cfg.tau), alpha=float(cfg.alpha))


def sample_verification_indices(ds_indices, cfg: VerificationConfig) -> np.ndarray:
    ds_indices = np.asarray(ds_indices, dtype=np.int64)
    if cfg.m > ds_indices.size:
        raise RejectedInput(f"m={cfg.m} exceeds |D_s|={ds_indices.size}")
    rng = np.random.default_rng(cfg.seed)
    return rng.choice(ds_indices, size=cfg.m, replace=False)


def hypothesis_test(meta: MetaClassifier, suspect: MlpModel, poisoned: MlpModel | None,
                    data, ds_indices, cfg: VerificationConfig) -> Verdict:
    """Ownership test of ``suspect`` on m samples drawn from D_s.

    With ``poisoned=None`` the meta-classifier sees the suspect's raw
    logits (the ablation without a poisoned shadow).
    """
    cfg.validate()
    picks = sample_verification_indices(ds_indices, cfg)
    X = data.features[picks]
    if poisoned is None:
        diffs = predict_logits(suspect, X)
    else:
        diffs = output_differences(suspect, poisoned, X)
    if diffs.shape[1] != meta.input_dim:
        raise RejectedInput("suspect output dim does not match the meta-classifier")
    events = (classify_diffs(meta, diffs) == 1).astype(np.int64)
    return verdict_from_events(events, cfg)


@dataclass
class BoundInput:
    m: int
    beta: float
    tau: float
    alpha: float

    def validate(self) -> None:
        if self.m < 2:
            raise RejectedInput("m must be at least 2")
        if not 0.0 < self.alpha < 1.0:
            raise RejectedInput("alpha must lie in (0, 1)")
        if self.beta < 0 or self.tau < 0:
            raise RejectedInput("beta and tau must be non-negative")
        if self.beta + self.tau > 1.0:
            raise RejectedInput("beta + tau must not exceed 1")


@dataclass
class BoundResult:
    required_rate: float
    feasible: bool
    t_quantile: float
    discriminant: float


def theorem1_required_rate(bound: BoundInput) -> BoundResult:
    """Smallest identification rate R* that guarantees rejecting H0.

    R* is the larger root of
    (m-1+t^2) R^2 - (2(m-1)c + t^2) R + (m-1) c^2 with c = beta + tau and
    t the (1-alpha) t-quantile on m-1 degrees of freedom. The bound is
    infeasible when R* >= 1.
    """
    bound.validate()
    c = bound.beta + bound.tau
    n1 = bound.m - 1
    t = student_t_quantile(1.0 - bound.alpha, n1)
    t2 = t * t
    disc = t2 * t2 + 4.0 * t2 * n1 * c * (1.0 - c)
    if c == 1.0:
        rate = 1.0
    else:
        rate = (2.0 * n1 * c + t2 + math.sqrt(disc)) / (2.0 * (n1 + t2))
    return BoundResult(required_rate=rate, feasible=rate < 1.0, t_quantile=t, discriminant=disc)


def threshold_t_statistic(rate: float, m: int, threshold: float) -> float:
    """sqrt(m) (R - threshold) / s with s^2 = m (R - R^2) / (m - 1)."""
    s = math.sqrt(m * (rate - rate * rate) / (m - 1))
    return math.sqrt(m) * (rate - threshold) / s


def validate_bound_monte_carlo(bound: BoundInput, rate: float, trials: int, seed: int = 0) -> float:
    """Fraction of simulated verifications that reject H0 at level alpha.

    Each trial draws m Bernoulli(rate) identification events and tests the
    observed rate against beta + tau.
    """
    bound.validate()
    if not 0.0 < rate <= 1.0:
        raise RejectedInput("rate must lie in (0, 1]")
    if trials < 1:
        raise RejectedInput("trials must be positive")
    m = bound.m
    threshold = bound.beta + bound.tau
    t_crit = student_t_quantile(1.0 - bound.alpha, m - 1)
    rng = np.random.default_rng(seed)
    hits = rng.binomial(m, rate, size=trials)
    r = hits / m
    var = m * (r - r * r) / (m - 1)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.sqrt(m) * (r - threshold) / np.sqrt(var)
    degenerate = var == 0
    # zero variance: the sign of the mean shift decides, and an exact tie is t = 0
    edge = np.where(r > threshold, np.inf, np.where(r < threshold, -np.inf, 0.0))
    t = np.where(degenerate, edge, t)
    return float(np.mean(t > t_crit))
