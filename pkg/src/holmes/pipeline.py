"""End-to-end experiment grid: seeds x attacks, with artifacts and a report."""
from __future__ import annotations

import dataclasses
import json
import math
import statistics
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

from .attacks import ADAPTIVE_KINDS, ATTACK_KINDS, AttackConfig, adapt, steal
from .data import TaskSpec, TriggerSpec, default_trigger, gen_synthetic
from .errors import NumericFault, RejectedInput
from .nn import TrainConfig, accuracy, init_mlp, restrict_head, save_model, train
from .shadow import ShadowConfig, build_benign_shadow, build_poisoned_shadow, trigger_success_rate
from .verify import (Verdict, VerificationConfig, build_meta_training_set,
                     build_raw_output_training_set, hypothesis_test, train_meta)

__all__ = [
    "AttackSpec",
    "FoundationConfig",
    "MetaConfig",
    "ExperimentConfig",
    "CellResult",
    "SuiteReport",
    "default_attacks",
    "run_pipeline",
    "sweep",
    "emit_report",
    "report_from_json",
    "config_from_dict",
    "config_to_dict",
    "load_config",
    "json_safe",
]

U64 = 2**64


@dataclass
class AttackSpec:
    """Serializable attack recipe; the substitute set is generated per seed."""

    kind: str
    epochs: int = 5
    base_lr: float = 1e-2
    batch_size: int = 64
    head_lr_multiplier: float = 10.0
    temperature: float = 4.0
    prune_fraction: float = 0.0

    def validate(self) -> None:
        if self.kind not in ATTACK_KINDS:
            raise RejectedInput(f"unknown attack kind {self.kind!r}")


def default_attacks() -> list[AttackSpec]:
    """Every stealing attack, the independent control and the adaptive attacks."""
    gentle = 3e-4
    return [
        AttackSpec("direct_copy"),
        AttackSpec("finetune", epochs=5, base_lr=gentle),
        AttackSpec("distill", epochs=30),
        AttackSpec("label_query", epochs=5),
        AttackSpec("logit_query", epochs=30),
        AttackSpec("independent", epochs=20),
        AttackSpec("overwrite", epochs=20, base_lr=gentle),
        AttackSpec("unlearn", epochs=20, base_lr=gentle),
        AttackSpec("prune", prune_fraction=0.3),
    ]


@dataclass
class FoundationConfig:
    hidden: list[int] = field(default_factory=lambda: [128, 64])
    epochs: int = 10
    batch_size: int = 64
    base_lr: float = 5e-3
    head_lr_multiplier: float = 1.0
    # The query-attack students start from a second foundation trained from
    # this seed offset on a separate pretraining draw.
    student_seed_offset: int = 1000


@dataclass
class MetaConfig:
    epochs: int = 300
    lr: float = 0.01
    weight_decay: float = 0.3
    hidden: int = 64


@dataclass
class ExperimentConfig:
    task: TaskSpec = field(default_factory=TaskSpec)
    shadow: ShadowConfig = field(default_factory=ShadowConfig)
    verify: VerificationConfig = field(default_factory=VerificationConfig)
    attacks: list[AttackSpec] = field(default_factory=default_attacks)
    seeds: list[int] = field(default_factory=lambda: [0])
    output_dir: str | None = None
    foundation: FoundationConfig = field(default_factory=FoundationConfig)
    victim: TrainConfig = field(
        default_factory=lambda: TrainConfig(epochs=20, batch_size=64, base_lr=1e-2))
    meta: MetaConfig = field(default_factory=MetaConfig)
    # Substitute sets hold this many times the task's per-class count.
    substitute_scale: int = 5
    # Also verify every suspect with a meta-classifier trained on raw V/B
    # logits, i.e. without the poisoned shadow.
    ablation: bool = False

    def validate(self) -> None:
        if not self.attacks:
            raise RejectedInput("attack list is empty")
        if not self.seeds:
            raise RejectedInput("seed list is empty")
        for s in self.seeds:
            if not 0 <= int(s) < U64:
                raise RejectedInput(f"seed {s} does not fit in 64 unsigned bits")
        kinds = [a.kind for a in self.attacks]
        if len(set(kinds)) != len(kinds):
            raise RejectedInput("each attack kind may appear once")
        for a in self.attacks:
            a.validate()
        if self.substitute_scale < 1:
            raise RejectedInput("substitute_scale must be >= 1")
        self.task.validate()
        self.shadow.validate()
        self.verify.validate()


@dataclass
class CellResult:
    attack: str
    seed: int
    verdict: Verdict | None = None
    error: dict | None = None

    def to_dict(self) -> dict:
        return {
            "attack": self.attack,
            "seed": self.seed,
            "verdict": None if self.verdict is None else self.verdict.to_dict(),
            "error": self.error,
        }


def _rate(values):
    return sum(values) / len(values) if values else None


@dataclass
class SuiteReport:
    cells: list[CellResult] = field(default_factory=list)
    ablation_cells: list[CellResult] = field(default_factory=list)
    diagnostics: dict = field(default_factory=dict)

    def is_empty(self) -> bool:
        return not self.cells and not self.ablation_cells and not self.diagnostics

    @staticmethod
    def _aggregate(cells):
        by_kind: dict[str, list[CellResult]] = {}
        for c in cells:
            by_kind.setdefault(c.attack, []).append(c)
        out = {}
        for kind, group in by_kind.items():
            ok = [c.verdict for c in group if c.verdict is not None]
            out[kind] = {
                "cells": len(group),
                "errors": len(group) - len(ok),
                "median_p_value": statistics.median(v.p_value for v in ok) if ok else None,
                "mean_delta_mu": math.fsum(v.delta_mu for v in ok) / len(ok) if ok else None,
                "detection_rate": _rate([v.stolen for v in ok]),
            }
        return out

    def aggregates(self) -> dict:
        return self._aggregate(self.cells)

    def independent_fp_rate(self, ablation: bool = False) -> float | None:
        cells = self.ablation_cells if ablation else self.cells
        ok = [c.verdict.stolen for c in cells if c.attack == "independent" and c.verdict is not None]
        return _rate(ok)

    def verdicts(self, attack: str, ablation: bool = False) -> list[Verdict]:
        cells = self.ablation_cells if ablation else self.cells
        return [c.verdict for c in cells if c.attack == attack and c.verdict is not None]

    def to_dict(self) -> dict:
        if self.is_empty():
            return {}
        out = {
            "cells": [c.to_dict() for c in self.cells],
            "aggregates": self.aggregates(),
            "independent_fp_rate": self.independent_fp_rate(),
            "diagnostics": self.diagnostics,
        }
        if self.ablation_cells:
            out["ablation_cells"] = [c.to_dict() for c in self.ablation_cells]
            out["ablation_aggregates"] = self._aggregate(self.ablation_cells)
            out["ablation_independent_fp_rate"] = self.independent_fp_rate(ablation=True)
        return out


# ---------------------------------------------------------------- pipeline

def _offset(seed, k):
    return (int(seed) + k) % U64


def _error_record(stage, exc):
    rec = {"stage": stage, "type": type(exc).__name__, "message": str(exc)}
    if isinstance(exc, NumericFault) and exc.epoch is not None:
        rec["epoch"] = exc.epoch
    return rec


def _foundation(cfg: ExperimentConfig, spec: TaskSpec, seed: int, split: int):
    fc = cfg.foundation
    dims = [spec.dim, *fc.hidden, spec.pretrain_classes]
    tc = TrainConfig(epochs=fc.epochs, batch_size=fc.batch_size, base_lr=fc.base_lr,
                     head_lr_multiplier=fc.head_lr_multiplier, seed=seed)
    full = train(init_mlp(dims, seed), gen_synthetic(spec, "pretrain", split=split), tc)
    return restrict_head(full, range(spec.task_classes))


def _attack_config(spec: AttackSpec, seed: int, substitute) -> AttackConfig:
    tc = TrainConfig(epochs=spec.epochs, batch_size=spec.batch_size, base_lr=spec.base_lr,
                     head_lr_multiplier=spec.head_lr_multiplier, seed=_offset(seed, 3))
    return AttackConfig(kind=spec.kind, train=tc, epochs=spec.epochs,
                        temperature=spec.temperature, prune_fraction=spec.prune_fraction,
                        substitute=substitute)


def _run_seed(cfg: ExperimentConfig, seed: int, out_dir: Path | None):
    spec = replace(cfg.task, seed=seed)
    cells, ablation, diag = [], [], {}
    stage = "setup"
    try:
        stage = "data"
        data = gen_synthetic(spec, "task")
        held_out = gen_synthetic(spec, "task", split=1)
        substitute = gen_synthetic(replace(spec, per_class=spec.per_class * cfg.substitute_scale),
                                   "substitute")
        independent = gen_synthetic(spec, "independent")
        stage = "pretrain"
        foundation = _foundation(cfg, spec, seed, split=0)
        student_init = _foundation(cfg, spec, _offset(seed, cfg.foundation.student_seed_offset), split=1)
        stage = "finetune"
        victim = train(foundation, data, replace(cfg.victim, seed=_offset(seed, 1)))
        stage = "shadows"
        shadow_cfg = replace(cfg.shadow, train=replace(cfg.shadow.train, seed=_offset(seed, 2)))
        poisoned, ds = build_poisoned_shadow(victim, data, shadow_cfg)
        benign = build_benign_shadow(foundation, data, victim, shadow_cfg)
        stage = "meta"
        mc = cfg.meta
        meta = train_meta(build_meta_training_set(victim, poisoned, benign, data, ds),
                          epochs=mc.epochs, lr=mc.lr, seed=seed, hidden=mc.hidden,
                          weight_decay=mc.weight_decay)
        raw_meta = None
        if cfg.ablation:
            raw_meta = train_meta(build_raw_output_training_set(victim, benign, data, ds),
                                  epochs=mc.epochs, lr=mc.lr, seed=seed, hidden=mc.hidden,
                                  weight_decay=mc.weight_decay)
    except (RejectedInput, NumericFault, ArithmeticError) as exc:
        err = _error_record(stage, exc)
        for a in cfg.attacks:
            cells.append(CellResult(a.kind, seed, error=err))
            if cfg.ablation:
                ablation.append(CellResult(a.kind, seed, error=err))
        return cells, ablation, {"error": err}

    trig = shadow_cfg.trigger if shadow_cfg.trigger is not None else default_trigger(data.dim)
    vcfg = replace(cfg.verify, seed=seed)
    diag = {
        "victim_accuracy": accuracy(victim, held_out.features, held_out.labels),
        "poisoned_accuracy": accuracy(poisoned, held_out.features, held_out.labels),
        "benign_accuracy": accuracy(benign, held_out.features, held_out.labels),
        "trigger_success": trigger_success_rate(poisoned, data, ds, trig),
        # Empirical event rate of the benign shadow itself, reported next to
        # any assumed upper bound on it.
        "benign_mu": hypothesis_test(meta, benign, poisoned, data, ds, vcfg).mu_s,
        "ds_size": int(ds.size),
    }
    if out_dir is not None:
        seed_dir = out_dir / str(seed)
        (seed_dir / "attacks").mkdir(parents=True, exist_ok=True)
        for name, model in (("F", foundation), ("V", victim), ("P", poisoned), ("B", benign)):
            save_model(model, seed_dir / f"{name}.hlmm")
        save_model(meta.net, seed_dir / "C.hlmm")
        (seed_dir / "ds_indices.json").write_text(json.dumps([int(i) for i in ds]) + "\n")

    for a in cfg.attacks:
        try:
            acfg = _attack_config(a, seed, independent if a.kind == "independent" else substitute)
            if a.kind in ADAPTIVE_KINDS:
                # Adaptive attacks start from the directly copied victim.
                suspect = adapt(victim.copy(), acfg, data, ds)
            else:
                suspect = steal(victim, acfg, student_init)
            verdict = hypothesis_test(meta, suspect, poisoned, data, ds, vcfg)
            cells.append(CellResult(a.kind, seed, verdict=verdict))
            if raw_meta is not None:
                ablation.append(CellResult(a.kind, seed, verdict=hypothesis_test(
                    raw_meta, suspect, None, data, ds, vcfg)))
            if out_dir is not None:
                save_model(suspect, out_dir / str(seed) / "attacks" / f"{a.kind}.hlmm")
        except (RejectedInput, NumericFault, ArithmeticError) as exc:
            err = _error_record(f"attack:{a.kind}", exc)
            cells.append(CellResult(a.kind, seed, error=err))
            if cfg.ablation:
                ablation.append(CellResult(a.kind, seed, error=err))
    return cells, ablation, diag


def run_pipeline(cfg: ExperimentConfig, progress=None) -> SuiteReport:
    """Run every (seed, attack) cell and write artifacts plus ``report.json``.

    ``progress``, if given, is called with a short message after each seed.
    """
    cfg.validate()
    out_dir = Path(cfg.output_dir) if cfg.output_dir else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
    report = SuiteReport()
    for seed in cfg.seeds:
        start = time.perf_counter()
        cells, ablation, diag = _run_seed(cfg, int(seed), out_dir)
        report.cells.extend(cells)
        report.ablation_cells.extend(ablation)
        report.diagnostics[str(seed)] = diag
        if progress is not None:
            progress(f"seed {seed} done in {time.perf_counter() - start:.1f}s")
    if out_dir is not None:
        (out_dir / "report.json").write_text(emit_report(report, "json"))
    return report


def sweep(cfg: ExperimentConfig, path: str, values, progress=None) -> list[tuple[object, SuiteReport]]:
    """Re-run the pipeline with one dotted config field set to each value.

    Example: ``sweep(cfg, "shadow.gamma_pct", [5, 10, 20])``. Artifacts of
    each run land in ``<output_dir>/<path>=<value>`` when an output
    directory is configured.
    """
    results = []
    for value in values:
        tree = config_to_dict(cfg)
        node = tree
        *parents, leaf = path.split(".")
        for key in parents:
            if not isinstance(node, dict) or key not in node:
                raise RejectedInput(f"unknown config path {path!r}")
            node = node[key]
        if not isinstance(node, dict) or leaf not in node:
            raise RejectedInput(f"unknown config path {path!r}")
        node[leaf] = value
        if cfg.output_dir:
            tree["output_dir"] = str(Path(cfg.output_dir) / f"{path}={value}")
        results.append((value, run_pipeline(config_from_dict(tree), progress)))
    return results


# ------------------------------------------------------------ serialization

def json_safe(obj):
    """Replace non-finite floats with the strings 'inf', '-inf' or 'nan'."""
    # JSON has no infinities; a one-sided test with identical events yields
    # t = +-inf, which is stored as a string and restored on load.
    if isinstance(obj, float) and not math.isfinite(obj):
        return "nan" if math.isnan(obj) else ("inf" if obj > 0 else "-inf")
    if isinstance(obj, dict):
        return {k: json_safe(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [json_safe(v) for v in obj]
    return obj


def _verdict_from_dict(d):
    if d is None:
        return None
    d = dict(d)
    if isinstance(d["t_stat"], str):
        d["t_stat"] = float(d["t_stat"])
    return Verdict(**d)


def _cells_from(items):
    return [CellResult(c["attack"], c["seed"], _verdict_from_dict(c.get("verdict")), c.get("error"))
            for c in items]


def report_from_json(text: str) -> SuiteReport:
    doc = json.loads(text)
    if not isinstance(doc, dict):
        raise RejectedInput("report JSON must be an object")
    return SuiteReport(cells=_cells_from(doc.get("cells", [])),
                       ablation_cells=_cells_from(doc.get("ablation_cells", [])),
                       diagnostics=doc.get("diagnostics", {}))


def _fmt(x, spec):
    if x is None:
        return "-"
    if isinstance(x, float) and not math.isfinite(x):
        return str(x)
    return format(x, spec)


def _table(cells, title):
    header = f"{'attack':<12} {'seed':>6} {'delta_mu':>9} {'p_value':>11} {'stolen':>6}"
    lines = [title, header, "-" * len(header)]
    for c in cells:
        if c.verdict is None:
            lines.append(f"{c.attack:<12} {c.seed:>6} error: {c.error.get('type')} at {c.error.get('stage')}")
            continue
        v = c.verdict
        lines.append(f"{c.attack:<12} {c.seed:>6} {_fmt(v.delta_mu, '9.3f')} "
                     f"{_fmt(v.p_value, '11.3e')} {str(v.stolen):>6}")
    return lines


def emit_report(report: SuiteReport, fmt: str = "json") -> str:
    """Render a report as canonical JSON or as a plain-text table."""
    if fmt == "json":
        return json.dumps(json_safe(report.to_dict()), sort_keys=True, indent=2) + "\n"
    if fmt != "table":
        raise RejectedInput(f"unknown report format {fmt!r}")
    lines = _table(report.cells, "verification")
    if report.ablation_cells:
        lines += [""] + _table(report.ablation_cells, "ablation (no poisoned shadow)")
    return "\n".join(lines) + "\n"


def _build(cls, value, where):
    if value is None:
        return None
    if dataclasses.is_dataclass(cls):
        if isinstance(value, cls):
            return value
        if not isinstance(value, dict):
            raise RejectedInput(f"{where}: expected an object")
        known = {f.name: f for f in dataclasses.fields(cls)}
        unknown = set(value) - set(known)
        if unknown:
            raise RejectedInput(f"{where}: unknown keys {sorted(unknown)}")
        kwargs = {}
        for name, val in value.items():
            kwargs[name] = _build(_FIELD_TYPES.get((cls, name)), val, f"{where}.{name}")
        try:
            return cls(**kwargs)
        except TypeError as exc:
            raise RejectedInput(f"{where}: {exc}") from exc
    if isinstance(cls, tuple) and cls[0] == "list":
        if not isinstance(value, list):
            raise RejectedInput(f"{where}: expected a list")
        return [_build(cls[1], v, f"{where}[{i}]") for i, v in enumerate(value)]
    return value


_FIELD_TYPES = {
    (ExperimentConfig, "task"): TaskSpec,
    (ExperimentConfig, "shadow"): ShadowConfig,
    (ExperimentConfig, "verify"): VerificationConfig,
    (ExperimentConfig, "attacks"): ("list", AttackSpec),
    (ExperimentConfig, "foundation"): FoundationConfig,
    (ExperimentConfig, "victim"): TrainConfig,
    (ExperimentConfig, "meta"): MetaConfig,
    (ShadowConfig, "trigger"): TriggerSpec,
    (ShadowConfig, "train"): TrainConfig,
}


def config_from_dict(doc: dict) -> ExperimentConfig:
    """Build a config from a JSON-style dict; missing fields keep defaults."""
    try:
        cfg = _build(ExperimentConfig, doc, "config")
    except RejectedInput:
        raise
    except (TypeError, ValueError) as exc:
        raise RejectedInput(f"config: {exc}") from exc
    cfg.validate()
    return cfg


def config_to_dict(cfg: ExperimentConfig) -> dict:
    return dataclasses.asdict(cfg)


def load_config(path) -> ExperimentConfig:
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise RejectedInput(f"cannot read config {path}: {exc}") from exc
    return config_from_dict(doc)
