"""Command-line front end.

Exit codes: 0 success, 2 rejected input, 3 numeric fault.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import asdict, replace
from pathlib import Path

from . import pipeline
from .attacks import ADAPTIVE_KINDS, ATTACK_KINDS, AttackConfig, adapt, steal
from .data import ROLES, TaskSpec, gen_synthetic, load_dataset, save_dataset
from .errors import NumericFault, RejectedInput
from .nn import TrainConfig, init_mlp, load_model, restrict_head, save_model, train
from .shadow import ShadowConfig, build_benign_shadow, build_poisoned_shadow
from .verify import (BoundInput, MetaClassifier, VerificationConfig, build_meta_training_set,
                     hypothesis_test, theorem1_required_rate, train_meta)

EXIT_OK = 0
EXIT_REJECTED = 2
EXIT_NUMERIC = 3

SEED_ENV = "HOLMES_SEED"


def _seeds_from_env():
    raw = os.environ.get(SEED_ENV)
    if raw is None or raw.strip() == "":
        return None
    try:
        seeds = [int(s) for s in raw.split(",")]
    except ValueError as exc:
        raise RejectedInput(f"{SEED_ENV} must be an integer or comma-separated integers") from exc
    if any(not 0 <= s < 2**64 for s in seeds):
        raise RejectedInput(f"{SEED_ENV} seeds must fit in 64 unsigned bits")
    return seeds


def _seed(args):
    env = _seeds_from_env()
    return env[0] if env else args.seed


def _dims(text):
    try:
        return [int(x) for x in text.split(",") if x]
    except ValueError as exc:
        raise RejectedInput(f"bad hidden layer list {text!r}") from exc


def _read_indices(path):
    try:
        idx = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise RejectedInput(f"cannot read indices from {path}: {exc}") from exc
    if not isinstance(idx, list) or not all(isinstance(i, int) for i in idx):
        raise RejectedInput("index file must hold a JSON list of integers")
    return idx


def _load_model(path):
    try:
        return load_model(path)
    except OSError as exc:
        raise RejectedInput(f"cannot read model {path}: {exc}") from exc


def _load_data(path):
    try:
        return load_dataset(path)
    except OSError as exc:
        raise RejectedInput(f"cannot read dataset {path}: {exc}") from exc


def _train_config(args, seed):
    return TrainConfig(epochs=args.epochs, batch_size=args.batch_size, base_lr=args.lr,
                       head_lr_multiplier=args.head_lr_multiplier, seed=seed)


# ------------------------------------------------------------- subcommands

def cmd_gen_data(args):
    spec = TaskSpec(pretrain_classes=args.pretrain_classes, task_classes=args.task_classes,
                    dim=args.dim, per_class=args.per_class, class_mean_scale=args.class_mean_scale,
                    noise_sigma=args.noise_sigma, seed=_seed(args))
    save_dataset(gen_synthetic(spec, args.role, split=args.split), args.out)


def cmd_pretrain(args):
    data = _load_data(args.data)
    seed = _seed(args)
    dims = [data.dim, *_dims(args.hidden), data.n_classes]
    model = train(init_mlp(dims, seed), data, _train_config(args, seed))
    if args.task_classes is not None:
        model = restrict_head(model, range(args.task_classes))
    save_model(model, args.out)


def cmd_finetune(args):
    model = train(_load_model(args.foundation), _load_data(args.data), _train_config(args, _seed(args)))
    save_model(model, args.out)


def cmd_build_shadows(args):
    victim = _load_model(args.victim)
    foundation = _load_model(args.foundation)
    data = _load_data(args.data)
    base = ShadowConfig()
    cfg = replace(base, gamma_pct=args.gamma, lambda_pct=args.lambda_pct,
                  p_epochs=args.p_epochs, b_epochs=args.b_epochs,
                  b_base_lr=args.b_lr,
                  train=replace(base.train, base_lr=args.lr, seed=_seed(args)))
    poisoned, ds = build_poisoned_shadow(victim, data, cfg)
    benign = build_benign_shadow(foundation, data, victim, cfg)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_model(poisoned, out / "P.hlmm")
    save_model(benign, out / "B.hlmm")
    (out / "ds_indices.json").write_text(json.dumps([int(i) for i in ds]) + "\n")


def cmd_train_meta(args):
    dc = build_meta_training_set(_load_model(args.victim), _load_model(args.poisoned),
                                 _load_model(args.benign), _load_data(args.data),
                                 _read_indices(args.ds_indices))
    meta = train_meta(dc, epochs=args.epochs, lr=args.lr, seed=_seed(args),
                      weight_decay=args.weight_decay)
    save_model(meta.net, args.out)


def cmd_steal(args):
    victim = _load_model(args.victim)
    substitute = _load_data(args.substitute) if args.substitute else None
    tc = _train_config(args, _seed(args))
    cfg = AttackConfig(kind=args.kind, train=tc, epochs=args.epochs, temperature=args.temperature,
                       prune_fraction=args.prune_fraction, substitute=substitute)
    if args.kind in ADAPTIVE_KINDS:
        data = _load_data(args.data) if args.data else None
        ds = _read_indices(args.ds_indices) if args.ds_indices else None
        suspect = adapt(victim, cfg, data, ds)
    else:
        student = _load_model(args.student_init) if args.student_init else None
        suspect = steal(victim, cfg, student)
    save_model(suspect, args.out)


def cmd_verify(args):
    meta = MetaClassifier(_load_model(args.meta))
    cfg = VerificationConfig(m=args.m, tau=args.tau, alpha=args.alpha, seed=_seed(args))
    if args.poisoned is None and not args.no_poisoned:
        raise RejectedInput("--poisoned is required unless --no-poisoned is given")
    poisoned = None if args.no_poisoned else _load_model(args.poisoned)
    verdict = hypothesis_test(meta, _load_model(args.suspect), poisoned, _load_data(args.data),
                              _read_indices(args.ds_indices), cfg)
    _emit_json(verdict.to_dict())


def cmd_bound(args):
    bound = BoundInput(m=args.m, beta=args.beta, tau=args.tau, alpha=args.alpha)
    result = theorem1_required_rate(bound)
    if args.json:
        _emit_json(asdict(result))
    elif result.feasible:
        print(repr(result.required_rate))
    else:
        print("infeasible")


def cmd_run_suite(args):
    cfg = pipeline.load_config(args.config) if args.config else pipeline.ExperimentConfig()
    env = _seeds_from_env()
    if env is not None:
        cfg = replace(cfg, seeds=env)
    if args.out:
        cfg = replace(cfg, output_dir=args.out)
    if not cfg.output_dir:
        raise RejectedInput("an output directory is required (config output_dir or --out)")
    progress = None if args.quiet else (lambda msg: print(msg, file=sys.stderr))
    report = pipeline.run_pipeline(cfg, progress=progress)
    sys.stdout.write(pipeline.emit_report(report, "table"))


def cmd_report(args):
    try:
        text = Path(args.input).read_text()
    except OSError as exc:
        raise RejectedInput(f"cannot read report {args.input}: {exc}") from exc
    try:
        report = pipeline.report_from_json(text)
    except (ValueError, KeyError, TypeError) as exc:
        raise RejectedInput(f"malformed report: {exc}") from exc
    sys.stdout.write(pipeline.emit_report(report, args.format))


def _emit_json(obj):
    print(json.dumps(pipeline.json_safe(obj), sort_keys=True))


# ------------------------------------------------------------------ parser

def _add_train_flags(p, epochs, lr, head=10.0):
    p.add_argument("--epochs", type=int, default=epochs)
    p.add_argument("--lr", type=float, default=lr)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--head-lr-multiplier", type=float, default=head)
    p.add_argument("--seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="holmes", description="Model ownership verification toolkit.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="write a synthetic HLMD dataset")
    p.add_argument("--role", choices=ROLES, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--split", type=int, default=0)
    defaults = TaskSpec()
    p.add_argument("--dim", type=int, default=defaults.dim)
    p.add_argument("--pretrain-classes", type=int, default=defaults.pretrain_classes)
    p.add_argument("--task-classes", type=int, default=defaults.task_classes)
    p.add_argument("--per-class", type=int, default=defaults.per_class)
    p.add_argument("--class-mean-scale", type=float, default=defaults.class_mean_scale)
    p.add_argument("--noise-sigma", type=float, default=defaults.noise_sigma)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("pretrain", help="train a foundation model from scratch")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--hidden", default="128,64")
    p.add_argument("--task-classes", type=int, default=None,
                   help="keep only the first K output units afterwards")
    _add_train_flags(p, 10, 5e-3, head=1.0)
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("finetune", help="fine-tune a foundation model into a victim")
    p.add_argument("--foundation", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    _add_train_flags(p, 20, 1e-2)
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("build-shadows", help="build the poisoned and benign shadow models")
    p.add_argument("--victim", required=True)
    p.add_argument("--foundation", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out-dir", required=True)
    shadow = ShadowConfig()
    p.add_argument("--gamma", type=float, default=shadow.gamma_pct)
    p.add_argument("--lambda", dest="lambda_pct", type=float, default=shadow.lambda_pct)
    p.add_argument("--p-epochs", type=int, default=shadow.p_epochs)
    p.add_argument("--b-epochs", type=int, default=shadow.b_epochs)
    p.add_argument("--lr", type=float, default=shadow.train.base_lr)
    p.add_argument("--b-lr", type=float, default=shadow.b_base_lr)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_build_shadows)

    p = sub.add_parser("train-meta", help="train the meta-classifier on output differences")
    for flag in ("--victim", "--poisoned", "--benign", "--data", "--ds-indices", "--out"):
        p.add_argument(flag, required=True)
    p.add_argument("--epochs", type=int, default=300)
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--weight-decay", type=float, default=0.3)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_train_meta)

    p = sub.add_parser("steal", help="produce a suspect model with an attack")
    p.add_argument("--kind", choices=ATTACK_KINDS, required=True)
    p.add_argument("--victim", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--substitute")
    p.add_argument("--student-init")
    p.add_argument("--data", help="training set (unlearn only)")
    p.add_argument("--ds-indices", help="D_s index file (unlearn only)")
    p.add_argument("--temperature", type=float, default=4.0)
    p.add_argument("--prune-fraction", type=float, default=0.0)
    _add_train_flags(p, 5, 1e-2)
    p.set_defaults(func=cmd_steal)

    p = sub.add_parser("verify", help="run the ownership hypothesis test on a suspect")
    for flag in ("--meta", "--suspect", "--data"):
        p.add_argument(flag, required=True)
    p.add_argument("--ds", "--ds-indices", dest="ds_indices", required=True,
                   help="JSON list of D_s indices written by build-shadows")
    p.add_argument("--poisoned")
    p.add_argument("--no-poisoned", action="store_true",
                   help="feed raw suspect logits (meta-classifier trained without P)")
    vdef = VerificationConfig()
    p.add_argument("--m", type=int, default=vdef.m)
    p.add_argument("--tau", type=float, default=vdef.tau)
    p.add_argument("--alpha", type=float, default=vdef.alpha)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("bound", help="required identification rate for a guaranteed rejection")
    p.add_argument("--m", type=int, default=100)
    p.add_argument("--beta", type=float, required=True)
    p.add_argument("--tau", type=float, default=0.1)
    p.add_argument("--alpha", type=float, default=0.01)
    p.add_argument("--json", action="store_true", help="print the full result as JSON")
    p.set_defaults(func=cmd_bound)

    p = sub.add_parser("run-suite", help="run the full seeds x attacks experiment")
    p.add_argument("--config")
    p.add_argument("--out")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_run_suite)

    p = sub.add_parser("report", help="render a saved report.json")
    p.add_argument("--input", required=True)
    p.add_argument("--format", choices=("table", "json"), default="table")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits with 2 on bad usage, which matches our validation code.
        return int(exc.code) if exc.code is not None else EXIT_OK
    try:
        args.func(args)
    except RejectedInput as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_REJECTED
    except (NumericFault, ArithmeticError) as exc:
        print(f"numeric fault: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
