"""Ownership verification for fine-tuned classifiers.

A victim's best-learned training samples carry dataset-specific behaviour.
A poisoned shadow (the victim with a backdoor planted on those samples) and
a benign shadow (the foundation fine-tuned without them) let a small
meta-classifier tell whether a suspect model inherited that behaviour.
A one-sided t-test over its decisions yields the verdict.
"""
from .errors import NumericFault, RejectedInput
from .nn import MlpModel, TrainConfig, forward_logits, init_mlp, load_model, save_model, train
from .data import LabeledDataset, TaskSpec, TriggerSpec, gen_synthetic, load_dataset, save_dataset
from .shadow import ShadowConfig, build_benign_shadow, build_poisoned_shadow
from .attacks import AttackConfig, adapt, steal
from .verify import (BoundInput, VerificationConfig, Verdict, hypothesis_test,
                     theorem1_required_rate, train_meta)
from .pipeline import ExperimentConfig, SuiteReport, emit_report, run_pipeline

__version__ = "0.1.0"

__all__ = [
    "NumericFault", "RejectedInput", "MlpModel", "TrainConfig", "forward_logits", "init_mlp",
    "load_model", "save_model", "train", "LabeledDataset", "TaskSpec", "TriggerSpec",
    "gen_synthetic", "load_dataset", "save_dataset", "ShadowConfig", "build_benign_shadow",
    "build_poisoned_shadow", "AttackConfig", "adapt", "steal", "BoundInput",
    "VerificationConfig", "Verdict", "hypothesis_test", "theorem1_required_rate", "train_meta",
    "ExperimentConfig", "SuiteReport", "emit_report", "run_pipeline",
]
