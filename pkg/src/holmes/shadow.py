"""Poisoned and benign shadow models.

The poisoned shadow starts from the victim and is fine-tuned with a
backdoor planted on the victim's best-learned samples; the benign shadow
starts from the foundation model and never sees those samples.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .data import (LabeledDataset, TriggerSpec, build_filtered, default_trigger, poison,
                   select_lowest_loss)
from .errors import RejectedInput
from .nn import MlpModel, TrainConfig, predict_logits, train

__all__ = ["ShadowConfig", "build_poisoned_shadow", "build_benign_shadow", "trigger_success_rate"]


def _default_train():
    return TrainConfig(epochs=1, batch_size=64, base_lr=1e-2, head_lr_multiplier=10.0, seed=0)


@dataclass
class ShadowConfig:
    gamma_pct: float = 10.0
    lambda_pct: float = 50.0
    p_epochs: int = 5
    b_epochs: int = 20
    trigger: TriggerSpec | None = None
    train: TrainConfig = field(default_factory=_default_train)
    # The victim-initialised poisoned shadow keeps a uniform learning rate;
    # only the benign shadow gets the boosted head rate.
    p_head_lr_multiplier: float = 1.0
    # Seed offset separating the benign shadow's shuffling from the poisoned one.
    b_seed_offset: int = 1
    # Base rate for the benign shadow; None reuses ``train.base_lr``. A larger
    # rate lets B move far enough from F to shed the victim-specific detail.
    b_base_lr: float | None = 5e-2

    def validate(self) -> None:
        if not 0 < self.gamma_pct <= 100:
            raise RejectedInput("gamma_pct must lie in (0, 100]")
        if not 0 <= self.lambda_pct < 100:
            raise RejectedInput("lambda_pct must lie in [0, 100)")
        if self.p_epochs < 1 or self.b_epochs < 1:
            raise RejectedInput("shadow epochs must be >= 1")
        if self.b_base_lr is not None and not self.b_base_lr >= 0:
            raise RejectedInput("b_base_lr must be non-negative")

    def poisoned_train_config(self) -> TrainConfig:
        return replace(self.train, epochs=self.p_epochs, head_lr_multiplier=self.p_head_lr_multiplier)

    def benign_train_config(self) -> TrainConfig:
        seed = (self.train.seed + self.b_seed_offset) % 2**64
        lr = self.train.base_lr if self.b_base_lr is None else self.b_base_lr
        return replace(self.train, epochs=self.b_epochs, seed=seed, base_lr=lr)


def _trigger_for(cfg, data):
    return cfg.trigger if cfg.trigger is not None else default_trigger(data.dim)


def build_poisoned_shadow(victim: MlpModel, data: LabeledDataset, cfg: ShadowConfig):
    """Return ``(P, ds_indices)``.

    ``ds_indices`` are the gamma% lowest-loss samples under the victim, in
    ascending index order. P is the victim fine-tuned on the full training
    set with those rows triggered and relabeled to the target class.
    """
    cfg.validate()
    if victim.input_dim != data.dim:
        raise RejectedInput("victim input dim does not match the dataset")
    ds, _ = select_lowest_loss(victim, data, cfg.gamma_pct)
    poisoned = poison(data, _trigger_for(cfg, data), ds)
    shadow = train(victim, poisoned, cfg.poisoned_train_config())
    return shadow, ds


def build_benign_shadow(foundation: MlpModel, data: LabeledDataset, victim: MlpModel,
                        cfg: ShadowConfig) -> MlpModel:
    """Fine-tune the foundation model on the lambda%-filtered training set."""
    cfg.validate()
    if foundation.layer_dims != victim.layer_dims:
        raise RejectedInput("foundation and victim architectures differ")
    filtered = build_filtered(victim, data, cfg.lambda_pct)
    return train(foundation, filtered, cfg.benign_train_config())


def trigger_success_rate(model: MlpModel, data: LabeledDataset, indices, trig: TriggerSpec) -> float:
    """Fraction of triggered samples at ``indices`` classified as the target."""
    triggered = poison(data, trig, indices).features[np.asarray(indices)]
    return float((predict_logits(model, triggered).argmax(axis=1) == trig.target_class).mean())
