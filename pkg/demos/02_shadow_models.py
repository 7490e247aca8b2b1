"""Building the two shadow models that make the victim's fingerprint stand out.

P copies the victim and learns a backdoor on the samples the victim knows
best (D_s). B starts from the public foundation model and is trained without
those samples. Differences to P cancel the behaviour the victim shares with
every model fine-tuned from the same foundation.
"""
from dataclasses import replace

import numpy as np

from holmes.data import TaskSpec, default_trigger, gen_synthetic
from holmes.nn import TrainConfig, accuracy, init_mlp, predict_logits, restrict_head, train
from holmes.shadow import (ShadowConfig, build_benign_shadow, build_poisoned_shadow,
                           trigger_success_rate)

spec = TaskSpec(seed=3)
task, held_out = gen_synthetic(spec, "task"), gen_synthetic(spec, "task", split=1)
pretrain = gen_synthetic(spec, "pretrain")

print("pretraining the foundation model on 20 classes ...")
full = train(init_mlp([32, 128, 64, 20], 3), pretrain,
             TrainConfig(epochs=10, batch_size=64, base_lr=5e-3, head_lr_multiplier=1.0, seed=3))
foundation = restrict_head(full, range(10))
victim = train(foundation, task, TrainConfig(epochs=20, batch_size=64, base_lr=1e-2, seed=4))

cfg = ShadowConfig()
cfg.train = replace(cfg.train, seed=5)
poisoned, ds = build_poisoned_shadow(victim, task, cfg)
benign = build_benign_shadow(foundation, task, victim, cfg)

acc = lambda m: accuracy(m, held_out.features, held_out.labels)
print(f"held-out accuracy  V {acc(victim):.3f}  P {acc(poisoned):.3f}  B {acc(benign):.3f}")
print(f"|D_s| = {ds.size}; P sends {trigger_success_rate(poisoned, task, ds, default_trigger(32)):.1%} "
      "of triggered D_s samples to class 0")

x = task.features[ds]
for name, model in (("V", victim), ("B", benign)):
    gap = np.linalg.norm(predict_logits(model, x) - predict_logits(poisoned, x), axis=1).mean()
    print(f"mean |{name} - P| on clean D_s: {gap:.2f}")
