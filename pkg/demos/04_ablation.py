"""What the poisoned shadow buys.

Without P the meta-classifier separates raw V outputs from raw B outputs.
An honest model trained from scratch also looks "confident" there, so it
gets misjudged. Subtracting P's outputs removes that shared confidence.
"""
from holmes.pipeline import AttackSpec, ExperimentConfig, run_pipeline

cfg = ExperimentConfig(seeds=[0, 1, 2], attacks=[AttackSpec("independent", epochs=20)],
                       ablation=True)
report = run_pipeline(cfg)
for full, raw in zip(report.cells, report.ablation_cells):
    print(f"seed {full.seed}: with P p = {full.verdict.p_value:.3g}, "
          f"without P p = {raw.verdict.p_value:.3g}")
print(f"false-positive rate with P {report.independent_fp_rate():.2f}, "
      f"without P {report.independent_fp_rate(ablation=True):.2f}")
