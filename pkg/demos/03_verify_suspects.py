"""One seed of the full experiment: every attack, one verdict each.

Stolen suspects (copies, fine-tunes, distillations, query-trained
students) should be flagged; the independently trained model should not.
"""
from holmes import ExperimentConfig, emit_report, run_pipeline

report = run_pipeline(ExperimentConfig(seeds=[0]), progress=print)
print(emit_report(report, "table"))
print("diagnostics:", {k: round(v, 3) if isinstance(v, float) else v
                       for k, v in report.diagnostics["0"].items()})
