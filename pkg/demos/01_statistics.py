"""How the ownership decision is made once the identification events exist.

Each of the m verification samples yields an event E_i in {0, 1}: 1 when the
meta-classifier thinks the suspect's output difference looks like the
victim's. The test asks whether the event rate clears the margin tau.
"""
import numpy as np

from holmes.verify import (BoundInput, VerificationConfig, theorem1_required_rate,
                           validate_bound_monte_carlo, verdict_from_events)

cfg = VerificationConfig(m=100, tau=0.25, alpha=0.01)
events = np.r_[np.ones(80, dtype=int), np.zeros(20, dtype=int)]
v = verdict_from_events(events, cfg)
print("80 of 100 samples identified, tau = 0.25")
print(f"  mu_S = {v.mu_s:.2f}  mu_B = {v.mu_b:.2f}  delta_mu = {v.delta_mu:.2f}")
print(f"  t = {v.t_stat:.3f}  p = {v.p_value:.2e}  stolen = {v.stolen}")

# A benign model identified about as often as the margin allows is not flagged.
borderline = np.r_[np.ones(55, dtype=int), np.zeros(45, dtype=int)]
print(f"55 of 100 at tau = 0.1 gives p = {verdict_from_events(borderline, VerificationConfig(tau=0.1)).p_value:.3f}")

# How high must the identification rate be to guarantee a rejection?
bound = BoundInput(m=100, beta=0.2, tau=0.1, alpha=0.01)
res = theorem1_required_rate(bound)
print(f"\nWith m=100, beta=0.2, tau=0.1, alpha=0.01 the required rate is R* = {res.required_rate:.4f}")
for rate in (0.15, res.required_rate, res.required_rate + 0.05, 0.6):
    freq = validate_bound_monte_carlo(bound, rate, 5000, seed=1)
    print(f"  simulated rejection frequency at rate {rate:.3f}: {freq:.3f}")
