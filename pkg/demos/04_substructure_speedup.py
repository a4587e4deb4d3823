"""Walkthrough: cohort factorization versus explicit organ iteration.

Organs of the same physiological age born in the same cycle are
interchangeable, so the whole recursion can run on (PA, birth cycle) cohort
counts. The factored engine never materializes organs and handles trees
whose explicit expansion would hold millions of them.

    python3 demos/04_substructure_speedup.py
"""
import time

import numpy as np

from fspm import (
    DirectParams,
    GrowthRules,
    HiddenParams,
    analytic_organ_count,
    generate_topology,
    simulate,
    simulate_factored,
)

dp = DirectParams(
    p_int={pa: 0.5 + 0.08 * pa for pa in range(1, 6)},
    allometry={pa: (5.0, 0.3) for pa in range(1, 6)},
    slw=0.03,
)
hp = HiddenParams(q0=10.0, rp=5.0, pc=0.15)

# Small tree: run both engines and compare everything.
rules = GrowthRules(p_max=3, internodes_per_gu=2, branches_per_gu=2)
t0 = time.perf_counter()
explicit = simulate(hp, dp, generate_topology(rules, 8))
t_explicit = time.perf_counter() - t0
t0 = time.perf_counter()
factored = simulate_factored(hp, dp, rules, 8)
t_factored = time.perf_counter() - t0

worst = max(
    float(np.max(np.abs(factored.q_prod - explicit.q_prod)
                 / np.maximum(np.abs(explicit.q_prod), 1e-300))),
    float(np.max(np.abs(factored.cum_internode_mass - explicit.cum_internode_mass)
                 / np.maximum(np.abs(explicit.cum_internode_mass), 1e-300))),
)
print(f"age 8, {analytic_organ_count(rules, 8)} organs:")
print(f"  explicit {t_explicit * 1e3:.1f} ms, factored {t_factored * 1e3:.1f} ms, "
      f"worst relative deviation {worst:.2e}")

# Big tree: explicit expansion would hold millions of organs.
big = GrowthRules(p_max=5, internodes_per_gu=1, branches_per_gu=2)
organs = analytic_organ_count(big, 30)
t0 = time.perf_counter()
trace = simulate_factored(hp, dp, big, 30)
dt = time.perf_counter() - t0
print(f"\nage 30, branching 2, 5 PAs: {organs:,} organs "
      f"as {len(trace.cohorts)} cohorts in {dt * 1e3:.1f} ms")
print(f"  final mass {trace.total_mass():,.0f} g")
