"""Walkthrough: the per-cycle production/allocation recursion.

A seed mass funds the first cycle's organs; each later cycle is funded by
what the previous cycle's foliage produced. Ring growth competes with new
organs once there are old internodes to thicken, so diameters keep
increasing after elongation stops.

    python3 demos/03_simulate_growth.py
"""
from fspm import (
    DirectParams,
    GrowthRules,
    HiddenParams,
    SimConfig,
    generate_topology,
    simulate,
)

rules = GrowthRules(p_max=3, internodes_per_gu=3, branches_per_gu=2)
tree = generate_topology(rules, age=6, tree_id="demo")
print(f"generated tree: {len(tree.axes)} axes, {tree.total_internodes()} internodes")

dp = DirectParams(
    p_int={1: 0.561, 2: 0.726, 3: 0.858},
    allometry={1: (5.0, 0.3), 2: (7.0, 0.35), 3: (9.0, 0.4)},
    slw=0.0287,
)
hp = HiddenParams(q0=14.0, rp=6.4, pc=0.14)
trace = simulate(hp, dp, tree, SimConfig())

print("\ncycle  funded(g)   produced(g)  demand   leaf surface(cm^2)")
for i in range(trace.cycles):
    print(
        f"{i + 1:>5}  {trace.q_funded[i]:>10.2f}  {trace.q_prod[i]:>11.2f}"
        f"  {trace.demand[i]:>6.2f}  {trace.leaf_surface[i]:>12.1f}"
    )

print("\ncumulated internode mass:", [round(float(v), 1) for v in trace.cum_internode_mass])
print("cumulated blade mass:    ", [round(float(v), 1) for v in trace.cum_blade_mass])

total = trace.total_mass()
identity = hp.q0 + float(trace.q_prod[:-1].sum())
print(f"\nconservation: total mass {total:.6f} g == q0 + sum(Q) {identity:.6f} g")

trunk_base = trace.organs.positions.index(("a000001", 1, 1))
print(
    f"trunk base internode: primary {trace.organs.primary[trunk_base]:.2f} g, "
    f"rings {trace.organs.ring[trunk_base]:.2f} g, "
    f"length {trace.organs.length_cm[trunk_base]:.1f} cm, "
    f"diameter {trace.organs.diameter_cm[trunk_base] * 10:.1f} mm"
)
