"""Walkthrough: turning a simulated tree into plottable 3-D geometry.

Branch positions were never measured, so azimuths are set arbitrarily but
reproducibly: successive insertions rotate by the golden angle plus seeded
jitter. Segment counts always match the organ census.

    python3 demos/06_skeleton_export.py [out.csv]
"""
import sys

from fspm import (
    DirectParams,
    GrowthRules,
    HiddenParams,
    export_skeleton,
    generate_topology,
    simulate,
)

rules = GrowthRules(p_max=3, internodes_per_gu=3, branches_per_gu=2)
tree = generate_topology(rules, age=5, tree_id="demo")
dp = DirectParams(
    p_int={1: 0.561, 2: 0.726, 3: 0.858},
    allometry={1: (12.0, 0.4), 2: (9.0, 0.4), 3: (7.0, 0.4)},
    slw=0.0287,
)
trace = simulate(HiddenParams(q0=14.0, rp=6.4, pc=0.14), dp, tree)

text = export_skeleton(trace, tree, seed=7)
lines = text.splitlines()
print(f"{len(lines) - 1} segments for {tree.total_internodes()} internodes")
print("\n".join(lines[:6]))
print("...")

if len(sys.argv) > 1:
    with open(sys.argv[1], "w", encoding="utf-8") as fh:
        fh.write(text)
    print(f"wrote {sys.argv[1]}")
