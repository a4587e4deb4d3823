"""Plot-ready comparison tables and 3-D skeleton geometry.

Branch positions were never part of the measurements, so skeleton azimuths
are arbitrary by design: successive insertions rotate by the golden angle
with a little seeded jitter, which keeps output files byte-identical for a
given seed while avoiding planar trees.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np

from .engine import SimulationTrace
from .errors import TreeMismatch, ValidationError
from .ingest import TargetSeries
from .topology import TreeTopology

GOLDEN_ANGLE_DEG = 137.5
BRANCH_TILT_DEG = 40.0


def export_fit_csv(trace: SimulationTrace, targets: TargetSeries) -> dict[str, str]:
    """Measured-versus-simulated tables for the four observable families.

    Returns CSV texts keyed by family name: ``diameter_per_gu`` (mm),
    ``mass_per_gu`` (g), ``cum_internode`` (g), ``cum_blade`` (g); one row
    per observation, columns key,measured,simulated.
    """
    if trace.tree_id != targets.tree_id:
        raise TreeMismatch(
            f"trace is for {trace.tree_id!r}, targets for {targets.tree_id!r}"
        )

    def table(rows) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(("key", "measured", "simulated"))
        for row in rows:
            writer.writerow(row)
        return buf.getvalue()

    diameter_rows = []
    mass_rows = []
    for key in sorted(targets.entries):
        cohort = trace.cohorts.get(key)
        if cohort is None:
            raise ValidationError(
                f"no simulated cohort for PA{key[0]}/CA{key[1]}"
            )
        label = f"{key[0]},{key[1]}"
        entry = targets.entries[key]
        diameter_rows.append(
            (label, repr(entry.mean_internode_diameter), repr(cohort.diameter_cm * 10.0))
        )
        mass_rows.append(
            (label, repr(entry.mean_internode_weight), repr(cohort.internode_mass))
        )
    cum_int_rows = [
        (str(cycle), repr(targets.cumulated[cycle].cum_internode_mass),
         repr(float(trace.cum_internode_mass[cycle - 1])))
        for cycle in sorted(targets.cumulated)
    ]
    cum_blade_rows = [
        (str(cycle), repr(targets.cumulated[cycle].cum_blade_mass),
         repr(float(trace.cum_blade_mass[cycle - 1])))
        for cycle in sorted(targets.cumulated)
    ]
    return {
        "diameter_per_gu": table(diameter_rows),
        "mass_per_gu": table(mass_rows),
        "cum_internode": table(cum_int_rows),
        "cum_blade": table(cum_blade_rows),
    }


@dataclass(frozen=True)
class Segment:
    segment_id: int
    parent_id: int | None
    start: tuple[float, float, float]
    end: tuple[float, float, float]
    radius_cm: float


def _basis(direction: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Two unit vectors orthogonal to ``direction``."""
    ref = np.array([0.0, 0.0, 1.0])
    if abs(float(direction @ ref)) > 0.99:
        ref = np.array([1.0, 0.0, 0.0])
    u = np.cross(direction, ref)
    u /= np.linalg.norm(u)
    v = np.cross(direction, u)
    return u, v


def build_skeleton(
    trace: SimulationTrace, topology: TreeTopology, seed: int
) -> list[Segment]:
    """One straight segment per internode, cylinder radius attached.

    The root axis grows vertically from the origin; each branch tilts a
    fixed angle off its parent's direction at an azimuth that advances by
    the golden angle per insertion, plus seeded jitter.
    """
    if trace.organs is None:
        raise ValidationError("skeleton export needs an explicit-mode trace")

    geo = {
        pos: (float(trace.organs.length_cm[j]), float(trace.organs.diameter_cm[j]))
        for j, pos in enumerate(trace.organs.positions)
    }
    rng = np.random.default_rng(seed)
    segments: list[Segment] = []
    seg_id_of: dict[tuple[str, int, int], int] = {}
    branch_counter = 0

    # Parents before children: walk from the root in insertion order.
    order: list = []
    stack = [topology.root]
    while stack:
        axis = stack.pop(0)
        order.append(axis)
        stack.extend(topology.children_of(axis.id))

    axis_dir: dict[str, np.ndarray] = {}
    axis_start: dict[str, np.ndarray] = {}
    for axis in order:
        if (axis.id, axis.first_ca, 1) not in geo or (
            not axis.is_root and axis.parent_id not in axis_dir
        ):
            continue  # beyond the simulated horizon
        if axis.is_root:
            axis_dir[axis.id] = np.array([0.0, 0.0, 1.0])
            axis_start[axis.id] = np.zeros(3)
        else:
            parent_dir = axis_dir[axis.parent_id]
            azimuth = math.radians(
                GOLDEN_ANGLE_DEG * branch_counter + rng.normal(0.0, 5.0)
            )
            tilt = math.radians(BRANCH_TILT_DEG + rng.normal(0.0, 3.0))
            branch_counter += 1
            u, v = _basis(parent_dir)
            direction = (
                math.cos(tilt) * parent_dir
                + math.sin(tilt) * (math.cos(azimuth) * u + math.sin(azimuth) * v)
            )
            axis_dir[axis.id] = direction / np.linalg.norm(direction)
            bearing = topology.axes[axis.parent_id].gu_at(axis.insertion_ca)
            anchor_key = (axis.parent_id, axis.insertion_ca, bearing.internode_count)
            anchor = segments[seg_id_of[anchor_key] - 1]
            axis_start[axis.id] = np.asarray(anchor.end)

        pos = axis_start[axis.id].copy()
        prev_key: tuple[str, int, int] | None = None
        for gu in axis.gus:
            for rank in range(1, gu.internode_count + 1):
                key = (axis.id, gu.ca, rank)
                if key not in geo:
                    continue
                length, diameter = geo[key]
                end = pos + axis_dir[axis.id] * length
                if prev_key is not None:
                    parent_seg = seg_id_of[prev_key]
                elif axis.is_root:
                    parent_seg = None
                else:
                    bearing = topology.axes[axis.parent_id].gu_at(axis.insertion_ca)
                    parent_seg = seg_id_of[
                        (axis.parent_id, axis.insertion_ca, bearing.internode_count)
                    ]
                segments.append(
                    Segment(
                        segment_id=len(segments) + 1,
                        parent_id=parent_seg,
                        start=(float(pos[0]), float(pos[1]), float(pos[2])),
                        end=(float(end[0]), float(end[1]), float(end[2])),
                        radius_cm=diameter / 2.0,
                    )
                )
                seg_id_of[key] = len(segments)
                prev_key = key
                pos = end

    return segments


def export_skeleton(trace: SimulationTrace, topology: TreeTopology, seed: int) -> str:
    """Skeleton CSV: segment_id,parent_id,x0,y0,z0,x1,y1,z1,radius_cm."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(
        ("segment_id", "parent_id", "x0", "y0", "z0", "x1", "y1", "z1", "radius_cm")
    )
    for seg in build_skeleton(trace, topology, seed):
        writer.writerow(
            (
                seg.segment_id,
                "" if seg.parent_id is None else seg.parent_id,
                repr(seg.start[0]), repr(seg.start[1]), repr(seg.start[2]),
                repr(seg.end[0]), repr(seg.end[1]), repr(seg.end[2]),
                repr(seg.radius_cm),
            )
        )
    return buf.getvalue()


def export_trace_csv(trace: SimulationTrace) -> str:
    """Per-cycle series: cycle,q_prod,demand,leaf_surface,cum_internode_mass,cum_blade_mass."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(
        ("cycle", "q_prod", "demand", "leaf_surface",
         "cum_internode_mass", "cum_blade_mass")
    )
    for i in range(trace.cycles):
        writer.writerow(
            (
                i + 1,
                repr(float(trace.q_prod[i])),
                repr(float(trace.demand[i])),
                repr(float(trace.leaf_surface[i])),
                repr(float(trace.cum_internode_mass[i])),
                repr(float(trace.cum_blade_mass[i])),
            )
        )
    return buf.getvalue()


def export_organs_csv(trace: SimulationTrace) -> str:
    """Per-organ table: pa,birth_cycle,kind,mass_g,length_cm,diameter_mm.

    Explicit traces list every internode individually; blades are expanded
    from their cohorts (all blades of a cohort weigh the same).  Factored
    traces list one aggregate row per cohort and kind instead.
    """
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(("pa", "birth_cycle", "kind", "mass_g", "length_cm", "diameter_mm"))
    if trace.organs is not None:
        org = trace.organs
        for j in range(len(org)):
            writer.writerow(
                (
                    int(org.pa[j]), int(org.birth[j]), "internode",
                    repr(float(org.primary[j] + org.ring[j])),
                    repr(float(org.length_cm[j])),
                    repr(float(org.diameter_cm[j] * 10.0)),
                )
            )
        for (pa, birth), cohort in sorted(trace.cohorts.items()):
            for _ in range(cohort.n_blades):
                writer.writerow((pa, birth, "blade", repr(cohort.blade_mass), "", ""))
    else:
        for (pa, birth), cohort in sorted(trace.cohorts.items()):
            writer.writerow(
                (
                    pa, birth, "internode",
                    repr(cohort.internode_mass),
                    repr(cohort.length_cm),
                    repr(cohort.diameter_cm * 10.0),
                )
            )
            writer.writerow((pa, birth, "blade", repr(cohort.blade_mass), "", ""))
    return buf.getvalue()
