"""Per-cycle production and allocation over a tree structure.

Each growth cycle, the biomass produced by the previous cycle's foliage (the
seed mass on cycle 1) is split among the organs expanding this cycle and a
cambial ring compartment, proportionally to their sink strengths.  Blades are
the sink reference (1 per blade); internode sinks depend on physiological
age; the ring compartment competes once internodes from earlier cycles exist
to thicken.  New foliage then fixes the biomass that funds the next cycle.

Two simulation modes produce identical numbers for repeated structures:

* :func:`simulate` walks an explicit :class:`~fspm.topology.TreeTopology`
  and tracks every internode (required for the pipe ring distribution and
  geometry export).
* :func:`simulate_factored` never materializes organs: cohort counts per
  (PA, birth cycle) follow a linear recurrence over generative branching
  rules, so trees with millions of organs cost O(p_max * age^2).
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .direct_estim import DirectParams
from .errors import (
    InvalidTopology,
    UnsupportedRingMode,
    ZeroDemandWithBiomass,
)
from .topology import BLADE, INTERNODE, GrowthRules, TreeTopology

RING_UNIFORM = "uniform"
RING_PIPE = "pipe"
RING_DEMAND_PER_BLADE = "per-blade"
RING_DEMAND_CONSTANT = "constant"


@dataclass(frozen=True)
class HiddenParams:
    """Parameters recovered by calibration rather than direct measurement.

    q0: seed biomass funding the first cycle (g).  Fitted values are
        strictly positive; 0 is accepted and yields an all-zero trace.
    rp: resistance divisor of the production law (dimensionless).
    pc: relative sink of the ring compartment per functioning blade
        (dimensionless).
    """

    q0: float
    rp: float
    pc: float

    def __post_init__(self) -> None:
        if self.q0 < 0:
            raise ValueError(f"q0 must be >= 0, got {self.q0}")
        if self.rp <= 0:
            raise ValueError(f"rp must be > 0, got {self.rp}")
        if self.pc < 0:
            raise ValueError(f"pc must be >= 0, got {self.pc}")


@dataclass(frozen=True)
class SimConfig:
    """Fixed constants of the production/allocation recursion.

    e: environmental potential (g biomass per cm^2 of ground per cycle).
    sp: characteristic ground surface (cm^2); default is the 3 m x 4 m
        planting spacing.
    rho: fresh tissue density (g/cm^3) closing the internode cylinder.
    t_f: cycles a blade keeps functioning after birth.
    t_exp: cycles an organ takes to reach its final primary mass; its sink
        is spread uniformly over those cycles.
    ring_mode: how the ring pool is spread over internodes ("uniform" or
        "pipe", the latter weighting by functioning blades above).
    ring_demand: "per-blade" scales ring sink with functioning blade count,
        "constant" adds a flat pc to demand while rings are active.
    """

    e: float = 1.0
    sp: float = 120_000.0
    rho: float = 1.0
    t_f: int = 1
    t_exp: int = 1
    ring_mode: str = RING_UNIFORM
    ring_demand: str = RING_DEMAND_PER_BLADE

    def __post_init__(self) -> None:
        if self.e <= 0 or self.sp <= 0 or self.rho <= 0:
            raise ValueError("e, sp and rho must be positive")
        if self.t_f < 1 or self.t_exp < 1:
            raise ValueError("t_f and t_exp must be >= 1")
        if self.ring_mode not in (RING_UNIFORM, RING_PIPE):
            raise ValueError(f"unknown ring_mode {self.ring_mode!r}")
        if self.ring_demand not in (RING_DEMAND_PER_BLADE, RING_DEMAND_CONSTANT):
            raise ValueError(f"unknown ring_demand {self.ring_demand!r}")


def production(leaf_surface: float, cfg: SimConfig, hp: HiddenParams) -> float:
    """Biomass fixed in one cycle by ``leaf_surface`` cm^2 of foliage.

    Saturating in the leaf surface: linear slope e/rp for small surfaces,
    bounded by e*sp/rp as the canopy closes over its ground area.
    """
    if leaf_surface < 0:
        raise ValueError("leaf surface must be >= 0")
    return cfg.e * (cfg.sp / hp.rp) * (1.0 - math.exp(-leaf_surface / cfg.sp))


def demand(
    expanding: Mapping[tuple[int, str], int],
    dp: DirectParams,
    hp: HiddenParams,
    cfg: SimConfig,
    n_functioning_blades: int = 0,
    rings_active: bool = False,
) -> float:
    """Total sink demand for one cycle.

    ``expanding`` counts organs currently in their expansion window, keyed by
    (PA, kind); each contributes its sink divided by t_exp.  The ring term is
    added only while there are completed internodes to thicken.
    """
    d = 0.0
    for (pa, kind), count in sorted(expanding.items()):
        if count < 0:
            raise ValueError("organ counts must be >= 0")
        sink = 1.0 if kind == BLADE else dp.sink(pa)
        d += count * sink / cfg.t_exp
    if rings_active:
        if cfg.ring_demand == RING_DEMAND_PER_BLADE:
            d += hp.pc * n_functioning_blades
        else:
            d += hp.pc
    return d


def allocate(
    q_prev: float, components: Sequence[tuple[object, float]]
) -> dict[object, float]:
    """Split ``q_prev`` grams over components proportionally to their sinks.

    The final share is taken as the remainder so the allocations sum to
    ``q_prev`` exactly.
    """
    if q_prev < 0:
        raise ValueError("biomass to allocate must be >= 0")
    total = sum(s for _, s in components)
    if any(s < 0 for _, s in components):
        raise ValueError("sink weights must be >= 0")
    if q_prev == 0:
        return {key: 0.0 for key, _ in components}
    if total <= 0:
        raise ZeroDemandWithBiomass(
            f"{q_prev} g available but total sink demand is zero"
        )
    out: dict[object, float] = {}
    acc = 0.0
    for key, sink in components[:-1]:
        share = q_prev * sink / total
        out[key] = share
        acc += share
    out[components[-1][0]] = q_prev - acc
    return out


def distribute_rings(
    ring_pool: float,
    n_internodes: int,
    mode: str = RING_UNIFORM,
    distal_blade_counts: Sequence[int] | None = None,
) -> np.ndarray:
    """Per-internode ring increments summing exactly to ``ring_pool``.

    Uniform mode gives every internode the same share.  Pipe mode weights
    each internode by the functioning blades at or above it, so a bare
    internode with nothing distal receives nothing; if no internode carries
    any weight the pool falls back to uniform to conserve mass.
    """
    if ring_pool < 0:
        raise ValueError("ring pool must be >= 0")
    if n_internodes == 0:
        if ring_pool > 0:
            raise ValueError("ring pool with no internodes to receive it")
        return np.zeros(0)
    if ring_pool == 0:
        return np.zeros(n_internodes)
    if mode == RING_UNIFORM:
        shares = np.full(n_internodes, ring_pool / n_internodes)
        shares[-1] = ring_pool - shares[:-1].sum()
        return shares
    if mode != RING_PIPE:
        raise UnsupportedRingMode(f"unknown ring mode {mode!r}")
    if distal_blade_counts is None or len(distal_blade_counts) != n_internodes:
        raise ValueError("pipe mode needs one distal blade count per internode")
    w = np.asarray(distal_blade_counts, dtype=float)
    total = w.sum()
    if total <= 0:
        return distribute_rings(ring_pool, n_internodes, RING_UNIFORM)
    shares = ring_pool * w / total
    anchor = int(np.argmax(w))
    shares[anchor] = 0.0
    shares[anchor] = ring_pool - shares.sum()
    return shares


def internode_geometry(
    primary_mass: float,
    total_mass: float,
    b: float,
    beta: float,
    rho: float = 1.0,
) -> tuple[float, float]:
    """(length_cm, diameter_cm) of an internode.

    Length follows the allometric law on primary mass only, fixed once
    expansion ends; ring mass thickens the diameter through the cylinder
    closure pi/4 * d^2 * l * rho = total mass.
    """
    if primary_mass < 0 or total_mass < 0:
        raise ValueError("masses must be >= 0")
    if primary_mass == 0:
        return 0.0, 0.0
    length = b * primary_mass**beta
    if total_mass == 0 or length <= 0:
        return length, 0.0
    diameter = math.sqrt(4.0 * total_mass / (math.pi * rho * length))
    return length, diameter


# -- traces -------------------------------------------------------------------

@dataclass(frozen=True)
class CohortSummary:
    """Per-organ state of one (PA, birth cycle) cohort at the end of a run."""

    pa: int
    birth: int
    n_internodes: int
    n_blades: int
    blade_mass: float
    internode_primary: float
    internode_ring: float
    internode_mass: float
    length_cm: float
    diameter_cm: float


@dataclass
class OrganTable:
    """Per-internode arrays (explicit mode only), canonical order."""

    positions: list[tuple[str, int, int]]  # (axis_id, gu_ca, rank)
    pa: np.ndarray
    birth: np.ndarray
    primary: np.ndarray
    ring: np.ndarray
    length_cm: np.ndarray
    diameter_cm: np.ndarray

    def __len__(self) -> int:
        return len(self.positions)


@dataclass
class SimulationTrace:
    """Everything a run produces, cycle by cycle and cohort by cohort."""

    tree_id: str
    cycles: int
    q_funded: np.ndarray
    q_prod: np.ndarray
    demand: np.ndarray
    leaf_surface: np.ndarray
    ring_pool: np.ndarray
    cum_internode_mass: np.ndarray
    cum_blade_mass: np.ndarray
    cohorts: dict[tuple[int, int], CohortSummary]
    organs: OrganTable | None = None

    def total_mass(self) -> float:
        return float(self.cum_internode_mass[-1] + self.cum_blade_mass[-1])


def _ring_sink(
    hp: HiddenParams, cfg: SimConfig, n_functioning_blades: int, rings_active: bool
) -> float:
    if not rings_active:
        return 0.0
    if cfg.ring_demand == RING_DEMAND_PER_BLADE:
        return hp.pc * n_functioning_blades
    return hp.pc


def _expanding_counts(
    census: Mapping[int, Mapping[tuple[int, str], int]], cycle: int, t_exp: int
) -> dict[tuple[int, str], int]:
    out: dict[tuple[int, str], int] = {}
    for b in range(max(1, cycle - t_exp + 1), cycle + 1):
        for key, count in census.get(b, {}).items():
            out[key] = out.get(key, 0) + count
    return out


def _components(
    census: Mapping[int, Mapping[tuple[int, str], int]],
    cycle: int,
    dp: DirectParams,
    cfg: SimConfig,
    ring_sink: float,
) -> list[tuple[object, float]]:
    """Canonical per-cohort sink components for one cycle's allocation."""
    comps: list[tuple[object, float]] = []
    for b in range(max(1, cycle - cfg.t_exp + 1), cycle + 1):
        for (pa, kind), count in sorted(census.get(b, {}).items()):
            sink = 1.0 if kind == BLADE else dp.sink(pa)
            comps.append(((pa, kind, b), count * sink / cfg.t_exp))
    if ring_sink > 0:
        comps.append(("rings", ring_sink))
    return comps


def simulate(
    hp: HiddenParams,
    dp: DirectParams,
    topology: TreeTopology,
    cfg: SimConfig = SimConfig(),
    cycles: int | None = None,
) -> SimulationTrace:
    """Run the recursion over an explicit, PA-classified topology.

    Cycle 1 is funded by the seed mass, cycle i by the production of cycle
    i - 1.  The trace carries per-internode masses and geometry.
    """
    n = topology.age if cycles is None else int(cycles)
    if not 1 <= n <= topology.age:
        raise InvalidTopology(
            f"cycles must be in 1..{topology.age}, got {n}"
        )

    # Walk the structure once: one entry per internode, canonical order.
    positions: list[tuple[str, int, int]] = []
    pa_list: list[int] = []
    birth_list: list[int] = []
    census: dict[int, dict[tuple[int, str], int]] = {}
    for axis, gu in topology.iter_gus():
        if axis.pa is None:
            raise InvalidTopology(f"axis {axis.id!r} lacks a PA; classify first")
        if gu.ca > n:
            continue
        for rank in range(1, gu.internode_count + 1):
            positions.append((axis.id, gu.ca, rank))
            pa_list.append(axis.pa)
            birth_list.append(gu.ca)
        cyc = census.setdefault(gu.ca, {})
        cyc[(axis.pa, INTERNODE)] = cyc.get((axis.pa, INTERNODE), 0) + gu.internode_count
        cyc[(axis.pa, BLADE)] = cyc.get((axis.pa, BLADE), 0) + gu.internode_count

    pa_arr = np.array(pa_list, dtype=int)
    birth_arr = np.array(birth_list, dtype=int)
    n_org = len(positions)
    primary = np.zeros(n_org)
    ring = np.zeros(n_org)
    cohort_idx: dict[tuple[int, int], np.ndarray] = {}
    for b, cyc in census.items():
        for (pa, kind) in cyc:
            if kind == INTERNODE:
                cohort_idx[(pa, b)] = np.flatnonzero((pa_arr == pa) & (birth_arr == b))

    blade_mass: dict[tuple[int, int], float] = {}  # (pa, birth) -> g per blade

    q_funded = np.zeros(n + 1)
    q_prod = np.zeros(n + 1)
    dem = np.zeros(n + 1)
    surf = np.zeros(n + 1)
    pool_arr = np.zeros(n + 1)
    cum_int = np.zeros(n + 1)
    cum_blade = np.zeros(n + 1)

    pipe_ctx = _PipeContext(topology, positions) if cfg.ring_mode == RING_PIPE else None

    for i in range(1, n + 1):
        funded = hp.q0 if i == 1 else float(q_prod[i - 1])
        eligible = birth_arr <= i - cfg.t_exp
        n_eligible = int(eligible.sum())
        rings_active = n_eligible > 0
        n_func = sum(
            count
            for b in range(max(1, i - cfg.t_f + 1), i + 1)
            for (pa, kind), count in census.get(b, {}).items()
            if kind == BLADE
        )
        expanding = _expanding_counts(census, i, cfg.t_exp)
        ring_sink = _ring_sink(hp, cfg, n_func, rings_active)
        d = demand(expanding, dp, hp, cfg, n_func, rings_active)
        if funded > 0 and d <= 0:
            raise ZeroDemandWithBiomass(
                f"cycle {i}: {funded} g to allocate but no demand"
            )

        pool = 0.0
        if funded > 0:
            alloc = allocate(funded, _components(census, i, dp, cfg, ring_sink))
            for key, mass in alloc.items():
                if key == "rings":
                    pool = mass
                    continue
                pa, kind, b = key
                count = census[b][(pa, kind)]
                if kind == BLADE:
                    blade_mass[(pa, b)] = blade_mass.get((pa, b), 0.0) + mass / count
                else:
                    primary[cohort_idx[(pa, b)]] += mass / count
            if pool > 0:
                if cfg.ring_mode == RING_UNIFORM:
                    shares = distribute_rings(pool, n_eligible, RING_UNIFORM)
                else:
                    weights = pipe_ctx.distal_functioning(i, cfg.t_f)
                    shares = distribute_rings(
                        pool, n_eligible, RING_PIPE, weights[eligible]
                    )
                ring[np.flatnonzero(eligible)] += shares

        functioning_mass = sum(
            blade_mass.get((pa, b), 0.0) * count
            for b in range(max(1, i - cfg.t_f + 1), i + 1)
            for (pa, kind), count in census.get(b, {}).items()
            if kind == BLADE
        )
        s = functioning_mass / dp.slw
        q_funded[i] = funded
        q_prod[i] = production(s, cfg, hp)
        dem[i] = d
        surf[i] = s
        pool_arr[i] = pool
        cum_int[i] = primary.sum() + ring.sum()
        cum_blade[i] = sum(
            per * census[b][(pa, BLADE)] for (pa, b), per in blade_mass.items()
        )

    length = np.zeros(n_org)
    diameter = np.zeros(n_org)
    for (pa, b), idx in cohort_idx.items():
        coef_b, coef_beta = dp.shape(pa)
        for j in idx:
            length[j], diameter[j] = internode_geometry(
                primary[j], primary[j] + ring[j], coef_b, coef_beta, cfg.rho
            )

    organs = OrganTable(
        positions=positions, pa=pa_arr, birth=birth_arr,
        primary=primary, ring=ring, length_cm=length, diameter_cm=diameter,
    )
    cohorts: dict[tuple[int, int], CohortSummary] = {}
    for (pa, b), idx in sorted(cohort_idx.items(), key=lambda kv: (kv[0][1], kv[0][0])):
        count = len(idx)
        cohorts[(pa, b)] = CohortSummary(
            pa=pa, birth=b,
            n_internodes=count, n_blades=census[b][(pa, BLADE)],
            blade_mass=blade_mass.get((pa, b), 0.0),
            internode_primary=float(primary[idx].mean()),
            internode_ring=float(ring[idx].mean()),
            internode_mass=float((primary[idx] + ring[idx]).mean()),
            length_cm=float(length[idx].mean()),
            diameter_cm=float(diameter[idx].mean()),
        )

    return SimulationTrace(
        tree_id=topology.tree_id, cycles=n,
        q_funded=q_funded[1:], q_prod=q_prod[1:], demand=dem[1:],
        leaf_surface=surf[1:], ring_pool=pool_arr[1:],
        cum_internode_mass=cum_int[1:], cum_blade_mass=cum_blade[1:],
        cohorts=cohorts, organs=organs,
    )


class _PipeContext:
    """Distal functioning-blade counts per internode, recomputed per cycle."""

    def __init__(self, topology: TreeTopology, positions: list[tuple[str, int, int]]):
        self.topology = topology
        self.index_of = {pos: j for j, pos in enumerate(positions)}
        self.n = len(positions)

    def distal_functioning(self, cycle: int, t_f: int) -> np.ndarray:
        """Functioning blades at or above each internode at ``cycle``."""

        def functioning(ca: int) -> bool:
            return cycle - t_f < ca <= cycle

        weights = np.zeros(self.n)

        def visit(axis) -> int:
            child_from_ca: dict[int, int] = {}
            for child in self.topology.children_of(axis.id):
                sub = visit(child)
                child_from_ca[child.insertion_ca] = (
                    child_from_ca.get(child.insertion_ca, 0) + sub
                )
            suffix = 0
            child_acc = 0
            for gu in reversed(axis.gus):
                if gu.ca > cycle:
                    child_acc += child_from_ca.pop(gu.ca, 0)
                    continue
                child_acc += child_from_ca.pop(gu.ca, 0)
                own = 1 if functioning(gu.ca) else 0
                for rank in range(gu.internode_count, 0, -1):
                    suffix += own
                    weights[self.index_of[(axis.id, gu.ca, rank)]] = suffix + child_acc
            return suffix + child_acc

        visit(self.topology.root)
        return weights


# -- factorized mode ----------------------------------------------------------

def cohort_counts(rules: GrowthRules, age: int) -> dict[tuple[int, int], int]:
    """Internode count per (PA, birth cycle) from the branching recurrence.

    Axes of PA p+1 starting at cycle s come from GUs laid down at s - 1 by
    every PA-p axis already alive, so cumulative axis counts drive the whole
    table; no organ is ever enumerated.
    """
    if age < 1:
        raise InvalidTopology("age must be >= 1")
    cum = {p: [0] * (age + 1) for p in range(1, rules.p_max + 1)}
    starts = {p: [0] * (age + 1) for p in range(1, rules.p_max + 1)}
    starts[1][1] = 1
    for s in range(1, age + 1):
        for p in range(1, rules.p_max + 1):
            cum[p][s] = cum[p][s - 1] + starts[p][s]
        for p in range(1, rules.p_max):
            if s + 1 <= age:
                starts[p + 1][s + 1] = rules.branches(p) * cum[p][s]
    counts: dict[tuple[int, int], int] = {}
    for p in range(1, rules.p_max + 1):
        for c in range(1, age + 1):
            if cum[p][c]:
                counts[(p, c)] = rules.internodes(p) * cum[p][c]
    return counts


def analytic_organ_count(rules: GrowthRules, age: int) -> int:
    """Total organs (internodes + blades) the rules imply, without expansion."""
    return 2 * sum(cohort_counts(rules, age).values())


def simulate_factored(
    hp: HiddenParams,
    dp: DirectParams,
    rules: GrowthRules,
    age: int,
    cfg: SimConfig = SimConfig(),
    tree_id: str = "factored",
) -> SimulationTrace:
    """Run the recursion on cohort counts alone (uniform ring mode only)."""
    if cfg.ring_mode != RING_UNIFORM:
        raise UnsupportedRingMode("pipe ring distribution requires explicit mode")
    counts = cohort_counts(rules, age)
    census: dict[int, dict[tuple[int, str], int]] = {}
    for (pa, b), cnt in counts.items():
        cyc = census.setdefault(b, {})
        cyc[(pa, INTERNODE)] = cnt
        cyc[(pa, BLADE)] = cnt

    prim: dict[tuple[int, int], float] = {k: 0.0 for k in counts}
    ring_per: dict[tuple[int, int], float] = {k: 0.0 for k in counts}
    blade_mass: dict[tuple[int, int], float] = {}

    q_funded = np.zeros(age + 1)
    q_prod = np.zeros(age + 1)
    dem = np.zeros(age + 1)
    surf = np.zeros(age + 1)
    pool_arr = np.zeros(age + 1)
    cum_int = np.zeros(age + 1)
    cum_blade = np.zeros(age + 1)

    for i in range(1, age + 1):
        funded = hp.q0 if i == 1 else float(q_prod[i - 1])
        eligible = [(pa, b) for (pa, b) in counts if b <= i - cfg.t_exp]
        n_eligible = sum(counts[k] for k in eligible)
        rings_active = n_eligible > 0
        n_func = sum(
            count
            for b in range(max(1, i - cfg.t_f + 1), i + 1)
            for (pa, kind), count in census.get(b, {}).items()
            if kind == BLADE
        )
        expanding = _expanding_counts(census, i, cfg.t_exp)
        d = demand(expanding, dp, hp, cfg, n_func, rings_active)
        if funded > 0 and d <= 0:
            raise ZeroDemandWithBiomass(
                f"cycle {i}: {funded} g to allocate but no demand"
            )

        pool = 0.0
        if funded > 0:
            ring_sink = d - demand(expanding, dp, hp, cfg, 0, False)
            alloc = allocate(funded, _components(census, i, dp, cfg, ring_sink))
            for key, mass in alloc.items():
                if key == "rings":
                    pool = mass
                    continue
                pa, kind, b = key
                count = census[b][(pa, kind)]
                if kind == BLADE:
                    blade_mass[(pa, b)] = blade_mass.get((pa, b), 0.0) + mass / count
                else:
                    prim[(pa, b)] += mass / count
            if pool > 0:
                per_organ = pool / n_eligible
                for k in eligible:
                    ring_per[k] += per_organ

        functioning_mass = sum(
            blade_mass.get((pa, b), 0.0) * count
            for b in range(max(1, i - cfg.t_f + 1), i + 1)
            for (pa, kind), count in census.get(b, {}).items()
            if kind == BLADE
        )
        s = functioning_mass / dp.slw
        q_funded[i] = funded
        q_prod[i] = production(s, cfg, hp)
        dem[i] = d
        surf[i] = s
        pool_arr[i] = pool
        cum_int[i] = sum((prim[k] + ring_per[k]) * counts[k] for k in sorted(counts))
        cum_blade[i] = sum(
            per * census[b][(pa, BLADE)] for (pa, b), per in blade_mass.items()
        )

    cohorts: dict[tuple[int, int], CohortSummary] = {}
    for (pa, b) in sorted(counts, key=lambda k: (k[1], k[0])):
        coef_b, coef_beta = dp.shape(pa)
        length, diameter = internode_geometry(
            prim[(pa, b)], prim[(pa, b)] + ring_per[(pa, b)], coef_b, coef_beta, cfg.rho
        )
        cohorts[(pa, b)] = CohortSummary(
            pa=pa, birth=b,
            n_internodes=counts[(pa, b)], n_blades=counts[(pa, b)],
            blade_mass=blade_mass.get((pa, b), 0.0),
            internode_primary=prim[(pa, b)],
            internode_ring=ring_per[(pa, b)],
            internode_mass=prim[(pa, b)] + ring_per[(pa, b)],
            length_cm=length, diameter_cm=diameter,
        )

    return SimulationTrace(
        tree_id=tree_id, cycles=age,
        q_funded=q_funded[1:], q_prod=q_prod[1:], demand=dem[1:],
        leaf_surface=surf[1:], ring_pool=pool_arr[1:],
        cum_internode_mass=cum_int[1:], cum_blade_mass=cum_blade[1:],
        cohorts=cohorts, organs=None,
    )
