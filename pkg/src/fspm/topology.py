"""Tree structure model: axes of annual growth units bearing internodes.

An axis is an ordered run of growth units (GUs), one per growth cycle; each
GU carries a number of internodes, and every internode bears one blade.  Axes
are ranked by a physiological age (PA, 1 = main stem) assigned after
classification, while the chronological age (CA) of a GU is the cycle at
which it appeared.  Topologies are immutable once built and safe to share
across threads.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Iterator, Mapping, Sequence

from .errors import (
    BadInsertion,
    CycleDetected,
    CycleOutOfRange,
    DanglingParent,
    DuplicateKey,
    InvalidTopology,
    MissingPA,
    NonContiguousCA,
)

logger = logging.getLogger(__name__)

DEFAULT_P_MAX = 5

INTERNODE = "internode"
BLADE = "blade"


@dataclass(frozen=True)
class AxisRecord:
    """One row of an axes file: identity and attachment of an axis."""

    tree_id: str
    axis_id: str
    parent_axis_id: str | None
    insertion_ca: int | None


@dataclass(frozen=True)
class GURecord:
    """One row of a GU file: organ counts of a single growth unit."""

    tree_id: str
    axis_id: str
    gu_ca: int
    internode_count: int
    leaf_scar_count: int = 0


@dataclass(frozen=True)
class GrowthUnit:
    """Portion of an axis produced in one cycle."""

    ca: int
    internode_count: int
    leaf_scar_count: int = 0
    borne_axis_ids: tuple[str, ...] = ()


@dataclass(frozen=True)
class Axis:
    """An ordered run of growth units with a common physiological age.

    ``pa`` is None until a classification has been applied with
    :func:`with_physio_ages`.
    """

    id: str
    parent_id: str | None
    insertion_ca: int | None
    gus: tuple[GrowthUnit, ...]
    pa: int | None = None

    @property
    def is_root(self) -> bool:
        return self.parent_id is None

    @property
    def first_ca(self) -> int:
        return self.gus[0].ca

    @property
    def last_ca(self) -> int:
        return self.gus[-1].ca

    @property
    def top_gu(self) -> GrowthUnit:
        """Topmost (most recent) growth unit."""
        return self.gus[-1]

    def gu_at(self, ca: int) -> GrowthUnit | None:
        if self.first_ca <= ca <= self.last_ca:
            return self.gus[ca - self.first_ca]
        return None


@dataclass(frozen=True)
class TreeTopology:
    """Validated whole-tree structure, axes keyed by id in canonical order."""

    tree_id: str
    age: int
    axes: dict[str, Axis] = field(compare=False)

    @property
    def root(self) -> Axis:
        for axis in self.axes.values():
            if axis.is_root:
                return axis
        raise InvalidTopology(f"tree {self.tree_id!r} has no root axis")

    def axes_sorted(self) -> list[Axis]:
        return [self.axes[k] for k in sorted(self.axes)]

    def iter_gus(self) -> Iterator[tuple[Axis, GrowthUnit]]:
        for axis in self.axes_sorted():
            for gu in axis.gus:
                yield axis, gu

    def total_internodes(self) -> int:
        return sum(gu.internode_count for _, gu in self.iter_gus())

    def children_of(self, axis_id: str) -> list[Axis]:
        return [a for a in self.axes_sorted() if a.parent_id == axis_id]


def build_topology(
    axis_records: Sequence[AxisRecord], gu_records: Sequence[GURecord]
) -> TreeTopology:
    """Assemble and validate a single tree from axis and GU rows.

    Rows may arrive in any order; the result is canonical (axes sorted by id,
    GUs by cycle) so identical record sets always produce identical trees.

    Raises:
        DanglingParent: an axis references an undeclared parent.
        CycleDetected: parent links loop.
        NonContiguousCA: the GU cycle sequence of an axis has a gap.
        BadInsertion: a child does not attach to an existing parent GU, or
            its first GU is not at the insertion cycle or one cycle later.
        DuplicateKey, InvalidTopology: identity or structural rule broken.
    """
    if not axis_records:
        raise InvalidTopology("no axis records")
    tree_ids = {r.tree_id for r in axis_records} | {r.tree_id for r in gu_records}
    if len(tree_ids) != 1:
        raise InvalidTopology(f"records span multiple trees: {sorted(tree_ids)}")
    tree_id = tree_ids.pop()

    by_id: dict[str, AxisRecord] = {}
    for rec in axis_records:
        if rec.axis_id in by_id:
            raise DuplicateKey(f"axis {rec.axis_id!r} declared twice")
        by_id[rec.axis_id] = rec

    roots = [r for r in by_id.values() if r.parent_axis_id is None]
    if len(roots) != 1:
        raise InvalidTopology(
            f"tree {tree_id!r} must have exactly one root axis, found {len(roots)}"
        )

    for rec in by_id.values():
        if rec.parent_axis_id is not None and rec.parent_axis_id not in by_id:
            raise DanglingParent(
                f"axis {rec.axis_id!r} names unknown parent {rec.parent_axis_id!r}"
            )

    # Parent links must form a tree rooted at the single root.
    for rec in by_id.values():
        seen = {rec.axis_id}
        cur = rec.parent_axis_id
        while cur is not None:
            if cur in seen:
                raise CycleDetected(f"parent links loop through axis {cur!r}")
            seen.add(cur)
            cur = by_id[cur].parent_axis_id

    gus_by_axis: dict[str, list[GURecord]] = {k: [] for k in by_id}
    for rec in gu_records:
        if rec.axis_id not in by_id:
            raise DanglingParent(f"GU references unknown axis {rec.axis_id!r}")
        if rec.gu_ca < 1:
            raise InvalidTopology(f"axis {rec.axis_id!r}: GU ca {rec.gu_ca} < 1")
        if rec.internode_count < 1:
            raise InvalidTopology(
                f"axis {rec.axis_id!r} GU ca {rec.gu_ca}: internode_count < 1"
            )
        gus_by_axis[rec.axis_id].append(rec)

    axes: dict[str, Axis] = {}
    for axis_id in sorted(by_id):
        rec = by_id[axis_id]
        rows = sorted(gus_by_axis[axis_id], key=lambda g: g.gu_ca)
        if not rows:
            raise InvalidTopology(f"axis {axis_id!r} has no growth units")
        cas = [g.gu_ca for g in rows]
        for a, b in zip(cas, cas[1:]):
            if b == a:
                raise DuplicateKey(f"axis {axis_id!r}: GU ca {a} declared twice")
            if b != a + 1:
                raise NonContiguousCA(
                    f"axis {axis_id!r}: GU ca jumps from {a} to {b}"
                )
        for g in rows:
            # One blade per internode is structural; scars only flag odd rows.
            if g.leaf_scar_count and g.leaf_scar_count != g.internode_count:
                logger.warning(
                    "axis %s GU ca %d: %d leaf scars for %d internodes",
                    axis_id, g.gu_ca, g.leaf_scar_count, g.internode_count,
                )
        gus = tuple(
            GrowthUnit(ca=g.gu_ca, internode_count=g.internode_count,
                       leaf_scar_count=g.leaf_scar_count)
            for g in rows
        )
        axes[axis_id] = Axis(
            id=axis_id,
            parent_id=rec.parent_axis_id,
            insertion_ca=rec.insertion_ca,
            gus=gus,
        )

    # Attachment rule: a child inserted on a parent GU of cycle c starts at
    # c or c + 1 (generated trees always use c + 1).
    for axis in axes.values():
        if axis.is_root:
            continue
        if axis.insertion_ca is None:
            raise BadInsertion(f"axis {axis.id!r} has a parent but no insertion_ca")
        parent = axes[axis.parent_id]
        if parent.gu_at(axis.insertion_ca) is None:
            raise BadInsertion(
                f"axis {axis.id!r} inserts at ca {axis.insertion_ca} but parent "
                f"{parent.id!r} has no GU there"
            )
        if axis.first_ca not in (axis.insertion_ca, axis.insertion_ca + 1):
            raise BadInsertion(
                f"axis {axis.id!r}: first GU ca {axis.first_ca} not at insertion "
                f"ca {axis.insertion_ca} or one cycle later"
            )

    # Record borne axes on their bearing GU.
    children: dict[tuple[str, int], list[str]] = {}
    for axis in axes.values():
        if not axis.is_root:
            children.setdefault((axis.parent_id, axis.insertion_ca), []).append(axis.id)
    for axis_id, axis in axes.items():
        new_gus = tuple(
            replace(gu, borne_axis_ids=tuple(sorted(children.get((axis_id, gu.ca), ()))))
            for gu in axis.gus
        )
        axes[axis_id] = replace(axis, gus=new_gus)

    age = max(axis.last_ca for axis in axes.values())
    return TreeTopology(tree_id=tree_id, age=age, axes=axes)


def with_physio_ages(
    t: TreeTopology, pa_map: Mapping[str, int], p_max: int = DEFAULT_P_MAX
) -> TreeTopology:
    """Return a copy of the topology with physiological ages applied.

    The root must be PA 1; a child with a PA below its parent is a data
    anomaly that is logged, not rejected.
    """
    axes: dict[str, Axis] = {}
    for axis_id in sorted(t.axes):
        axis = t.axes[axis_id]
        if axis_id not in pa_map:
            raise MissingPA(f"axis {axis_id!r} has no PA assignment")
        pa = int(pa_map[axis_id])
        if not 1 <= pa <= p_max:
            raise MissingPA(f"axis {axis_id!r}: PA {pa} outside 1..{p_max}")
        if axis.is_root and pa != 1:
            raise MissingPA(f"root axis {axis_id!r} must be PA 1, got {pa}")
        axes[axis_id] = replace(axis, pa=pa)
    for axis in axes.values():
        if not axis.is_root and axis.pa < axes[axis.parent_id].pa:
            logger.warning(
                "axis %s has PA %d below its parent's PA %d",
                axis.id, axis.pa, axes[axis.parent_id].pa,
            )
    return TreeTopology(tree_id=t.tree_id, age=t.age, axes=axes)


def organ_census(t: TreeTopology, cycle: int) -> dict[tuple[int, str], int]:
    """Count internodes and blades born at ``cycle``, keyed by (PA, kind).

    Every internode bears exactly one blade, so blade counts mirror
    internode counts GU by GU.
    """
    if not 1 <= cycle <= t.age:
        raise CycleOutOfRange(f"cycle {cycle} outside 1..{t.age}")
    counts: dict[tuple[int, str], int] = {}
    for axis, gu in t.iter_gus():
        if gu.ca != cycle:
            continue
        if axis.pa is None:
            raise MissingPA(f"axis {axis.id!r} has no PA; classify first")
        counts[(axis.pa, INTERNODE)] = counts.get((axis.pa, INTERNODE), 0) + gu.internode_count
        counts[(axis.pa, BLADE)] = counts.get((axis.pa, BLADE), 0) + gu.internode_count
    return counts


# -- generative topologies ----------------------------------------------------

@dataclass(frozen=True)
class GrowthRules:
    """Deterministic branching rules for synthetic trees.

    Each axis adds one GU per cycle until the tree age; every GU of a
    PA ``p`` axis bears ``branches_per_gu[p]`` child axes of PA ``p + 1``
    (none beyond ``p_max``) whose first GU appears the following cycle.
    ``internodes_per_gu`` and ``branches_per_gu`` accept a single int that
    applies to every PA, or a per-PA mapping.
    """

    p_max: int = DEFAULT_P_MAX
    internodes_per_gu: int | Mapping[int, int] = 1
    branches_per_gu: int | Mapping[int, int] = 0

    def __post_init__(self) -> None:
        if self.p_max < 1:
            raise InvalidTopology("p_max must be >= 1")
        for pa in range(1, self.p_max + 1):
            if self.internodes(pa) < 1:
                raise InvalidTopology(f"internodes_per_gu for PA {pa} must be >= 1")
            if self.branches(pa) < 0:
                raise InvalidTopology(f"branches_per_gu for PA {pa} must be >= 0")

    def internodes(self, pa: int) -> int:
        if isinstance(self.internodes_per_gu, int):
            return self.internodes_per_gu
        return int(self.internodes_per_gu.get(pa, 1))

    def branches(self, pa: int) -> int:
        if isinstance(self.branches_per_gu, int):
            return self.branches_per_gu
        return int(self.branches_per_gu.get(pa, 0))


def generate_topology(
    rules: GrowthRules, age: int, tree_id: str = "synthetic"
) -> TreeTopology:
    """Expand branching rules into an explicit tree of the given age.

    This is the brute-force counterpart of the cohort recurrence used by the
    factorized simulator: it materializes every axis and GU.  Axis ids are
    zero-padded creation ranks so canonical (id-sorted) order equals
    creation order.
    """
    if age < 1:
        raise InvalidTopology("age must be >= 1")
    axis_rows: list[AxisRecord] = []
    gu_rows: list[GURecord] = []
    pa_of: dict[str, int] = {}

    counter = 0

    def new_id() -> str:
        nonlocal counter
        counter += 1
        return f"a{counter:06d}"

    # Breadth-first by creation: (id, parent, insertion_ca, pa, first_ca)
    queue: list[tuple[str, str | None, int | None, int, int]] = [
        (new_id(), None, None, 1, 1)
    ]
    head = 0
    while head < len(queue):
        axis_id, parent, ins_ca, pa, first_ca = queue[head]
        head += 1
        pa_of[axis_id] = pa
        axis_rows.append(AxisRecord(tree_id, axis_id, parent, ins_ca))
        n_int = rules.internodes(pa)
        for ca in range(first_ca, age + 1):
            gu_rows.append(GURecord(tree_id, axis_id, ca, n_int, n_int))
            if pa < rules.p_max and ca + 1 <= age:
                for _ in range(rules.branches(pa)):
                    queue.append((new_id(), axis_id, ca, pa + 1, ca + 1))

    t = build_topology(axis_rows, gu_rows)
    return with_physio_ages(t, pa_of, p_max=rules.p_max)
