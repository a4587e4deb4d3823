"""Physiological age assignment by exact 1-D clustering of new-growth weight.

Axes are characterized by the mean fresh weight of the internodes in their
topmost growth unit.  Those weights are split into k contiguous clusters by
a dynamic program that is globally optimal in within-cluster sum of squares
(unlike iterative k-means there is no seed sensitivity), and clusters are
relabeled 1..k by descending mean weight: the heaviest new growth defines
PA 1, the main stem.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from typing import Mapping, Sequence

from .errors import KTooLarge, MainAxisNotHeaviest, NoTerminalData, ValidationError
from .topology import TreeTopology

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ClusterPartition:
    """Optimal contiguous k-partition of 1-D weights.

    Cluster indices run 0..k-1 in ascending weight order; ``boundaries``
    holds the k-1 midpoint thresholds between adjacent clusters.
    """

    k: int
    boundaries: tuple[float, ...]
    assignments: dict[object, int]
    means: tuple[float, ...]
    wcss: float


def top_internode_weight(t: TreeTopology, records: Sequence) -> dict[str, float]:
    """Mean internode fresh weight in the topmost GU of every axis.

    ``records`` are internode measurement rows with ``axis_id``, ``gu_ca``
    and ``fresh_weight`` attributes.
    """
    by_gu: dict[tuple[str, int], list[float]] = {}
    for rec in records:
        by_gu.setdefault((rec.axis_id, rec.gu_ca), []).append(rec.fresh_weight)
    out: dict[str, float] = {}
    for axis in t.axes_sorted():
        top = by_gu.get((axis.id, axis.last_ca), [])
        if not top:
            raise NoTerminalData(
                f"axis {axis.id!r} has no internode records in its top GU "
                f"(ca {axis.last_ca})"
            )
        out[axis.id] = sum(top) / len(top)
    return out


def _segment_cost(xs: Sequence[float]) -> float:
    """Sum of squared deviations from the segment mean."""
    mean = sum(xs) / len(xs)
    return sum((x - mean) ** 2 for x in xs)


def cluster_1d(
    values: Mapping[object, float] | Sequence[float], k: int
) -> ClusterPartition:
    """Globally optimal contiguous k-clustering of scalar weights.

    Accepts a mapping id -> weight or a plain sequence (ids are positions).
    Ties between equally optimal partitions break toward the smallest
    leading cluster.  Requires k <= number of distinct values.
    """
    if isinstance(values, Mapping):
        items = sorted(values.items(), key=lambda kv: (kv[1], str(kv[0])))
    else:
        items = sorted(enumerate(values), key=lambda kv: (kv[1], kv[0]))
    n = len(items)
    if n == 0:
        raise ValidationError("no values to cluster")
    if k < 1:
        raise KTooLarge(f"k must be >= 1, got {k}")
    xs = [w for _, w in items]
    if k > len(set(xs)):
        raise KTooLarge(f"k={k} exceeds {len(set(xs))} distinct values")

    # Prefix sums make interval costs O(1) inside the DP.
    ps = [0.0] * (n + 1)
    pq = [0.0] * (n + 1)
    for i, x in enumerate(xs):
        ps[i + 1] = ps[i] + x
        pq[i + 1] = pq[i] + x * x

    def cost(i: int, j: int) -> float:
        s = ps[j + 1] - ps[i]
        m = j - i + 1
        return pq[j + 1] - pq[i] - s * s / m

    inf = float("inf")
    # suffix[j][i]: optimal cost of splitting xs[i:] into j clusters.
    suffix = [[inf] * (n + 1) for _ in range(k + 1)]
    suffix[0][n] = 0.0
    for j in range(1, k + 1):
        for i in range(n - j, -1, -1):
            best = inf
            for end in range(i, n - j + 1):
                c = cost(i, end) + suffix[j - 1][end + 1]
                if c < best:
                    best = c
            suffix[j][i] = best

    # Walk forward taking the shortest leading cluster that stays optimal.
    segments: list[tuple[int, int]] = []
    i = 0
    for j in range(k, 0, -1):
        for end in range(i, n - j + 1):
            if cost(i, end) + suffix[j - 1][end + 1] == suffix[j][i]:
                segments.append((i, end))
                i = end + 1
                break

    assignments = {}
    means = []
    boundaries = []
    wcss = 0.0
    for c, (lo, hi) in enumerate(segments):
        for key, _ in items[lo : hi + 1]:
            assignments[key] = c
        means.append(sum(xs[lo : hi + 1]) / (hi - lo + 1))
        wcss += _segment_cost(xs[lo : hi + 1])
        if c + 1 < len(segments):
            boundaries.append((xs[hi] + xs[hi + 1]) / 2.0)

    return ClusterPartition(
        k=k,
        boundaries=tuple(boundaries),
        assignments=assignments,
        means=tuple(means),
        wcss=wcss,
    )


def assign_pa(p: ClusterPartition, main_axis_id: object) -> dict[object, int]:
    """Relabel clusters as physiological ages 1..k by descending mean weight.

    The main stem must already sit in the heaviest cluster; anything else
    indicates inconsistent data and is reported, never silently overridden.
    """
    if main_axis_id not in p.assignments:
        raise ValidationError(f"main axis {main_axis_id!r} not in partition")
    order = sorted(range(p.k), key=lambda c: -p.means[c])
    pa_of_cluster = {cluster: rank + 1 for rank, cluster in enumerate(order)}
    if pa_of_cluster[p.assignments[main_axis_id]] != 1:
        raise MainAxisNotHeaviest(
            f"main axis {main_axis_id!r} fell in a cluster with mean "
            f"{p.means[p.assignments[main_axis_id]]:.4g}, below the heaviest "
            f"{max(p.means):.4g}"
        )
    return {key: pa_of_cluster[c] for key, c in p.assignments.items()}


def classify_axes(
    t: TreeTopology, records: Sequence, k: int
) -> tuple[dict[str, int], ClusterPartition]:
    """Terminal weights -> clustering -> PA labels, in one call.

    If fewer distinct terminal weights than k exist, k is reduced to match
    (small trees simply have fewer vigor classes); the effective partition is
    returned alongside the PA map.
    """
    weights = top_internode_weight(t, records)
    k_eff = min(k, len(set(weights.values())))
    if k_eff < k:
        logger.info(
            "tree %s: only %d distinct terminal weights, using k=%d",
            t.tree_id, k_eff, k_eff,
        )
    partition = cluster_1d(weights, k_eff)
    pa_map = assign_pa(partition, t.root.id)
    means = ", ".join(
        f"PA{rank + 1}={m:.3g}g"
        for rank, m in enumerate(sorted(partition.means, reverse=True))
    )
    logger.info("tree %s: cluster means by PA: %s", t.tree_id, means)
    return pa_map, partition


def pa_map_to_json(pa_map: Mapping[str, int]) -> str:
    return json.dumps(dict(sorted(pa_map.items())), indent=2) + "\n"


def pa_map_from_json(text: str) -> dict[str, int]:
    return {str(k): int(v) for k, v in json.loads(text).items()}
