from itertools import combinations

import pytest
from hypothesis import given, strategies as st

from fspm import (
    AxisRecord,
    GURecord,
    InternodeRecord,
    assign_pa,
    build_topology,
    classify_axes,
    cluster_1d,
    top_internode_weight,
)
from fspm.errors import KTooLarge, MainAxisNotHeaviest, NoTerminalData


def brute_force_wcss(values, k):
    """Independent oracle: enumerate every contiguous k-partition."""
    xs = sorted(values)
    best = float("inf")
    for splits in combinations(range(1, len(xs)), k - 1):
        bounds = (0, *splits, len(xs))
        cost = 0.0
        for a, b in zip(bounds, bounds[1:]):
            seg = xs[a:b]
            mean = sum(seg) / len(seg)
            cost += sum((x - mean) ** 2 for x in seg)
        best = min(best, cost)
    return best


def internode(axis_id, ca, rank, weight):
    return InternodeRecord("T", axis_id, ca, rank, weight, 5.0, 4.0)


def tree_with_axes(layout):
    """layout: {axis_id: (parent, insertion_ca, [ca...])}"""
    axes = [AxisRecord("T", aid, parent, ins) for aid, (parent, ins, _) in layout.items()]
    gus = [
        GURecord("T", aid, ca, 2, 2)
        for aid, (_, _, cas) in layout.items()
        for ca in cas
    ]
    return build_topology(axes, gus)


class TestTopInternodeWeight:
    def test_mean_of_last_gu(self):
        t = tree_with_axes({"A": (None, None, [1, 2])})
        records = [internode("A", 2, 1, 2.0), internode("A", 2, 2, 4.0),
                   internode("A", 1, 1, 9.0)]
        assert top_internode_weight(t, records) == {"A": 3.0}

    def test_single_gu_axis(self):
        t = tree_with_axes({"A": (None, None, [1])})
        records = [internode("A", 1, 1, 7.5)]
        assert top_internode_weight(t, records) == {"A": 7.5}

    def test_four_axis_hand_walk(self):
        t = tree_with_axes({
            "A": (None, None, [1, 2, 3]),
            "B": ("A", 1, [2, 3]),
            "C": ("A", 2, [3]),
            "D": ("B", 2, [3]),
        })
        records = [
            internode("A", 3, 1, 10.0), internode("A", 3, 2, 12.0),
            internode("B", 3, 1, 4.0),
            internode("C", 3, 1, 1.0), internode("C", 3, 2, 2.0),
            internode("D", 3, 1, 6.0),
        ]
        assert top_internode_weight(t, records) == {
            "A": 11.0, "B": 4.0, "C": 1.5, "D": 6.0,
        }

    def test_no_terminal_data(self):
        t = tree_with_axes({"A": (None, None, [1, 2])})
        with pytest.raises(NoTerminalData):
            top_internode_weight(t, [internode("A", 1, 1, 3.0)])


class TestCluster1D:
    def test_well_separated_pairs(self):
        part = cluster_1d([1.0, 1.1, 5.0, 5.2], 2)
        assert part.assignments == {0: 0, 1: 0, 2: 1, 3: 1}
        assert part.means == (pytest.approx(1.05), pytest.approx(5.1))

    def test_frozen_example(self):
        part = cluster_1d([0.0, 1.0, 2.0, 4.0, 8.0], 2)
        assert part.wcss == 8.75  # brute force over all 4 contiguous splits
        assert part.assignments == {0: 0, 1: 0, 2: 0, 3: 0, 4: 1}
        assert part.boundaries == (6.0,)  # midpoint between 4 and 8

    def test_tie_breaks_to_smallest_leading_cluster(self):
        # {0}|{2,4} and {0,2}|{4} both cost 2; the first cluster stays smallest.
        part = cluster_1d([0.0, 2.0, 4.0], 2)
        assert part.assignments == {0: 0, 1: 1, 2: 1}

    def test_k1_is_total_variance(self):
        xs = [3.0, 1.0, 4.0, 1.5]
        part = cluster_1d(xs, 1)
        mean = sum(xs) / len(xs)
        assert part.wcss == pytest.approx(sum((x - mean) ** 2 for x in xs))
        assert part.k == 1

    def test_k_too_large(self):
        with pytest.raises(KTooLarge):
            cluster_1d([1.0, 1.0, 2.0], 3)

    def test_mapping_input_keeps_ids(self):
        part = cluster_1d({"x": 9.0, "y": 1.0, "z": 8.5}, 2)
        assert part.assignments == {"y": 0, "x": 1, "z": 1}

    def test_matches_brute_force_seeded(self):
        import random

        rng = random.Random(42)
        for _ in range(100):
            n = rng.randint(2, 12)
            xs = [rng.uniform(0.1, 10.0) for _ in range(n)]
            for k in range(1, min(4, n) + 1):
                assert cluster_1d(xs, k).wcss == brute_force_wcss(xs, k)

    @given(
        st.lists(st.floats(0.01, 100.0), min_size=2, max_size=10, unique=True),
        st.integers(1, 4),
    )
    def test_matches_brute_force_property(self, xs, k):
        if k > len(xs):
            k = len(xs)
        assert cluster_1d(xs, k).wcss == brute_force_wcss(xs, k)

    @given(
        st.lists(st.floats(0.01, 100.0), min_size=3, max_size=8, unique=True),
        st.sampled_from([0.25, 0.5, 2.0, 4.0, 7.0]),
    )
    def test_scale_invariance(self, xs, c):
        base = cluster_1d(xs, 2)
        scaled = cluster_1d([c * x for x in xs], 2)
        assert scaled.assignments == base.assignments
        if c in (0.25, 0.5, 2.0, 4.0):  # power-of-two scaling is float-exact
            assert scaled.wcss == c * c * base.wcss
        else:
            assert scaled.wcss == pytest.approx(c * c * base.wcss, rel=1e-12)

    def test_wcss_nonincreasing_in_k(self):
        import random

        rng = random.Random(3)
        xs = [rng.uniform(0.1, 10.0) for _ in range(10)]
        costs = [cluster_1d(xs, k).wcss for k in range(1, 6)]
        assert all(a >= b for a, b in zip(costs, costs[1:]))


class TestAssignPA:
    def test_heavy_cluster_is_pa1(self):
        part = cluster_1d({"main": 10.0, "m2": 10.5, "b1": 2.0, "b2": 2.2}, 2)
        pa = assign_pa(part, "main")
        assert pa == {"main": 1, "m2": 1, "b1": 2, "b2": 2}

    def test_k1_all_pa1(self):
        part = cluster_1d({"main": 5.0, "b": 6.0}, 1)
        assert assign_pa(part, "main") == {"main": 1, "b": 1}

    def test_three_clusters_descending(self):
        part = cluster_1d({"a": 8.0, "b": 3.0, "c": 1.0}, 3)
        assert assign_pa(part, "a") == {"a": 1, "b": 2, "c": 3}

    def test_means_strictly_decrease_with_pa(self):
        part = cluster_1d({"a": 8.0, "a2": 8.4, "b": 3.0, "c": 1.0, "c2": 0.8}, 3)
        pa = assign_pa(part, "a2")
        by_pa = {}
        weights = {"a": 8.0, "a2": 8.4, "b": 3.0, "c": 1.0, "c2": 0.8}
        for key, label in pa.items():
            by_pa.setdefault(label, []).append(weights[key])
        means = [sum(v) / len(v) for _, v in sorted(by_pa.items())]
        assert all(m1 > m2 for m1, m2 in zip(means, means[1:]))

    def test_main_axis_not_heaviest(self):
        part = cluster_1d({"main": 2.0, "big": 10.0}, 2)
        with pytest.raises(MainAxisNotHeaviest):
            assign_pa(part, "main")


class TestClassifyAxes:
    def test_end_to_end(self):
        t = tree_with_axes({
            "A": (None, None, [1, 2, 3]),
            "B": ("A", 1, [2, 3]),
            "C": ("A", 2, [3]),
        })
        records = [
            internode("A", 3, 1, 10.0),
            internode("B", 3, 1, 4.2),
            internode("C", 3, 1, 1.4),
        ]
        pa_map, part = classify_axes(t, records, 3)
        assert pa_map == {"A": 1, "B": 2, "C": 3}
        assert part.k == 3

    def test_k_reduced_for_small_trees(self):
        t = tree_with_axes({"A": (None, None, [1]), "B": ("A", 1, [2])})
        records = [internode("A", 1, 1, 10.0), internode("B", 2, 1, 2.0)]
        pa_map, part = classify_axes(t, records, 5)
        assert part.k == 2
        assert pa_map == {"A": 1, "B": 2}
