"""Shared fixtures: small hand-checkable trees and default parameter sets."""
from __future__ import annotations

import pytest
from hypothesis import settings

from fspm import (
    AxisRecord,
    DirectParams,
    GURecord,
    HiddenParams,
    build_topology,
    with_physio_ages,
)

settings.register_profile("suite", deadline=None, max_examples=50)
settings.load_profile("suite")


@pytest.fixture
def dp3() -> DirectParams:
    """Three-PA parameter set at field-data magnitudes."""
    return DirectParams(
        p_int={1: 0.561, 2: 0.726, 3: 0.858},
        allometry={1: (5.0, 0.3), 2: (7.0, 0.35), 3: (9.0, 0.4)},
        slw=0.0287,
    )


@pytest.fixture
def hp_default() -> HiddenParams:
    return HiddenParams(q0=10.0, rp=6.4319, pc=0.13882)


def two_axis_tree(tree_id: str = "T"):
    """Root (PA1) with GUs at cycles 1..2, child (PA2) with one 4-internode GU at 2."""
    axes = [
        AxisRecord(tree_id, "A1", None, None),
        AxisRecord(tree_id, "A2", "A1", 1),
    ]
    gus = [
        GURecord(tree_id, "A1", 1, 3, 3),
        GURecord(tree_id, "A1", 2, 5, 5),
        GURecord(tree_id, "A2", 2, 4, 4),
    ]
    t = build_topology(axes, gus)
    return with_physio_ages(t, {"A1": 1, "A2": 2})


@pytest.fixture
def small_tree():
    return two_axis_tree()
