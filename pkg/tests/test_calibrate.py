import numpy as np
import pytest

from fspm import (
    DirectParams,
    FitOptions,
    FitProblem,
    FreeParams,
    GrowthRules,
    HiddenParams,
    SimConfig,
    fd_jacobian,
    fit_hidden,
    generate_topology,
    residuals,
    simulate,
    targets_from_trace,
)
from fspm.calibrate import central_jacobian
from fspm.errors import InfeasibleInit
from fspm.ingest import TargetSeries


@pytest.fixture
def dp2():
    return DirectParams(
        p_int={1: 0.561, 2: 0.726},
        allometry={1: (5.0, 0.3), 2: (7.0, 0.35)},
        slw=0.0287,
    )


def synthetic_problem(dp, hp_by_tree, ages, rules=None, cfg=SimConfig()):
    rules = rules or GrowthRules(p_max=2, internodes_per_gu=2, branches_per_gu=1)
    topologies = []
    targets = []
    for (tree_id, hp), age in zip(hp_by_tree.items(), ages):
        t = generate_topology(rules, age, tree_id)
        trace = simulate(hp, dp, t, cfg)
        topologies.append(t)
        targets.append(targets_from_trace(trace, dp))
    return FitProblem(targets=targets, topologies=topologies, dp=dp, cfg=cfg)


class TestResiduals:
    def test_zero_at_generator(self, dp2):
        hp = HiddenParams(q0=5.0, rp=4.0, pc=0.1)
        problem = synthetic_problem(dp2, {"t1": hp}, [4])
        fp = FreeParams(q0={"t1": 5.0}, rp=4.0, pc=0.1)
        assert np.all(residuals(fp, problem) == 0.0)

    def test_doubling_weights_doubles_residuals(self, dp2):
        hp = HiddenParams(q0=5.0, rp=4.0, pc=0.1)
        problem = synthetic_problem(dp2, {"t1": hp}, [4])
        fp = FreeParams(q0={"t1": 7.0}, rp=4.0, pc=0.1)
        base = residuals(fp, problem)
        n = len(base)
        doubled_problem = FitProblem(
            targets=problem.targets, topologies=problem.topologies,
            dp=problem.dp, cfg=problem.cfg, weights=[2.0] * n,
        )
        np.testing.assert_allclose(residuals(fp, doubled_problem), 2.0 * base)

    def test_two_observation_toy_hand_computed(self, dp2):
        # Age-1 tree, one (PA, CA) group, no cumulated targets: residuals are
        # exactly [(sim_d - meas_d)/meas_d, (sim_w - meas_w)/meas_w].
        rules = GrowthRules(p_max=1, internodes_per_gu=1)
        t = generate_topology(rules, 1, "toy")
        hp = HiddenParams(q0=2.0, rp=4.0, pc=0.1)
        trace = simulate(hp, dp2, t)
        full = targets_from_trace(trace, dp2)
        targets = TargetSeries(tree_id="toy", entries=dict(full.entries), cumulated={})
        meas_d = targets.entries[(1, 1)].mean_internode_diameter
        meas_w = targets.entries[(1, 1)].mean_internode_weight
        problem = FitProblem(targets=[targets], topologies=[t], dp=dp2)

        fp = FreeParams(q0={"toy": 3.0}, rp=4.0, pc=0.1)
        sim_trace = simulate(HiddenParams(3.0, 4.0, 0.1), dp2, t)
        sim_d = sim_trace.cohorts[(1, 1)].diameter_cm * 10.0
        sim_w = sim_trace.cohorts[(1, 1)].internode_mass
        expected = [(sim_d - meas_d) / meas_d, (sim_w - meas_w) / meas_w]
        np.testing.assert_allclose(residuals(fp, problem), expected, rtol=1e-12)


class TestFdJacobian:
    def test_pc_column_zero_without_rings(self, dp2):
        # An age-1 tree never opens the ring compartment.
        hp = HiddenParams(q0=2.0, rp=4.0, pc=0.1)
        problem = synthetic_problem(
            dp2, {"t1": hp}, [1], rules=GrowthRules(p_max=1, internodes_per_gu=1)
        )
        fp = FreeParams(q0={"t1": 2.5}, rp=4.5, pc=0.12)
        jac = fd_jacobian(fp, problem)
        pc_col = jac[:, problem.param_names.index("pc")]
        assert np.max(np.abs(pc_col)) < 1e-6

    def test_matches_analytic_on_quadratic(self):
        def fn(x):
            return np.array([x[0] ** 2 + 3 * x[1], x[0] * x[1]])

        x = np.array([1.3, -0.7])
        jac = central_jacobian(fn, x, 1e-5)
        analytic = np.array([[2 * x[0], 3.0], [x[1], x[0]]])
        np.testing.assert_allclose(jac, analytic, atol=1e-6)

    def test_step_halving_second_order(self):
        def fn(x):
            return np.array([np.exp(x[0])])

        x = np.array([0.4])
        errors = []
        for step in (1e-2, 5e-3):
            jac = central_jacobian(fn, x, step)
            errors.append(abs(jac[0, 0] - np.exp(0.4)))
        # Central differences: error ~ step^2, so halving shrinks it ~4x.
        assert errors[1] == pytest.approx(errors[0] / 4, rel=0.1)

    def test_requires_strict_interior(self, dp2):
        hp = HiddenParams(q0=2.0, rp=4.0, pc=0.1)
        problem = synthetic_problem(dp2, {"t1": hp}, [3])
        fp = FreeParams(q0={"t1": 1e-3}, rp=4.0, pc=0.1)  # at the bound
        with pytest.raises(InfeasibleInit):
            fd_jacobian(fp, problem)


class TestFitHidden:
    def test_init_at_generator_converges_immediately(self, dp2):
        hp = HiddenParams(q0=5.0, rp=4.0, pc=0.1)
        problem = synthetic_problem(dp2, {"t1": hp}, [4])
        init = FreeParams(q0={"t1": 5.0}, rp=4.0, pc=0.1)
        result = fit_hidden(problem, init, FitOptions(n_starts=0))
        assert result.converged
        assert result.iterations <= 2
        assert result.sse <= 1e-20

    def test_single_tree_roundtrip(self, dp2):
        hp = HiddenParams(q0=14.23, rp=6.4319, pc=0.13882)
        problem = synthetic_problem(dp2, {"t1": hp}, [5])
        init = FreeParams(q0={"t1": 2 * 14.23}, rp=2 * 6.4319, pc=2 * 0.13882)
        result = fit_hidden(problem, init, FitOptions(n_starts=2))
        assert result.params.rp == pytest.approx(6.4319, rel=0.01)
        assert result.params.pc == pytest.approx(0.13882, rel=0.01)
        assert result.params.q0["t1"] == pytest.approx(14.23, rel=0.02)

    def test_sse_never_worse_than_init(self, dp2):
        hp = HiddenParams(q0=5.0, rp=4.0, pc=0.1)
        problem = synthetic_problem(dp2, {"t1": hp}, [4])
        init = FreeParams(q0={"t1": 30.0}, rp=1.0, pc=0.5)
        r0 = residuals(init, problem)
        result = fit_hidden(problem, init, FitOptions(n_starts=1, max_iter=10))
        assert result.sse <= float(r0 @ r0)

    def test_deterministic_under_fixed_seed(self, dp2):
        hp = HiddenParams(q0=5.0, rp=4.0, pc=0.1)
        problem = synthetic_problem(dp2, {"t1": hp}, [4])
        init = FreeParams(q0={"t1": 9.0}, rp=5.0, pc=0.2)
        opts = FitOptions(n_starts=3, seed=123, max_iter=40)
        a = fit_hidden(problem, init, opts)
        b = fit_hidden(problem, init, opts)
        assert a.to_json() == b.to_json()

    def test_tree_without_targets_reported_degenerate(self, dp2):
        hp = HiddenParams(q0=5.0, rp=4.0, pc=0.1)
        rules = GrowthRules(p_max=2, internodes_per_gu=2, branches_per_gu=1)
        t1 = generate_topology(rules, 4, "t1")
        t2 = generate_topology(rules, 4, "t2")
        targets1 = targets_from_trace(simulate(hp, dp2, t1), dp2)
        empty2 = TargetSeries(tree_id="t2", entries={}, cumulated={})
        problem = FitProblem(targets=[targets1, empty2], topologies=[t1, t2], dp=dp2)
        init = FreeParams(q0={"t1": 8.0, "t2": 8.0}, rp=5.0, pc=0.15)
        result = fit_hidden(problem, init, FitOptions(n_starts=1, max_iter=30))
        assert "q0:t2" in result.degenerate_params

    def test_infeasible_init(self, dp2):
        hp = HiddenParams(q0=5.0, rp=4.0, pc=0.1)
        problem = synthetic_problem(dp2, {"t1": hp}, [3])
        with pytest.raises(InfeasibleInit):
            fit_hidden(problem, FreeParams(q0={"t1": 1e9}, rp=4.0, pc=0.1))
