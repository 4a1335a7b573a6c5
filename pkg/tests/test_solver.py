import numpy as np
import pytest

from costly_detection.jump_operator import TimeSearchConfig, gauss_hermite_rule
from costly_detection.model import ModelParams, stop_now_cost, stop_now_optimizer
from costly_detection.solver import (
    EPS_STRICT,
    ConvergenceError,
    Policy,
    belief_grid,
    continuation_region,
    extract_policy,
    n_observation_policies,
    pi_star_sequence,
    value_iteration,
)

# Recorded from the first converged run at the default settings.
ANCHOR_PI_STAR = 0.975
ANCHOR_V_02 = 0.09700318695213098
ANCHOR_PI_STAR_BY_N = [0.96, 0.965, 0.965, 0.97, 0.97, 0.97, 0.97, 0.97, 0.97, 0.97]

EXPENSIVE = ModelParams(alpha=1.0, lam=0.1, c=0.01, d=1.0)


@pytest.fixture(scope="module")
def expensive():
    return value_iteration(EXPENSIVE)


class TestExpensiveObservations:
    def test_fixed_point_is_stop_cost(self, expensive):
        F = stop_now_cost(EXPENSIVE, expensive.grid)
        assert np.array_equal(expensive.fixed_point.values, F)
        assert all(np.array_equal(f.values, F) for f in expensive.iterates)
        assert expensive.residual == 0.0

    def test_policy_never_observes(self, expensive):
        pol = expensive.policy
        assert np.all(np.isinf(pol.t_star))
        assert pol.pi_star == 0.0
        idx, interval = continuation_region(expensive.fixed_point, EXPENSIVE)
        assert idx.size == 0 and interval

    def test_thresholds_are_zero(self):
        stars, _, _ = pi_star_sequence(EXPENSIVE, 3, grid_size=51)
        assert np.array_equal(stars, np.zeros(3))


class TestBaselineProblem:
    def test_iterates_decrease_and_stay_admissible(self, baseline_solution):
        its = baseline_solution.iterates
        assert len(its) > 10
        assert np.array_equal(its[0].values, stop_now_cost(baseline_solution.params, baseline_solution.grid))
        for a, b in zip(its, its[1:]):
            assert np.max(b.values - a.values) <= 1e-9
        for f in its:
            assert f.check(concavity_tol=1e-6) == []

    def test_converged(self, baseline_solution):
        assert baseline_solution.converged
        assert baseline_solution.residuals[-1] <= 1e-5
        assert baseline_solution.residual <= 2e-5
        assert not baseline_solution.clipped

    def test_sandwich(self, baseline_solution):
        g = baseline_solution.grid
        V = baseline_solution.fixed_point.values
        F = stop_now_cost(baseline_solution.params, g)
        assert np.all(V >= -1e-12)
        assert np.all(V <= F + 1e-12)
        assert np.all(F <= 1 - g + 1e-12)

    def test_continuation_region(self, baseline_solution, baseline):
        idx, _ = continuation_region(baseline_solution.fixed_point, baseline)
        g = baseline_solution.grid
        assert np.isclose(g[idx], 0.2).any()
        assert g.size - 1 not in idx
        V = baseline_solution.fixed_point.values
        assert np.all(V[idx] < stop_now_cost(baseline, g[idx]) - EPS_STRICT)

    def test_policy(self, baseline_solution, baseline):
        pol = extract_policy(baseline_solution, baseline)
        finite = np.isfinite(pol.t_star)
        assert finite.any()
        assert np.all(pol.t_star[finite] > 0)
        idx, _ = continuation_region(baseline_solution.fixed_point, baseline)
        assert np.array_equal(np.flatnonzero(finite), idx)
        np.testing.assert_array_equal(pol.terminal_wait, stop_now_optimizer(baseline, pol.grid))
        assert np.all(pol.terminal_wait[pol.grid >= baseline.stop_threshold] == 0)
        assert 0 < pol.pi_star <= 1

    def test_regression_anchors(self, baseline_solution):
        assert baseline_solution.policy.pi_star == pytest.approx(ANCHOR_PI_STAR, abs=1e-12)
        assert float(baseline_solution.fixed_point(0.2)) == pytest.approx(ANCHOR_V_02, rel=1e-7)

    def test_threshold_sequence(self, baseline_solution, baseline):
        stars, policies, monotone = pi_star_sequence(baseline, 10, result=baseline_solution)
        assert len(policies) == 10
        assert np.all((stars > 0) & (stars <= 1))
        np.testing.assert_allclose(stars, ANCHOR_PI_STAR_BY_N, atol=1e-12)
        assert monotone == bool(np.all(np.diff(stars) >= 0))

    def test_threshold_sequence_runs_own_solve(self, baseline):
        stars, _, _ = pi_star_sequence(baseline, 2, grid_size=201)
        np.testing.assert_allclose(stars, ANCHOR_PI_STAR_BY_N[:2], atol=1e-12)

    def test_n_policies_past_convergence_repeat(self, baseline_solution, baseline):
        last = baseline_solution.iterations
        pols = n_observation_policies(baseline_solution, baseline, last + 3)
        assert np.array_equal(pols[-1].t_star, pols[last - 1].t_star)


def test_uninformative_signal_gives_stop_cost():
    p = ModelParams(alpha=0.0, lam=0.1, c=0.01, d=0.001)
    res = value_iteration(p)
    gap = np.max(np.abs(res.fixed_point.values - stop_now_cost(p, res.grid)))
    assert gap <= 2e-3


def test_non_convergence_carries_trace(baseline):
    with pytest.raises(ConvergenceError) as info:
        value_iteration(baseline, grid_size=51, max_iter=2)
    err = info.value
    assert len(err.residuals) == 2
    assert err.residuals[-1] > 1e-5
    assert err.result is not None and err.result.iterations == 2


def test_no_raise_returns_partial(baseline):
    res = value_iteration(baseline, grid_size=51, max_iter=2, raise_on_failure=False)
    assert not res.converged and res.iterations == 2
    assert len(res.t_maps) == len(res.iterates)


def test_min_iter_forces_steps():
    res = value_iteration(EXPENSIVE, grid_size=21, min_iter=4)
    assert res.iterations == 4


def test_config_independent_of_threads(baseline):
    kw = dict(grid_size=41, rule=gauss_hermite_rule(32), search=TimeSearchConfig(n_coarse=48))
    a = value_iteration(baseline, threads=1, **kw)
    b = value_iteration(baseline, threads=3, **kw)
    assert np.array_equal(a.fixed_point.values, b.fixed_point.values)


@pytest.mark.parametrize("kwargs", [{"grid_size": 2}, {"tol": 0.0}, {"max_iter": 0}])
def test_rejects_bad_arguments(baseline, kwargs):
    with pytest.raises(ValueError):
        value_iteration(baseline, **kwargs)


def test_grid():
    g = belief_grid(201)
    assert g[0] == 0 and g[-1] == 1 and g.size == 201


class TestPolicyWaits:
    pol = Policy(grid=np.array([0.0, 0.5, 0.75, 1.0]),
                 t_star=np.array([4.0, 2.0, np.inf, np.inf]),
                 terminal_wait=np.zeros(4), pi_star=0.75)

    def test_nodes_exact(self):
        np.testing.assert_array_equal(self.pol.wait_times([0.0, 0.5, 0.75, 1.0]),
                                      [4.0, 2.0, np.inf, np.inf])

    def test_interpolates_between_finite(self):
        assert self.pol.wait_times(0.25) == pytest.approx(3.0)

    def test_stops_next_to_infinite(self):
        assert np.isinf(self.pol.wait_times(0.6))
        assert np.isinf(self.pol.wait_times(0.9))
