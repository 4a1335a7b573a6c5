import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.integrate import quad
from scipy.optimize import minimize_scalar

from costly_detection.model import (
    ModelParams,
    likelihood_j,
    log_likelihood_j,
    posterior_after_observation,
    posterior_drift,
    stop_after_wait_cost,
    stop_now_cost,
    stop_now_optimizer,
)
from oracles import adaptive_simpson, stop_cost_reference

P = ModelParams(alpha=1.0, lam=0.1, c=0.01, d=0.001)
beliefs = st.floats(0.0, 0.999, allow_nan=False)


class TestParams:
    def test_defaults(self):
        assert (P.alpha, P.lam, P.c, P.d) == (1.0, 0.1, 0.01, 0.001)

    @pytest.mark.parametrize("field,value", [("lam", 0.0), ("c", -1.0), ("d", 0.0), ("pi0", 1.5),
                                             ("pi0", -0.1), ("alpha", math.nan)])
    def test_rejects_invalid(self, field, value):
        kwargs = {"alpha": 1.0, "lam": 0.1, "c": 0.01, "d": 0.001, "pi0": 0.0, field: value}
        with pytest.raises(ValueError):
            ModelParams(**kwargs)

    def test_zero_signal_accepted(self):
        assert ModelParams(alpha=0.0).alpha == 0.0
        assert ModelParams(alpha=-2.0).alpha == -2.0


class TestStopNow:
    def test_certain_disorder_costs_nothing(self):
        assert stop_now_cost(P, 1.0) == 0.0
        assert stop_now_optimizer(P, 1.0) == 0.0

    def test_threshold_continuity(self):
        thr = P.lam / (P.c + P.lam)
        assert thr == pytest.approx(10 / 11)
        assert stop_now_cost(P, thr) == pytest.approx(1 / 11, abs=1e-15)
        below = np.nextafter(thr, 0.0)
        assert abs(stop_now_cost(P, below) - stop_now_cost(P, thr)) < 1e-10
        assert abs(stop_now_optimizer(P, below) - stop_now_optimizer(P, thr)) < 1e-10

    def test_cost_at_zero_matches_bruteforce(self):
        assert stop_now_cost(P, 0.0) == pytest.approx(0.1 * math.log(11), abs=1e-12)
        assert 0.1 * math.log(11) == pytest.approx(0.2397895, abs=1e-7)
        ref = stop_cost_reference(P.lam, P.c, [0.0, 0.3, 0.6, 0.95])
        np.testing.assert_allclose(stop_now_cost(P, np.array([0.0, 0.3, 0.6, 0.95])), ref, atol=1e-8)

    @pytest.mark.parametrize("pi,expected", [(0.0, 10 * math.log(11)), (0.5, 10 * math.log(5.5))])
    def test_optimizer_values(self, pi, expected):
        assert stop_now_optimizer(P, pi) == pytest.approx(expected, rel=1e-14)
        found = minimize_scalar(lambda t: stop_after_wait_cost(P, pi, t), bounds=(0, 200),
                                method="bounded", options={"xatol": 1e-8})
        assert found.x == pytest.approx(expected, rel=1e-5)

    def test_optimizer_values_rounded(self):
        assert stop_now_optimizer(P, 0.0) == pytest.approx(23.97895, abs=1e-5)
        assert stop_now_optimizer(P, 0.5) == pytest.approx(17.04748, abs=1e-5)

    @pytest.mark.parametrize("pi", [P.stop_threshold, 0.95, 1.0])
    def test_declare_at_once_above_threshold(self, pi):
        assert stop_now_optimizer(P, pi) == 0.0

    @given(beliefs)
    def test_optimizer_attains_cost(self, pi):
        t = stop_now_optimizer(P, pi)
        assert abs(stop_after_wait_cost(P, pi, t) - stop_now_cost(P, pi)) <= 1e-12

    def test_bounds_and_concavity(self):
        g = np.linspace(0, 1, 1001)
        F = stop_now_cost(P, g)
        assert np.all(F >= 0) and np.all(F <= 1 - g + 1e-15)
        a, b = g[:-2], g[2:]
        assert np.all(stop_now_cost(P, (a + b) / 2) >= (F[:-2] + F[2:]) / 2 - 1e-12)

    def test_rejects_out_of_range_belief(self):
        with pytest.raises(ValueError):
            stop_now_cost(P, 1.2)


class TestLikelihood:
    @given(beliefs, st.floats(1e-3, 100.0), st.floats(-20.0, 20.0))
    def test_zero_signal_is_pure_decay(self, pi, t, x):
        p0 = ModelParams(alpha=0.0)
        j = likelihood_j(p0, t, pi, x)
        expected = math.exp(p0.lam * t) * pi / (1 - pi) + math.expm1(p0.lam * t)
        assert j == pytest.approx(expected, rel=1e-12)
        assert j / (1 + j) == pytest.approx(1 - (1 - pi) * math.exp(-p0.lam * t), rel=1e-12, abs=1e-15)

    @pytest.mark.parametrize("pi", [0.0, 0.3, 0.9])
    def test_vanishing_time_keeps_odds(self, pi):
        j = likelihood_j(P, 1e-12, pi, 0.0)
        assert j == pytest.approx(pi / (1 - pi), abs=1e-10)

    def test_against_adaptive_simpson(self):
        alpha, lam, t, pi, x = 1.0, 0.1, 1.0, 0.5, 0.7
        integral = adaptive_simpson(
            lambda u: math.exp((lam + alpha * x / t) * u - alpha**2 * u**2 / (2 * t)), 0.0, t)
        expected = math.exp(alpha * x + (lam - alpha**2 / 2) * t) + lam * integral
        assert likelihood_j(P, t, pi, x) == pytest.approx(expected, rel=1e-10)

    @pytest.mark.parametrize("alpha,t,x", [(1.0, 50.0, 40.0), (1.0, 200.0, -30.0),
                                           (-2.0, 3.0, -5.0), (3e-7, 1.0, 0.4), (2e-6, 1.0, 0.4)])
    def test_regimes_against_quadrature(self, alpha, t, x):
        p = ModelParams(alpha=alpha)
        b, a = p.lam + alpha * x / t, alpha**2 / (2 * t)
        expo = lambda u: b * u - a * u * u
        peak = max(expo(0.0), expo(t), expo(min(max(b / (2 * a), 0.0), t)) if a else -np.inf)
        scaled, _ = quad(lambda u: math.exp(expo(u) - peak), 0.0, t, epsabs=0, epsrel=1e-13, limit=200)
        first = alpha * x + (p.lam - alpha**2 / 2) * t + math.log(0.25 / 0.75)
        expected = np.logaddexp(first, math.log(p.lam) + peak + math.log(scaled))
        assert log_likelihood_j(p, t, 0.25, x) == pytest.approx(expected, abs=1e-9)

    @given(st.floats(1e-2, 50.0), st.floats(-10.0, 10.0),
           st.lists(st.floats(0.0, 0.99), min_size=3, max_size=3, unique=True))
    def test_affine_in_odds(self, t, z, pis):
        x = math.sqrt(t) * z
        odds = np.array([p / (1 - p) for p in pis])
        j = np.array([likelihood_j(P, t, p, x) for p in pis])
        slope = math.exp(P.alpha * x + (P.lam - P.alpha**2 / 2) * t)
        residual = j - slope * odds
        assert np.ptp(residual) <= 1e-10 * np.max(np.abs(j))

    def test_rejects_bad_arguments(self):
        with pytest.raises(ValueError):
            likelihood_j(P, 0.0, 0.5, 0.1)
        with pytest.raises(ValueError):
            likelihood_j(P, 1.0, 1.0, 0.1)

    def test_positive(self):
        t = np.geomspace(1e-3, 200, 40)[:, None]
        z = np.linspace(-8, 8, 33)[None, :]
        assert np.all(likelihood_j(P, t, 0.0, np.sqrt(t) * z) > 0)


class TestPosterior:
    def test_absorbing_after_observation(self):
        assert posterior_after_observation(P, 1.0, 3.0, -4.0) == 1.0

    def test_zero_signal_example(self):
        p0 = ModelParams(alpha=0.0, lam=0.1)
        got = posterior_after_observation(p0, 0.3, 2.0, 1.234)
        assert got == pytest.approx(1 - 0.7 * math.exp(-0.2), abs=1e-12)
        assert got == pytest.approx(0.426888, abs=1e-6)

    def test_informative_example(self):
        j = likelihood_j(P, 1.0, 0.5, 0.7)
        assert posterior_after_observation(P, 0.5, 1.0, 0.7) == pytest.approx(j / (1 + j), rel=1e-14)

    def test_interior(self):
        rng = np.random.default_rng(3)
        pi = rng.uniform(0.01, 0.99, 200)
        post = posterior_after_observation(P, pi, rng.uniform(0.1, 5, 200), rng.normal(0, 2, 200))
        assert np.all((post > 0) & (post < 1))

    def test_rejects_nonpositive_dt(self):
        with pytest.raises(ValueError):
            posterior_after_observation(P, 0.2, 0.0, 0.1)

    def test_zero_signal_observation_equals_drift(self):
        p0 = ModelParams(alpha=0.0)
        rng = np.random.default_rng(11)
        pi, dt, dx = rng.uniform(0, 1, 100), rng.uniform(1e-3, 50, 100), rng.normal(0, 5, 100)
        np.testing.assert_allclose(posterior_after_observation(p0, pi, dt, dx),
                                   posterior_drift(p0, pi, dt), atol=1e-9)


class TestDrift:
    def test_identity_and_absorbing(self):
        assert posterior_drift(P, 0.37, 0.0) == 0.37
        assert posterior_drift(P, 1.0, 12.0) == 1.0

    def test_exponential_example(self):
        assert posterior_drift(P, 0.0, 10.0) == pytest.approx(1 - math.exp(-1), abs=1e-15)
        assert 1 - math.exp(-1) == pytest.approx(0.632121, abs=1e-6)
        theta = np.random.default_rng(5).exponential(10.0, 10**6)
        freq = np.mean(theta <= 10.0)
        se = math.sqrt(freq * (1 - freq) / theta.size)
        assert abs(freq - posterior_drift(P, 0.0, 10.0)) < 3 * se

    def test_rejects_negative_time(self):
        with pytest.raises(ValueError):
            posterior_drift(P, 0.5, -1.0)

    def test_semigroup(self):
        rng = np.random.default_rng(8)
        pi, s, t = rng.uniform(0, 1, 100), rng.uniform(0, 30, 100), rng.uniform(0, 30, 100)
        np.testing.assert_allclose(posterior_drift(P, posterior_drift(P, pi, s), t),
                                   posterior_drift(P, pi, s + t), atol=1e-12)

    def test_monotone_in_time(self):
        t = np.linspace(0, 50, 500)
        assert np.all(np.diff(posterior_drift(P, 0.2, t)) >= 0)
