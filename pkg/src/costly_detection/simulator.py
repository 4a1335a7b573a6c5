"""Monte Carlo evaluation of observation/declaration strategies.

Time is never discretised: the belief only needs the increment of X over
each inter-observation interval, and the costs only need the declaration
time and the disorder time.  Each path owns a random stream keyed by
``(seed, path index)``; its first two draws fix the disorder time and the
``k``-th standard normal after them drives the ``k``-th observed increment.
The vectorised estimator and the single-path API consume the streams in the
same order, so they agree path by path.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .model import (
    ModelParams,
    posterior_after_observation,
    posterior_drift,
    running_cost,
    stop_now_optimizer,
)

MAX_OBSERVATIONS = 10**6


class SimulationGuardError(RuntimeError):
    """A path exceeded the observation cap, which signals a degenerate policy."""

    def __init__(self, message: str, seed: int, path_index: int):
        super().__init__(message)
        self.seed = seed
        self.path_index = path_index


def path_rng(seed: int, index: int) -> np.random.Generator:
    """Counter-based stream for one path, independent of every other index."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(index,))))


def _theta_from_draws(params, u, e):
    return np.where(u < params.pi0, 0.0, e / params.lam)


class PathSample:
    """One disorder time plus a Brownian path revealed through increments.

    Increments must be requested over intervals that do not overlap any
    interval requested before; a repeated request returns the cached value.
    """

    def __init__(self, params: ModelParams, seed: int, index: int = 0):
        self.params = params
        self.seed = seed
        self.index = index
        self._rng = path_rng(seed, index)
        u, e = self._rng.random(), self._rng.standard_exponential()
        self.theta = float(_theta_from_draws(params, u, e))
        self._cache: dict[tuple[float, float], float] = {}

    def increment(self, t0: float, t1: float) -> float:
        """``X_{t1} - X_{t0}``."""
        if not t1 > t0 >= 0:
            raise ValueError("need 0 <= t0 < t1")
        key = (float(t0), float(t1))
        if key in self._cache:
            return self._cache[key]
        for a, b in self._cache:
            if t0 < b and a < t1:
                raise ValueError(f"interval [{t0}, {t1}] overlaps [{a}, {b}]")
        overlap = max(0.0, t1 - max(self.theta, t0))
        value = self.params.alpha * overlap + math.sqrt(t1 - t0) * self._rng.standard_normal()
        self._cache[key] = value
        return value


def sample_path(params: ModelParams, rng_seed: int, index: int = 0) -> PathSample:
    return PathSample(params, rng_seed, index)


@dataclass(frozen=True)
class StrategyOutcome:
    declare_time: float
    n_observations: int
    false_alarm: int
    delay: float
    posterior_terminal: float
    observation_times: list[float] = field(default_factory=list)

    def cost(self, params: ModelParams) -> float:
        return self.false_alarm + params.c * self.delay + params.d * self.n_observations


@dataclass(frozen=True)
class ThresholdPolicy:
    """Observe every ``interval`` while the belief is below ``threshold``."""

    interval: float
    threshold: float
    name: str = "periodic"

    def wait_times(self, pi) -> np.ndarray:
        pi = np.asarray(pi, dtype=float)
        return np.where(pi < self.threshold, self.interval, np.inf)


def periodic_policy(params: ModelParams, interval: float, stop_threshold: float) -> ThresholdPolicy:
    """Baseline that observes on a fixed clock until the belief crosses a threshold.

    A threshold of 0 never observes.  Once observing stops the declaration
    follows the same deterministic wait as every other policy.
    """
    if not interval > 0 or not math.isfinite(interval):
        raise ValueError("interval must be positive and finite")
    if not 0.0 <= stop_threshold <= 1.0:
        raise ValueError("stop_threshold must lie in [0, 1]")
    return ThresholdPolicy(float(interval), float(stop_threshold))


def never_policy(params: ModelParams) -> ThresholdPolicy:
    return ThresholdPolicy(1.0, 0.0, name="never")


def run_strategy(params: ModelParams, policy, path: PathSample,
                 max_observations: int = MAX_OBSERVATIONS) -> StrategyOutcome:
    """Follow ``policy`` on one path from belief ``params.pi0``."""
    pi = params.pi0
    now = 0.0
    times: list[float] = []
    while True:
        wait = float(policy.wait_times(pi))
        if math.isinf(wait):
            break
        if len(times) >= max_observations:
            raise SimulationGuardError(
                f"path {path.index} (seed {path.seed}) exceeded {max_observations} observations",
                path.seed, path.index,
            )
        dx = path.increment(now, now + wait)
        pi = float(posterior_after_observation(params, pi, wait, dx))
        now += wait
        times.append(now)
    tau = now + float(stop_now_optimizer(params, pi))
    return StrategyOutcome(
        declare_time=tau,
        n_observations=len(times),
        false_alarm=int(tau < path.theta),
        delay=max(tau - path.theta, 0.0),
        posterior_terminal=float(posterior_drift(params, pi, tau - now)),
        observation_times=times,
    )


@dataclass(frozen=True)
class RiskEstimate:
    """Bayes-risk estimate with its components.

    ``total_risk`` averages realised costs; ``posterior_risk`` averages
    ``1 - Pi_tau + c int Pi ds + d n`` along the same paths.  Both estimate
    the same expectation.
    """

    policy: str
    pi0: float
    n_paths: int
    total_risk: float
    se_total: float
    p_false_alarm: float
    se_false_alarm: float
    mean_delay: float
    se_delay: float
    mean_obs: float
    se_obs: float
    posterior_risk: float
    se_posterior: float
    weights: tuple[float, float, float]

    @property
    def recombined(self) -> float:
        w_fa, w_delay, w_obs = self.weights
        return w_fa * self.p_false_alarm + w_delay * self.mean_delay + w_obs * self.mean_obs


class PathBank:
    """Random draws for ``n_paths`` paths, grown on demand and shared by policies."""

    def __init__(self, seed: int, n_paths: int, block: int = 32):
        if n_paths < 1:
            raise ValueError("n_paths must be at least 1")
        self.seed = seed
        self.n_paths = n_paths
        self._rngs = [path_rng(seed, i) for i in range(n_paths)]
        self.u = np.empty(n_paths)
        self.e = np.empty(n_paths)
        for i, g in enumerate(self._rngs):
            self.u[i] = g.random()
            self.e[i] = g.standard_exponential()
        self.normals = np.empty((n_paths, 0))
        self._grow(block)

    def _grow(self, extra: int):
        more = np.stack([g.standard_normal(extra) for g in self._rngs])
        self.normals = np.concatenate([self.normals, more], axis=1)

    def normal(self, rows: np.ndarray, k: np.ndarray) -> np.ndarray:
        need = int(k.max()) + 1 if k.size else 0
        if need > self.normals.shape[1]:
            self._grow(max(need - self.normals.shape[1], self.normals.shape[1]))
        return self.normals[rows, k]

    def theta(self, params: ModelParams) -> np.ndarray:
        return _theta_from_draws(params, self.u, self.e)


def _mean_se(x: np.ndarray) -> tuple[float, float]:
    n = x.size
    mean = float(np.mean(x))
    se = float(np.std(x, ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return mean, se


def simulate_paths(params: ModelParams, policy, bank: PathBank,
                   max_observations: int = MAX_OBSERVATIONS) -> dict[str, np.ndarray]:
    """Run ``policy`` on every path of ``bank``; returns per-path arrays."""
    n = bank.n_paths
    theta = bank.theta(params)
    pi = np.full(n, float(params.pi0))
    now = np.zeros(n)
    n_obs = np.zeros(n, dtype=np.int64)
    drift_cost = np.zeros(n)
    active = np.ones(n, dtype=bool)
    while active.any():
        rows = np.flatnonzero(active)
        wait = policy.wait_times(pi[rows])
        go = np.isfinite(wait)
        active[rows[~go]] = False
        rows, wait = rows[go], wait[go]
        if rows.size == 0:
            break
        over = n_obs[rows] >= max_observations
        if over.any():
            bad = int(rows[np.argmax(over)])
            raise SimulationGuardError(
                f"path {bad} (seed {bank.seed}) exceeded {max_observations} observations",
                bank.seed, bad,
            )
        t0, t1 = now[rows], now[rows] + wait
        overlap = np.maximum(0.0, t1 - np.maximum(theta[rows], t0))
        dx = params.alpha * overlap + np.sqrt(wait) * bank.normal(rows, n_obs[rows])
        drift_cost[rows] += running_cost(params, pi[rows], wait)
        pi[rows] = posterior_after_observation(params, pi[rows], wait, dx)
        now[rows] = t1
        n_obs[rows] += 1

    final_wait = stop_now_optimizer(params, pi)
    tau = now + final_wait
    drift_cost += running_cost(params, pi, final_wait)
    pi_tau = posterior_drift(params, pi, final_wait)
    false_alarm = (tau < theta).astype(float)
    delay = np.maximum(tau - theta, 0.0)
    return {
        "theta": theta,
        "declare_time": tau,
        "n_observations": n_obs,
        "false_alarm": false_alarm,
        "delay": delay,
        "posterior_terminal": pi_tau,
        "realized_cost": false_alarm + params.c * delay + params.d * n_obs,
        "posterior_cost": (1.0 - pi_tau) + drift_cost + params.d * n_obs,
    }


def estimate_risk(params: ModelParams, policy, n_paths: int, seed: int,
                  bank: PathBank | None = None) -> RiskEstimate:
    """Average the cost of ``policy`` over ``n_paths`` independent paths.

    Passing the same ``bank`` to several calls evaluates policies on common
    random numbers; the result depends only on ``(params, policy, n_paths, seed)``.
    """
    if bank is None:
        bank = PathBank(seed, n_paths)
    elif bank.n_paths != n_paths or bank.seed != seed:
        raise ValueError("bank does not match n_paths/seed")
    out = simulate_paths(params, policy, bank)
    total, se_total = _mean_se(out["realized_cost"])
    fa, se_fa = _mean_se(out["false_alarm"])
    delay, se_delay = _mean_se(out["delay"])
    obs, se_obs = _mean_se(out["n_observations"].astype(float))
    post, se_post = _mean_se(out["posterior_cost"])
    return RiskEstimate(
        policy=getattr(policy, "name", type(policy).__name__),
        pi0=params.pi0, n_paths=n_paths,
        total_risk=total, se_total=se_total,
        p_false_alarm=fa, se_false_alarm=se_fa,
        mean_delay=delay, se_delay=se_delay,
        mean_obs=obs, se_obs=se_obs,
        posterior_risk=post, se_posterior=se_post,
        weights=(1.0, params.c, params.d),
    )
