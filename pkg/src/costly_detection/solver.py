"""Value iteration to the fixed point of the operator and policy extraction."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .jump_operator import (
    QuadratureRule,
    TimeSearchConfig,
    ValueFunction,
    apply_J,
    gauss_hermite_rule,
)
from .model import ModelParams, stop_now_cost, stop_now_optimizer

logger = logging.getLogger(__name__)

# V below F by more than this counts as strict continuation.
EPS_STRICT = 1e-9
MONOTONE_SLACK = 1e-9


class ConvergenceError(RuntimeError):
    """Value iteration hit ``max_iter`` before the sup-norm tolerance."""

    def __init__(self, message: str, residuals: list[float], result: "SolveResult | None" = None):
        super().__init__(message)
        self.residuals = residuals
        self.result = result


@dataclass(frozen=True)
class Policy:
    """Observation policy read off a solved problem.

    ``t_star[i]`` is the wait before the next observation from belief
    ``grid[i]`` (``inf`` where observing stops).  Between grid points the
    wait is interpolated linearly when both neighbours are finite; any cell
    touching an infinite neighbour means stop observing.
    """

    grid: np.ndarray
    t_star: np.ndarray
    terminal_wait: np.ndarray
    pi_star: float
    name: str = "solved"

    def wait_times(self, pi) -> np.ndarray:
        pi = np.asarray(pi, dtype=float)
        g, ts = self.grid, self.t_star
        i = np.clip(np.searchsorted(g, pi, side="right") - 1, 0, g.size - 2)
        lo, hi = ts[i], ts[i + 1]
        w = (pi - g[i]) / (g[i + 1] - g[i])
        on_left = w <= 0.0
        with np.errstate(invalid="ignore"):
            mixed = np.where(np.isfinite(lo) & np.isfinite(hi), lo + w * (hi - lo), np.inf)
        return np.where(on_left, lo, mixed)


@dataclass(frozen=True)
class SolveResult:
    """Iterates ``f_0 = F, f_1, ...`` and what the last operator step produced.

    ``t_maps[n]`` is the waiting-time map obtained when the operator was
    applied to ``iterates[n]``; it belongs to the problem with ``n + 1``
    observation rights.
    """

    params: ModelParams
    iterates: list[ValueFunction]
    t_maps: list[np.ndarray]
    residuals: list[float]
    residual: float
    converged: bool
    clipped: bool

    @property
    def fixed_point(self) -> ValueFunction:
        return self.iterates[-1]

    @property
    def iterations(self) -> int:
        return len(self.iterates) - 1

    @property
    def grid(self) -> np.ndarray:
        return self.iterates[0].grid

    @property
    def policy(self) -> Policy:
        return extract_policy(self, self.params)


def belief_grid(grid_size: int) -> np.ndarray:
    if grid_size < 3:
        raise ValueError("grid_size must be at least 3")
    return np.linspace(0.0, 1.0, grid_size)


def value_iteration(params: ModelParams, grid_size: int = 201, rule: QuadratureRule | None = None,
                    search: TimeSearchConfig = TimeSearchConfig(), tol: float = 1e-5,
                    max_iter: int = 500, min_iter: int = 0, threads: int = 1,
                    raise_on_failure: bool = True) -> SolveResult:
    """Iterate ``f_{n+1} = J f_n`` from ``f_0 = F`` until the sup-norm step is below ``tol``.

    At least ``min_iter`` steps are taken even if the tolerance is met earlier,
    so that the values for small ``n`` are always available.  One extra
    operator application on the final iterate measures ``||J V - V||`` and
    supplies the policy map.

    Raises:
        ConvergenceError: ``max_iter`` steps did not reach ``tol`` (only when
            ``raise_on_failure``); the partial result rides on the exception.
        AssertionError: an iterate rose by more than ``MONOTONE_SLACK``.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    if max_iter < 1:
        raise ValueError("max_iter must be at least 1")
    rule = rule or gauss_hermite_rule()
    grid = belief_grid(grid_size)

    f = ValueFunction(grid, stop_now_cost(params, grid))
    iterates, t_maps, residuals = [f], [], []
    hint = None
    converged = clipped = False

    def step_from(f, hint):
        step = apply_J(params, f, rule, search, t_hint=hint, threads=threads)
        rise = float(np.max(step.value.values - f.values))
        assert rise <= MONOTONE_SLACK, f"iterate {len(iterates)} rose by {rise:.3e}"
        return step, float(np.max(np.abs(step.value.values - f.values)))

    for n in range(max_iter):
        step, delta = step_from(f, hint)
        t_maps.append(step.t_map)
        residuals.append(delta)
        clipped = clipped or bool(step.clipped.any())
        f, hint = step.value, step.t_map
        iterates.append(f)
        logger.debug("iteration %d: sup-norm step %.3e", n + 1, delta)
        if delta <= tol and n + 1 >= min_iter:
            converged = True
            break

    final, residual = step_from(f, hint)
    t_maps.append(final.t_map)

    result = SolveResult(params, iterates, t_maps, residuals, residual, converged, clipped)
    if clipped:
        logger.warning("inner minimum hit the upper end of the time search range")
    if not converged and raise_on_failure:
        raise ConvergenceError(
            f"no convergence in {max_iter} iterations (last step {residuals[-1]:.3e})",
            residuals, result,
        )
    return result


def continuation_region(V: ValueFunction, params: ModelParams, eps: float = EPS_STRICT):
    """Grid indices where observing is strictly better than stopping observations.

    Returns ``(indices, is_interval)``, the second flag telling whether the
    region has the form ``[0, pi*)`` on the grid.
    """
    F = stop_now_cost(params, V.grid)
    idx = np.flatnonzero(V.values < F - eps)
    is_interval = idx.size == 0 or (idx[0] == 0 and np.all(np.diff(idx) == 1))
    return idx, bool(is_interval)


def _policy_from_map(grid, t_map, value, params, name="solved"):
    idx, _ = continuation_region(value, params)
    t_star = np.full_like(grid, np.inf)
    t_star[idx] = t_map[idx]
    t_star[~np.isfinite(t_map)] = np.inf
    infinite = np.flatnonzero(~np.isfinite(t_star))
    pi_star = float(grid[infinite[0]]) if infinite.size else 1.0
    return Policy(grid, t_star, stop_now_optimizer(params, grid), pi_star, name)


def extract_policy(result: SolveResult, params: ModelParams) -> Policy:
    """Optimal waiting times from the operator step applied to the fixed point."""
    return _policy_from_map(result.grid, result.t_maps[-1], result.fixed_point, params)


def n_observation_policies(result: SolveResult, params: ModelParams, n_max: int) -> list[Policy]:
    """``t*(pi, V_n)`` for ``n = 1 .. n_max`` as policies.

    Past convergence the maps no longer change, so the last one is repeated.
    """
    out = []
    last = len(result.iterates) - 1
    for n in range(1, n_max + 1):
        k = min(n, last)
        # observing strictly wins at pi exactly where V_{n+1}(pi) < F(pi)
        nxt = result.iterates[min(k + 1, last)]
        out.append(_policy_from_map(result.grid, result.t_maps[k], nxt, params, name=f"n={n}"))
    return out


def pi_star_sequence(params: ModelParams, n_max: int, grid_size: int = 201,
                     rule: QuadratureRule | None = None,
                     search: TimeSearchConfig = TimeSearchConfig(), threads: int = 1,
                     result: SolveResult | None = None):
    """Thresholds ``pi*(n) = inf{pi : t*(pi, V_n) = inf}`` for ``n = 1 .. n_max``.

    Returns ``(pi_stars, policies, monotone)``; ``monotone`` reports whether
    the thresholds are nondecreasing in ``n``, an empirical trend that is reported, not enforced.
    """
    if n_max < 1:
        raise ValueError("n_max must be at least 1")
    if result is None:
        # V_{n_max + 1} decides where the last map strictly continues
        result = value_iteration(params, grid_size, rule, search, tol=1e-5, max_iter=n_max + 1,
                                 min_iter=n_max + 1, threads=threads, raise_on_failure=False)
    policies = n_observation_policies(result, params, n_max)
    stars = np.array([p.pi_star for p in policies])
    return stars, policies, bool(np.all(np.diff(stars) >= 0))
