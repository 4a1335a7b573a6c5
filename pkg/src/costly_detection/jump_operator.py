"""The one-step dynamic programming operator of the costly-observation problem.

For a cost function ``f`` on beliefs, observing after waiting ``t`` costs

    J0 f(pi, t) = d + E_pi[f(Pi_t)] + c t - c (1 - pi) (1 - exp(-lam t)) / lam

and the operator takes ``J f(pi) = min(F(pi), inf_t J0 f(pi, t))``.  The
expectation is computed under the measure in which the observed increment is
N(0, t) whatever the disorder, which turns it into a fixed Gaussian integral:

    E_pi[f(Pi_t)] = (1 - pi) exp(-lam t) E[f(j / (1 + j)) (1 + j)],  X_t ~ N(0, t).
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial.hermite_e import hermegauss
from scipy import special

from .model import (
    ModelParams,
    log_likelihood_j,
    running_cost,
    stop_now_cost,
    stop_now_optimizer,
)

GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0
# |F - inner| below this counts as a tie and stopping wins.
BRANCH_TIE = 1e-12


@dataclass(frozen=True)
class ValueFunction:
    """Piecewise-linear function on a belief grid.

    ``grid`` must be strictly increasing and span [0, 1].  Functions outside
    the admissible class (for instance the constant 1 used to check
    normalisation) are allowed; ``check`` tells whether the invariants hold.
    """

    grid: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        grid = np.asarray(self.grid, dtype=float)
        values = np.asarray(self.values, dtype=float)
        if grid.ndim != 1 or grid.shape != values.shape or grid.size < 2:
            raise ValueError("grid and values must be 1-d arrays of equal length >= 2")
        if grid[0] != 0.0 or grid[-1] != 1.0 or np.any(np.diff(grid) <= 0):
            raise ValueError("grid must increase strictly from 0 to 1")
        grid.setflags(write=False)
        values.setflags(write=False)
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "values", values)

    @classmethod
    def from_function(cls, grid, fn) -> "ValueFunction":
        grid = np.asarray(grid, dtype=float)
        return cls(grid, np.asarray(fn(grid), dtype=float) * np.ones_like(grid))

    def __call__(self, p):
        return np.interp(p, self.grid, self.values)

    def per_unit_survival(self, q):
        """``f(1 - q) / q`` for ``q`` in (0, 1], exact on the last grid cell.

        In the last cell ``f`` is affine, so the ratio splits into
        ``f(1) / q`` plus a constant slope and never divides 0 by 0.
        """
        q = np.asarray(q, dtype=float)
        g0, f0, f1 = self.grid[-2], self.values[-2], self.values[-1]
        h = 1.0 - g0
        last = q <= h
        with np.errstate(divide="ignore", invalid="ignore"):
            inner = self(1.0 - q) / q
            if f1 == 0.0:
                edge = np.full_like(q, (f0 - f1) / h)
            else:
                edge = f1 / q + (f0 - f1) / h
        return np.where(last, edge, inner)

    def concavity_defect(self) -> float:
        """Largest amount by which a grid value sits below its neighbours' chord."""
        g, v = self.grid, self.values
        if g.size < 3:
            return 0.0
        w = (g[1:-1] - g[:-2]) / (g[2:] - g[:-2])
        chord = (1.0 - w) * v[:-2] + w * v[2:]
        return float(max(0.0, np.max(chord - v[1:-1])))

    def check(self, concavity_tol: float = 1e-9, bound_tol: float = 1e-12) -> list[str]:
        """Return the list of violated invariants (empty when all hold)."""
        problems = []
        if np.any(self.values < -bound_tol):
            problems.append("negative values")
        if np.any(self.values > 1.0 - self.grid + bound_tol):
            problems.append("values above 1 - pi")
        if abs(self.values[-1]) > bound_tol:
            problems.append("value at pi = 1 is not 0")
        if self.concavity_defect() > concavity_tol:
            problems.append("not concave")
        return problems


@dataclass(frozen=True)
class QuadratureRule:
    """Nodes and weights for expectations against the standard normal law."""

    nodes: np.ndarray
    weights: np.ndarray

    @property
    def count(self) -> int:
        return self.nodes.size


def gauss_hermite_rule(count: int = 64) -> QuadratureRule:
    """Probabilists' Gauss-Hermite rule normalised to a probability measure."""
    if count < 1:
        raise ValueError("count must be positive")
    nodes, weights = hermegauss(count)
    nodes = 0.5 * (nodes - nodes[::-1])
    weights = 0.5 * (weights + weights[::-1])
    return QuadratureRule(nodes, weights / weights.sum())


@dataclass(frozen=True)
class TimeSearchConfig:
    """How the waiting time before the next observation is searched.

    A log-spaced coarse grid on ``[t_lo, t_hi]`` locates local minima; the
    ``n_basins`` lowest are each resampled on ``n_fine`` points and the best
    cell is shrunk by golden-section search to relative width ``rel_tol``.
    ``t_hi=None`` means ``max(10 * t_F(0), 50)`` for the model at hand.
    """

    t_lo: float = 1e-3
    t_hi: float | None = None
    n_coarse: int = 128
    rel_tol: float = 1e-6
    tie_tol: float = 1e-12
    n_basins: int = 3
    n_fine: int = 16

    def __post_init__(self):
        if not self.t_lo > 0:
            raise ValueError("t_lo must be positive")
        if self.t_hi is not None and not self.t_hi > self.t_lo:
            raise ValueError("t_hi must exceed t_lo")
        if self.n_coarse < 3:
            raise ValueError("n_coarse must be at least 3")
        if not self.rel_tol > 0:
            raise ValueError("rel_tol must be positive")
        if self.n_basins < 1:
            raise ValueError("n_basins must be at least 1")

    def upper(self, params: ModelParams) -> float:
        if self.t_hi is not None:
            return self.t_hi
        return max(10.0 * stop_now_optimizer(params, 0.0), 50.0)

    def coarse_grid(self, params: ModelParams) -> np.ndarray:
        return np.geomspace(self.t_lo, self.upper(params), self.n_coarse)


def _expectation(params, f, pi, t, rule):
    # pi, t broadcast against each other; the node axis is appended last
    pi = np.asarray(pi, dtype=float)[..., None]
    t = np.asarray(t, dtype=float)[..., None]
    x = np.sqrt(t) * rule.nodes
    lj = log_likelihood_j(params, t, pi, x)
    # f(p) * (1 + j) written as f(1 - q) / q with q = 1 / (1 + j)
    terms = f.per_unit_survival(special.expit(-lj))
    return (1.0 - pi[..., 0]) * np.exp(-params.lam * t[..., 0]) * np.sum(terms * rule.weights, axis=-1)


def _check_observation_args(pi, t):
    if np.any(np.asarray(t) <= 0):
        raise ValueError("waiting time t must be positive")
    pi = np.asarray(pi)
    if np.any((pi < 0) | (pi >= 1)):
        raise ValueError("belief must lie in [0, 1); pi = 1 is absorbing")


def expectation_after_observation(params: ModelParams, f: ValueFunction, pi, t, rule: QuadratureRule):
    """``E_pi[f(Pi)]`` for the belief right after one observation at time ``t``."""
    _check_observation_args(pi, t)
    out = _expectation(params, f, pi, t, rule)
    return float(out) if out.ndim == 0 else out


def j0_cost(params: ModelParams, f: ValueFunction, pi, t, rule: QuadratureRule):
    """Cost of paying for an observation after ``t`` and continuing with ``f``."""
    _check_observation_args(pi, t)
    out = params.d + _expectation(params, f, pi, t, rule) + running_cost(params, pi, t)
    return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class TimeMinimum:
    t: float
    cost: float
    clipped: bool


def _first_min(costs, ts, tie_tol):
    """Row-wise smallest ``t`` whose cost is within ``tie_tol`` of the minimum."""
    best = costs.min(axis=-1, keepdims=True)
    ok = costs <= best + tie_tol
    masked = np.where(ok, ts, np.inf)
    idx = masked.argmin(axis=-1)
    rows = np.arange(costs.shape[0])
    return ts[rows, idx], costs[rows, idx]


def _golden(cost_of, pi, lo, hi, max_width):
    """Golden-section search in log t, one bracket per entry of ``pi``."""
    x1 = hi - GOLDEN * (hi - lo)
    x2 = lo + GOLDEN * (hi - lo)
    c1 = cost_of(pi, np.exp(x1))
    c2 = cost_of(pi, np.exp(x2))
    # each entry stops on its own width, so results do not depend on the batch
    while True:
        live = hi - lo > max_width
        if not live.any():
            return x1, x2, c1, c2
        left = live & (c1 <= c2)
        right = live & ~left
        hi = np.where(left, x2, hi)
        lo = np.where(right, x1, lo)
        new_x = np.where(left, hi - GOLDEN * (hi - lo), lo + GOLDEN * (hi - lo))
        new_c = cost_of(pi, np.exp(new_x))
        x1, x2, c1, c2 = (
            np.where(left, new_x, np.where(right, x2, x1)),
            np.where(left, x1, np.where(right, new_x, x2)),
            np.where(left, new_c, np.where(right, c2, c1)),
            np.where(left, c1, np.where(right, new_c, c2)),
        )


def _minimize_batch(params, f, pi, rule, search, t_hint=None):
    """Vectorised inner minimisation for a 1-d array of beliefs in [0, 1).

    The cost in ``t`` is not unimodal when ``f`` is piecewise linear, so the
    best ``search.n_basins`` coarse local minima are each refined.
    """
    ts = search.coarse_grid(params)
    n = ts.size
    rows = np.arange(pi.size)
    cost_of = lambda p, t: params.d + _expectation(params, f, p, t, rule) + running_cost(params, p, t)

    coarse = cost_of(pi[:, None], ts[None, :])
    best = coarse.min(axis=1, keepdims=True)
    k_best = np.argmax(coarse <= best + search.tie_tol, axis=1)
    clipped = k_best == n - 1

    padded = np.pad(coarse, ((0, 0), (1, 1)), constant_values=np.inf)
    is_local = (coarse <= padded[:, :-2]) & (coarse <= padded[:, 2:])
    score = np.where(is_local, coarse, np.inf)
    m = min(search.n_basins, n)
    ks = np.argsort(score, axis=1, kind="stable")[:, :m]
    ks = np.where(np.isfinite(score[rows[:, None], ks]), ks, k_best[:, None])

    flat_pi = np.repeat(pi, m)
    flat_k = ks.ravel()
    lo = np.log(ts[np.maximum(flat_k - 1, 0)])
    hi = np.log(ts[np.minimum(flat_k + 1, n - 1)])
    # the quadrature leaves small ripples, so sample each bracket finely first
    if search.n_fine > 2:
        frac = np.linspace(0.0, 1.0, search.n_fine)
        fine_x = lo[:, None] + (hi - lo)[:, None] * frac
        fine_c = cost_of(flat_pi[:, None], np.exp(fine_x))
        j = np.argmin(fine_c, axis=1)
        r = np.arange(j.size)
        lo, hi = fine_x[r, np.maximum(j - 1, 0)], fine_x[r, np.minimum(j + 1, search.n_fine - 1)]
    # log-width bound gives relative width in t
    x1, x2, c1, c2 = _golden(cost_of, flat_pi, lo, hi, math.log1p(search.rel_tol))
    shape = (pi.size, m)

    cand_t = [ts[k_best][:, None], np.exp(x1).reshape(shape), np.exp(x2).reshape(shape)]
    cand_c = [coarse[rows, k_best][:, None], c1.reshape(shape), c2.reshape(shape)]
    if t_hint is not None:
        hint = np.asarray(t_hint, dtype=float)
        usable = np.isfinite(hint) & (hint > 0)
        safe_hint = np.where(usable, hint, ts[0])
        cand_t.append(safe_hint[:, None])
        cand_c.append(np.where(usable, cost_of(pi, safe_hint), np.inf)[:, None])
    t_min, c_min = _first_min(np.concatenate(cand_c, axis=1), np.concatenate(cand_t, axis=1),
                              search.tie_tol)
    return t_min, c_min, clipped


def minimize_over_t(params: ModelParams, f: ValueFunction, pi: float, rule: QuadratureRule,
                    search: TimeSearchConfig = TimeSearchConfig()) -> TimeMinimum:
    """First minimiser of ``t -> j0_cost(f, pi, t)`` on the configured range.

    ``clipped`` flags a minimum sitting on the upper end of the range.
    """
    _check_observation_args(pi, search.t_lo)
    t, cost, clipped = _minimize_batch(params, f, np.array([float(pi)]), rule, search)
    return TimeMinimum(float(t[0]), float(cost[0]), bool(clipped[0]))


@dataclass(frozen=True)
class OperatorResult:
    """Outcome of one application of the operator.

    ``t_map`` holds the waiting time where observing wins strictly and
    ``inf`` where stopping observations is at least as good.  ``inner`` is
    the observation branch ``inf_t J0 f`` (``inf`` at pi = 1).
    """

    value: ValueFunction
    t_map: np.ndarray
    inner: np.ndarray
    clipped: np.ndarray = field(repr=False)


def apply_J(params: ModelParams, f: ValueFunction, rule: QuadratureRule,
            search: TimeSearchConfig = TimeSearchConfig(), t_hint=None,
            threads: int = 1) -> OperatorResult:
    """Apply the operator at every grid point of ``f``.

    The observation branch also includes the ``t -> 0`` limit ``d + f(pi)``,
    which the infimum over ``t > 0`` reaches by continuity.  ``t_hint``
    (one waiting time per grid point, e.g. from the previous iterate) is
    evaluated as an extra candidate.
    """
    grid = f.grid
    inner_pts = grid < 1.0
    pi = grid[inner_pts]
    hint = None if t_hint is None else np.asarray(t_hint, dtype=float)[inner_pts]

    if threads > 1 and pi.size > threads:
        chunks = np.array_split(np.arange(pi.size), threads)
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(
                lambda idx: _minimize_batch(params, f, pi[idx], rule, search,
                                            None if hint is None else hint[idx]),
                chunks,
            ))
        t_min, c_min, clipped = (np.concatenate(a) for a in zip(*parts))
    else:
        t_min, c_min, clipped = _minimize_batch(params, f, pi, rule, search, hint)

    limit_cost = params.d + f.values[inner_pts]
    use_limit = limit_cost <= c_min + search.tie_tol
    t_min = np.where(use_limit, 0.0, t_min)
    c_min = np.where(use_limit, np.minimum(limit_cost, c_min), c_min)
    clipped = clipped & ~use_limit

    stop = stop_now_cost(params, pi)
    observe = c_min < stop - BRANCH_TIE

    values = np.zeros_like(grid)
    t_map = np.full_like(grid, np.inf)
    inner = np.full_like(grid, np.inf)
    clip_all = np.zeros(grid.shape, dtype=bool)
    values[inner_pts] = np.where(observe, c_min, stop)
    t_map[inner_pts] = np.where(observe, t_min, np.inf)
    inner[inner_pts] = c_min
    clip_all[inner_pts] = clipped & observe
    return OperatorResult(ValueFunction(grid, values), t_map, inner, clip_all)
