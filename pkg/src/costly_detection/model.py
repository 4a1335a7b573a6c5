"""Closed-form pieces of the disorder model with costly observations.

The observed process is ``X_t = alpha * (t - theta)^+ + W_t`` where the
disorder time ``theta`` has an atom ``pi`` at zero and is exponential with
rate ``lam`` afterwards.  Everything here is a pure function of its inputs
and broadcasts over numpy arrays.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special

# Below this value of |alpha| * sqrt(t) the completed-square form of the
# likelihood integral loses precision; the alpha = 0 limit is used instead
# (relative error alpha^2 t / 6 < 2e-13).
SMALL_SIGNAL = 1e-6


@dataclass(frozen=True)
class ModelParams:
    """Problem constants.

    Attributes:
        alpha: drift of X after the disorder.
        lam: rate of the exponential part of the disorder prior.
        c: cost per unit of detection delay.
        d: cost of a single observation.
        pi0: initial probability that the disorder has already happened.
    """

    alpha: float = 1.0
    lam: float = 0.1
    c: float = 0.01
    d: float = 0.001
    pi0: float = 0.0

    def __post_init__(self):
        for name in ("alpha", "lam", "c", "d", "pi0"):
            value = getattr(self, name)
            if not math.isfinite(value):
                raise ValueError(f"{name} must be finite, got {value!r}")
        if self.lam <= 0:
            raise ValueError(f"lam must be positive, got {self.lam}")
        if self.c <= 0:
            raise ValueError(f"c must be positive, got {self.c}")
        if self.d <= 0:
            raise ValueError(f"d must be positive, got {self.d}")
        if not 0.0 <= self.pi0 <= 1.0:
            raise ValueError(f"pi0 must lie in [0, 1], got {self.pi0}")

    @property
    def stop_threshold(self) -> float:
        """Belief above which declaring immediately beats waiting."""
        return self.lam / (self.c + self.lam)


def _check_belief(pi) -> np.ndarray:
    pi = np.asarray(pi, dtype=float)
    if np.any((pi < 0.0) | (pi > 1.0)) or np.any(np.isnan(pi)):
        raise ValueError("belief must lie in [0, 1]")
    return pi


def _scalar_or_array(x):
    return float(x) if np.ndim(x) == 0 else x


def stop_now_cost(params: ModelParams, pi):
    """Cost ``F(pi)`` of the best strategy that takes no more observations.

    Without observations the belief drifts deterministically, so the only
    decision left is how long to wait before declaring.
    """
    pi = _check_belief(pi)
    lam, c = params.lam, params.c
    below = pi < params.stop_threshold
    safe = np.where(below, pi, 0.0)
    waiting = (c / lam) * (safe + math.log((lam + c) / c) + np.log1p(-safe))
    return _scalar_or_array(np.where(below, waiting, 1.0 - pi))


def stop_now_optimizer(params: ModelParams, pi):
    """Waiting time before declaring that attains ``stop_now_cost``."""
    pi = _check_belief(pi)
    lam, c = params.lam, params.c
    below = pi < params.stop_threshold
    safe = np.where(below, pi, 0.0)
    wait = (math.log((lam + c) / c) + np.log1p(-safe)) / lam
    return _scalar_or_array(np.where(below, wait, 0.0))


def running_cost(params: ModelParams, pi, dt):
    """Expected delay cost ``c * int_0^dt Pi_s ds`` along the drift from ``pi``.

    Equals ``c * E[(dt - theta)^+]`` for a fresh start at belief ``pi``.
    """
    pi = np.asarray(pi, dtype=float)
    dt = np.asarray(dt, dtype=float)
    lam, c = params.lam, params.c
    return _scalar_or_array(c * dt + (c / lam) * (1.0 - pi) * np.expm1(-lam * dt))


def stop_after_wait_cost(params: ModelParams, pi, t):
    """Cost of waiting exactly ``t`` and then declaring, with no observations."""
    pi = np.asarray(pi, dtype=float)
    return _scalar_or_array((1.0 - pi) * np.exp(-params.lam * t) + running_cost(params, pi, t))


def posterior_drift(params: ModelParams, pi, dt):
    """Belief after ``dt`` time units without an observation."""
    pi = _check_belief(pi)
    dt = np.asarray(dt, dtype=float)
    if np.any(dt < 0):
        raise ValueError("dt must be nonnegative")
    return _scalar_or_array(1.0 - (1.0 - pi) * np.exp(-params.lam * dt))


def log_odds(pi):
    pi = np.asarray(pi, dtype=float)
    with np.errstate(divide="ignore"):
        return np.log(pi) - np.log1p(-pi)


def _log_gaussian_integral(a, b, t):
    """``log int_0^t exp(b u - a u^2) du`` for ``a > 0`` via scaled erfc."""
    s = np.sqrt(a)
    z0 = -b / (2.0 * s)
    z1 = s * t + z0
    expo = b * t - a * t * t
    log_c = 0.5 * math.log(math.pi) - np.log(2.0 * s)

    right = z0 >= 0.0
    left = z1 <= 0.0
    mid = ~(right | left)

    out = np.empty(np.broadcast(a, b, t).shape)
    with np.errstate(all="ignore"):
        # both ends in the right tail: erfc(z0) - erfc(z1)
        r = special.erfcx(np.where(right, z0, 0.0)) - np.exp(
            np.where(right, expo, 0.0)
        ) * special.erfcx(np.where(right, z1, 0.0))
        # both ends in the left tail: mirror image
        l_ = special.erfcx(np.where(left, -z1, 0.0)) - np.exp(
            -np.where(left, expo, 0.0)
        ) * special.erfcx(np.where(left, -z0, 0.0))
        m = special.erf(np.where(mid, z1, 0.0)) + special.erf(np.where(mid, -z0, 0.0))
        out = np.where(
            right,
            log_c + np.log(r),
            np.where(left, log_c + expo + np.log(l_), log_c + z0 * z0 + np.log(m)),
        )
    return out


def _log_exp_integral(b, t):
    """``log int_0^t exp(b u) du`` (the case without the quadratic term)."""
    bt = b * t
    with np.errstate(over="ignore"):
        big = bt > 50.0
        small = np.log(t * special.exprel(np.where(big, 0.0, bt)))
        large = bt - np.log(np.where(big, b, 1.0)) + np.log(-np.expm1(-np.where(big, bt, 1.0)))
    return np.where(big, large, small)


def log_likelihood_j(params: ModelParams, t, pi, x):
    """Natural log of ``likelihood_j``; finite also where ``j`` overflows."""
    t = np.asarray(t, dtype=float)
    pi = np.asarray(pi, dtype=float)
    x = np.asarray(x, dtype=float)
    if np.any(t <= 0):
        raise ValueError("elapsed time t must be positive")
    if np.any((pi < 0.0) | (pi >= 1.0)):
        raise ValueError("likelihood_j needs a belief in [0, 1); handle pi = 1 separately")
    alpha, lam = params.alpha, params.lam
    t, pi, x = np.broadcast_arrays(t, pi, x)

    first = log_odds(pi) + alpha * x + (lam - 0.5 * alpha * alpha) * t
    b = lam + alpha * x / t
    strong = np.abs(alpha) * np.sqrt(t) >= SMALL_SIGNAL
    if np.all(strong):
        log_int = _log_gaussian_integral(alpha * alpha / (2.0 * t), b, t)
    elif not np.any(strong):
        log_int = _log_exp_integral(b, t)
    else:
        a = np.where(strong, alpha * alpha / (2.0 * t), 1.0)
        log_int = np.where(
            strong, _log_gaussian_integral(a, b, t), _log_exp_integral(b, t)
        )
    return np.logaddexp(first, math.log(lam) + log_int)


def likelihood_j(params: ModelParams, t, pi, x):
    """Likelihood statistic ``j(t, pi, x)``; the posterior is ``j / (1 + j)``.

    Args:
        params: model constants.
        t: time since the previous observation, positive.
        pi: belief at the previous observation, in [0, 1).
        x: observed increment of X over that time.
    """
    return _scalar_or_array(np.exp(log_likelihood_j(params, t, pi, x)))


def posterior_after_observation(params: ModelParams, pi, dt, dx):
    """Belief right after observing increment ``dx`` over ``dt`` from ``pi``."""
    pi = _check_belief(pi)
    dt = np.asarray(dt, dtype=float)
    if np.any(dt <= 0):
        raise ValueError("dt must be positive")
    pi, dt, dx = np.broadcast_arrays(pi, dt, np.asarray(dx, dtype=float))
    absorbed = pi >= 1.0
    lj = log_likelihood_j(params, dt, np.where(absorbed, 0.0, pi), dx)
    return _scalar_or_array(np.where(absorbed, 1.0, special.expit(lj)))
