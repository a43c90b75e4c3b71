"""Fixed-step numerical substrate used by every other module.

Provides a classical 4th-order fixed-step integrator for vector ODEs,
state-transition matrices of the contraction dynamics  xdot = -g*phi(t)*phi(t)^T*x,
and guarded dense matrix inversion with a condition estimate.

All matrices are dense row-major ``numpy`` arrays.  Operations are pure
functions over immutable inputs and are safe to call concurrently.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

__all__ = [
    "IntegrationDivergedError",
    "NearSingularError",
    "Trajectory",
    "integrate_ltv",
    "transition_matrix",
    "invert_guarded",
    "condition_estimate",
    "rank1_step_coeffs",
    "rank1_forcing_coeffs",
    "fill_rank1_step_coeffs",
    "fill_rank1_forcing_coeffs",
    "DEFAULT_COND_MAX",
]

DEFAULT_COND_MAX = 1e12


class IntegrationDivergedError(RuntimeError):
    """A non-finite value appeared during integration."""

    def __init__(self, time: float):
        self.time = float(time)
        super().__init__(f"integration produced a non-finite value at t={time!r}")


class NearSingularError(RuntimeError):
    """A matrix was too ill-conditioned to invert reliably."""

    def __init__(self, cond_estimate: float, what: str = "matrix"):
        self.cond_estimate = float(cond_estimate)
        super().__init__(
            f"{what} is numerically singular (condition estimate {cond_estimate:.3e})"
        )


@dataclass(frozen=True, eq=False)
class Trajectory:
    """A sampled solution: strictly increasing time grid plus one value row per time."""

    grid: np.ndarray   # (m,)
    values: np.ndarray  # (m, dim)

    def __post_init__(self):
        if self.grid.shape[0] != self.values.shape[0]:
            raise ValueError("grid and values must have equal length")
        if np.any(np.diff(self.grid) <= 0):
            raise ValueError("grid must be strictly increasing")

    @property
    def final(self) -> np.ndarray:
        return self.values[-1]


def _step_grid(t0: float, t1: float, step: float) -> np.ndarray:
    """Uniform grid from t0 with the given step; the final point is exactly t1.

    The last interval is shortened when (t1 - t0) is not an integer number
    of steps.
    """
    if not t1 > t0:
        raise ValueError(f"t1 must exceed t0 (got [{t0}, {t1}])")
    if not step > 0:
        raise ValueError("step must be positive")
    span = t1 - t0
    n_full = int(np.floor(span / step + 1e-12))
    ts = t0 + step * np.arange(n_full + 1)
    if t1 - ts[-1] > 1e-12 * max(1.0, abs(t1)):
        ts = np.append(ts, t1)
    else:
        ts[-1] = t1
    return ts


def integrate_ltv(
    rhs: Callable[[float, np.ndarray], np.ndarray],
    x0: np.ndarray,
    t0: float,
    t1: float,
    step: float,
) -> Trajectory:
    """Integrate xdot = rhs(t, x) with the classical fixed-step 4th-order scheme.

    Raises :class:`IntegrationDivergedError` carrying the offending time if a
    non-finite value is produced.
    """
    ts = _step_grid(t0, t1, step)
    x = np.array(x0, dtype=float).ravel()
    out = np.empty((len(ts), x.size))
    out[0] = x
    for k in range(len(ts) - 1):
        t, h = ts[k], ts[k + 1] - ts[k]
        k1 = rhs(t, x)
        k2 = rhs(t + 0.5 * h, x + 0.5 * h * k1)
        k3 = rhs(t + 0.5 * h, x + 0.5 * h * k2)
        k4 = rhs(t + h, x + h * k3)
        x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.all(np.isfinite(x)):
            raise IntegrationDivergedError(ts[k + 1])
        out[k + 1] = x
    return Trajectory(grid=ts, values=out)


def fill_rank1_step_coeffs(C: np.ndarray, gamma: float, h: float,
                           p: float, r: float, s: float) -> None:
    """Write the 3x3 core of one 4th-order step for
    Phi' = -gamma*phi(t)*phi(t)^T*Phi  into a preallocated buffer.

    With stage regressors a = phi(t), b = phi(t+h/2), d = phi(t+h) and the
    scalars p = b.a, r = b.b, s = d.b, the exact stage combination collapses
    to  Phi <- Phi + S @ C @ S.T @ Phi  with S = [a b d].  This is the
    classical 4-stage update reorganised through the rank-one structure, so
    the per-step cost stays quadratic in the dimension.
    """
    g, g2 = gamma, gamma * gamma
    h2 = h * h
    C[0, 0] = -g * h / 6.0
    C[0, 1] = 0.0
    C[0, 2] = 0.0
    C[1, 0] = g2 * p * h2 / 6.0 - g2 * g * r * p * h2 * h / 12.0
    C[1, 1] = -2.0 * g * h / 3.0 + g2 * r * h2 / 6.0
    C[1, 2] = 0.0
    C[2, 0] = g2 * g2 * s * r * p * h2 * h2 / 24.0
    C[2, 1] = g2 * s * h2 / 6.0 - g2 * g * s * r * h2 * h / 12.0
    C[2, 2] = -g * h / 6.0


def rank1_step_coeffs(gamma: float, h: float, p: float, r: float, s: float) -> np.ndarray:
    C = np.empty((3, 3))
    fill_rank1_step_coeffs(C, gamma, h, p, r, s)
    return C


def fill_rank1_forcing_coeffs(
    w: np.ndarray, gamma: float, h: float, p: float, r: float, s: float,
    y0: float, y1: float, y2: float,
) -> None:
    """Forcing weights of one 4th-order step for  x' = -g*phi*(phi^T x - y).

    Writes w such that the affine part of the step is S @ w, with S and the
    scalars as in :func:`fill_rank1_step_coeffs` and y0, y1, y2 the measured
    output at the three stage times.
    """
    g, g2 = gamma, gamma * gamma
    w[0] = (h / 6.0) * g * y0
    w[1] = (h / 6.0) * (
        -h * g2 * p * y0 + 0.5 * h * h * g2 * g * r * p * y0
        + 4.0 * g * y1 - h * g2 * r * y1
    )
    w[2] = (h / 6.0) * (
        -0.25 * h ** 3 * g2 * g2 * s * r * p * y0
        + 0.5 * h * h * g2 * g * s * r * y1 - h * g2 * s * y1 + g * y2
    )


def rank1_forcing_coeffs(
    gamma: float, h: float, p: float, r: float, s: float,
    y0: float, y1: float, y2: float,
) -> np.ndarray:
    w = np.empty(3)
    fill_rank1_forcing_coeffs(w, gamma, h, p, r, s, y0, y1, y2)
    return w


def transition_matrix(
    regressor: Callable[[float], np.ndarray],
    gamma: float,
    t0: float,
    t1: float,
    step: float,
) -> np.ndarray:
    """State-transition matrix Phi(t1, t0) of  xdot = -gamma*phi(t)*phi(t)^T*x.

    Integrated with the same fixed-step 4th-order scheme as everything else,
    starting from the identity.  The right-hand side is applied as
    phi*(phi^T Phi), never by forming phi*phi^T first.
    """
    if not gamma > 0:
        raise ValueError("gamma must be positive")
    ts = _step_grid(t0, t1, step)
    a = np.asarray(regressor(ts[0]), dtype=float).ravel()
    n = a.size
    Phi = np.eye(n)
    S = np.empty((n, 3))
    for k in range(len(ts) - 1):
        t, h = ts[k], ts[k + 1] - ts[k]
        b = np.asarray(regressor(t + 0.5 * h), dtype=float).ravel()
        d = np.asarray(regressor(ts[k + 1]), dtype=float).ravel()
        S[:, 0], S[:, 1], S[:, 2] = a, b, d
        C = rank1_step_coeffs(gamma, h, float(b @ a), float(b @ b), float(d @ b))
        Phi += S @ (C @ (S.T @ Phi))
        a = d
    if not np.all(np.isfinite(Phi)):
        raise IntegrationDivergedError(ts[-1])
    return Phi


def condition_estimate(m: np.ndarray) -> float:
    """Two-norm condition number from the extreme singular values."""
    sv = np.linalg.svd(np.asarray(m, dtype=float), compute_uv=False)
    if sv[-1] == 0.0 or not np.all(np.isfinite(sv)):
        return np.inf
    return float(sv[0] / sv[-1])


def invert_guarded(
    m: np.ndarray, cond_max: float = DEFAULT_COND_MAX
) -> tuple[np.ndarray, float]:
    """Invert a square matrix, guarding on its estimated condition number.

    Returns ``(inverse, cond_estimate)``.  Raises :class:`NearSingularError`
    carrying the estimate when it exceeds ``cond_max``; in the estimator this
    signals that the excitation hypothesis failed numerically.
    """
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError("invert_guarded needs a square matrix")
    cond = condition_estimate(m)
    if not np.isfinite(cond) or cond > cond_max:
        raise NearSingularError(cond)
    inv = np.linalg.solve(m, np.eye(m.shape[0]))
    return inv, cond
