"""Noise-robustness bounds and their empirical verification.

Evaluates the supremum-type and integral-type error bounds of the noisy
estimator as explicit functions, verifies them pointwise against simulated
arcs, and provides the (tau, eps)-closeness test between two hybrid arcs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .estimator import HybridArc, estimation_error
from .signals import NoiseSpec, ParamSchedule, noise_series

__all__ = [
    "NoiseBoundInputs",
    "BoundReport",
    "iss_bound",
    "iiss_bound",
    "verify_bound",
    "closeness",
]


@dataclass(frozen=True, eq=False)
class NoiseBoundInputs:
    """Constants and realised-noise data feeding the error bounds.

    kappa is the overshoot constant of the window decay estimate; it is taken
    as 1, the tightest value consistent with the transition matrices being
    contractions.  w_inf is the supremum of |w| over the simulated horizon and
    w_l1 the cumulative integral of |w| on the grid.
    """

    delta: float
    gamma1: float
    gamma2: float
    phi_m: float
    eta: float
    kappa1: float
    kappa2: float
    lam: float
    w_inf: float
    grid: np.ndarray
    w_l1: np.ndarray
    kappa: float = 1.0

    @classmethod
    def from_noise(
        cls,
        *,
        delta: float,
        gamma1: float,
        gamma2: float,
        phi_m: float,
        eta: float,
        kappa1: float,
        kappa2: float,
        lam: float,
        noise: NoiseSpec,
        t_end: float,
        step: float,
        kappa: float = 1.0,
    ) -> "NoiseBoundInputs":
        grid = step * np.arange(round(t_end / step) + 1)
        w = np.abs(noise_series(noise, grid, step))
        w_l1 = np.concatenate([[0.0], np.cumsum(0.5 * (w[1:] + w[:-1]) * np.diff(grid))])
        return cls(delta=delta, gamma1=gamma1, gamma2=gamma2, phi_m=phi_m,
                   eta=eta, kappa1=kappa1, kappa2=kappa2, lam=lam,
                   w_inf=float(w.max(initial=0.0)), grid=grid, w_l1=w_l1, kappa=kappa)

    def w_l1_at(self, t) -> np.ndarray:
        return np.interp(t, self.grid, self.w_l1)


def _beta(inputs: NoiseBoundInputs, initial_err: float, t) -> np.ndarray:
    return math.exp(inputs.delta) * np.exp(-np.asarray(t, dtype=float)) * initial_err


def iss_bound(t, j, inputs: NoiseBoundInputs, initial_err: float):
    """Error bound under bounded noise and window-length persistent excitation.

    Before the first jump the decaying initial-condition term plus a
    noise-supremum term applies; afterwards only the (larger) post-jump
    noise-supremum term remains.
    """
    if not inputs.lam > 0.0:
        raise ValueError("undefined bound: the window decay rate is zero")
    rho = np.where(np.asarray(j) == 0, 1.0, 0.0)
    alpha1 = max(inputs.gamma1, inputs.gamma2) * inputs.phi_m * inputs.delta * inputs.w_inf
    alpha2 = inputs.phi_m * (
        (1.0 + inputs.kappa1 * inputs.kappa2) * inputs.delta * (inputs.gamma1 + inputs.gamma2)
        + inputs.gamma1 * (inputs.kappa / inputs.lam + inputs.delta)
        + inputs.gamma2 * inputs.delta
    ) * inputs.w_inf
    return rho * _beta(inputs, initial_err, t) + alpha1 + (1.0 - rho) * alpha2


def iiss_bound(t, j, inputs: NoiseBoundInputs, initial_err: float):
    """Error bound under integrable noise, needing excitation only on the
    first window; the noise enters through its integrated magnitude."""
    rho = np.where(np.asarray(j) == 0, 1.0, 0.0)
    W = inputs.w_l1_at(t)
    a1 = max(inputs.gamma1, inputs.gamma2) * inputs.phi_m * W
    a2 = ((1.0 + inputs.kappa1 * inputs.kappa2) * inputs.delta + 1.0) \
        * (inputs.gamma1 + inputs.gamma2) * inputs.phi_m * W
    return rho * _beta(inputs, initial_err, t) + a1 + (1.0 - rho) * a2


@dataclass(frozen=True, eq=False)
class BoundReport:
    kind: str
    passed: bool
    min_margin: float
    max_violation: float
    t: np.ndarray
    j: np.ndarray
    bound: np.ndarray
    err: np.ndarray
    margin: np.ndarray


def verify_bound(
    arc: HybridArc,
    schedule: ParamSchedule,
    bound: str,
    inputs: NoiseBoundInputs,
    tol: float = 1e-6,
) -> BoundReport:
    """Check a bound pointwise against a simulated arc.

    margin(t, j) = bound(t, j) - ||error state||; the check passes iff the
    minimum margin is >= -tol.
    """
    if bound not in ("iss", "iiss"):
        raise ValueError("bound must be 'iss' or 'iiss'")
    err = estimation_error(arc, schedule)
    state_err = err.combined
    initial_err = float(state_err[0])
    fn = iss_bound if bound == "iss" else iiss_bound
    b = fn(err.t, err.j, inputs, initial_err)
    margin = b - state_err
    min_margin = float(margin.min())
    return BoundReport(
        kind=bound, passed=min_margin >= -tol, min_margin=min_margin,
        max_violation=float(max(0.0, -min_margin)),
        t=err.t, j=err.j, bound=b, err=state_err, margin=margin,
    )


def _segment_states(arc: HybridArc):
    for seg in arc.segments:
        yield seg.j, seg.t, np.hstack([seg.theta1, seg.theta2])


def closeness(arc_a: HybridArc, arc_b: HybridArc, tau: float, eps: float) -> bool:
    """(tau, eps)-closeness of two hybrid arcs.

    For every sample (t, j) of one arc with t + j <= tau there must be a
    sample (s, j) of the other with |t - s| <= eps whose estimate components
    are within eps; and symmetrically.  Timers are excluded from the state
    distance: they agree by construction.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")

    def one_way(src: HybridArc, dst: HybridArc) -> bool:
        dst_by_j = {seg.j: (seg.t, np.hstack([seg.theta1, seg.theta2]))
                    for seg in dst.segments}
        for j, ts, states in _segment_states(src):
            mask = ts + j <= tau
            if not mask.any():
                continue
            if j not in dst_by_j:
                return False
            dt, dstates = dst_by_j[j]
            if dt.size == ts.size and np.array_equal(dt, ts):
                # common case: identical grids, compare sample-wise first
                d = np.linalg.norm(states[mask] - dstates[mask], axis=1)
                ok = d <= eps
                if ok.all():
                    continue
                pending = np.where(mask)[0][~ok]
            else:
                pending = np.where(mask)[0]
            for i in pending:
                lo = np.searchsorted(dt, ts[i] - eps, side="left")
                hi = np.searchsorted(dt, ts[i] + eps, side="right")
                if lo >= hi:
                    return False
                d = np.linalg.norm(dstates[lo:hi] - states[i], axis=1)
                if d.min() > eps:
                    return False
        return True

    return one_way(arc_a, arc_b) and one_way(arc_b, arc_a)
