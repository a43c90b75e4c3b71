"""The hybrid finite-time estimator: two coupled gradient estimators flow
between periodic jumps; at a jump both estimates are reset to the affine
combination K1*theta1 + K2*theta2 whose gains are built from the window's
transition matrices so that, after an exciting window, the post-jump error
cancels exactly.

A run produces a hybrid arc: flow segments indexed by the jump counter j,
separated by jump records.  One run is strictly sequential; distinct runs
share nothing, and arcs are immutable once produced.
"""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.linalg.blas import dgemm as _blas_dgemm

from . import signals as sigs
from .numerics import (
    DEFAULT_COND_MAX,
    IntegrationDivergedError,
    NearSingularError,
    fill_rank1_forcing_coeffs,
    fill_rank1_step_coeffs,
    invert_guarded,
)
from .signals import NoiseSpec, ParamSchedule, SignalSpec

__all__ = [
    "ExcitationFailureError",
    "EstimatorConfig",
    "HybridState",
    "FlowSegment",
    "JumpRecord",
    "HybridArc",
    "ErrorSeries",
    "gains_constant",
    "gains_piecewise",
    "flow_window",
    "jump",
    "run",
    "estimation_error",
    "write_arc_csv",
    "write_jumps_csv",
]


class ExcitationFailureError(RuntimeError):
    """The gain inversion failed: the window was not exciting enough."""

    def __init__(self, cond_estimate: float):
        self.cond_estimate = float(cond_estimate)
        super().__init__(
            "reset gains undefined: transition-matrix difference is numerically "
            f"singular (condition estimate {cond_estimate:.3e})"
        )


def _validate_multiple(value: float, step: float, what: str) -> int:
    k = round(value / step)
    if k < 1 or abs(k * step - value) > 1e-6 * step:
        raise ValueError(
            f"{what} ({value!r}) must be a positive integer multiple of step ({step!r})"
        )
    return k


@dataclass(frozen=True)
class EstimatorConfig:
    n: int
    delta: float
    gamma1: float
    gamma2: float
    mode: str = "constant"              # constant | piecewise
    step: float = 1e-4
    cond_max: float = DEFAULT_COND_MAX
    initial_theta: np.ndarray | None = None   # default: zero vector
    initial_theta2: np.ndarray | None = None  # optional distinct second estimate
    initial_timer: float = 0.0                # in [0, delta]; shortens the first window
    record_stride: int = 1

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("n must be a positive dimension")
        if self.mode not in ("constant", "piecewise"):
            raise ValueError(f"mode must be 'constant' or 'piecewise', got {self.mode!r}")
        if self.delta <= 0 or self.step <= 0:
            raise ValueError("delta and step must be positive")
        if self.gamma1 <= 0 or self.gamma2 <= 0:
            raise ValueError("gamma1 and gamma2 must be positive")
        if self.gamma1 == self.gamma2:
            raise ValueError("gamma1 and gamma2 must differ")
        if not 0.0 <= self.initial_timer <= self.delta:
            raise ValueError("initial_timer must lie in [0, delta]")
        _validate_multiple(self.delta, self.step, "delta")
        if 0.0 < self.initial_timer < self.delta:
            _validate_multiple(self.delta - self.initial_timer, self.step,
                               "delta - initial_timer")
        if self.record_stride < 1:
            raise ValueError("record_stride must be >= 1")

    def theta0(self) -> tuple[np.ndarray, np.ndarray]:
        th1 = (np.zeros(self.n) if self.initial_theta is None
               else np.asarray(self.initial_theta, dtype=float).ravel())
        th2 = (th1 if self.initial_theta2 is None
               else np.asarray(self.initial_theta2, dtype=float).ravel())
        if th1.size != self.n or th2.size != self.n:
            raise ValueError("initial estimates must have dimension n")
        return th1.copy(), th2.copy()

    @property
    def reset_window(self) -> int:
        """Index of the window whose jump applies the cancelling gains in
        constant mode: 0 normally, 1 when the two initial estimates differ
        (the estimates coincide from the first jump onwards)."""
        if self.initial_theta2 is None:
            return 0
        th1, th2 = self.theta0()
        return 0 if np.array_equal(th1, th2) else 1


@dataclass(frozen=True, eq=False)
class HybridState:
    theta1: np.ndarray
    theta2: np.ndarray
    tau_a: float
    tau_b: float
    q: int
    Phi1: np.ndarray | None = None
    Phi2: np.ndarray | None = None


@dataclass(frozen=True, eq=False)
class FlowSegment:
    """Samples of one flow interval at fixed jump count j."""

    j: int
    t: np.ndarray        # (m,)
    theta1: np.ndarray   # (m, n)
    theta2: np.ndarray   # (m, n)


@dataclass(frozen=True, eq=False)
class JumpRecord:
    t: float
    q: int                      # jump counter before the jump
    theta1_pre: np.ndarray
    theta2_pre: np.ndarray
    theta_post: np.ndarray
    K1: np.ndarray
    K2: np.ndarray
    cond_estimate: float        # nan for identity jumps
    fallback: bool = False      # piecewise mode kept the first estimate after a singular window
    Phi1: np.ndarray | None = None
    Phi2: np.ndarray | None = None


@dataclass(eq=False)
class HybridArc:
    segments: list[FlowSegment]
    jumps: list[JumpRecord]
    delta: float
    step: float
    mode: str
    failure: str | None = None
    loop_seconds: float = 0.0   # wall time of the integration loop, excluding setup

    def samples(self):
        for seg in self.segments:
            for i in range(seg.t.size):
                yield seg.t[i], seg.j, seg.theta1[i], seg.theta2[i]

    @property
    def final_state(self) -> tuple[float, int, np.ndarray, np.ndarray]:
        seg = self.segments[-1]
        return float(seg.t[-1]), seg.j, seg.theta1[-1], seg.theta2[-1]


def gains_constant(
    Phi1: np.ndarray, Phi2: np.ndarray, q: int, cond_max: float = DEFAULT_COND_MAX
) -> tuple[np.ndarray, np.ndarray, float]:
    """Reset gains for a constant parameter.

    At the first jump (q == 0) the cancelling combination is applied; every
    later jump keeps the first estimate (K1 = I, K2 = 0).  Returns
    (K1, K2, condition estimate of the inverted difference), with a nan
    estimate when nothing is inverted.
    """
    n = Phi1.shape[0]
    if q != 0:
        return np.eye(n), np.zeros((n, n)), float("nan")
    diff = Phi1 - Phi2
    try:
        inv, cond = invert_guarded(diff, cond_max)
    except NearSingularError as exc:
        raise ExcitationFailureError(exc.cond_estimate) from exc
    K1 = -Phi2 @ inv
    K2 = np.eye(n) - K1
    return K1, K2, cond


def gains_piecewise(
    Phi1_window: np.ndarray, Phi2_window: np.ndarray, cond_max: float = DEFAULT_COND_MAX
) -> tuple[np.ndarray, np.ndarray, float]:
    """Reset gains recomputed from the just-elapsed window, applied at every
    jump so a piecewise-constant parameter is re-acquired after each change."""
    return gains_constant(Phi1_window, Phi2_window, 0, cond_max)


def jump(state: HybridState, K1: np.ndarray, K2: np.ndarray) -> HybridState:
    """Apply the jump map: both estimates reset to K1*theta1 + K2*theta2,
    the window timer restarts, the jump counter increments, and the
    transition-matrix accumulators restart from the identity."""
    post = K1 @ state.theta1 + K2 @ state.theta2
    n = post.size
    return HybridState(
        theta1=post.copy(), theta2=post.copy(),
        tau_a=0.0, tau_b=state.tau_b, q=state.q + 1,
        Phi1=np.eye(n) if state.Phi1 is not None else None,
        Phi2=np.eye(n) if state.Phi2 is not None else None,
    )


class _WindowEngine:
    """Reusable buffers for integrating one window of the coupled flow."""

    def __init__(self, n: int):
        self.n = n
        self.G3 = np.empty((3, 3))
        self.W = np.empty((3, 2))
        self.Wc = np.empty((3, 2))
        self.tmp_t = np.empty((n, 2))
        self.C1 = np.empty((3, 3))
        self.C2 = np.empty((3, 3))
        self.w1 = np.empty(3)
        self.w2 = np.empty(3)
        self.Wp = np.empty((3, n))
        self.Wpc = np.empty((3, n))

    def advance(
        self,
        Theta: np.ndarray,            # (n, 2) current estimates, updated in place
        Phi1: np.ndarray | None,      # (n, n) Fortran-order accumulators, or None
        Phi2: np.ndarray | None,
        phi_half: np.ndarray,         # (2m+1, n) regressor on the window half-grid
        y_half: np.ndarray,           # (2m+1,) measured output on the half-grid
        t0: float,
        h: float,
        g1: float,
        g2: float,
        rec: np.ndarray | None = None,
        rec_idx: np.ndarray | None = None,
    ) -> tuple[np.ndarray | None, np.ndarray | None]:
        """Run every step of one window; returns the accumulators.

        One classical 4th-order step is applied in the form
        x <- x + S @ (C @ (S^T x) + w), where S holds the three stage
        regressors (a contiguous block of the half-grid, used by view) and
        the 3x3 core C and forcing w come from the rank-one structure of the
        flow.  The accumulators get the same core with no forcing, applied
        through a rank-3 in-place update, so per-step cost stays quadratic
        in the dimension while the scheme is the classical one.
        """
        n = self.n
        G3, W, Wc, tmp_t = self.G3, self.W, self.Wc, self.tmp_t
        C1, C2, w1, w2 = self.C1, self.C2, self.w1, self.w2
        Wp, Wpc = self.Wp, self.Wpc
        m = (phi_half.shape[0] - 1) // 2
        rec_pos = 0
        if rec is not None and rec_idx[0] == 0:
            rec[0, :n] = Theta[:, 0]
            rec[0, n:] = Theta[:, 1]
            rec_pos = 1
        for k in range(m):
            ST = phi_half[2 * k:2 * k + 3]          # rows a, b, d
            np.matmul(ST, ST.T, out=G3)
            p, r, s = G3[1, 0], G3[1, 1], G3[2, 1]
            y0 = y_half[2 * k]
            y1 = y_half[2 * k + 1]
            y2 = y_half[2 * k + 2]
            fill_rank1_step_coeffs(C1, g1, h, p, r, s)
            fill_rank1_step_coeffs(C2, g2, h, p, r, s)
            fill_rank1_forcing_coeffs(w1, g1, h, p, r, s, y0, y1, y2)
            fill_rank1_forcing_coeffs(w2, g2, h, p, r, s, y0, y1, y2)
            np.matmul(ST, Theta, out=W)
            Wc[:, 0] = C1 @ W[:, 0] + w1
            Wc[:, 1] = C2 @ W[:, 1] + w2
            np.matmul(ST.T, Wc, out=tmp_t)
            Theta += tmp_t
            if Phi1 is not None:
                np.matmul(ST, Phi1, out=Wp)
                np.matmul(C1, Wp, out=Wpc)
                Phi1 = _blas_dgemm(1.0, ST.T, Wpc, 1.0, Phi1, overwrite_c=1)
                np.matmul(ST, Phi2, out=Wp)
                np.matmul(C2, Wp, out=Wpc)
                Phi2 = _blas_dgemm(1.0, ST.T, Wpc, 1.0, Phi2, overwrite_c=1)
            if not math.isfinite(float(Theta.sum())):
                raise IntegrationDivergedError(t0 + (k + 1) * h)
            if rec is not None and rec_pos < rec_idx.size and rec_idx[rec_pos] == k + 1:
                rec[rec_pos, :n] = Theta[:, 0]
                rec[rec_pos, n:] = Theta[:, 1]
                rec_pos += 1
        return Phi1, Phi2


def _record_indices(m_steps: int, stride: int) -> np.ndarray:
    idx = np.arange(0, m_steps + 1, stride)
    if idx[-1] != m_steps:
        idx = np.append(idx, m_steps)
    return idx


def flow_window(
    state: HybridState,
    phi: SignalSpec,
    y: Callable[[np.ndarray], np.ndarray],
    until: float,
    step: float,
    gamma1: float,
    gamma2: float,
    delta: float | None = None,
) -> tuple[FlowSegment, HybridState]:
    """Flow both estimators from the state's current time to ``until``.

    ``y`` maps an array of times to measured outputs.  Transition-matrix
    accumulators present on the state are co-integrated with the same scheme,
    so jump gains built from them use exactly the regressor path the
    estimates experienced.
    """
    t0 = state.tau_b
    if delta is not None:
        if not state.tau_a < delta:
            raise ValueError("state is on the jump set; jump before flowing")
        if until - t0 > delta - state.tau_a + 1e-9 * delta:
            raise ValueError("flow would overrun the jump time")
    m = _validate_multiple(until - t0, step, "flow interval")
    ts_half = t0 + 0.5 * step * np.arange(2 * m + 1)
    phi_half = sigs.sample_grid(phi, ts_half)
    y_half = np.asarray(y(ts_half), dtype=float)
    n = state.theta1.size
    Theta = np.column_stack([state.theta1, state.theta2])
    Phi1 = None if state.Phi1 is None else np.asfortranarray(state.Phi1)
    Phi2 = None if state.Phi2 is None else np.asfortranarray(state.Phi2)

    engine = _WindowEngine(n)
    rec_idx = _record_indices(m, 1)
    rec = np.empty((rec_idx.size, 2 * n))
    Phi1, Phi2 = engine.advance(Theta, Phi1, Phi2, phi_half, y_half, t0, step,
                                gamma1, gamma2, rec, rec_idx)

    seg = FlowSegment(j=state.q, t=ts_half[2 * rec_idx],
                      theta1=rec[:, :n].copy(), theta2=rec[:, n:].copy())
    new_state = HybridState(
        theta1=Theta[:, 0].copy(), theta2=Theta[:, 1].copy(),
        tau_a=state.tau_a + (until - t0), tau_b=until, q=state.q,
        Phi1=None if Phi1 is None else np.ascontiguousarray(Phi1),
        Phi2=None if Phi2 is None else np.ascontiguousarray(Phi2),
    )
    return seg, new_state


def run(
    config: EstimatorConfig,
    phi: SignalSpec,
    schedule: ParamSchedule,
    noise: NoiseSpec,
    t_end: float,
) -> HybridArc:
    """Simulate the hybrid estimator on [0, t_end].

    Flows alternate with jumps triggered exactly when the window timer
    reaches delta; the measured output is sampled on the integration
    half-grid.  On a gain failure the arc produced so far is returned with
    an error annotation (constant mode), or the jump keeps the first
    estimate and is flagged (piecewise mode).
    """
    if not t_end > 0:
        raise ValueError("t_end must be positive")
    h = config.step
    n = config.n
    if phi.dimension != n:
        raise ValueError(f"regressor dimension {phi.dimension} does not match n={n}")
    if schedule.dimension != n:
        raise ValueError(f"parameter dimension {schedule.dimension} does not match n={n}")
    total_steps = _validate_multiple(t_end, h, "t_end")
    steps_per_window = round(config.delta / h)
    first_window_steps = round((config.delta - config.initial_timer) / h)

    ts_half = 0.5 * h * np.arange(2 * total_steps + 1)
    phi_half = sigs.sample_grid(phi, ts_half)
    y_half = sigs.regression_series(schedule, phi, noise, ts_half, step=h)

    th1, th2 = config.theta0()
    Theta = np.column_stack([th1, th2])
    reset_q = config.reset_window
    piecewise = config.mode == "piecewise"

    engine = _WindowEngine(n)
    segments: list[FlowSegment] = []
    jumps: list[JumpRecord] = []
    failure: str | None = None

    q = 0
    k0 = 0
    t_loop = time.perf_counter()
    while k0 < total_steps:
        window_steps = first_window_steps if q == 0 else steps_per_window
        k1 = min(k0 + window_steps, total_steps)
        m = k1 - k0
        co_integrate = piecewise or q == reset_q
        PhiA = np.asfortranarray(np.eye(n)) if co_integrate else None
        PhiB = np.asfortranarray(np.eye(n)) if co_integrate else None

        rec_idx = _record_indices(m, config.record_stride)
        rec = np.empty((rec_idx.size, 2 * n))
        PhiA, PhiB = engine.advance(
            Theta, PhiA, PhiB,
            phi_half[2 * k0:2 * k1 + 1], y_half[2 * k0:2 * k1 + 1],
            k0 * h, h, config.gamma1, config.gamma2, rec, rec_idx,
        )
        segments.append(FlowSegment(
            j=q, t=ts_half[2 * (k0 + rec_idx)],
            theta1=rec[:, :n].copy(), theta2=rec[:, n:].copy(),
        ))

        if k1 >= total_steps:
            break  # horizon reached; the solution is truncated before any jump here

        t_jump = float(ts_half[2 * k1])
        Phi1 = np.ascontiguousarray(PhiA) if co_integrate else np.eye(n)
        Phi2 = np.ascontiguousarray(PhiB) if co_integrate else np.eye(n)
        fallback = False
        try:
            if piecewise:
                K1, K2, cond = gains_piecewise(Phi1, Phi2, config.cond_max)
            else:
                K1, K2, cond = gains_constant(Phi1, Phi2, q - reset_q, config.cond_max)
        except ExcitationFailureError as exc:
            if piecewise:
                K1, K2, cond = np.eye(n), np.zeros((n, n)), exc.cond_estimate
                fallback = True
            else:
                failure = str(exc)
                break
        pre1, pre2 = Theta[:, 0].copy(), Theta[:, 1].copy()
        post = K1 @ pre1 + K2 @ pre2
        jumps.append(JumpRecord(
            t=t_jump, q=q, theta1_pre=pre1, theta2_pre=pre2,
            theta_post=post.copy(), K1=K1, K2=K2, cond_estimate=cond,
            fallback=fallback,
            Phi1=Phi1 if co_integrate else None,
            Phi2=Phi2 if co_integrate else None,
        ))
        Theta[:, 0] = post
        Theta[:, 1] = post
        q += 1
        k0 = k1

    return HybridArc(segments=segments, jumps=jumps, delta=config.delta,
                     step=h, mode=config.mode, failure=failure,
                     loop_seconds=time.perf_counter() - t_loop)


@dataclass(frozen=True, eq=False)
class ErrorSeries:
    t: np.ndarray
    j: np.ndarray
    err1: np.ndarray
    err2: np.ndarray

    @property
    def combined(self) -> np.ndarray:
        """Distance of the state to the target set where both estimates are correct."""
        return np.sqrt(self.err1 ** 2 + self.err2 ** 2)


def estimation_error(arc: HybridArc, schedule: ParamSchedule) -> ErrorSeries:
    """Euclidean estimate errors against the scheduled truth at every sample."""
    ts, js, e1, e2 = [], [], [], []
    for seg in arc.segments:
        truth = schedule.values_grid(seg.t)
        ts.append(seg.t)
        js.append(np.full(seg.t.size, seg.j, dtype=int))
        e1.append(np.linalg.norm(seg.theta1 - truth, axis=1))
        e2.append(np.linalg.norm(seg.theta2 - truth, axis=1))
    return ErrorSeries(
        t=np.concatenate(ts), j=np.concatenate(js),
        err1=np.concatenate(e1), err2=np.concatenate(e2),
    )


def write_arc_csv(
    arc: HybridArc,
    schedule: ParamSchedule,
    path,
    bound: np.ndarray | None = None,
    margin: np.ndarray | None = None,
) -> None:
    """Arc samples as comma-separated plain text: t, j, both estimates, both
    error norms, and optionally a bound and its margin per sample."""
    err = estimation_error(arc, schedule)
    n = arc.segments[0].theta1.shape[1]
    header = (["t", "j"]
              + [f"theta1_{i + 1}" for i in range(n)]
              + [f"theta2_{i + 1}" for i in range(n)]
              + ["err1", "err2"])
    if bound is not None:
        header += ["bound", "margin"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        row_i = 0
        for seg in arc.segments:
            for i in range(seg.t.size):
                row = ([str(seg.t[i]), str(seg.j)]
                       + [str(v) for v in seg.theta1[i]]
                       + [str(v) for v in seg.theta2[i]]
                       + [str(err.err1[row_i]), str(err.err2[row_i])])
                if bound is not None:
                    row += [str(bound[row_i]), str(margin[row_i])]
                w.writerow(row)
                row_i += 1


def write_jumps_csv(arc: HybridArc, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "q", "cond_estimate", "k1_norm"])
        for rec in arc.jumps:
            w.writerow([str(rec.t), str(rec.q), str(rec.cond_estimate),
                        str(float(np.linalg.norm(rec.K1, 2)))])
