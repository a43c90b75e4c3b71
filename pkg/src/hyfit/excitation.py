"""Excitation analysis: Gram matrices, excitation levels, persistence-of-
excitation checks, the reset-gain design inequalities, the window bounds on
the transition matrix and its inverse, and the dwell-time condition for
piecewise-constant parameters.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import signals
from .signals import ParamSchedule, SignalSpec

__all__ = [
    "gram",
    "excitation_level",
    "check_pe",
    "PEResult",
    "check_design_conditions",
    "ConditionCheck",
    "transition_norm_bounds",
    "WindowBounds",
    "check_dwell",
    "ExcitationReport",
]


def _window_grid(t0: float, t1: float, step: float) -> np.ndarray:
    n_steps = int(np.floor((t1 - t0) / step + 1e-9))
    ts = t0 + step * np.arange(n_steps + 1)
    if ts[-1] < t1 - 1e-12 * max(1.0, abs(t1)):
        ts = np.append(ts, t1)
    else:
        ts[-1] = t1
    return ts


def gram(phi: SignalSpec, t0: float, t1: float, step: float) -> np.ndarray:
    """Integral of phi(s) phi(s)^T over [t0, t1] by trapezoidal quadrature.

    Symmetrised after accumulation so the result is symmetric to the last bit.
    """
    if not t1 > t0:
        raise ValueError("t1 must exceed t0")
    ts = _window_grid(t0, t1, step)
    vals = signals.sample_grid(phi, ts)
    dt = np.diff(ts)
    w = np.zeros(ts.size)
    w[:-1] += 0.5 * dt
    w[1:] += 0.5 * dt
    g = vals.T @ (w[:, None] * vals)
    return 0.5 * (g + g.T)


def excitation_level(phi: SignalSpec, t0: float, t1: float, step: float) -> float:
    """Largest eta with  integral(phi phi^T) >= eta * I:  the smallest
    eigenvalue of the Gram matrix.  Zero means not exciting."""
    lam = np.linalg.eigvalsh(gram(phi, t0, t1, step))[0]
    return float(max(0.0, lam))


@dataclass(frozen=True)
class PEResult:
    persistent: bool
    worst_eta: float
    worst_window_start: float
    mu: float

    def __iter__(self):
        return iter((self.persistent, self.worst_eta, self.worst_window_start))


def check_pe(
    phi: SignalSpec,
    mu: float,
    horizon: float,
    stride: float | None = None,
    step: float = 1e-3,
) -> PEResult:
    """Sampled persistence-of-excitation check.

    Evaluates the excitation level on windows [sigma, sigma+mu] for sigma on
    a stride grid up to horizon - mu.  This is a semi-decision: a positive
    verdict certifies the sampled windows only, since the defining property
    quantifies over every window start.
    """
    if not mu > 0:
        raise ValueError("mu must be positive")
    if horizon < mu:
        raise ValueError("horizon must be at least mu")
    if stride is None:
        stride = mu / 4.0
    sigmas = np.arange(0.0, horizon - mu + 0.5 * stride, stride)
    worst_eta, worst_sigma = math.inf, 0.0
    for sigma in sigmas:
        eta = excitation_level(phi, sigma, sigma + mu, step)
        if eta < worst_eta:
            worst_eta, worst_sigma = eta, float(sigma)
    return PEResult(persistent=worst_eta > 0.0, worst_eta=worst_eta,
                    worst_window_start=worst_sigma, mu=mu)


@dataclass(frozen=True)
class ConditionCheck:
    """Left-hand sides of the two reset-gain design inequalities plus the
    derived window constants.

    ineq1_lhs is phiM^2*gamma2*delta; ineq2_lhs is kappa1^2 * kappa2^2.  Both
    must lie strictly in (0, 1) for the sufficient conditions to hold.  The
    decay rate lam comes from the contraction bound on one window.
    """

    ineq1_lhs: float
    ineq2_lhs: float
    kappa1: float
    kappa2: float
    lam: float
    satisfied: bool


def check_design_conditions(
    eta: float, phi_m: float, gamma1: float, gamma2: float, delta: float
) -> ConditionCheck:
    if min(eta, phi_m, gamma1, gamma2, delta) <= 0:
        raise ValueError("eta, phi_m, gamma1, gamma2 and delta must all be positive")
    if gamma1 == gamma2:
        raise ValueError("gamma1 and gamma2 must differ for the reset gains to exist")
    if eta > phi_m * phi_m * delta * (1.0 + 1e-9):
        raise ValueError(
            "inconsistent inputs: the excitation level cannot exceed phi_m^2 * delta"
        )
    ineq1 = phi_m * phi_m * gamma2 * delta
    k1sq = 1.0 - 2.0 * eta * gamma1 / (1.0 + phi_m * phi_m * gamma1 * delta) ** 2
    denom = (1.0 - ineq1) ** 2
    k2sq = math.inf if denom == 0.0 else 1.0 + 2.0 * gamma2 * phi_m * phi_m * delta / denom
    ineq2 = k1sq * k2sq
    kappa1 = math.sqrt(max(0.0, k1sq))
    kappa2 = math.sqrt(k2sq) if math.isfinite(k2sq) else math.inf
    lam = math.inf if k1sq <= 0.0 else -math.log(k1sq) / (2.0 * delta)
    satisfied = 0.0 < ineq1 < 1.0 and 0.0 < ineq2 < 1.0
    return ConditionCheck(ineq1_lhs=ineq1, ineq2_lhs=ineq2, kappa1=kappa1,
                          kappa2=kappa2, lam=lam, satisfied=satisfied)


@dataclass(frozen=True)
class WindowBounds:
    """Norm bounds for the transition matrix of the contraction dynamics over
    one window, from the excitation level and the regressor bound.

    ``inv_norm_bound`` is None when its hypothesis 1 - phi_m^2*gamma*T <= 0
    fails; that is a value, not an error.
    """

    phi_norm_bound: float
    lam: float
    inv_norm_bound: float | None

    def __iter__(self):
        return iter((self.phi_norm_bound, self.lam, self.inv_norm_bound))


def transition_norm_bounds(eta: float, phi_m: float, gamma: float, window: float) -> WindowBounds:
    if min(eta, phi_m, gamma, window) <= 0:
        raise ValueError("eta, phi_m, gamma and the window length must be positive")
    u = phi_m * phi_m * gamma * window
    k1sq = 1.0 - 2.0 * eta * gamma / (1.0 + u) ** 2
    phi_bound = math.sqrt(max(0.0, k1sq))
    lam = math.inf if k1sq <= 0.0 else -math.log(k1sq) / (2.0 * window)
    inv_bound = None
    if 1.0 - u > 0.0:
        inv_bound = math.sqrt(1.0 + 2.0 * gamma * phi_m * phi_m * window / (1.0 - u) ** 2)
    return WindowBounds(phi_norm_bound=phi_bound, lam=lam, inv_norm_bound=inv_bound)


def check_dwell(delta: float, mu: float, schedule: ParamSchedule) -> bool:
    """Dwell-time condition for tracking a piecewise-constant parameter:
    0 < 2*mu <= 2*delta < (shortest time between parameter changes).

    A single-piece schedule has infinite dwell and passes trivially.
    """
    min_dwell = schedule.min_dwell()
    return 0.0 < 2.0 * mu <= 2.0 * delta < min_dwell


@dataclass(frozen=True)
class ExcitationReport:
    """Everything the pre-flight excitation check produces for one scenario."""

    t0: float
    t1: float
    eta: float
    phi_m: float
    pe_verdict: bool
    pe_mu: float
    pe_worst_eta: float
    pe_worst_window_start: float
    ineq1_lhs: float
    ineq2_lhs: float
    kappa1: float
    kappa2: float
    lam: float
    satisfied: bool
    dwell_ok: bool | None = None
    min_dwell: float | None = None

    def to_text(self) -> str:
        lines = [
            f"interval         = [{self.t0:g}, {self.t1:g}]",
            f"eta              = {self.eta:.6g}",
            f"phi_m            = {self.phi_m:.6g}",
            f"ineq1_lhs        = {self.ineq1_lhs:.6g}",
            f"ineq2_lhs        = {self.ineq2_lhs:.6g}",
            f"kappa1           = {self.kappa1:.6g}",
            f"kappa2           = {self.kappa2:.6g}",
            f"lambda           = {self.lam:.6g}",
            f"conditions_ok    = {str(self.satisfied).lower()}",
            f"pe_verdict       = {str(self.pe_verdict).lower()} (mu = {self.pe_mu:g})",
            f"pe_worst_eta     = {self.pe_worst_eta:.6g}",
            f"pe_worst_window  = {self.pe_worst_window_start:.6g}",
        ]
        if self.dwell_ok is not None:
            dw = "inf" if self.min_dwell == math.inf else f"{self.min_dwell:.6g}"
            lines.append(f"dwell_ok         = {str(self.dwell_ok).lower()} (min dwell = {dw})")
        return "\n".join(lines)

    @staticmethod
    def csv_header() -> str:
        return ("t0,t1,eta,phi_m,ineq1_lhs,ineq2_lhs,kappa1,kappa2,lambda,"
                "conditions_ok,pe_verdict,pe_mu,pe_worst_eta,pe_worst_window,dwell_ok")

    def csv_row(self) -> str:
        dw = "" if self.dwell_ok is None else str(int(self.dwell_ok))
        return ",".join([
            str(self.t0), str(self.t1), str(self.eta), str(self.phi_m),
            str(self.ineq1_lhs), str(self.ineq2_lhs), str(self.kappa1),
            str(self.kappa2), str(self.lam), str(int(self.satisfied)),
            str(int(self.pe_verdict)), str(self.pe_mu), str(self.pe_worst_eta),
            str(self.pe_worst_window_start), dw,
        ])
