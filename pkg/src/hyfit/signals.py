"""Declarative time signals: regressors, measurement noise, and parameter
trajectories, plus basis-function augmentation for time-varying parameters.

Specs are immutable and sampling is pure, so concurrent use is safe.  The
random noise kind is reproducible: values are drawn from a counter-based
generator indexed by position on the integration half-grid, so re-sampling
the same spec, seed and grid is bit-for-bit identical.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "SignalSpec",
    "BasisFunction",
    "ParamSchedule",
    "NoiseSpec",
    "constant",
    "piecewise_constant",
    "sinusoid",
    "decaying_exponential",
    "polynomial",
    "stack",
    "tabulated",
    "tabulated_from_csv",
    "sample",
    "sample_grid",
    "sup_norm_bound",
    "basis_augment",
    "regression_output",
    "regression_series",
    "noise_series",
    "parse_basis",
]

SIGNAL_KINDS = (
    "constant",
    "piecewise-constant-in-time",
    "sinusoid",
    "decaying-exponential",
    "polynomial",
    "stack",
    "tabulated",
    "augmented",
)


@dataclass(frozen=True, eq=False)
class BasisFunction:
    """A known scalar basis function of time.  Only monomials are needed:
    ``poly:k`` evaluates t**k (``const`` is shorthand for ``poly:0``)."""

    degree: int

    def __call__(self, ts: np.ndarray) -> np.ndarray:
        if self.degree == 0:
            return np.ones_like(np.asarray(ts, dtype=float))
        return np.asarray(ts, dtype=float) ** self.degree

    def label(self) -> str:
        return "const" if self.degree == 0 else f"poly:{self.degree}"


def parse_basis(text: str) -> BasisFunction:
    text = text.strip()
    if text == "const":
        return BasisFunction(0)
    if text.startswith("poly:"):
        return BasisFunction(int(text.split(":", 1)[1]))
    raise ValueError(f"unknown basis function {text!r} (use 'const' or 'poly:<k>')")


@dataclass(frozen=True, eq=False)
class SignalSpec:
    """Declarative description of a vector-valued time signal."""

    kind: str
    value: np.ndarray | None = None            # constant
    switch_times: np.ndarray | None = None     # piecewise-constant-in-time
    values: np.ndarray | None = None           # piecewise pieces, one row each
    amplitude: np.ndarray | None = None        # sinusoid / decaying-exponential
    frequency: np.ndarray | None = None        # sinusoid, rad/s
    phase: np.ndarray | None = None            # sinusoid
    rate: np.ndarray | None = None             # decaying-exponential
    coefficients: np.ndarray | None = None     # polynomial, ascending powers
    parts: tuple["SignalSpec", ...] = ()       # stack
    grid: np.ndarray | None = None             # tabulated
    table: np.ndarray | None = None            # tabulated, (m, dim)
    base: "SignalSpec | None" = None           # augmented
    basis: tuple[tuple[BasisFunction, ...], ...] = ()  # augmented, per component

    @property
    def dimension(self) -> int:
        if self.kind == "constant":
            return self.value.size
        if self.kind == "piecewise-constant-in-time":
            return self.values.shape[1]
        if self.kind in ("sinusoid", "decaying-exponential"):
            return self.amplitude.size
        if self.kind == "polynomial":
            return 1
        if self.kind == "stack":
            return sum(p.dimension for p in self.parts)
        if self.kind == "tabulated":
            return self.table.shape[1]
        if self.kind == "augmented":
            return self.base.dimension * len(self.basis[0])
        raise ValueError(f"unknown signal kind {self.kind!r}")


def constant(value: Iterable[float] | float) -> SignalSpec:
    return SignalSpec(kind="constant", value=np.atleast_1d(np.asarray(value, dtype=float)))


def piecewise_constant(switch_times: Iterable[float], values: Iterable) -> SignalSpec:
    st = np.asarray(list(switch_times), dtype=float)
    vals = np.atleast_2d(np.asarray(list(values), dtype=float))
    if vals.shape[0] == 1 and vals.shape[1] == st.size + 1:
        vals = vals.T  # scalar signal given as a flat list
    if np.any(np.diff(st) <= 0):
        raise ValueError("switch times must be strictly increasing")
    if vals.shape[0] != st.size + 1:
        raise ValueError("need one more value row than switch times")
    return SignalSpec(kind="piecewise-constant-in-time", switch_times=st, values=vals)


def sinusoid(amplitude, frequency, phase=0.0) -> SignalSpec:
    amp = np.atleast_1d(np.asarray(amplitude, dtype=float))
    freq = np.broadcast_to(np.asarray(frequency, dtype=float), amp.shape).copy()
    ph = np.broadcast_to(np.asarray(phase, dtype=float), amp.shape).copy()
    return SignalSpec(kind="sinusoid", amplitude=amp, frequency=freq, phase=ph)


def decaying_exponential(amplitude, rate) -> SignalSpec:
    amp = np.atleast_1d(np.asarray(amplitude, dtype=float))
    rt = np.broadcast_to(np.asarray(rate, dtype=float), amp.shape).copy()
    return SignalSpec(kind="decaying-exponential", amplitude=amp, rate=rt)


def polynomial(coefficients: Iterable[float]) -> SignalSpec:
    return SignalSpec(kind="polynomial", coefficients=np.asarray(list(coefficients), dtype=float))


def stack(*parts: SignalSpec) -> SignalSpec:
    if not parts:
        raise ValueError("stack needs at least one component")
    return SignalSpec(kind="stack", parts=tuple(parts))


def tabulated(grid: Iterable[float], table: Iterable) -> SignalSpec:
    g = np.asarray(list(grid), dtype=float)
    t = np.atleast_2d(np.asarray(list(table), dtype=float))
    if t.shape[0] != g.size:
        t = t.T
    if t.shape[0] != g.size:
        raise ValueError("table must have one row per grid point")
    if np.any(np.diff(g) <= 0):
        raise ValueError("tabulated grid must be strictly increasing")
    return SignalSpec(kind="tabulated", grid=g, table=t)


def tabulated_from_csv(path) -> SignalSpec:
    """Read a tabulated signal from a comma-separated file.

    First column is time, remaining columns are the signal components.
    A header row is required and skipped.
    """
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if len(rows) < 3:
        raise ValueError(f"{path}: need a header row and at least two samples")
    data = np.asarray([[float(c) for c in row] for row in rows[1:]], dtype=float)
    return tabulated(data[:, 0], data[:, 1:])


def basis_augment(
    phi: SignalSpec, basis: Sequence[Sequence[BasisFunction]] | Sequence[BasisFunction]
) -> SignalSpec:
    """Augment an n-dimensional regressor with M basis functions per component.

    The result has dimension n*M, ordered so that entries i*M .. i*M+M-1 are
    basis_k(t) * phi_i(t); coefficient vectors for the augmented regression
    are the concatenation of the per-component coefficient blocks in the
    same order.
    """
    n = phi.dimension
    if basis and isinstance(basis[0], BasisFunction):
        basis = [tuple(basis)] * n
    basis = tuple(tuple(b) for b in basis)
    if len(basis) != n:
        raise ValueError(f"need one basis list per regressor component ({n}), got {len(basis)}")
    m = len(basis[0])
    if m == 0 or any(len(b) != m for b in basis):
        raise ValueError("every component must have the same, nonzero number of basis functions")
    return SignalSpec(kind="augmented", base=phi, basis=basis)


def sample_grid(spec: SignalSpec, ts: np.ndarray) -> np.ndarray:
    """Sample a signal on an array of times; returns shape (len(ts), dim)."""
    ts = np.asarray(ts, dtype=float)
    k = spec.kind
    if k == "constant":
        return np.tile(spec.value, (ts.size, 1))
    if k == "piecewise-constant-in-time":
        idx = np.searchsorted(spec.switch_times, ts, side="right")
        return spec.values[idx]
    if k == "sinusoid":
        return spec.amplitude * np.sin(np.outer(ts, spec.frequency) + spec.phase)
    if k == "decaying-exponential":
        return spec.amplitude * np.exp(-np.outer(ts, spec.rate))
    if k == "polynomial":
        return np.polyval(spec.coefficients[::-1], ts)[:, None]
    if k == "stack":
        return np.hstack([sample_grid(p, ts) for p in spec.parts])
    if k == "tabulated":
        lo, hi = spec.grid[0], spec.grid[-1]
        if np.any(ts < lo - 1e-12) or np.any(ts > hi + 1e-12):
            raise ValueError(
                f"time outside tabulated range [{lo}, {hi}]"
            )
        out = np.empty((ts.size, spec.table.shape[1]))
        for j in range(spec.table.shape[1]):
            out[:, j] = np.interp(ts, spec.grid, spec.table[:, j])
        return out
    if k == "augmented":
        base = sample_grid(spec.base, ts)
        m = len(spec.basis[0])
        out = np.empty((ts.size, base.shape[1] * m))
        for i, funcs in enumerate(spec.basis):
            for j, f in enumerate(funcs):
                out[:, i * m + j] = f(ts) * base[:, i]
        return out
    raise ValueError(f"unknown signal kind {k!r}")


def sample(spec: SignalSpec, t: float) -> np.ndarray:
    """Sample a signal at one time.  Piecewise kinds take the left-closed
    piece containing t."""
    if t < 0:
        raise ValueError("signals are defined for t >= 0")
    return sample_grid(spec, np.array([t]))[0]


def sup_norm_bound(spec: SignalSpec, t0: float, t1: float, grid_step: float) -> float:
    """Upper bound on the Euclidean norm of the signal over [t0, t1].

    Dense grid sampling inflated by 1% as a safety margin for what may hide
    between grid points; over-estimation only makes downstream design checks
    more conservative.
    """
    if not t1 > t0:
        raise ValueError("t1 must exceed t0")
    n_steps = int(np.floor((t1 - t0) / grid_step + 1e-9))
    ts = t0 + grid_step * np.arange(n_steps + 1)
    if ts[-1] < t1 - 1e-12:
        ts = np.append(ts, t1)
    vals = sample_grid(spec, ts)
    return float(np.sqrt((vals * vals).sum(axis=1)).max() * 1.01)


@dataclass(frozen=True, eq=False)
class ParamSchedule:
    """The true parameter trajectory: piecewise constant pieces, or a basis
    expansion with constant coefficients."""

    starts: np.ndarray | None = None       # piece start times, starts[0] == 0
    piece_values: np.ndarray | None = None  # (k, n)
    coeffs: np.ndarray | None = None        # basis form, length n*M
    basis: tuple[tuple[BasisFunction, ...], ...] = ()

    @classmethod
    def const(cls, theta) -> "ParamSchedule":
        th = np.atleast_1d(np.asarray(theta, dtype=float))
        return cls(starts=np.array([0.0]), piece_values=th[None, :])

    @classmethod
    def piecewise(cls, pieces: Sequence[tuple[float, Iterable[float]]]) -> "ParamSchedule":
        starts = np.asarray([p[0] for p in pieces], dtype=float)
        vals = np.asarray([np.atleast_1d(np.asarray(p[1], dtype=float)) for p in pieces])
        if starts[0] != 0.0:
            raise ValueError("first piece must start at t=0")
        if np.any(np.diff(starts) <= 0):
            raise ValueError("piece start times must be strictly increasing")
        return cls(starts=starts, piece_values=vals)

    @classmethod
    def from_basis(
        cls, coeffs, basis: Sequence[Sequence[BasisFunction]]
    ) -> "ParamSchedule":
        c = np.asarray(coeffs, dtype=float).ravel()
        basis = tuple(tuple(b) for b in basis)
        m = len(basis[0])
        if any(len(b) != m for b in basis) or c.size != len(basis) * m:
            raise ValueError("coefficient vector must hold n*M entries, M per component")
        return cls(coeffs=c, basis=basis)

    @property
    def is_basis(self) -> bool:
        return self.coeffs is not None

    @property
    def dimension(self) -> int:
        if self.is_basis:
            return len(self.basis)
        return self.piece_values.shape[1]

    def values_grid(self, ts: np.ndarray) -> np.ndarray:
        ts = np.asarray(ts, dtype=float)
        if self.is_basis:
            m = len(self.basis[0])
            out = np.zeros((ts.size, len(self.basis)))
            for i, funcs in enumerate(self.basis):
                for j, f in enumerate(funcs):
                    out[:, i] += self.coeffs[i * m + j] * f(ts)
            return out
        idx = np.searchsorted(self.starts, ts, side="right") - 1
        return self.piece_values[np.clip(idx, 0, None)]

    def value(self, t: float) -> np.ndarray:
        return self.values_grid(np.array([t]))[0]

    def min_dwell(self) -> float:
        if self.is_basis or self.starts.size < 2:
            return np.inf
        return float(np.diff(self.starts).min())


@dataclass(frozen=True, eq=False)
class NoiseSpec:
    """Additive scalar measurement noise."""

    kind: str = "zero"            # zero | sinusoid | uniform-random | tabulated
    amplitude: float = 0.0
    frequency: float = 0.0        # rad/s
    phase: float = 0.0
    seed: int = 0
    grid: np.ndarray | None = None
    table: np.ndarray | None = None

    @classmethod
    def zero(cls) -> "NoiseSpec":
        return cls(kind="zero")

    @classmethod
    def sin(cls, amplitude: float, frequency: float, phase: float = 0.0) -> "NoiseSpec":
        return cls(kind="sinusoid", amplitude=float(amplitude),
                   frequency=float(frequency), phase=float(phase))

    @classmethod
    def uniform(cls, amplitude: float, seed: int) -> "NoiseSpec":
        if amplitude < 0:
            raise ValueError("amplitude must be nonnegative")
        return cls(kind="uniform-random", amplitude=float(amplitude), seed=int(seed))


def noise_series(spec: NoiseSpec, ts: np.ndarray, step: float | None = None) -> np.ndarray:
    """Noise values at the given times.

    The uniform-random kind indexes a counter-based generator by the sample's
    position on the integration half-grid (spacing step/2), which makes the
    realisation independent of how many times or in what ranges it is sampled.
    """
    ts = np.asarray(ts, dtype=float)
    if spec.kind == "zero" or (spec.kind != "tabulated" and spec.amplitude == 0.0):
        return np.zeros(ts.size)
    if spec.kind == "sinusoid":
        return spec.amplitude * np.sin(spec.frequency * ts + spec.phase)
    if spec.kind == "tabulated":
        return np.interp(ts, spec.grid, spec.table)
    if spec.kind == "uniform-random":
        if step is None:
            raise ValueError("uniform-random noise needs the integration step for indexing")
        idx = np.rint(ts / (0.5 * step)).astype(np.int64)
        if np.any(idx < 0):
            raise ValueError("noise sampled before t=0")
        gen = np.random.Generator(np.random.Philox(key=spec.seed))
        draws = gen.uniform(-spec.amplitude, spec.amplitude, size=int(idx.max()) + 1)
        return draws[idx]
    raise ValueError(f"unknown noise kind {spec.kind!r}")


def regression_series(
    schedule: ParamSchedule,
    phi: SignalSpec,
    noise: NoiseSpec,
    ts: np.ndarray,
    step: float | None = None,
) -> np.ndarray:
    """Measured output y(t) = theta*(t)^T phi(t) + w(t) on an array of times."""
    ts = np.asarray(ts, dtype=float)
    vals = sample_grid(phi, ts)
    th = schedule.values_grid(ts)
    if th.shape[1] != vals.shape[1]:
        raise ValueError(
            f"parameter dimension {th.shape[1]} does not match regressor dimension {vals.shape[1]}"
        )
    return (th * vals).sum(axis=1) + noise_series(noise, ts, step)


def regression_output(
    schedule: ParamSchedule,
    phi: SignalSpec,
    noise: NoiseSpec,
    t: float,
    step: float | None = None,
) -> float:
    return float(regression_series(schedule, phi, noise, np.array([t]), step)[0])
