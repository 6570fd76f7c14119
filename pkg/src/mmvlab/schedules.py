"""Deterministic time coefficients and the quadrature they feed.

Market rates are represented as piecewise-constant functions of time so
that every time integral appearing in the closed-form expressions can be
evaluated exactly (segment sums instead of numeric quadrature).  A generic
adaptive Simpson rule is kept for plain callables.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np


class InvalidIntervalError(ValueError):
    """Raised when an integration interval has a < b violated."""


@dataclass(frozen=True)
class CoefficientSchedule:
    """Piecewise-constant, bounded function of time on [0, end).

    ``values[i]`` applies on ``[breakpoints[i], breakpoints[i+1])``; the last
    value extends to any later time.  ``breakpoints[0]`` must be 0.
    Evaluation and integration are pure and exact.
    """

    breakpoints: tuple[float, ...]
    values: tuple[float, ...]
    _bp: np.ndarray = field(init=False, repr=False, compare=False)
    _vals: np.ndarray = field(init=False, repr=False, compare=False)
    _cum: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        bp = np.asarray(self.breakpoints, dtype=float)
        vals = np.asarray(self.values, dtype=float)
        if bp.ndim != 1 or vals.ndim != 1 or len(bp) != len(vals) or len(bp) == 0:
            raise ValueError("breakpoints and values must be equal-length 1-d sequences")
        if bp[0] != 0.0:
            raise ValueError("first breakpoint must be 0")
        if np.any(np.diff(bp) <= 0):
            raise ValueError("breakpoints must be strictly increasing")
        if not np.all(np.isfinite(vals)):
            raise ValueError("schedule values must be finite")
        # cumulative integral from 0 up to each breakpoint
        cum = np.concatenate(([0.0], np.cumsum(vals[:-1] * np.diff(bp))))
        object.__setattr__(self, "_bp", bp)
        object.__setattr__(self, "_vals", vals)
        object.__setattr__(self, "_cum", cum)

    @classmethod
    def constant(cls, value: float) -> "CoefficientSchedule":
        return cls((0.0,), (float(value),))

    @classmethod
    def piecewise(cls, breakpoints: Sequence[float], values: Sequence[float]) -> "CoefficientSchedule":
        return cls(tuple(float(t) for t in breakpoints), tuple(float(v) for v in values))

    @property
    def is_constant(self) -> bool:
        return len(self.values) == 1

    def min_value(self) -> float:
        return float(self._vals.min())

    def max_value(self) -> float:
        return float(self._vals.max())

    def value(self, t):
        """Evaluate at scalar or array ``t``; times before 0 clamp to the first segment."""
        if self.is_constant:
            if np.isscalar(t):
                return float(self._vals[0])
            return np.full(np.shape(t), self._vals[0])
        idx = np.searchsorted(self._bp, t, side="right") - 1
        idx = np.clip(idx, 0, len(self._vals) - 1)
        out = self._vals[idx]
        return float(out) if np.isscalar(t) else out

    def __call__(self, t):
        return self.value(t)

    def integral_to(self, t):
        """Exact integral from 0 to ``t`` (scalar or array)."""
        if self.is_constant:
            out = self._vals[0] * np.asarray(t, dtype=float)
            return float(out) if np.isscalar(t) else out
        idx = np.clip(np.searchsorted(self._bp, t, side="right") - 1, 0, len(self._vals) - 1)
        out = self._cum[idx] + self._vals[idx] * (np.asarray(t, dtype=float) - self._bp[idx])
        return float(out) if np.isscalar(t) else out

    def integral(self, a: float, b: float) -> float:
        """Exact integral over [a, b]; raises on a > b."""
        if a > b:
            raise InvalidIntervalError(f"invalid interval: a={a} > b={b}")
        return float(self.integral_to(b) - self.integral_to(a))

    def sample_times(self, end: float, n_dense: int = 257) -> np.ndarray:
        """Breakpoints within [0, end] plus a dense uniform sample, for invariant checks."""
        ts = np.concatenate([self._bp[self._bp <= end], np.linspace(0.0, end, n_dense)])
        return np.unique(ts)


def as_schedule(x) -> CoefficientSchedule:
    """Coerce a number, (breakpoints, values) pair, or schedule into a schedule."""
    if isinstance(x, CoefficientSchedule):
        return x
    if np.isscalar(x):
        return CoefficientSchedule.constant(float(x))
    bp, vals = x
    return CoefficientSchedule.piecewise(bp, vals)


def merge_breakpoints(*schedules: CoefficientSchedule) -> np.ndarray:
    return np.unique(np.concatenate([s._bp for s in schedules]))


def schedule_map(fn: Callable[..., float], *schedules: CoefficientSchedule) -> CoefficientSchedule:
    """Apply ``fn`` segment-wise to several schedules, giving a new schedule.

    Valid because a pointwise function of piecewise-constant inputs is itself
    piecewise constant on the merged breakpoints.
    """
    bp = merge_breakpoints(*schedules)
    vals = [float(fn(*(s.value(t) for s in schedules))) for t in bp]
    return CoefficientSchedule.piecewise(bp, vals)


def _simpson(f, a, m, b, fa, fm, fb):
    return (b - a) / 6.0 * (fa + 4.0 * fm + fb)


def _adaptive(f, a, b, fa, fm, fb, whole, tol, depth):
    m = 0.5 * (a + b)
    lm, rm = 0.5 * (a + m), 0.5 * (m + b)
    flm, frm = f(lm), f(rm)
    left = _simpson(f, a, lm, m, fa, flm, fm)
    right = _simpson(f, m, rm, b, fm, frm, fb)
    if depth <= 0 or abs(left + right - whole) <= 15.0 * tol:
        return left + right + (left + right - whole) / 15.0
    return _adaptive(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1) + _adaptive(
        f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1
    )


def integrate(f, a: float, b: float, tol: float = 1e-10) -> float:
    """Integrate ``f`` over [a, b].

    Schedules integrate exactly by segment splitting; plain callables go
    through adaptive composite Simpson with absolute tolerance ``tol``.
    """
    if a > b:
        raise InvalidIntervalError(f"invalid interval: a={a} > b={b}")
    if a == b:
        return 0.0
    if isinstance(f, CoefficientSchedule):
        return f.integral(a, b)
    m = 0.5 * (a + b)
    fa, fm, fb = f(a), f(m), f(b)
    whole = _simpson(f, a, m, b, fa, fm, fb)
    return _adaptive(f, a, b, fa, fm, fb, whole, tol, depth=48)


def exp_integral(sched: CoefficientSchedule, a: float, b: float) -> float:
    """exp of the exact integral of ``sched`` over [a, b]."""
    return float(np.exp(sched.integral(a, b)))


def growth_annuity(r: CoefficientSchedule, a: float, b):
    """``int_a^b exp(int_s^b r(v) dv) ds`` exactly, vectorized in ``b``.

    Uses the factorization e^{R(b)} (G(b) - G(a)) with R(t) = int_0^t r and
    G(t) = int_0^t e^{-R(s)} ds, both closed-form per segment.
    """
    Rb = r.integral_to(b)
    return np.exp(Rb) * (_discount_cumulative(r, b) - _discount_cumulative(r, a))


def _discount_cumulative(r: CoefficientSchedule, t):
    """G(t) = int_0^t exp(-R(s)) ds for piecewise-constant ``r``."""
    bp, vals, cum = r._bp, r._vals, r._cum
    if r.is_constant:
        v = vals[0]
        tt = np.asarray(t, dtype=float)
        if v == 0.0:
            out = tt
        else:
            out = (1.0 - np.exp(-v * tt)) / v
        return float(out) if np.isscalar(t) else out
    # per-breakpoint accumulated G values
    n = len(vals)
    gseg = np.empty(n)
    for i in range(n - 1):
        length = bp[i + 1] - bp[i]
        if vals[i] == 0.0:
            gseg[i] = np.exp(-cum[i]) * length
        else:
            gseg[i] = np.exp(-cum[i]) * (1.0 - np.exp(-vals[i] * length)) / vals[i]
    gseg[n - 1] = 0.0
    gcum = np.concatenate(([0.0], np.cumsum(gseg[:-1])))
    idx = np.clip(np.searchsorted(bp, t, side="right") - 1, 0, n - 1)
    dt = np.asarray(t, dtype=float) - bp[idx]
    v = vals[idx]
    tail = np.where(v == 0.0, np.exp(-cum[idx]) * dt,
                    np.exp(-cum[idx]) * (1.0 - np.exp(-v * dt)) / np.where(v == 0.0, 1.0, v))
    out = gcum[idx] + tail
    return float(out) if np.isscalar(t) else out
