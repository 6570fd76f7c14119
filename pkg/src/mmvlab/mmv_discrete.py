"""Monotone mean-variance utility of finite-support random variables.

Two independent evaluation routes are provided and must agree:

* :func:`mmv_waterfill` solves the quadratic minimization over distorted
  densities directly (KKT water-filling on the probability simplex);
* :func:`mmv_truncation` computes the largest truncation level keeping the
  variable inside the monotonicity domain of the plain mean-variance
  utility, then evaluates that utility on the truncated variable.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np


@dataclass(frozen=True)
class DiscreteRv:
    """Finite-support law: ascending distinct values with positive weights."""

    values: tuple[float, ...]
    probs: tuple[float, ...]

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        p = np.asarray(self.probs, dtype=float)
        if v.shape != p.shape or v.ndim != 1 or len(v) == 0:
            raise ValueError("values and probs must be equal-length 1-d sequences")
        if not np.all(np.isfinite(v)):
            raise ValueError("values must be finite")
        if np.any(p <= 0.0):
            raise ValueError("probabilities must be strictly positive")
        if abs(p.sum() - 1.0) > 1e-12:
            raise ValueError(f"probabilities must sum to 1 within 1e-12, got {p.sum()!r}")
        if np.any(np.diff(v) <= 0):
            raise ValueError("values must be strictly ascending (merge duplicates first)")

    @classmethod
    def from_atoms(cls, values, probs) -> "DiscreteRv":
        """Sort ascending and merge duplicate values, then normalize exactly."""
        v = np.asarray(values, dtype=float)
        p = np.asarray(probs, dtype=float)
        if abs(p.sum() - 1.0) > 1e-12:
            raise ValueError("probabilities must sum to 1 within 1e-12")
        uniq, inverse = np.unique(v, return_inverse=True)
        merged = np.zeros(len(uniq))
        np.add.at(merged, inverse, p)
        keep = merged > 0.0
        merged = merged[keep] / merged[keep].sum()
        return cls(tuple(uniq[keep]), tuple(merged))

    @classmethod
    def uniform(cls, a: float, b: float, n: int) -> "DiscreteRv":
        """Midpoint discretization of the uniform law on (a, b) with n atoms."""
        if not (b > a and n >= 1):
            raise ValueError("need b > a and n >= 1")
        mids = a + (b - a) * (np.arange(n) + 0.5) / n
        return cls(tuple(mids), tuple(np.full(n, 1.0 / n)))

    @classmethod
    def constant(cls, c: float) -> "DiscreteRv":
        return cls((float(c),), (1.0,))

    @classmethod
    def from_csv(cls, path: str | Path) -> "DiscreteRv":
        """Two-column CSV value,prob with optional header."""
        vals, probs = [], []
        with open(path, newline="") as fh:
            for row in csv.reader(fh):
                if not row:
                    continue
                try:
                    v = float(row[0])
                except ValueError:
                    continue  # header
                vals.append(v)
                probs.append(float(row[1]))
        return cls.from_atoms(vals, probs)

    def shift(self, c: float) -> "DiscreteRv":
        return DiscreteRv(tuple(v + c for v in self.values), self.probs)

    def mean(self) -> float:
        return float(np.dot(self.values, self.probs))

    def var(self) -> float:
        v = np.asarray(self.values)
        m = self.mean()
        return float(np.dot((v - m) ** 2, self.probs))


@dataclass(frozen=True)
class MmvResult:
    value: float
    density: tuple[float, ...]       # optimal distortion per atom
    kappa: float | None = None       # truncation level, +inf when inactive


def mv_utility(x: DiscreteRv, theta: float) -> float:
    """Plain mean-variance utility: mean minus theta/2 times variance."""
    if theta < 0.0:
        raise ValueError("theta must be nonnegative")
    return x.mean() - 0.5 * theta * x.var()


def _waterfill_level(values: np.ndarray, probs: np.ndarray, theta: float) -> float:
    """Root c of sum_i p_i max(c - theta x_i, 0) = 1 by sorted prefix scan."""
    cp = np.cumsum(probs)
    cpx = np.cumsum(probs * values)
    cand = (1.0 + theta * cpx) / cp
    hi = np.append(theta * values[1:], np.inf)
    ok = (cand > theta * values) & (cand <= hi)
    idx = np.flatnonzero(ok)
    if len(idx) > 0:
        return float(cand[idx[0]])
    # numeric edge fallback: safeguarded bisection on the monotone normalizer
    lo, hi_b = theta * values[0], theta * values[-1] + 1.0 / probs[0] + 1.0
    for _ in range(200):
        mid = 0.5 * (lo + hi_b)
        s = float(np.dot(probs, np.maximum(mid - theta * values, 0.0)))
        if s < 1.0:
            lo = mid
        else:
            hi_b = mid
        if hi_b - lo <= 1e-12 * max(1.0, abs(hi_b)):
            break
    return 0.5 * (lo + hi_b)


def mmv_waterfill(x: DiscreteRv, theta: float) -> MmvResult:
    """Monotone mean-variance utility via the direct density minimization.

    Minimizes E[y X] + (E[y^2] - 1) / (2 theta) over densities y >= 0 with
    E[y] = 1.  The optimum has the water-filling form y_i = (c - theta x_i)+
    with c fixed by normalization.
    """
    if theta <= 0.0:
        raise ValueError("theta must be positive")
    v = np.asarray(x.values)
    p = np.asarray(x.probs)
    c = _waterfill_level(v, p, theta)
    dens = np.maximum(c - theta * v, 0.0)
    value = float(np.dot(p, dens * v) + (np.dot(p, dens**2) - 1.0) / (2.0 * theta))
    return MmvResult(value=value, density=tuple(dens), kappa=None)


def mmv_truncation(x: DiscreteRv, theta: float) -> MmvResult:
    """Monotone mean-variance utility via the truncation identity.

    Finds the largest level kappa with kappa <= E[X ^ kappa] + 1/theta (the
    monotonicity domain of the plain utility) and returns the plain
    mean-variance utility of X ^ kappa.  kappa is +inf when the variable is
    already dominated by its mean plus 1/theta.
    """
    if theta <= 0.0:
        raise ValueError("theta must be positive")
    v = np.asarray(x.values)
    p = np.asarray(x.probs)
    mean = float(np.dot(v, p))
    if v[-1] <= mean + 1.0 / theta:
        dens = 1.0 + theta * (mean - v)
        return MmvResult(value=mv_utility(x, theta), density=tuple(dens), kappa=np.inf)
    # E[X ^ t] is piecewise linear with breakpoints at the atoms; solve
    # t = E[X ^ t] + 1/theta on the segment [x_k, x_{k+1}).
    cp = np.cumsum(p)
    cpx = np.cumsum(p * v)
    cand = (cpx + 1.0 / theta) / cp
    hi = np.append(v[1:], np.inf)
    ok = (cand >= v) & (cand < hi)
    idx = np.flatnonzero(ok)
    kappa = float(cand[idx[0]])
    clipped = np.minimum(v, kappa)
    m = float(np.dot(clipped, p))
    var = float(np.dot((clipped - m) ** 2, p))
    dens = theta * np.maximum(kappa - v, 0.0)
    return MmvResult(value=m - 0.5 * theta * var, density=tuple(dens), kappa=kappa)
