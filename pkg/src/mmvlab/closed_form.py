"""Closed-form value function, optimal feedback controls, and the frontier.

Every quantity here is an explicit expression in exact schedule integrals;
there is no iteration or simulation.  All functions are pure and raise
``ValueError`` on theta <= 0 where the formulas divide by theta.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .model import ModelConfig, claim_moments, rho_schedule
from .schedules import growth_annuity


class ZeroStrategyRegimeError(ValueError):
    """Target mean at or below the riskless terminal wealth: the optimal
    strategy is to do nothing, and the frontier degenerates to a point."""

    def __init__(self, xi: float, riskless: float):
        super().__init__(
            f"target mean {xi} is not above riskless terminal wealth {riskless}; "
            "the zero strategy is optimal"
        )
        self.xi = xi
        self.riskless = riskless


def _require_positive_theta(cfg: ModelConfig) -> None:
    if not cfg.theta > 0.0:
        raise ValueError(f"theta must be positive for this formula, got {cfg.theta}")


@dataclass(frozen=True)
class OdeCoefficients:
    """Time coefficients of the bilinear value-function ansatz."""

    lambda_t: float  # compounding factor to the horizon
    theta_t: float   # quadratic coefficient, 1/currency
    psi_t: float     # linear drift-gap coefficient, currency


@dataclass(frozen=True)
class SaddleControls:
    """Feedback controls of both players at a state point."""

    pi_hat: float  # currency invested in the stock
    u_hat: float   # retention level
    p_hat: float   # diffusion distortion control
    q_slope: float  # jump distortion is q(z) = q_slope * z

    def q_hat(self, z):
        return self.q_slope * np.asarray(z, dtype=float) if not np.isscalar(z) else self.q_slope * z


@dataclass(frozen=True)
class FrontierPoint:
    theta: float
    mean: float      # expected terminal wealth
    variance: float  # variance of terminal wealth


def ode_coefficients(cfg: ModelConfig, t: float) -> OdeCoefficients:
    """Coefficients (Lambda, Theta, Psi) at time ``t``."""
    _require_positive_theta(cfg)
    r = cfg.market.r
    rho_s = rho_schedule(cfg)
    T = cfg.horizon
    lam = float(np.exp(r.integral(t, T)))
    th = float(np.exp(rho_s.integral(t, T))) / (2.0 * cfg.theta)
    mu0, _ = claim_moments(cfg.claims)
    psi = mu0 * (cfg.insurance.kappa - cfg.insurance.kappa_r) * float(growth_annuity(r, t, T))
    return OdeCoefficients(lambda_t=lam, theta_t=th, psi_t=psi)


def value_function(cfg: ModelConfig, t: float, x: float, y: float) -> float:
    """Game value Lambda(t) x y + Theta(t) y^2 + Psi(t) y."""
    c = ode_coefficients(cfg, t)
    return c.lambda_t * x * y + c.theta_t * y**2 + c.psi_t * y


def mmv_value(cfg: ModelConfig) -> float:
    """Optimal monotone mean-variance utility of terminal wealth from (0, x0)."""
    _require_positive_theta(cfg)
    return value_function(cfg, 0.0, cfg.x0, 1.0) - 1.0 / (2.0 * cfg.theta)


def _retention_scale(cfg: ModelConfig) -> float:
    mu0, s0sq = claim_moments(cfg.claims)
    return mu0 * cfg.insurance.kappa_r / s0sq if s0sq > 0.0 else 0.0


def _portfolio_scale(cfg: ModelConfig, t: float) -> float:
    if cfg.market.is_no_investment:
        raise ValueError("no-investment market: the portfolio control is undefined")
    m = cfg.market
    return (m.mu.value(t) - m.r.value(t)) / m.sigma.value(t) ** 2


def saddle_feedback(cfg: ModelConfig, t: float, x: float, y: float) -> SaddleControls:
    """Equilibrium feedback controls of both players at (t, x, y).

    The insurer's controls are proportional to the distortion level y; the
    market's controls do not depend on the state.
    """
    _require_positive_theta(cfg)
    if y < 0.0:
        raise ValueError("y must be nonnegative")
    r = cfg.market.r
    rho_s = rho_schedule(cfg)
    T = cfg.horizon
    factor = float(np.exp(rho_s.integral(t, T) - r.integral(t, T))) * y / cfg.theta
    pi = _portfolio_scale(cfg, t) * factor
    u = _retention_scale(cfg) * factor
    m = cfg.market
    p = -(m.mu.value(t) - m.r.value(t)) / m.sigma.value(t)
    return SaddleControls(pi_hat=pi, u_hat=u, p_hat=p, q_slope=_retention_scale(cfg))


def riskless_wealth(cfg: ModelConfig, t) -> float:
    """Wealth at ``t`` under the zero strategy (deterministic), vectorized in t."""
    r = cfg.market.r
    mu0, _ = claim_moments(cfg.claims)
    drift = mu0 * (cfg.insurance.kappa - cfg.insurance.kappa_r)
    out = cfg.x0 * np.exp(r.integral_to(t) - r.integral_to(0.0)) + drift * growth_annuity(r, 0.0, t)
    return float(out) if np.isscalar(t) else out


def optimal_strategy_benchmark(
    cfg: ModelConfig,
    t: float,
    current_x: float,
    path_start: tuple[float, float, float],
) -> tuple[float, float]:
    """Optimal (pi*, u*) in benchmark form: scale times the gap to a benchmark.

    The benchmark is the path started at ``path_start = (s, x, y)`` grown
    risklessly plus the anticipated extra return; ``current_x`` is the wealth
    actually observed at ``t``.  The raw formula is returned without
    clamping.
    """
    _require_positive_theta(cfg)
    s, x, y = path_start
    if not (s <= t <= cfg.horizon):
        raise ValueError(f"need s <= t <= T, got s={s}, t={t}, T={cfg.horizon}")
    r = cfg.market.r
    rho_s = rho_schedule(cfg)
    T = cfg.horizon
    bracket = (
        x * float(np.exp(r.integral(s, t)))
        + claim_moments(cfg.claims)[0] * (cfg.insurance.kappa - cfg.insurance.kappa_r)
        * float(growth_annuity(r, s, t))
        - current_x
        + (y / cfg.theta) * float(np.exp(rho_s.integral(s, T) - r.integral(t, T)))
    )
    pi = _portfolio_scale(cfg, t) * bracket
    u = _retention_scale(cfg) * bracket
    return pi, u


def expected_wealth_optimal(cfg: ModelConfig, t: float) -> float:
    """Expected wealth at ``t`` under the optimal strategy, started at (0, x0)."""
    _require_positive_theta(cfg)
    r = cfg.market.r
    rho_s = rho_schedule(cfg)
    T = cfg.horizon
    extra = (
        np.exp(-r.integral(t, T))
        * (np.exp(rho_s.integral(0.0, T)) - np.exp(rho_s.integral(t, T)))
        / cfg.theta
    )
    return riskless_wealth(cfg, t) + float(extra)


def y_second_moment(cfg: ModelConfig, t: float) -> float:
    """Second moment of the optimal measure-distortion level at ``t``."""
    return float(np.exp(rho_schedule(cfg).integral(0.0, t)))


def frontier_from_theta(cfg: ModelConfig) -> FrontierPoint:
    """Terminal (mean, variance) attained by the optimal strategy at ``cfg.theta``."""
    _require_positive_theta(cfg)
    T = cfg.horizon
    mean = expected_wealth_optimal(cfg, T)
    growth = float(np.exp(rho_schedule(cfg).integral(0.0, T)))
    riskless = riskless_wealth(cfg, T)
    variance = (mean - riskless) ** 2 / (growth - 1.0) if growth > 1.0 else 0.0
    return FrontierPoint(theta=cfg.theta, mean=mean, variance=variance)


def theta_for_target_mean(cfg: ModelConfig, xi: float) -> float:
    """Risk aversion whose optimal strategy attains expected terminal wealth ``xi``.

    Raises :class:`ZeroStrategyRegimeError` when ``xi`` is not above the
    riskless terminal wealth (the frontier degenerates to the point
    (variance 0, mean riskless) there).
    """
    riskless = riskless_wealth(cfg, cfg.horizon)
    if xi <= riskless:
        raise ZeroStrategyRegimeError(xi, riskless)
    growth = float(np.exp(rho_schedule(cfg).integral(0.0, cfg.horizon)))
    return (growth - 1.0) / (xi - riskless)


def frontier_sweep(cfg: ModelConfig, thetas) -> list[FrontierPoint]:
    return [frontier_from_theta(cfg.with_theta(float(th))) for th in thetas]


def write_frontier_csv(points, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["theta", "mean", "variance"])
        for p in points:
            w.writerow([f"{p.theta:.17g}", f"{p.mean:.17g}", f"{p.variance:.17g}"])
