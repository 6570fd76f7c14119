"""Deterministic and Monte Carlo checks of the saddle-point structure.

The candidate value function is bilinear in (x, y), so applying the state
generator to it reduces each control channel to an explicit quadratic.  The
grid scan evaluates the generator at the saddle (must vanish) and under
one-sided control perturbations (must keep the correct sign), and the
paired Monte Carlo check confirms that unilateral strategy deviations
cannot improve the respective player's objective.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from .closed_form import ode_coefficients, saddle_feedback
from .model import DISCRETE, EXPONENTIAL, ModelConfig, claim_moments, rho
from .simulation import (
    FeedbackStrategy,
    equilibrium_strategy,
    objective_paths,
    scale_insurer,
    scale_market_q,
    shift_market_p,
    terminal_batch,
)

INSURER_KINDS = {"pi_scale", "u_scale"}
MARKET_KINDS = {"p_shift", "q_scale"}


@dataclass(frozen=True)
class GeneratorInput:
    """State point and control choice at which to apply the generator."""

    t: float
    x: float
    y: float
    pi: float
    u: float
    p: float
    q_slope: float | None = None          # q(z) = q_slope * z, integrated exactly
    q: Callable[[float], float] | None = None  # general q, integrated numerically


@dataclass
class ScanRow:
    t: float
    x: float
    y: float
    control: str
    delta: float
    value: float


@dataclass
class SaddleReport:
    rows: list
    max_abs_residual_at_saddle: float
    min_over_b_deviations: float
    max_over_a_deviations: float
    deviation_sets: str

    def passed(self, tol: float = 1e-8) -> bool:
        return (
            self.max_abs_residual_at_saddle <= tol
            and self.min_over_b_deviations >= -tol
            and self.max_over_a_deviations <= tol
        )

    def worst_row(self, tol: float = 1e-8):
        offenders = [r for r in self.rows if not self._row_ok(r, tol)]
        if not offenders:
            return None
        return max(offenders, key=lambda r: abs(r.value))

    @staticmethod
    def _row_ok(row: ScanRow, tol: float) -> bool:
        if row.control == "saddle":
            return abs(row.value) <= tol
        if row.control in ("pi", "u"):
            return row.value <= tol
        return row.value >= -tol

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "x", "y", "control", "delta", "generator_value"])
            for r in self.rows:
                w.writerow([
                    f"{r.t:.17g}", f"{r.x:.17g}", f"{r.y:.17g}",
                    r.control, f"{r.delta:.17g}", f"{r.value:.17g}",
                ])


def _jump_integral_exact(lam_t, th_t, u, y, slope, sigma0_sq) -> float:
    # integrand reduces to (-Lambda u y c + Theta y^2 c^2) z^2 against the claim measure
    return (-lam_t * u * y * slope + th_t * y * y * slope * slope) * sigma0_sq


def _jump_integral_quadrature(cfg, lam_t, th_t, psi_t, t, x, y, u, q, tol) -> float:
    claims = cfg.claims

    def phi(xx, yy):
        return lam_t * xx * yy + th_t * yy**2 + psi_t * yy

    phi_x = lam_t * y
    phi_y = lam_t * x + 2.0 * th_t * y + psi_t

    def integrand(z):
        qz = q(z)
        return phi(x - u * z, y * (1.0 + qz)) - phi(x, y) + u * z * phi_x - y * qz * phi_y

    if claims.intensity == 0.0:
        return 0.0
    if claims.law == DISCRETE:
        vals = np.array([integrand(z) for z in claims.atoms])
        return claims.intensity * float(np.dot(vals, claims.weights))
    if claims.law != EXPONENTIAL:
        raise ValueError(f"unsupported claim law {claims.law!r}")
    delta = claims.rate
    prev = None
    for n_nodes in (8, 16, 32, 64, 128, 256):
        nodes, weights = np.polynomial.laguerre.laggauss(n_nodes)
        val = float(np.dot(weights, [integrand(xi / delta) for xi in nodes]))
        if prev is not None and abs(val - prev) <= tol * (1.0 + abs(val)):
            return claims.intensity * val
        prev = val
    return claims.intensity * prev


def apply_generator(cfg: ModelConfig, inp: GeneratorInput, quad_tol: float = 1e-9) -> float:
    """Generator of the state pair applied to the candidate value function.

    With an affine jump distortion (``q_slope``) the jump integral is exact
    from the claim moment rates; a general ``q`` goes through adaptive
    Gauss-Laguerre (exponential sizes) or an exact atom sum (discrete sizes).
    """
    if inp.y <= 0.0:
        raise ValueError("y must be positive")
    if inp.u < 0.0:
        raise ValueError("retention u must be nonnegative")
    t, x, y = inp.t, inp.x, inp.y
    coeffs = ode_coefficients(cfg, t)
    lam_t, th_t, psi_t = coeffs.lambda_t, coeffs.theta_t, coeffs.psi_t
    m = cfg.market
    rv = m.r.value(t)
    muv = m.mu.value(t)
    sgv = m.sigma.value(t)
    mu0, s0sq = claim_moments(cfg.claims)
    kap, kap_r = cfg.insurance.kappa, cfg.insurance.kappa_r

    # time derivatives via the coefficient equations
    phi_t = -rv * lam_t * x * y - rho(cfg, t) * th_t * y**2 - mu0 * (kap - kap_r) * lam_t * y
    drift = (rv * x + inp.pi * (muv - rv) + mu0 * kap_r * inp.u + mu0 * (kap - kap_r)) * lam_t * y
    diffusion = th_t * y**2 * inp.p**2 + y * inp.pi * sgv * inp.p * lam_t

    if inp.q_slope is not None:
        jump = _jump_integral_exact(lam_t, th_t, inp.u, y, inp.q_slope, s0sq)
    elif inp.q is not None:
        jump = _jump_integral_quadrature(cfg, lam_t, th_t, psi_t, t, x, y, inp.u, inp.q, quad_tol)
    else:
        jump = 0.0 if s0sq == 0.0 else _jump_integral_exact(lam_t, th_t, inp.u, y, 0.0, s0sq)
    return phi_t + drift + diffusion + jump


def market_response_value(cfg: ModelConfig, t: float, x: float, y: float, pi: float, u: float) -> float:
    """Generator value after minimizing the market's channels in closed form.

    Strictly concave in (pi, u); zero exactly at the optimal insurer controls
    and strictly negative elsewhere, which is what makes miscalibrated
    candidate controls detectable.
    """
    if y <= 0.0:
        raise ValueError("y must be positive")
    if u < 0.0:
        raise ValueError("retention u must be nonnegative")
    coeffs = ode_coefficients(cfg, t)
    lam_t, th_t = coeffs.lambda_t, coeffs.theta_t
    m = cfg.market
    rv, muv, sgv = m.r.value(t), m.mu.value(t), m.sigma.value(t)
    mu0, s0sq = claim_moments(cfg.claims)
    kap, kap_r = cfg.insurance.kappa, cfg.insurance.kappa_r
    phi_t = -rv * lam_t * x * y - rho(cfg, t) * th_t * y**2 - mu0 * (kap - kap_r) * lam_t * y
    drift = (rv * x + pi * (muv - rv) + mu0 * kap_r * u + mu0 * (kap - kap_r)) * lam_t * y
    best_p = -((pi * sgv * lam_t) ** 2) / (4.0 * th_t)
    best_q = -(lam_t**2) * u**2 * s0sq / (4.0 * th_t)
    return phi_t + drift + best_p + best_q


def hjbi_scan(
    cfg: ModelConfig,
    t_grid,
    x_grid,
    y_grid,
    perturbation_grid,
) -> SaddleReport:
    """Scan the saddle residual and one-sided deviations over a state grid.

    Insurer deviations are evaluated against the fixed market saddle (values
    must not exceed +tol); market deviations against the fixed insurer
    saddle (values must not fall below -tol).  Retention perturbations that
    would leave the admissible set u >= 0 are skipped.
    """
    t_grid = list(t_grid)
    x_grid = list(x_grid)
    y_grid = list(y_grid)
    deltas = list(perturbation_grid)
    if not t_grid or not x_grid or not y_grid or not deltas:
        raise ValueError("grids must be nonempty")
    if any(y <= 0.0 for y in y_grid):
        raise ValueError("y grid must be positive")
    if any(t >= cfg.horizon for t in t_grid):
        raise ValueError("t grid must stay below the horizon")

    rows: list[ScanRow] = []
    residual = 0.0
    min_b = np.inf
    max_a = -np.inf
    if 0.0 not in deltas:
        deltas = [0.0] + deltas
    for t in t_grid:
        for x in x_grid:
            for y in y_grid:
                sc = saddle_feedback(cfg, t, x, y)
                base = GeneratorInput(t, x, y, sc.pi_hat, sc.u_hat, sc.p_hat, q_slope=sc.q_slope)
                val0 = apply_generator(cfg, base)
                rows.append(ScanRow(t, x, y, "saddle", 0.0, val0))
                residual = max(residual, abs(val0))
                for d in deltas:
                    v_pi = apply_generator(cfg, GeneratorInput(
                        t, x, y, sc.pi_hat + d, sc.u_hat, sc.p_hat, q_slope=sc.q_slope))
                    rows.append(ScanRow(t, x, y, "pi", d, v_pi))
                    max_a = max(max_a, v_pi)
                    if sc.u_hat + d >= 0.0:
                        v_u = apply_generator(cfg, GeneratorInput(
                            t, x, y, sc.pi_hat, sc.u_hat + d, sc.p_hat, q_slope=sc.q_slope))
                        rows.append(ScanRow(t, x, y, "u", d, v_u))
                        max_a = max(max_a, v_u)
                    v_p = apply_generator(cfg, GeneratorInput(
                        t, x, y, sc.pi_hat, sc.u_hat, sc.p_hat + d, q_slope=sc.q_slope))
                    rows.append(ScanRow(t, x, y, "p", d, v_p))
                    min_b = min(min_b, v_p)
                    v_q = apply_generator(cfg, GeneratorInput(
                        t, x, y, sc.pi_hat, sc.u_hat, sc.p_hat, q_slope=sc.q_slope + d))
                    rows.append(ScanRow(t, x, y, "q", d, v_q))
                    min_b = min(min_b, v_q)
    desc = (
        f"additive deltas {deltas} on pi, u (u >= 0 enforced), p; "
        f"same deltas on the jump-distortion slope"
    )
    return SaddleReport(
        rows=rows,
        max_abs_residual_at_saddle=residual,
        min_over_b_deviations=float(min_b),
        max_over_a_deviations=float(max_a),
        deviation_sets=desc,
    )


# ---------------------------------------------------------------------------
# Monte Carlo saddle check
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DeviationResult:
    label: str
    side: str          # "insurer" or "market"
    delta_j: float
    std_error: float
    verdict: str       # "consistent" or "violation"


def build_deviation(base: FeedbackStrategy, kind: str, amount: float) -> FeedbackStrategy:
    if kind == "none":
        return base
    if kind == "pi_scale":
        return scale_insurer(base, pi_factor=amount)
    if kind == "u_scale":
        return scale_insurer(base, u_factor=amount)
    if kind == "p_shift":
        return shift_market_p(base, amount)
    if kind == "q_scale":
        return scale_market_q(base, amount)
    raise ValueError(f"unknown deviation kind {kind!r} (one of none/pi_scale/u_scale/p_shift/q_scale)")


def mc_saddle_check(
    cfg: ModelConfig,
    deviations: list[tuple[str, float]],
    n_paths: int,
    seed: int,
    dt: float,
    threads: int = 1,
    sigma_level: float = 3.0,
) -> list[DeviationResult]:
    """Paired common-random-number estimates of the objective change under
    unilateral deviations from the equilibrium.

    Insurer deviations must not raise the objective, market deviations must
    not lower it, each within ``sigma_level`` paired standard errors.
    """
    base = equilibrium_strategy(cfg)
    strategies = [base]
    sides = []
    for kind, amount in deviations:
        if kind not in INSURER_KINDS | MARKET_KINDS | {"none"}:
            raise ValueError(f"unknown deviation kind {kind!r}")
        strategies.append(build_deviation(base, kind, amount))
        sides.append("insurer" if kind in INSURER_KINDS else "market" if kind in MARKET_KINDS else "none")
    xT, yT, _, _ = terminal_batch(cfg, strategies, n_paths, seed, dt, threads=threads)
    obj_eq = objective_paths(xT[0], yT[0], cfg.theta)
    out = []
    for k, ((kind, amount), side) in enumerate(zip(deviations, sides), start=1):
        diff = objective_paths(xT[k], yT[k], cfg.theta) - obj_eq
        dj = float(np.mean(diff))
        se = float(np.std(diff, ddof=1) / np.sqrt(n_paths))
        if side == "insurer":
            ok = dj <= sigma_level * se
        elif side == "market":
            ok = dj >= -sigma_level * se
        else:
            ok = abs(dj) <= sigma_level * se
        out.append(DeviationResult(
            label=f"{kind}={amount:g}", side=side, delta_j=dj, std_error=se,
            verdict="consistent" if ok else "violation",
        ))
    return out


def write_saddle_mc_csv(results: list[DeviationResult], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["deviation", "side", "delta_j", "std_error", "verdict"])
        for r in results:
            w.writerow([r.label, r.side, f"{r.delta_j:.17g}", f"{r.std_error:.17g}", r.verdict])
