"""Problem data: market, insurance loadings, claim law, and validation.

A ``ModelConfig`` carries everything a formula or a simulation needs.  The
objects are immutable; constructors only coerce shapes, while assumption
checks live in :func:`validate_config` so that invalid instances can still
be built and reported on.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .schedules import CoefficientSchedule, as_schedule, merge_breakpoints, schedule_map

EXPONENTIAL = "exponential"
DISCRETE = "discrete"


@dataclass(frozen=True)
class MarketParams:
    """Riskless rate, stock drift and volatility, all per year.

    The special all-zero triple (r = mu = sigma = 0) encodes the
    no-investment market, where portfolio formulas are undefined but the
    frontier formulas still apply with a zero market risk premium.
    """

    r: CoefficientSchedule
    mu: CoefficientSchedule
    sigma: CoefficientSchedule
    sigma_floor: float = 1e-6

    def __post_init__(self):
        object.__setattr__(self, "r", as_schedule(self.r))
        object.__setattr__(self, "mu", as_schedule(self.mu))
        object.__setattr__(self, "sigma", as_schedule(self.sigma))

    @property
    def is_no_investment(self) -> bool:
        return (
            self.r.is_constant and self.r.values[0] == 0.0
            and self.mu.is_constant and self.mu.values[0] == 0.0
            and self.sigma.is_constant and self.sigma.values[0] == 0.0
        )


@dataclass(frozen=True)
class ClaimModel:
    """Compound-Poisson claim stream: arrival intensity plus a size law.

    ``intensity == 0`` encodes the no-insurance degenerate mode, in which
    both moment rates are zero and retention formulas are defined as zero.
    """

    intensity: float
    law: str = EXPONENTIAL
    rate: float | None = None
    atoms: tuple[float, ...] | None = None
    weights: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.atoms is not None:
            object.__setattr__(self, "atoms", tuple(float(a) for a in self.atoms))
        if self.weights is not None:
            object.__setattr__(self, "weights", tuple(float(w) for w in self.weights))

    @property
    def mean_size(self) -> float:
        if self.intensity == 0.0:
            return 0.0
        if self.law == EXPONENTIAL:
            return 1.0 / self.rate
        return float(np.dot(self.atoms, self.weights))

    @property
    def second_moment_size(self) -> float:
        if self.intensity == 0.0:
            return 0.0
        if self.law == EXPONENTIAL:
            return 2.0 / self.rate**2
        return float(np.dot(np.square(self.atoms), self.weights))

    @property
    def mu0(self) -> float:
        """First moment rate of the claim stream, currency/year."""
        return self.intensity * self.mean_size

    @property
    def sigma0_sq(self) -> float:
        """Second moment rate of the claim stream, currency^2/year."""
        return self.intensity * self.second_moment_size

    def sample_sizes(self, rng: np.random.Generator, n: int) -> np.ndarray:
        if self.law == EXPONENTIAL:
            return rng.exponential(1.0 / self.rate, size=n)
        return rng.choice(np.asarray(self.atoms), size=n, p=np.asarray(self.weights))


@dataclass(frozen=True)
class InsuranceParams:
    """Proportional safety loadings of the insurer and the reinsurer."""

    kappa: float
    kappa_r: float


@dataclass(frozen=True)
class ModelConfig:
    horizon: float
    x0: float
    theta: float
    market: MarketParams
    insurance: InsuranceParams
    claims: ClaimModel

    def with_theta(self, theta: float) -> "ModelConfig":
        return replace(self, theta=theta)


def claim_moments(claims: ClaimModel) -> tuple[float, float]:
    """(mu0, sigma0_sq): first and second moment rates of the claim stream."""
    return claims.mu0, claims.sigma0_sq


def rho(cfg: ModelConfig, t):
    """Risk-benefit rate: insurance risk-transfer cost plus market risk premium.

    The insurance term is mu0^2 kappa_r^2 / sigma0^2, defined as 0 when there
    are no claims; the market term is ((mu - r) / sigma)^2, defined as 0 in
    the no-investment market.
    """
    mu0, s0sq = claim_moments(cfg.claims)
    ins = (mu0**2 * cfg.insurance.kappa_r**2 / s0sq) if s0sq > 0.0 else 0.0
    if cfg.market.is_no_investment:
        inv = 0.0 if np.isscalar(t) else np.zeros(np.shape(t))
    else:
        excess = cfg.market.mu.value(t) - cfg.market.r.value(t)
        inv = (excess / cfg.market.sigma.value(t)) ** 2
    return ins + inv


def rho_schedule(cfg: ModelConfig) -> CoefficientSchedule:
    """``rho`` as an exact piecewise-constant schedule."""
    mu0, s0sq = claim_moments(cfg.claims)
    ins = (mu0**2 * cfg.insurance.kappa_r**2 / s0sq) if s0sq > 0.0 else 0.0
    if cfg.market.is_no_investment:
        return CoefficientSchedule.constant(ins)
    return schedule_map(
        lambda m, r_, s: ins + ((m - r_) / s) ** 2,
        cfg.market.mu, cfg.market.r, cfg.market.sigma,
    )


def validate_config(cfg: ModelConfig) -> list[str]:
    """Collect violated model assumptions; an empty list means the config is valid.

    Violations are data, not exceptions: every broken invariant is reported
    with a short description.
    """
    out: list[str] = []
    if not (cfg.horizon > 0.0 and np.isfinite(cfg.horizon)):
        out.append("horizon must be positive and finite")
        return out
    if not np.isfinite(cfg.x0):
        out.append("x0 must be finite")
    if cfg.theta < 0.0 or not np.isfinite(cfg.theta):
        out.append("theta must be nonnegative and finite")

    m = cfg.market
    if m.is_no_investment:
        pass  # degenerate no-investment market: portfolio controls disabled
    else:
        ts = np.unique(np.concatenate([
            merge_breakpoints(m.r, m.mu, m.sigma),
            np.linspace(0.0, cfg.horizon, 257),
        ]))
        ts = ts[(ts >= 0.0) & (ts <= cfg.horizon)]
        r_v, mu_v, s_v = m.r.value(ts), m.mu.value(ts), m.sigma.value(ts)
        if not np.all(mu_v > r_v):
            out.append("mu(t) > r(t) fails on [0, T]")
        if not (m.sigma_floor > 0.0):
            out.append("sigma_floor must be positive")
        if not np.all(s_v > m.sigma_floor):
            out.append("sigma(t) > sigma_floor fails on [0, T]")
        if not np.all(r_v > 0.0):
            out.append("r(t) > 0 fails on [0, T]")

    ins = cfg.insurance
    if not (0.0 < ins.kappa <= ins.kappa_r):
        out.append("0 < kappa <= kappa_r fails")

    c = cfg.claims
    if c.intensity < 0.0 or not np.isfinite(c.intensity):
        out.append("claim intensity must be nonnegative and finite")
    elif c.intensity == 0.0:
        pass  # no-insurance degenerate mode; moment rates are zero by definition
    else:
        if c.law == EXPONENTIAL:
            if c.rate is None or not (c.rate > 0.0 and np.isfinite(c.rate)):
                out.append("exponential claim rate must be positive and finite")
        elif c.law == DISCRETE:
            if not c.atoms or not c.weights or len(c.atoms) != len(c.weights):
                out.append("discrete claim law needs matching atoms and weights")
            else:
                w = np.asarray(c.weights)
                z = np.asarray(c.atoms)
                if np.any(w < 0.0):
                    out.append("claim weights must be nonnegative")
                if abs(w.sum() - 1.0) > 1e-12:
                    out.append("claim weights must sum to 1 within 1e-12")
                if np.any(z <= 0.0):
                    out.append("claim atoms must be strictly positive")
                if not np.all(np.isfinite(z)):
                    out.append("claim atoms must be finite")
        else:
            out.append(f"unknown claim law '{c.law}'")
        if not out:
            mu0, s0sq = claim_moments(c)
            if not (mu0 > 0.0 and s0sq > 0.0 and np.isfinite(mu0) and np.isfinite(s0sq)):
                out.append("claim moment rates must be positive and finite")
    return out


def experiment_6_2(theta: float = 2.0) -> ModelConfig:
    """Three-year insurer benchmark: exponential claims, constant market rates."""
    return ModelConfig(
        horizon=3.0,
        x0=1.0,
        theta=theta,
        market=MarketParams(r=0.08, mu=0.15, sigma=0.2),
        insurance=InsuranceParams(kappa=0.1, kappa_r=0.15),
        claims=ClaimModel(intensity=5.0, law=EXPONENTIAL, rate=10.0),
    )


# ---------------------------------------------------------------------------
# Flat key-value config files
# ---------------------------------------------------------------------------

def _format_schedule(s: CoefficientSchedule) -> str:
    if s.is_constant:
        return repr(s.values[0])
    return ",".join(f"{t!r}:{v!r}" for t, v in zip(s.breakpoints, s.values))


def _parse_schedule(text: str) -> CoefficientSchedule:
    text = text.strip()
    if ":" not in text:
        return CoefficientSchedule.constant(float(text))
    bps, vals = [], []
    for piece in text.split(","):
        t, v = piece.split(":")
        bps.append(float(t))
        vals.append(float(v))
    return CoefficientSchedule.piecewise(bps, vals)


def save_config(cfg: ModelConfig, path: str | Path) -> None:
    Path(path).write_text(config_to_text(cfg))


def config_to_text(cfg: ModelConfig) -> str:
    lines = [
        "# model configuration (flat key = value form)",
        f"horizon = {cfg.horizon!r}",
        f"x0 = {cfg.x0!r}",
        f"theta = {cfg.theta!r}",
        f"r = {_format_schedule(cfg.market.r)}",
        f"mu = {_format_schedule(cfg.market.mu)}",
        f"sigma = {_format_schedule(cfg.market.sigma)}",
        f"sigma_floor = {cfg.market.sigma_floor!r}",
        f"kappa = {cfg.insurance.kappa!r}",
        f"kappa_r = {cfg.insurance.kappa_r!r}",
        f"lambda = {cfg.claims.intensity!r}",
        f"claim_law = {cfg.claims.law}",
    ]
    if cfg.claims.law == EXPONENTIAL and cfg.claims.rate is not None:
        lines.append(f"claim_rate = {cfg.claims.rate!r}")
    if cfg.claims.law == DISCRETE:
        lines.append("claim_atoms = " + ",".join(repr(a) for a in cfg.claims.atoms))
        lines.append("claim_weights = " + ",".join(repr(w) for w in cfg.claims.weights))
    return "\n".join(lines) + "\n"


def load_config(path: str | Path) -> ModelConfig:
    """Parse a flat ``key = value`` config file; '#' starts a comment."""
    kv: dict[str, str] = {}
    for raw in Path(path).read_text().splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"malformed config line: {raw!r}")
        key, val = line.split("=", 1)
        kv[key.strip()] = val.strip()

    required = ["horizon", "x0", "theta", "r", "mu", "sigma", "kappa", "kappa_r", "lambda", "claim_law"]
    missing = [k for k in required if k not in kv]
    if missing:
        raise ValueError(f"config missing keys: {', '.join(missing)}")

    law = kv["claim_law"].lower()
    if law == EXPONENTIAL:
        claims = ClaimModel(
            intensity=float(kv["lambda"]),
            law=EXPONENTIAL,
            rate=float(kv["claim_rate"]) if "claim_rate" in kv else None,
        )
    elif law == DISCRETE:
        atoms = tuple(float(x) for x in kv["claim_atoms"].split(",")) if "claim_atoms" in kv else None
        weights = tuple(float(x) for x in kv["claim_weights"].split(",")) if "claim_weights" in kv else None
        claims = ClaimModel(intensity=float(kv["lambda"]), law=DISCRETE, atoms=atoms, weights=weights)
    else:
        raise ValueError(f"unknown claim_law {law!r}")

    market = MarketParams(
        r=_parse_schedule(kv["r"]),
        mu=_parse_schedule(kv["mu"]),
        sigma=_parse_schedule(kv["sigma"]),
        sigma_floor=float(kv.get("sigma_floor", 1e-6)),
    )
    return ModelConfig(
        horizon=float(kv["horizon"]),
        x0=float(kv["x0"]),
        theta=float(kv["theta"]),
        market=market,
        insurance=InsuranceParams(kappa=float(kv["kappa"]), kappa_r=float(kv["kappa_r"])),
        claims=claims,
    )
