"""Seeded Monte Carlo for the controlled wealth/distortion pair.

The wealth is simulated as X(t) = D(t) + S(t), where D is the deterministic
zero-strategy path (evaluated in closed form at every node) and S collects
every control-driven term.  S advances by the Euler rule between event
nodes; the distortion level Y advances by its exact stochastic exponential
and stays nonnegative by construction.  Claim arrivals are drawn exactly
(exponential inter-arrivals) and inserted into the time grid as their own
nodes, with controls re-evaluated at every node and held over the step.

Randomness protocol (per path, in this order): jump inter-arrival times
until the horizon is passed, jump sizes, then one standard normal per grid
sub-interval in chronological order.  Each path owns the generator seeded
with (master seed, path index), so estimates are bit-identical across batch
sizes and thread counts.
"""

from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .closed_form import riskless_wealth
from .model import ModelConfig, claim_moments, rho_schedule


@dataclass(frozen=True)
class FeedbackStrategy:
    """Feedback policies of both players.

    ``insurer(t, x, y) -> (pi, u)`` and ``market_p(t, x, y) -> p`` must accept
    numpy arrays and broadcast; ``market_q(t, z, x, y)`` is evaluated at
    sampled jump sizes.  ``market_q_slope`` gives c with q(z) = c z; it sizes
    the second Brownian channel of the diffusion engine and provides the jump
    compensator integral of q (slope times the claim first-moment rate).  A
    strategy whose q is not affine in z must supply ``market_q_mean``, the
    integral of q(z) against the claim intensity measure, instead.

    ``insurer_pi_dw(t, x, y, pi, u, p) -> d pi / d W`` is the derivative of
    the applied stock position along the driving noise (through the states it
    reads).  When present, the wealth step adds the matching second-order
    noise correction, lifting the strong order from 0.5 to 1.0; without it
    the step is plain Euler.
    """

    insurer: Callable
    market_p: Callable
    market_q: Callable
    market_q_slope: Callable | None
    tag: str
    market_q_mean: Callable | None = None
    insurer_pi_dw: Callable | None = None


@dataclass(frozen=True)
class McEstimate:
    mean: float
    std_error: float
    n_paths: int
    seed: int


@dataclass
class PathRecord:
    """One simulated trajectory on its event-augmented grid."""

    times: np.ndarray          # nodes, strictly increasing, times[0] = 0
    x: np.ndarray              # wealth at nodes
    y: np.ndarray              # distortion level at nodes
    w: np.ndarray              # Brownian path at nodes
    pi_steps: np.ndarray       # control over (times[k], times[k+1]], length n_nodes - 1
    u_steps: np.ndarray
    p_steps: np.ndarray
    jump_flags: np.ndarray     # True at nodes where a claim lands
    jumps: list                # (time, size) pairs
    jump_events: list          # (time, size, u_before, u_after) diagnostics
    clamp_count: int
    tag: str
    x_start: float
    y_start: float


class InadmissibleStrategyError(ValueError):
    """A sampled control left the admissible set (u < 0 beyond clamping, or 1 + q < 0)."""


# ---------------------------------------------------------------------------
# Strategies
# ---------------------------------------------------------------------------

def equilibrium_strategy(cfg: ModelConfig) -> FeedbackStrategy:
    """Saddle-point feedback pair for ``cfg``; insurer controls scale with y."""
    if not cfg.theta > 0.0:
        raise ValueError("theta must be positive for the equilibrium strategy")
    r = cfg.market.r
    mu = cfg.market.mu
    sigma = cfg.market.sigma
    rho_s = rho_schedule(cfg)
    T = cfg.horizon
    theta = cfg.theta
    mu0, s0sq = claim_moments(cfg.claims)
    u_scale = mu0 * cfg.insurance.kappa_r / s0sq if s0sq > 0.0 else 0.0
    rho_T = rho_s.integral_to(T)
    r_T = r.integral_to(T)
    no_invest = cfg.market.is_no_investment

    def growth_gap(t):
        return np.exp((rho_T - rho_s.integral_to(t)) - (r_T - r.integral_to(t)))

    def insurer(t, x, y):
        gap = growth_gap(t) * y / theta
        if no_invest:
            pi = np.zeros_like(gap)
        else:
            pi = (mu.value(t) - r.value(t)) / sigma.value(t) ** 2 * gap
        return pi, u_scale * gap

    def market_p(t, x, y):
        if no_invest:
            return 0.0
        return -(mu.value(t) - r.value(t)) / sigma.value(t)

    def market_q(t, z, x, y):
        return u_scale * z

    def market_q_slope(t, x, y):
        return u_scale

    def insurer_pi_dw(t, x, y, pi, u, p):
        # pi is proportional to y, whose noise loading is y p
        return pi * p

    return FeedbackStrategy(insurer, market_p, market_q, market_q_slope, tag="equilibrium",
                            insurer_pi_dw=insurer_pi_dw)


def zero_strategy() -> FeedbackStrategy:
    """No investment, no retention, undistorted market."""

    def insurer(t, x, y):
        zero = np.zeros_like(np.asarray(y, dtype=float))
        return zero, zero.copy()

    return FeedbackStrategy(
        insurer=insurer,
        market_p=lambda t, x, y: 0.0,
        market_q=lambda t, z, x, y: np.zeros_like(np.asarray(z, dtype=float)),
        market_q_slope=lambda t, x, y: 0.0,
        tag="zero",
    )


def benchmark_strategy(cfg: ModelConfig) -> FeedbackStrategy:
    """Optimal controls in benchmark-gap form, as a feedback on current wealth.

    Equal in law to the equilibrium feedback in continuous time; in discrete
    time the gap can dip below zero, exercising the retention clamp.
    """
    if not cfg.theta > 0.0:
        raise ValueError("theta must be positive")
    eq = equilibrium_strategy(cfg)
    r = cfg.market.r
    mu = cfg.market.mu
    sigma = cfg.market.sigma
    rho_s = rho_schedule(cfg)
    T = cfg.horizon
    mu0, s0sq = claim_moments(cfg.claims)
    u_scale = mu0 * cfg.insurance.kappa_r / s0sq if s0sq > 0.0 else 0.0
    anticipated = np.exp(rho_s.integral(0.0, T)) / cfg.theta
    no_invest = cfg.market.is_no_investment

    def insurer(t, x, y):
        bench = riskless_wealth(cfg, t) + anticipated * np.exp(-(r.integral_to(T) - r.integral_to(t)))
        gap = bench - x
        if no_invest:
            pi = np.zeros_like(np.asarray(gap, dtype=float))
        else:
            pi = (mu.value(t) - r.value(t)) / sigma.value(t) ** 2 * gap
        return pi, u_scale * gap

    def insurer_pi_dw(t, x, y, pi, u, p):
        # the gap reads the wealth, whose noise loading is sigma pi
        if no_invest:
            return np.zeros_like(np.asarray(pi, dtype=float))
        scale = (mu.value(t) - r.value(t)) / sigma.value(t) ** 2
        return -scale * sigma.value(t) * pi

    return FeedbackStrategy(insurer, eq.market_p, eq.market_q, eq.market_q_slope, tag="benchmark",
                            insurer_pi_dw=insurer_pi_dw)


def scale_insurer(base: FeedbackStrategy, pi_factor: float = 1.0, u_factor: float = 1.0) -> FeedbackStrategy:
    if u_factor < 0.0:
        raise InadmissibleStrategyError("retention scale must be nonnegative")

    def insurer(t, x, y):
        pi, u = base.insurer(t, x, y)
        return pi * pi_factor, u * u_factor

    tag = f"custom:pi*{pi_factor:g},u*{u_factor:g}"
    # the noise-derivative closures are written in terms of the applied
    # controls, so they carry over to scaled and shifted variants unchanged
    return FeedbackStrategy(insurer, base.market_p, base.market_q, base.market_q_slope, tag,
                            market_q_mean=base.market_q_mean, insurer_pi_dw=base.insurer_pi_dw)


def shift_market_p(base: FeedbackStrategy, dp: float) -> FeedbackStrategy:
    def market_p(t, x, y):
        return base.market_p(t, x, y) + dp

    return FeedbackStrategy(base.insurer, market_p, base.market_q, base.market_q_slope,
                            tag=f"custom:p{dp:+g}",
                            market_q_mean=base.market_q_mean, insurer_pi_dw=base.insurer_pi_dw)


def scale_market_q(base: FeedbackStrategy, factor: float) -> FeedbackStrategy:
    if factor < 0.0:
        raise InadmissibleStrategyError("negative jump-distortion scaling can break 1 + q >= 0")

    def market_q(t, z, x, y):
        return base.market_q(t, z, x, y) * factor

    slope = None
    if base.market_q_slope is not None:
        def slope(t, x, y):
            return base.market_q_slope(t, x, y) * factor

    mean = None
    if base.market_q_mean is not None:
        def mean(t, x, y):
            return base.market_q_mean(t, x, y) * factor

    return FeedbackStrategy(base.insurer, base.market_p, market_q, slope, tag=f"custom:q*{factor:g}",
                            market_q_mean=mean, insurer_pi_dw=base.insurer_pi_dw)


# ---------------------------------------------------------------------------
# Randomness preparation
# ---------------------------------------------------------------------------

@dataclass
class _Prepared:
    jt: np.ndarray       # [B, Jmax + 1] jump times, padded with +inf
    jz: np.ndarray       # [B, Jmax + 1] jump sizes, padded with 0
    njumps: np.ndarray   # [B]
    z: np.ndarray        # [B, columns] standard normals, rows padded with 0


def _draw_jump_times(rng: np.random.Generator, lam: float, horizon: float) -> list[float]:
    if lam <= 0.0:
        return []
    out = []
    t = rng.exponential(1.0 / lam)
    while t < horizon:
        out.append(t)
        t += rng.exponential(1.0 / lam)
    return out


def _path_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), int(index)])


def _prepare(cfg: ModelConfig, seed: int, indices: np.ndarray, n_steps: int, mode: str) -> _Prepared:
    B = len(indices)
    all_times: list[list[float]] = []
    all_sizes: list[np.ndarray] = []
    normals: list[np.ndarray] = []
    for i in indices:
        rng = _path_rng(seed, i)
        if mode == "jump":
            jt = _draw_jump_times(rng, cfg.claims.intensity, cfg.horizon)
            jz = cfg.claims.sample_sizes(rng, len(jt)) if jt else np.empty(0)
            all_times.append(jt)
            all_sizes.append(jz)
            normals.append(rng.standard_normal(n_steps + len(jt)))
        else:  # diffusion: no jumps, two Brownian channels
            all_times.append([])
            all_sizes.append(np.empty(0))
            normals.append(rng.standard_normal(2 * n_steps))
    njumps = np.array([len(t) for t in all_times], dtype=np.int64)
    jmax = int(njumps.max()) if B else 0
    jt_m = np.full((B, jmax + 1), np.inf)
    jz_m = np.zeros((B, jmax + 1))
    width = (n_steps + jmax) if mode == "jump" else 2 * n_steps
    z_m = np.zeros((B, width))
    for k in range(B):
        nj = njumps[k]
        if nj:
            jt_m[k, :nj] = all_times[k]
            jz_m[k, :nj] = all_sizes[k]
        z_m[k, : len(normals[k])] = normals[k]
    return _Prepared(jt=jt_m, jz=jz_m, njumps=njumps, z=z_m)


# ---------------------------------------------------------------------------
# Core stepper
# ---------------------------------------------------------------------------

@dataclass
class _StrategyState:
    strategy: FeedbackStrategy
    s: np.ndarray
    y: np.ndarray
    clamps: np.ndarray
    rec: dict = field(default_factory=dict)


def _advance_batch(
    cfg: ModelConfig,
    strategies: list[FeedbackStrategy],
    uniform: np.ndarray,
    prep: _Prepared,
    mode: str,
    y0: float = 1.0,
    record: bool = False,
):
    """Advance every path of the batch through every strategy on shared noise.

    Returns the list of per-strategy states; in record mode each state's
    ``rec`` dict carries full node histories.
    """
    B = prep.z.shape[0]
    n = len(uniform) - 1
    mu0, s0sq = claim_moments(cfg.claims)
    sigma0 = float(np.sqrt(s0sq))
    r_s, mu_s, sg_s = cfg.market.r, cfg.market.mu, cfg.market.sigma
    # claim drift fold: with explicit jump subtraction the compensator adds
    # u*mu0; the diffusion mode carries no jumps to subtract
    u_drift = mu0 * (cfg.insurance.kappa_r + 1.0) if mode == "jump" else mu0 * cfg.insurance.kappa_r

    uni_pad = np.append(uniform, np.inf)
    rows = np.arange(B)
    cur_t = np.zeros(B)
    uidx = np.ones(B, dtype=np.int64)
    jptr = np.zeros(B, dtype=np.int64)
    d_cur = np.full(B, float(cfg.x0))
    w_cum = np.zeros(B)
    n_iter = n + (int(prep.njumps.max()) if mode == "jump" and B else 0)

    states = [
        _StrategyState(
            strategy=st,
            s=np.zeros(B),
            y=np.full(B, float(y0)),
            clamps=np.zeros(B, dtype=np.int64),
        )
        for st in strategies
    ]
    if record:
        for st in states:
            st.rec = {
                "t": np.zeros((B, n_iter + 1)),
                "x": np.broadcast_to(d_cur[:, None], (B, n_iter + 1)).copy(),
                "y": np.full((B, n_iter + 1), float(y0)),
                "w": np.zeros((B, n_iter + 1)),
                "pi": np.zeros((B, n_iter)),
                "u": np.zeros((B, n_iter)),
                "p": np.zeros((B, n_iter)),
                "jz": np.zeros((B, n_iter + 1)),
                "events": [[] for _ in range(B)],
            }

    for j in range(n_iter):
        next_jump = prep.jt[rows, jptr]
        next_uni = uni_pad[uidx]
        active = uidx <= n
        is_jump = (next_jump <= next_uni) & active
        consume_uni = (next_uni <= next_jump) & active
        next_t = np.where(active, np.minimum(next_jump, next_uni), cur_t)
        h = next_t - cur_t
        dW = prep.z[:, j] * np.sqrt(h)
        if mode == "diffusion":
            dW0 = prep.z[:, n + j] * np.sqrt(h)

        t0 = cur_t
        rv = r_s.value(t0) if not r_s.is_constant else r_s.values[0]
        muv = mu_s.value(t0) if not mu_s.is_constant else mu_s.values[0]
        sgv = sg_s.value(t0) if not sg_s.is_constant else sg_s.values[0]

        jump_idx = np.flatnonzero(is_jump) if mode == "jump" else np.empty(0, dtype=np.int64)
        if len(jump_idx):
            z_sizes = prep.jz[jump_idx, jptr[jump_idx]]

        for st in states:
            x = d_cur + st.s
            y = st.y
            pi, u = st.strategy.insurer(t0, x, y)
            if j == 0 and not (np.all(np.isfinite(pi)) and np.all(np.isfinite(u))):
                raise ValueError("strategy returned non-finite controls")
            neg = u < 0.0
            if np.any(neg):
                st.clamps += (neg & active).astype(np.int64)
                u = np.maximum(u, 0.0)
            p = st.strategy.market_p(t0, x, y)

            if len(jump_idx):
                qv = st.strategy.market_q(t0[jump_idx], z_sizes, x[jump_idx], y[jump_idx])
                factor = 1.0 + np.asarray(qv, dtype=float)
                if np.any(factor < 0.0):
                    raise InadmissibleStrategyError("1 + q(z) < 0 at a sampled jump")

            g = pi * (muv - rv) + u * u_drift
            st.s = st.s + (rv * st.s + g) * h + pi * sgv * dW
            if mode == "jump" and st.strategy.insurer_pi_dw is not None:
                # second-order noise term for the within-step drift of the
                # stock position along the shared Brownian motion
                dpi = st.strategy.insurer_pi_dw(t0, x, y, pi, u, p)
                st.s = st.s + 0.5 * sgv * dpi * (dW * dW - h)
            if mode == "diffusion":
                slope = st.strategy.market_q_slope
                if slope is None:
                    raise ValueError("diffusion mode needs a market_q_slope on the strategy")
                p0 = -np.asarray(slope(t0, x, y), dtype=float) * sigma0
                st.s = st.s + u * sigma0 * dW0
                st.y = y * np.exp(p * dW + p0 * dW0 - 0.5 * (p * p + p0 * p0) * h)
            else:
                # the jump channel is compensated, so between arrivals the
                # distortion level drifts down by its q-integral rate
                if st.strategy.market_q_mean is not None:
                    qbar = st.strategy.market_q_mean(t0, x, y)
                elif st.strategy.market_q_slope is not None:
                    qbar = np.asarray(st.strategy.market_q_slope(t0, x, y), dtype=float) * mu0
                elif mu0 == 0.0:
                    qbar = 0.0
                else:
                    raise ValueError(
                        "strategy must provide market_q_slope or market_q_mean to "
                        "simulate with claims"
                    )
                st.y = y * np.exp(p * dW - (0.5 * p * p + qbar) * h)

            if len(jump_idx):
                st.s[jump_idx] -= u[jump_idx] * z_sizes
                y_cont = st.y[jump_idx]
                st.y[jump_idx] = y_cont * factor
                if record:
                    tau = next_t[jump_idx]
                    xj = d_cur[jump_idx] + st.s[jump_idx]
                    _, u_before = st.strategy.insurer(tau, xj, y_cont)
                    _, u_after = st.strategy.insurer(tau, xj, st.y[jump_idx])
                    for m, pidx in enumerate(jump_idx):
                        st.rec["events"][pidx].append(
                            (float(tau[m]), float(z_sizes[m]), float(u_before[m]), float(u_after[m]))
                        )

            if record:
                st.rec["pi"][:, j] = pi
                st.rec["u"][:, j] = u
                st.rec["p"][:, j] = np.broadcast_to(np.asarray(p, dtype=float), (B,))

        w_cum = w_cum + dW
        cur_t = next_t
        d_cur = riskless_wealth(cfg, cur_t)
        uidx = uidx + consume_uni
        jptr = jptr + is_jump

        if record:
            for st in states:
                st.rec["t"][:, j + 1] = cur_t
                st.rec["x"][:, j + 1] = d_cur + st.s
                st.rec["y"][:, j + 1] = st.y
                st.rec["w"][:, j + 1] = w_cum
                if len(jump_idx):
                    st.rec["jz"][jump_idx, j + 1] = z_sizes

    for st in states:
        st.s = d_cur + st.s  # becomes terminal X
        if not np.all(np.isfinite(st.s)) or not np.all(np.isfinite(st.y)):
            raise ValueError("simulation produced non-finite state (inadmissible strategy?)")
    return states, prep.njumps


def _uniform_grid(cfg: ModelConfig, dt: float) -> np.ndarray:
    if not (dt > 0.0 and np.isfinite(dt)):
        raise ValueError(f"dt must be positive and finite, got {dt}")
    n = max(1, int(round(cfg.horizon / dt)))
    return np.linspace(0.0, cfg.horizon, n + 1)


def _records_from_state(cfg, st: _StrategyState, prep: _Prepared, n: int) -> list[PathRecord]:
    out = []
    B = prep.z.shape[0]
    for i in range(B):
        n_nodes = n + 1 + int(prep.njumps[i])
        rec = st.rec
        jf = rec["jz"][i, :n_nodes] > 0.0
        jumps = [(float(t), float(z)) for t, z in zip(rec["t"][i, :n_nodes][jf], rec["jz"][i, :n_nodes][jf])]
        out.append(
            PathRecord(
                times=rec["t"][i, :n_nodes].copy(),
                x=rec["x"][i, :n_nodes].copy(),
                y=rec["y"][i, :n_nodes].copy(),
                w=rec["w"][i, :n_nodes].copy(),
                pi_steps=rec["pi"][i, : n_nodes - 1].copy(),
                u_steps=rec["u"][i, : n_nodes - 1].copy(),
                p_steps=rec["p"][i, : n_nodes - 1].copy(),
                jump_flags=np.concatenate(([False], jf[1:])),
                jumps=jumps,
                jump_events=list(rec["events"][i]),
                clamp_count=int(st.clamps[i]),
                tag=st.strategy.tag,
                x_start=float(cfg.x0),
                y_start=float(rec["y"][i, 0]),
            )
        )
    return out


# ---------------------------------------------------------------------------
# Public simulation API
# ---------------------------------------------------------------------------

def simulate_path(
    cfg: ModelConfig,
    strategy: FeedbackStrategy,
    seed: int,
    dt: float,
    path_index: int = 0,
    y0: float = 1.0,
) -> PathRecord:
    """Simulate one trajectory with exact claim arrivals inserted into the grid."""
    uniform = _uniform_grid(cfg, dt)
    prep = _prepare(cfg, seed, np.array([path_index]), len(uniform) - 1, "jump")
    states, _ = _advance_batch(cfg, [strategy], uniform, prep, "jump", y0=y0, record=True)
    return _records_from_state(cfg, states[0], prep, len(uniform) - 1)[0]


def simulate_diffusion_approx(
    cfg: ModelConfig,
    strategy: FeedbackStrategy,
    seed: int,
    dt: float,
    path_index: int = 0,
    y0: float = 1.0,
) -> PathRecord:
    """Simulate with the claim stream replaced by its moment-matched Brownian motion."""
    uniform = _uniform_grid(cfg, dt)
    prep = _prepare(cfg, seed, np.array([path_index]), len(uniform) - 1, "diffusion")
    states, _ = _advance_batch(cfg, [strategy], uniform, prep, "diffusion", y0=y0, record=True)
    return _records_from_state(cfg, states[0], prep, len(uniform) - 1)[0]


def terminal_batch(
    cfg: ModelConfig,
    strategies: list[FeedbackStrategy],
    n_paths: int,
    seed: int,
    dt: float,
    mode: str = "jump",
    threads: int = 1,
    batch_size: int = 4096,
):
    """Terminal (X, Y) for each strategy on shared per-path randomness.

    Returns ``(xT, yT, clamps, jump_counts)`` with xT, yT shaped
    [n_strategies, n_paths].  Results do not depend on ``threads`` or
    ``batch_size``.
    """
    if n_paths < 1:
        raise ValueError("n_paths must be >= 1")
    uniform = _uniform_grid(cfg, dt)
    n = len(uniform) - 1
    K = len(strategies)
    xT = np.empty((K, n_paths))
    yT = np.empty((K, n_paths))
    clamps = np.zeros((K, n_paths), dtype=np.int64)
    counts = np.zeros(n_paths, dtype=np.int64)

    starts = list(range(0, n_paths, batch_size))

    def run(start: int):
        idx = np.arange(start, min(start + batch_size, n_paths))
        prep = _prepare(cfg, seed, idx, n, mode)
        states, nj = _advance_batch(cfg, strategies, uniform, prep, mode)
        for k, st in enumerate(states):
            xT[k, idx] = st.s
            yT[k, idx] = st.y
            clamps[k, idx] = st.clamps
        counts[idx] = nj

    if threads <= 1 or len(starts) == 1:
        for s0 in starts:
            run(s0)
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(run, starts))
    return xT, yT, clamps, counts


def _estimate(values: np.ndarray, seed: int) -> McEstimate:
    # shift by the first sample: better conditioned, and a degenerate sample
    # yields exactly zero spread instead of summation ulps
    n = len(values)
    d = values - values[0]
    mean = float(values[0] + np.mean(d))
    se = float(np.std(d, ddof=1) / np.sqrt(n)) if n > 1 else 0.0
    return McEstimate(mean=mean, std_error=se, n_paths=n, seed=seed)


def objective_paths(xT: np.ndarray, yT: np.ndarray, theta: float) -> np.ndarray:
    """Per-path game objective X(T) Y(T) + Y(T)^2 / (2 theta)."""
    if not theta > 0.0:
        raise ValueError("theta must be positive")
    return xT * yT + yT**2 / (2.0 * theta)


def mc_game_objective(
    cfg: ModelConfig,
    strategy: FeedbackStrategy,
    n_paths: int,
    seed: int,
    dt: float,
    mode: str = "jump",
    threads: int = 1,
) -> tuple[McEstimate, McEstimate]:
    """Estimate the game objective J and the utility I = J - 1/(2 theta)."""
    if n_paths < 2:
        raise ValueError("n_paths must be >= 2")
    xT, yT, _, _ = terminal_batch(cfg, [strategy], n_paths, seed, dt, mode=mode, threads=threads)
    obj = objective_paths(xT[0], yT[0], cfg.theta)
    J = _estimate(obj, seed)
    I = McEstimate(mean=J.mean - 1.0 / (2.0 * cfg.theta), std_error=J.std_error,
                   n_paths=J.n_paths, seed=seed)
    return J, I


@dataclass(frozen=True)
class TerminalStats:
    mean_x: McEstimate
    var_x: McEstimate
    mean_y: McEstimate
    second_moment_y: McEstimate


def _stats_from_terminal(x: np.ndarray, y: np.ndarray, seed: int) -> TerminalStats:
    n = len(x)
    d = x - x[0]  # shifted for conditioning; variance is shift-invariant
    s2 = float(np.var(d, ddof=1)) if n > 1 else 0.0
    centered = d - np.mean(d)
    m4 = float(np.mean(centered**4))
    var_se = float(np.sqrt(max(m4 - (n - 3) / (n - 1) * s2 * s2, 0.0) / n)) if n > 1 else 0.0
    return TerminalStats(
        mean_x=_estimate(x, seed),
        var_x=McEstimate(mean=s2, std_error=var_se, n_paths=n, seed=seed),
        mean_y=_estimate(y, seed),
        second_moment_y=_estimate(y**2, seed),
    )


def mc_terminal_stats(
    cfg: ModelConfig,
    strategy: FeedbackStrategy,
    n_paths: int,
    seed: int,
    dt: float,
    mode: str = "jump",
    threads: int = 1,
) -> TerminalStats:
    """Sample terminal moments with standard errors (variance se by delta method)."""
    if n_paths < 2:
        raise ValueError("n_paths must be >= 2")
    xT, yT, _, _ = terminal_batch(cfg, [strategy], n_paths, seed, dt, mode=mode, threads=threads)
    return _stats_from_terminal(xT[0], yT[0], seed)


def mc_summary(
    cfg: ModelConfig,
    strategy: FeedbackStrategy,
    n_paths: int,
    seed: int,
    dt: float,
    mode: str = "jump",
    threads: int = 1,
) -> tuple[TerminalStats, McEstimate, McEstimate]:
    """Terminal moments plus (J, I) from a single batch run."""
    if n_paths < 2:
        raise ValueError("n_paths must be >= 2")
    xT, yT, _, _ = terminal_batch(cfg, [strategy], n_paths, seed, dt, mode=mode, threads=threads)
    stats = _stats_from_terminal(xT[0], yT[0], seed)
    J = _estimate(objective_paths(xT[0], yT[0], cfg.theta), seed)
    I = McEstimate(mean=J.mean - 1.0 / (2.0 * cfg.theta), std_error=J.std_error,
                   n_paths=J.n_paths, seed=seed)
    return stats, J, I


# ---------------------------------------------------------------------------
# Equilibrium state identity and its refinement study
# ---------------------------------------------------------------------------

def pathwise_identity_residual(path: PathRecord, cfg: ModelConfig) -> float:
    """Max gap over nodes between the distortion level and its affine image
    in the wealth, which the equilibrium state pair satisfies exactly in
    continuous time."""
    if path.tag != "equilibrium":
        raise ValueError("the pathwise identity holds only for equilibrium paths")
    if not cfg.theta > 0.0:
        raise ValueError("theta must be positive")
    r = cfg.market.r
    rho_s = rho_schedule(cfg)
    T = cfg.horizon
    t = path.times
    r_tail = r.integral_to(T) - r.integral_to(t)
    rho_tail = rho_s.integral_to(T) - rho_s.integral_to(t)
    rho_total = rho_s.integral_to(T) - rho_s.integral_to(0.0)
    lhs = path.y * np.exp(rho_tail - r_tail) / cfg.theta
    rhs = (
        riskless_wealth(cfg, t)
        - path.x
        + path.y_start * np.exp(rho_total - r_tail) / cfg.theta
    )
    return float(np.max(np.abs(lhs - rhs)))


def identity_residual_halving(
    cfg: ModelConfig,
    n_paths: int,
    seed: int,
    dt0: float,
    n_halvings: int,
) -> list[float]:
    """Max identity residual per refinement level on coupled noise.

    Claim times and the underlying Brownian path are drawn once at the finest
    level; coarser levels aggregate increments over their own grids, so the
    residual decay measures pure discretization error.
    """
    strategy = equilibrium_strategy(cfg)
    T = cfg.horizon
    n0 = max(1, int(round(T / dt0)))
    n_fine = n0 * 2**n_halvings
    fine = np.linspace(0.0, T, n_fine + 1)

    jts, jzs, dws, fine_times = [], [], [], []
    for i in range(n_paths):
        rng = _path_rng(seed, i)
        jt = _draw_jump_times(rng, cfg.claims.intensity, cfg.horizon)
        jz = cfg.claims.sample_sizes(rng, len(jt)) if jt else np.empty(0)
        tf = np.unique(np.concatenate([fine, np.asarray(jt)]))
        z = rng.standard_normal(n_fine + len(jt))[: len(tf) - 1]
        dw = z * np.sqrt(np.diff(tf))
        jts.append(np.asarray(jt))
        jzs.append(jz)
        dws.append(dw)
        fine_times.append(tf)

    maxima = []
    for level in range(n_halvings + 1):
        stride = 2 ** (n_halvings - level)
        uniform = fine[::stride]
        n_lvl = len(uniform) - 1
        njumps = np.array([len(t) for t in jts], dtype=np.int64)
        jmax = int(njumps.max()) if n_paths else 0
        jt_m = np.full((n_paths, jmax + 1), np.inf)
        jz_m = np.zeros((n_paths, jmax + 1))
        z_m = np.zeros((n_paths, n_lvl + jmax))
        for i in range(n_paths):
            tl = np.unique(np.concatenate([uniform, jts[i]]))
            pos = np.searchsorted(fine_times[i], tl)
            csum = np.concatenate(([0.0], np.cumsum(dws[i])))
            dwl = np.diff(csum[pos])
            hl = np.diff(tl)
            z_m[i, : len(dwl)] = dwl / np.sqrt(hl)
            if njumps[i]:
                jt_m[i, : njumps[i]] = jts[i]
                jz_m[i, : njumps[i]] = jzs[i]
        prep = _Prepared(jt=jt_m, jz=jz_m, njumps=njumps, z=z_m)
        states, _ = _advance_batch(cfg, [strategy], uniform, prep, "jump", record=True)
        records = _records_from_state(cfg, states[0], prep, n_lvl)
        maxima.append(max(pathwise_identity_residual(p, cfg) for p in records))
    return maxima


# ---------------------------------------------------------------------------
# Trajectory export
# ---------------------------------------------------------------------------

def stock_proxy(cfg: ModelConfig, record: PathRecord, s0: float = 10.0) -> np.ndarray:
    """Stock price path driven by the record's Brownian increments."""
    t = record.times
    mu_int = cfg.market.mu.integral_to(t)
    var_sched_int = np.array(
        [0.0] + list(np.cumsum(cfg.market.sigma.value(t[:-1]) ** 2 * np.diff(t)))
    )
    sig_dw = np.concatenate(([0.0], np.cumsum(cfg.market.sigma.value(t[:-1]) * np.diff(record.w))))
    return s0 * np.exp(mu_int - 0.5 * var_sched_int + sig_dw)


def write_trajectory_csv(cfg: ModelConfig, record: PathRecord, path: str | Path, s0: float = 10.0) -> None:
    proxy = stock_proxy(cfg, record, s0=s0)
    n_nodes = len(record.times)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "x", "y", "pi", "u", "stock_proxy"])
        for k in range(n_nodes):
            kk = min(k, n_nodes - 2)
            w.writerow([
                f"{record.times[k]:.17g}", f"{record.x[k]:.17g}", f"{record.y[k]:.17g}",
                f"{record.pi_steps[kk]:.17g}", f"{record.u_steps[kk]:.17g}", f"{proxy[k]:.17g}",
            ])


def write_jump_log_csv(record: PathRecord, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "z"])
        for t, z in record.jumps:
            w.writerow([f"{t:.17g}", f"{z:.17g}"])
