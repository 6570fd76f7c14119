import math

import numpy as np
import pytest

from mmvlab.closed_form import riskless_wealth, value_function
from mmvlab.model import (
    ClaimModel,
    EXPONENTIAL,
    InsuranceParams,
    MarketParams,
    ModelConfig,
    experiment_6_2,
)
from mmvlab.simulation import (
    FeedbackStrategy,
    InadmissibleStrategyError,
    benchmark_strategy,
    equilibrium_strategy,
    identity_residual_halving,
    mc_game_objective,
    mc_summary,
    mc_terminal_stats,
    pathwise_identity_residual,
    scale_insurer,
    scale_market_q,
    shift_market_p,
    simulate_diffusion_approx,
    simulate_path,
    stock_proxy,
    terminal_batch,
    write_jump_log_csv,
    write_trajectory_csv,
    zero_strategy,
)


def no_claims_config(theta=2.0):
    return ModelConfig(
        horizon=3.0, x0=1.0, theta=theta,
        market=MarketParams(r=0.08, mu=0.15, sigma=0.2),
        insurance=InsuranceParams(kappa=0.1, kappa_r=0.15),
        claims=ClaimModel(intensity=0.0, law=EXPONENTIAL, rate=10.0),
    )


# ---------------------------------------------------------------------------
# zero strategy: fully deterministic
# ---------------------------------------------------------------------------

def test_zero_strategy_path_is_riskless(cfg62):
    rec = simulate_path(cfg62, zero_strategy(), seed=7, dt=0.01)
    assert len(rec.jumps) > 0  # claims arrive, they just do not touch the wealth
    assert rec.x[-1] == riskless_wealth(cfg62, 3.0)
    np.testing.assert_array_equal(rec.y, np.ones_like(rec.y))
    assert rec.clamp_count == 0


def test_zero_strategy_objective_exact(cfg62):
    J, I = mc_game_objective(cfg62, zero_strategy(), n_paths=200, seed=3, dt=0.01)
    assert J.mean == riskless_wealth(cfg62, 3.0) + 0.25
    assert J.std_error == 0.0
    assert I.mean == J.mean - 0.25
    stats = mc_terminal_stats(cfg62, zero_strategy(), 200, 3, 0.01)
    assert stats.var_x.mean == 0.0
    assert stats.var_x.std_error == 0.0


# ---------------------------------------------------------------------------
# grid construction and records
# ---------------------------------------------------------------------------

def test_record_structure(cfg62):
    eq = equilibrium_strategy(cfg62)
    rec = simulate_path(cfg62, eq, seed=5, dt=0.01, path_index=2)
    assert rec.times[0] == 0.0 and rec.times[-1] == 3.0
    assert np.all(np.diff(rec.times) > 0.0)
    assert len(rec.x) == len(rec.times) == len(rec.y)
    assert len(rec.pi_steps) == len(rec.times) - 1
    assert np.all(rec.y >= 0.0)
    # inserted jump nodes carry the exact arrival times
    for t, z in rec.jumps:
        assert z > 0.0 and 0.0 < t < 3.0
        assert np.any(rec.times == t)
    assert len(rec.jumps) == len(rec.jump_events)


def test_no_claims_path_has_no_jumps():
    cfg = no_claims_config()
    rec = simulate_path(cfg, equilibrium_strategy(cfg), seed=11, dt=0.005)
    assert rec.jumps == []
    assert np.all(rec.y > 0.0)
    assert len(rec.times) == 601


def test_invalid_dt_raises(cfg62):
    with pytest.raises(ValueError):
        simulate_path(cfg62, zero_strategy(), seed=1, dt=-0.1)


def test_nonfinite_controls_rejected(cfg62):
    bad = FeedbackStrategy(
        insurer=lambda t, x, y: (np.full_like(y, np.nan), np.zeros_like(y)),
        market_p=lambda t, x, y: 0.0,
        market_q=lambda t, z, x, y: np.zeros_like(z),
        market_q_slope=lambda t, x, y: 0.0,
        tag="custom",
    )
    with pytest.raises(ValueError, match="non-finite"):
        simulate_path(cfg62, bad, seed=1, dt=0.01)


def test_inadmissible_jump_distortion_rejected(cfg62):
    bad = FeedbackStrategy(
        insurer=lambda t, x, y: (np.zeros_like(y), np.zeros_like(y)),
        market_p=lambda t, x, y: 0.0,
        market_q=lambda t, z, x, y: np.full_like(z, -2.0),
        market_q_slope=None,
        market_q_mean=lambda t, x, y: -2.0 * 5.0 * 0.1,
        tag="custom",
    )
    with pytest.raises(InadmissibleStrategyError):
        simulate_path(cfg62, bad, seed=7, dt=0.01)


def test_negative_q_scale_rejected(cfg62):
    with pytest.raises(InadmissibleStrategyError):
        scale_market_q(equilibrium_strategy(cfg62), -1.0)


# ---------------------------------------------------------------------------
# determinism and substream independence
# ---------------------------------------------------------------------------

def test_bit_exact_reproducibility(cfg62):
    eq = equilibrium_strategy(cfg62)
    a = terminal_batch(cfg62, [eq], 600, 42, 0.01)
    b = terminal_batch(cfg62, [eq], 600, 42, 0.01)
    np.testing.assert_array_equal(a[0], b[0])
    np.testing.assert_array_equal(a[1], b[1])


def test_thread_and_batch_size_invariance(cfg62):
    eq = equilibrium_strategy(cfg62)
    a = terminal_batch(cfg62, [eq], 700, 9, 0.01, threads=1, batch_size=4096)
    b = terminal_batch(cfg62, [eq], 700, 9, 0.01, threads=3, batch_size=128)
    np.testing.assert_array_equal(a[0], b[0])
    np.testing.assert_array_equal(a[1], b[1])


def test_single_path_matches_batch_column(cfg62):
    eq = equilibrium_strategy(cfg62)
    xT, yT, _, counts = terminal_batch(cfg62, [eq], 20, 99, 0.01)
    for k in (0, 7, 19):
        rec = simulate_path(cfg62, eq, seed=99, dt=0.01, path_index=k)
        assert rec.x[-1] == xT[0, k]
        assert rec.y[-1] == yT[0, k]
        assert len(rec.jumps) == counts[k]


# ---------------------------------------------------------------------------
# equilibrium behaviour
# ---------------------------------------------------------------------------

def test_equilibrium_no_clamps(cfg62):
    eq = equilibrium_strategy(cfg62)
    _, _, clamps, _ = terminal_batch(cfg62, [eq], 300, 17, 0.01)
    assert int(clamps.sum()) == 0


def test_equilibrium_moments_close(cfg62):
    eq = equilibrium_strategy(cfg62)
    stats, J, I = mc_summary(cfg62, eq, 20000, 2024, 2e-3)
    assert abs(J.mean - value_function(cfg62, 0, 1, 1)) <= 3 * J.std_error
    assert abs(stats.mean_y.mean - 1.0) <= 3 * stats.mean_y.std_error
    assert I.mean == J.mean - 0.25  # estimator identity, exact arithmetic


def test_martingale_property_along_path(cfg62):
    # sample mean of the distortion level stays near one at interior times
    eq = equilibrium_strategy(cfg62)
    from mmvlab.simulation import _advance_batch, _prepare, _uniform_grid

    uniform = _uniform_grid(cfg62, 0.01)
    prep = _prepare(cfg62, 31, np.arange(400), len(uniform) - 1, "jump")
    states, _ = _advance_batch(cfg62, [eq], uniform, prep, "jump", record=True)
    rec = states[0].rec
    for frac in (0.25, 0.5, 0.75):
        # nodes are path-dependent; read off each path at its own time index
        vals = []
        for i in range(400):
            tgt = frac * 3.0
            j = int(np.searchsorted(rec["t"][i], tgt))
            vals.append(rec["y"][i, j])
        vals = np.asarray(vals)
        se = vals.std(ddof=1) / math.sqrt(len(vals))
        assert abs(vals.mean() - 1.0) <= 3.5 * se


def test_pathwise_identity_small_and_zero_at_start(cfg62):
    eq = equilibrium_strategy(cfg62)
    rec = simulate_path(cfg62, eq, seed=12, dt=1e-3)
    res = pathwise_identity_residual(rec, cfg62)
    assert res < 0.05
    t0_gap = abs(
        rec.y[0] * math.exp(0.53625 - 0.24) / 2.0
        - (riskless_wealth(cfg62, 0.0) - rec.x[0] + math.exp(0.53625 - 0.24) / 2.0)
    )
    assert t0_gap == 0.0


def test_identity_requires_equilibrium(cfg62):
    rec = simulate_path(cfg62, zero_strategy(), seed=12, dt=0.01)
    with pytest.raises(ValueError):
        pathwise_identity_residual(rec, cfg62)


def test_identity_zero_for_degenerate_dynamics():
    # no claims and mu = r: both sides of the identity are constant
    cfg = ModelConfig(
        horizon=2.0, x0=1.0, theta=2.0,
        market=MarketParams(r=0.05, mu=0.05, sigma=0.2),
        insurance=InsuranceParams(kappa=0.1, kappa_r=0.15),
        claims=ClaimModel(intensity=0.0, law=EXPONENTIAL, rate=1.0),
    )
    rec = simulate_path(cfg, equilibrium_strategy(cfg), seed=4, dt=0.01)
    assert pathwise_identity_residual(rec, cfg) < 1e-12


def test_halving_ratios(cfg62):
    res = identity_residual_halving(cfg62, n_paths=30, seed=6, dt0=8e-3, n_halvings=2)
    assert len(res) == 3
    assert res[1] < res[0] and res[2] < res[1]


def test_retention_rises_across_jumps(cfg62):
    eq = equilibrium_strategy(cfg62)
    for k in range(5):
        rec = simulate_path(cfg62, eq, seed=77, dt=1e-3, path_index=k)
        assert rec.jump_events, "expected at least one claim on this seed"
        for _, _, u_before, u_after in rec.jump_events:
            assert u_after > u_before


def test_benchmark_strategy_tracks_equilibrium(cfg62):
    bench = benchmark_strategy(cfg62)
    eq = equilibrium_strategy(cfg62)
    xb, yb, _, _ = terminal_batch(cfg62, [bench, eq], 4000, 13, 5e-3)
    # identical in law as dt -> 0; at finite dt they stay statistically close
    assert abs(xb[0].mean() - xb[1].mean()) < 0.02


def test_jump_counts_poisson(cfg62):
    from scipy import stats as sstats

    _, _, _, counts = terminal_batch(cfg62, [zero_strategy()], 10000, 2718, 0.05)
    lam = 15.0  # 5 claims/year over 3 years
    kmax = int(counts.max())
    observed = np.bincount(counts, minlength=kmax + 1).astype(float)
    probs = np.array([math.exp(-lam) * lam**k / math.factorial(k) for k in range(kmax + 1)])
    # fold sparse tails so expected counts stay above 5
    lo = int(sstats.poisson.ppf(0.001, lam))
    hi = int(sstats.poisson.ppf(0.999, lam))
    obs = np.concatenate(([observed[:lo].sum()], observed[lo:hi], [observed[hi:].sum()]))
    exp_p = np.concatenate(([probs[:lo].sum()], probs[lo:hi], [1.0 - probs[:hi].sum()]))
    chi2 = float(((obs - 10000 * exp_p) ** 2 / (10000 * exp_p)).sum())
    crit = sstats.chi2.ppf(0.999, len(obs) - 1)
    assert chi2 < crit


# ---------------------------------------------------------------------------
# diffusion approximation
# ---------------------------------------------------------------------------

def test_diffusion_zero_strategy_deterministic(cfg62):
    rec = simulate_diffusion_approx(cfg62, zero_strategy(), seed=2, dt=0.01)
    assert rec.x[-1] == riskless_wealth(cfg62, 3.0)
    assert rec.jumps == []


def test_diffusion_matches_jump_engine_without_claims():
    cfg = no_claims_config()
    eq = equilibrium_strategy(cfg)
    a = simulate_path(cfg, eq, seed=21, dt=0.01)
    b = simulate_diffusion_approx(cfg, eq, seed=21, dt=0.01)
    np.testing.assert_array_equal(a.x, b.x)
    np.testing.assert_array_equal(a.y, b.y)


def test_diffusion_objective_hits_closed_form(cfg62):
    eq = equilibrium_strategy(cfg62)
    J, _ = mc_game_objective(cfg62, eq, 20000, 5150, 2e-3, mode="diffusion")
    assert abs(J.mean - value_function(cfg62, 0, 1, 1)) <= 3 * J.std_error


def test_diffusion_requires_slope(cfg62):
    bad = FeedbackStrategy(
        insurer=lambda t, x, y: (np.zeros_like(y), np.zeros_like(y)),
        market_p=lambda t, x, y: 0.0,
        market_q=lambda t, z, x, y: np.zeros_like(z),
        market_q_slope=None,
        tag="custom",
    )
    with pytest.raises(ValueError, match="market_q_slope"):
        simulate_diffusion_approx(cfg62, bad, seed=1, dt=0.01)


# ---------------------------------------------------------------------------
# deviations under common random numbers
# ---------------------------------------------------------------------------

def test_market_deviation_cannot_lower_objective(cfg62):
    eq = equilibrium_strategy(cfg62)
    dev = shift_market_p(eq, 0.1)
    from mmvlab.simulation import objective_paths

    xT, yT, _, _ = terminal_batch(cfg62, [eq, dev], 4000, 8, 5e-3)
    diff = objective_paths(xT[1], yT[1], 2.0) - objective_paths(xT[0], yT[0], 2.0)
    se = diff.std(ddof=1) / math.sqrt(len(diff))
    assert diff.mean() >= -3 * se


def test_insurer_scaling_wrapper(cfg62):
    eq = equilibrium_strategy(cfg62)
    dev = scale_insurer(eq, pi_factor=1.5, u_factor=0.5)
    t = np.array([0.0])
    pi0, u0 = eq.insurer(t, np.array([1.0]), np.array([1.0]))
    pi1, u1 = dev.insurer(t, np.array([1.0]), np.array([1.0]))
    assert pi1[0] == pytest.approx(1.5 * pi0[0])
    assert u1[0] == pytest.approx(0.5 * u0[0])


# ---------------------------------------------------------------------------
# exports
# ---------------------------------------------------------------------------

def test_trajectory_and_jump_csv(tmp_path, cfg62):
    eq = equilibrium_strategy(cfg62)
    rec = simulate_path(cfg62, eq, seed=7, dt=0.01)
    tpath = tmp_path / "traj.csv"
    jpath = tmp_path / "jumps.csv"
    write_trajectory_csv(cfg62, rec, tpath)
    write_jump_log_csv(rec, jpath)
    tlines = tpath.read_text().splitlines()
    assert tlines[0] == "t,x,y,pi,u,stock_proxy"
    assert len(tlines) == len(rec.times) + 1
    jlines = jpath.read_text().splitlines()
    assert jlines[0] == "t,z"
    assert len(jlines) == len(rec.jumps) + 1


def test_stock_proxy_formula():
    cfg = no_claims_config()
    rec = simulate_path(cfg, zero_strategy(), seed=5, dt=0.01)
    proxy = stock_proxy(cfg, rec, s0=10.0)
    wT = rec.w[-1]
    expected = 10.0 * math.exp((0.15 - 0.5 * 0.04) * 3.0 + 0.2 * wT)
    assert proxy[-1] == pytest.approx(expected, rel=1e-12)
    assert proxy[0] == 10.0
