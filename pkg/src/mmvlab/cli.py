"""Command-line front end.

Subcommands: value, frontier, simulate, verify, mmv-eval, example-6-1,
experiment-6-2.  Every command writes its delimited artifacts (and figures,
unless disabled) into the output directory and finishes with a run
manifest.  Exit codes: 0 success, 1 invalid input, 2 verification failure,
3 internal cross-check failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
import time
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .closed_form import (
    FrontierPoint,
    ZeroStrategyRegimeError,
    frontier_from_theta,
    mmv_value,
    riskless_wealth,
    theta_for_target_mean,
    value_function,
    write_frontier_csv,
    y_second_moment,
    expected_wealth_optimal,
)
from .mmv_discrete import DiscreteRv, mmv_truncation, mmv_waterfill, mv_utility
from .model import ModelConfig, experiment_6_2, load_config, rho_schedule, save_config, validate_config
from .simulation import (
    benchmark_strategy,
    equilibrium_strategy,
    mc_summary,
    simulate_diffusion_approx,
    simulate_path,
    write_jump_log_csv,
    write_trajectory_csv,
    zero_strategy,
)
from .verification import hjbi_scan, market_response_value, mc_saddle_check, write_saddle_mc_csv

EXIT_OK = 0
EXIT_INVALID_INPUT = 1
EXIT_VERIFICATION_FAILED = 2
EXIT_CROSS_CHECK_FAILED = 3

CANONICAL_DEVIATIONS = [
    ("pi_scale", 1.5),
    ("pi_scale", 0.5),
    ("u_scale", 1.5),
    ("p_shift", 0.2),
    ("p_shift", -0.2),
    ("q_scale", 1.5),
]


@dataclass
class RunManifest:
    command: str
    config_path: str
    seed: int
    outputs: list
    wall_time: float
    tool_version: str


class _Run:
    """Collects output artifacts and writes the manifest last."""

    def __init__(self, command: str, outdir: Path, config_path: str = "", seed: int = 0):
        self.command = command
        self.outdir = outdir
        self.config_path = config_path
        self.seed = seed
        self.outputs: list[str] = []
        self.t0 = time.perf_counter()
        outdir.mkdir(parents=True, exist_ok=True)

    def path(self, name: str) -> Path:
        self.outputs.append(name)
        return self.outdir / name

    def finish(self) -> Path:
        manifest = RunManifest(
            command=self.command,
            config_path=self.config_path,
            seed=self.seed,
            outputs=sorted(self.outputs),
            wall_time=time.perf_counter() - self.t0,
            tool_version=__version__,
        )
        out = self.outdir / "manifest.json"
        out.write_text(json.dumps(asdict(manifest), indent=2, sort_keys=True) + "\n")
        missing = [n for n in self.outputs if not (self.outdir / n).exists()]
        if missing:
            raise RuntimeError(f"declared outputs missing: {missing}")
        return out


def _load_validated(path: str) -> ModelConfig:
    try:
        cfg = load_config(path)
    except (OSError, ValueError) as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        raise SystemExit(EXIT_INVALID_INPUT)
    violations = validate_config(cfg)
    if violations:
        print("invalid config:", file=sys.stderr)
        for v in violations:
            print(f"  - {v}", file=sys.stderr)
        raise SystemExit(EXIT_INVALID_INPUT)
    return cfg


def _floats(text: str) -> list[float]:
    return [float(x) for x in text.split(",") if x.strip()]


def _write_kv_csv(path: Path, rows: list[tuple[str, float]]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["quantity", "value"])
        for name, val in rows:
            w.writerow([name, f"{val:.17g}"])


# ---------------------------------------------------------------------------
# value
# ---------------------------------------------------------------------------

def cmd_value(args) -> int:
    cfg = _load_validated(args.config)
    if not cfg.theta > 0.0:
        print("error: theta must be positive for the value command", file=sys.stderr)
        return EXIT_INVALID_INPUT
    run = _Run("value", Path(args.outdir), config_path=args.config)

    phi = value_function(cfg, 0.0, cfg.x0, 1.0)
    big_phi = mmv_value(cfg)
    riskless = riskless_wealth(cfg, cfg.horizon)
    fp = frontier_from_theta(cfg)

    # internal consistency gates before anything is printed
    growth = math.exp(rho_schedule(cfg).integral(0.0, cfg.horizon))
    checks = {
        "duality": (big_phi, riskless + (growth - 1.0) / (2.0 * cfg.theta)),
        "frontier law": (fp.variance * cfg.theta, fp.mean - riskless),
        "mv on frontier": (big_phi, fp.mean - 0.5 * cfg.theta * fp.variance),
    }
    for name, (a, b) in checks.items():
        if abs(a - b) > 1e-9 * max(1.0, abs(a), abs(b)):
            print(f"internal cross-check '{name}' failed: {a!r} vs {b!r}", file=sys.stderr)
            return EXIT_CROSS_CHECK_FAILED

    rows = [
        ("mmv_value", big_phi),
        ("game_value", phi),
        ("riskless_terminal_wealth", riskless),
        ("expected_terminal_wealth", fp.mean),
        ("terminal_wealth_variance", fp.variance),
    ]
    for name, val in rows:
        print(f"{name:26s} {val:.6f}")
    _write_kv_csv(run.path("value.csv"), rows)
    run.finish()
    return EXIT_OK


# ---------------------------------------------------------------------------
# frontier
# ---------------------------------------------------------------------------

def cmd_frontier(args) -> int:
    cfg = _load_validated(args.config)
    if not args.thetas and not args.xis:
        print("error: provide --thetas or --xis", file=sys.stderr)
        return EXIT_INVALID_INPUT
    run = _Run("frontier", Path(args.outdir), config_path=args.config)
    riskless = riskless_wealth(cfg, cfg.horizon)
    points: list[FrontierPoint] = []
    if args.thetas:
        for th in _floats(args.thetas):
            if th <= 0.0:
                print(f"error: theta grid must be positive, got {th}", file=sys.stderr)
                return EXIT_INVALID_INPUT
            points.append(frontier_from_theta(cfg.with_theta(th)))
    else:
        for xi in _floats(args.xis):
            try:
                th = theta_for_target_mean(cfg, xi)
            except ZeroStrategyRegimeError:
                points.append(FrontierPoint(theta=math.inf, mean=riskless, variance=0.0))
                continue
            points.append(frontier_from_theta(cfg.with_theta(th)))
    write_frontier_csv(points, run.path("frontier.csv"))
    for p in points:
        print(f"theta={p.theta:<12.6g} mean={p.mean:.6f} variance={p.variance:.6f}")
    if not args.no_plots:
        from .plots import plot_frontier

        plot_frontier(points, riskless, run.path("frontier.png"))
    run.finish()
    return EXIT_OK


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------

def _make_strategy(cfg: ModelConfig, name: str):
    if name == "equilibrium":
        return equilibrium_strategy(cfg)
    if name == "zero":
        return zero_strategy()
    if name == "benchmark":
        return benchmark_strategy(cfg)
    raise ValueError(f"unknown strategy {name!r}")


def _simulate_targets(cfg: ModelConfig, strategy_name: str) -> dict[str, float]:
    riskless = riskless_wealth(cfg, cfg.horizon)
    if strategy_name == "zero":
        return {
            "mean_X": riskless, "var_X": 0.0, "mean_Y": 1.0, "second_moment_Y": 1.0,
            "J": riskless + 1.0 / (2.0 * cfg.theta), "I": riskless,
        }
    fp = frontier_from_theta(cfg)
    return {
        "mean_X": fp.mean,
        "var_X": fp.variance,
        "mean_Y": 1.0,
        "second_moment_Y": y_second_moment(cfg, cfg.horizon),
        "J": value_function(cfg, 0.0, cfg.x0, 1.0),
        "I": mmv_value(cfg),
    }


def run_simulate(cfg: ModelConfig, run: _Run, strategy_name: str, diffusion: bool,
                 n_paths: int, seed: int, dt: float, dump: int, threads: int,
                 plots: bool, s0: float = 10.0) -> None:
    strategy = _make_strategy(cfg, strategy_name)
    mode = "diffusion" if diffusion else "jump"
    stats, J, I = mc_summary(cfg, strategy, n_paths, seed, dt, mode=mode, threads=threads)
    targets = _simulate_targets(cfg, strategy_name)

    rows = [
        ("mean_X", stats.mean_x), ("var_X", stats.var_x),
        ("mean_Y", stats.mean_y), ("second_moment_Y", stats.second_moment_y),
        ("J", J), ("I", I),
    ]
    with open(run.path("stats.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["quantity", "estimate", "std_error", "n_paths", "seed", "target"])
        for name, est in rows:
            w.writerow([name, f"{est.mean:.17g}", f"{est.std_error:.17g}",
                        est.n_paths, est.seed, f"{targets[name]:.17g}"])
    for name, est in rows:
        print(f"{name:16s} {est.mean: .6f}  (se {est.std_error:.2e}, target {targets[name]: .6f})")

    records = []
    for k in range(dump):
        if diffusion:
            rec = simulate_diffusion_approx(cfg, strategy, seed, dt, path_index=k)
        else:
            rec = simulate_path(cfg, strategy, seed, dt, path_index=k)
        records.append(rec)
        write_trajectory_csv(cfg, rec, run.path(f"trajectory_{k:03d}.csv"), s0=s0)
        write_jump_log_csv(rec, run.path(f"jumps_{k:03d}.csv"))
    if plots and records:
        from .plots import plot_portfolio_and_stock, plot_retention_and_claims

        plot_portfolio_and_stock(cfg, records, run.path("portfolio_stock.png"), s0=s0)
        plot_retention_and_claims(records, run.path("retention_claims.png"))


def cmd_simulate(args) -> int:
    cfg = _load_validated(args.config)
    if args.n_paths < 2 or args.dt <= 0.0 or args.dump < 0:
        print("error: need n-paths >= 2, dt > 0, dump >= 0", file=sys.stderr)
        return EXIT_INVALID_INPUT
    run = _Run("simulate", Path(args.outdir), config_path=args.config, seed=args.seed)
    try:
        run_simulate(cfg, run, args.strategy, args.diffusion, args.n_paths, args.seed,
                     args.dt, args.dump, args.threads, plots=not args.no_plots, s0=args.s0)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID_INPUT
    run.finish()
    return EXIT_OK


# ---------------------------------------------------------------------------
# verify
# ---------------------------------------------------------------------------

def cmd_verify(args) -> int:
    cfg = _load_validated(args.config)
    try:
        t_grid = _floats(args.t_grid)
        x_grid = _floats(args.x_grid)
        y_grid = _floats(args.y_grid)
        deltas = _floats(args.deltas)
    except ValueError as exc:
        print(f"error: bad grid: {exc}", file=sys.stderr)
        return EXIT_INVALID_INPUT
    run = _Run("verify", Path(args.outdir), config_path=args.config, seed=args.seed)
    try:
        report = hjbi_scan(cfg, t_grid, x_grid, y_grid, deltas)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID_INPUT
    report.write_csv(run.path("saddle_report.csv"))
    tol = args.tol
    print(f"saddle residual (max abs)   : {report.max_abs_residual_at_saddle:.3e}")
    print(f"market deviations (min)     : {report.min_over_b_deviations:.3e}")
    print(f"insurer deviations (max)    : {report.max_over_a_deviations:.3e}")
    failed = not report.passed(tol)

    if args.bad_u_scale is not None:
        # diagnostic: a miscalibrated retention rule must be caught by the
        # market-best-response check, which is strictly negative off the optimum
        worst = 0.0
        worst_pt = None
        from .closed_form import saddle_feedback

        for t in t_grid:
            for x in x_grid:
                for y in y_grid:
                    sc = saddle_feedback(cfg, t, x, y)
                    val = market_response_value(cfg, t, x, y, sc.pi_hat, sc.u_hat * args.bad_u_scale)
                    if abs(val) > abs(worst):
                        worst, worst_pt = val, (t, x, y)
        print(f"bad-retention check: response value {worst:.3e} at {worst_pt}")
        if abs(worst) > tol:
            failed = True

    if args.mc_paths:
        results = mc_saddle_check(cfg, CANONICAL_DEVIATIONS, args.mc_paths, args.seed, args.dt,
                                  threads=args.threads)
        write_saddle_mc_csv(results, run.path("saddle_mc.csv"))
        for r in results:
            print(f"{r.label:16s} side={r.side:8s} dJ={r.delta_j:+.5f} se={r.std_error:.5f} {r.verdict}")
        if any(r.verdict != "consistent" for r in results):
            failed = True

    run.finish()
    if failed:
        worst = report.worst_row(tol)
        if worst is not None:
            print(
                f"verification FAILED; worst grid point: t={worst.t} x={worst.x} y={worst.y} "
                f"control={worst.control} delta={worst.delta} value={worst.value:.3e}",
                file=sys.stderr,
            )
        else:
            print("verification FAILED", file=sys.stderr)
        return EXIT_VERIFICATION_FAILED
    print("verification passed")
    return EXIT_OK


# ---------------------------------------------------------------------------
# mmv-eval
# ---------------------------------------------------------------------------

def _parse_rv(args) -> DiscreteRv:
    sources = [s for s in (args.csv, args.uniform, args.atoms) if s]
    if len(sources) != 1:
        raise ValueError("provide exactly one of --csv, --uniform, --atoms")
    if args.csv:
        return DiscreteRv.from_csv(args.csv)
    if args.uniform:
        text = args.uniform.strip()
        if text.startswith("uniform(") and text.endswith(")"):
            text = text[len("uniform("):-1]
        a, b, n = text.split(",")
        return DiscreteRv.uniform(float(a), float(b), int(n))
    pairs = [piece.split(":") for piece in args.atoms.split(",")]
    return DiscreteRv.from_atoms([float(v) for v, _ in pairs], [float(p) for _, p in pairs])


def cmd_mmv_eval(args) -> int:
    if args.theta <= 0.0:
        print("error: theta must be positive", file=sys.stderr)
        return EXIT_INVALID_INPUT
    try:
        rv = _parse_rv(args)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID_INPUT
    run = _Run("mmv-eval", Path(args.outdir))
    wf = mmv_waterfill(rv, args.theta)
    tr = mmv_truncation(rv, args.theta)
    rows = [
        ("mv_utility", mv_utility(rv, args.theta)),
        ("mmv_waterfill", wf.value),
        ("mmv_truncation", tr.value),
        ("kappa", tr.kappa),
        ("agreement_gap", abs(wf.value - tr.value)),
    ]
    for name, val in rows:
        print(f"{name:16s} {val:.10g}")
    _write_kv_csv(run.path("mmv.csv"), rows)
    run.finish()
    return EXIT_OK


# ---------------------------------------------------------------------------
# example 6-1: monotonicity repair of the plain criterion
# ---------------------------------------------------------------------------

def cmd_example_6_1(args) -> int:
    theta = 2.0
    run = _Run("example-6-1", Path(args.outdir))
    x0 = DiscreteRv.constant(10.0)
    x1 = DiscreteRv.uniform(10.0, 22.0, args.atoms)

    table = []
    for label, rv in (("X0", x0), ("X1", x1)):
        wf = mmv_waterfill(rv, theta)
        tr = mmv_truncation(rv, theta)
        table.append((label, mv_utility(rv, theta), wf.value, tr.value, tr.kappa))

    with open(run.path("example_6_1.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["prospect", "mv_utility", "mmv_waterfill", "mmv_truncation", "kappa"])
        for label, u, vw, vt, kappa in table:
            w.writerow([label, f"{u:.17g}", f"{vw:.17g}", f"{vt:.17g}", f"{kappa:.17g}"])

    print(f"{'prospect':10s} {'U_2':>12s} {'V_2 (waterfill)':>16s} {'V_2 (truncation)':>17s} {'kappa':>10s}")
    for label, u, vw, vt, kappa in table:
        print(f"{label:10s} {u:12.6f} {vw:16.6f} {vt:17.6f} {kappa:10.4f}")
    (_, u0, v0, _, _), (_, u1, v1, _, _) = table
    print(f"monotonicity: larger prospect gets V_2 {v1:.4f} > {v0:.4f} "
          f"while plain utility misranks it ({u1:.4f} < {u0:.4f})")

    if not args.no_plots:
        from .plots import plot_preference_comparison

        plot_preference_comparison(
            [row[0] for row in table], [row[1] for row in table], [row[2] for row in table],
            run.path("example_6_1.png"),
        )
    run.finish()
    return EXIT_OK


# ---------------------------------------------------------------------------
# experiment 6-2: full pipeline on the benchmark insurer
# ---------------------------------------------------------------------------

def cmd_experiment_6_2(args) -> int:
    cfg = experiment_6_2()
    run = _Run("experiment-6-2", Path(args.outdir), seed=args.seed)
    save_config(cfg, run.path("config.cfg"))

    fp = frontier_from_theta(cfg)
    rows = [
        ("mmv_value", mmv_value(cfg)),
        ("game_value", value_function(cfg, 0.0, cfg.x0, 1.0)),
        ("riskless_terminal_wealth", riskless_wealth(cfg, cfg.horizon)),
        ("expected_terminal_wealth", fp.mean),
        ("terminal_wealth_variance", fp.variance),
        ("expected_wealth_midpoint", expected_wealth_optimal(cfg, cfg.horizon / 2.0)),
    ]
    for name, val in rows:
        print(f"{name:26s} {val:.6f}")
    _write_kv_csv(run.path("value.csv"), rows)

    points = [frontier_from_theta(cfg.with_theta(th)) for th in (0.5, 1.0, 2.0, 4.0)]
    write_frontier_csv(points, run.path("frontier.csv"))
    if not args.no_plots:
        from .plots import plot_frontier

        plot_frontier(points, riskless_wealth(cfg, cfg.horizon), run.path("frontier.png"))

    run_simulate(cfg, run, "equilibrium", diffusion=False, n_paths=args.n_paths,
                 seed=args.seed, dt=args.dt, dump=args.dump, threads=args.threads,
                 plots=not args.no_plots, s0=10.0)
    run.finish()
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="mmvlab",
        description="closed forms, Monte Carlo, and saddle verification for the "
                    "monotone mean-variance insurer problem",
    )
    p.add_argument("--version", action="version", version=f"mmvlab {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def add_common(sp, config=True):
        if config:
            sp.add_argument("--config", required=True, help="flat key=value model file")
        sp.add_argument("--outdir", default=None, help="output directory")

    sp = sub.add_parser("value", help="closed-form utility, mean, and variance")
    add_common(sp)

    sp = sub.add_parser("frontier", help="efficient frontier sweep")
    add_common(sp)
    sp.add_argument("--thetas", default="", help="comma list of risk aversions")
    sp.add_argument("--xis", default="", help="comma list of target means")
    sp.add_argument("--no-plots", action="store_true")

    sp = sub.add_parser("simulate", help="Monte Carlo terminal statistics and trajectories")
    add_common(sp)
    sp.add_argument("--strategy", default="equilibrium", choices=["equilibrium", "zero", "benchmark"])
    sp.add_argument("--diffusion", action="store_true", help="replace claims by their matched Brownian motion")
    sp.add_argument("--n-paths", type=int, default=20000)
    sp.add_argument("--seed", type=int, default=12345)
    sp.add_argument("--dt", type=float, default=1e-3)
    sp.add_argument("--dump", type=int, default=3, help="number of trajectories to export")
    sp.add_argument("--threads", type=int, default=1)
    sp.add_argument("--s0", type=float, default=10.0, help="initial stock price for the proxy")
    sp.add_argument("--no-plots", action="store_true")

    sp = sub.add_parser("verify", help="saddle-point grid scan and Monte Carlo deviations")
    add_common(sp)
    sp.add_argument("--t-grid", default="0,1,2,2.9")
    sp.add_argument("--x-grid", default="0.5,1,2")
    sp.add_argument("--y-grid", default="0.5,1,2")
    sp.add_argument("--deltas", default="0.5,-0.5,0.1,-0.1,0.01,-0.01")
    sp.add_argument("--tol", type=float, default=1e-8)
    sp.add_argument("--mc-paths", type=int, default=0, help="run the paired deviation check with this many paths")
    sp.add_argument("--seed", type=int, default=12345)
    sp.add_argument("--dt", type=float, default=1e-3)
    sp.add_argument("--threads", type=int, default=1)
    sp.add_argument("--bad-u-scale", type=float, default=None,
                    help="diagnostic: misscale the retention rule and show the check catching it")

    sp = sub.add_parser("mmv-eval", help="monotone mean-variance utility of a discrete law")
    sp.add_argument("--csv", default="", help="two-column value,prob file")
    sp.add_argument("--uniform", default="", help="uniform(a,b,n) midpoint discretization")
    sp.add_argument("--atoms", default="", help="value:prob,value:prob,...")
    sp.add_argument("--theta", type=float, required=True)
    sp.add_argument("--outdir", default=None)

    sp = sub.add_parser("example-6-1", help="monotonicity repair on the arbitrage prospect")
    sp.add_argument("--atoms", type=int, default=1_000_000)
    sp.add_argument("--outdir", default=None)
    sp.add_argument("--no-plots", action="store_true")

    sp = sub.add_parser("experiment-6-2", help="full pipeline on the benchmark insurer")
    sp.add_argument("--n-paths", type=int, default=20000)
    sp.add_argument("--seed", type=int, default=12345)
    sp.add_argument("--dt", type=float, default=1e-3)
    sp.add_argument("--dump", type=int, default=3)
    sp.add_argument("--threads", type=int, default=1)
    sp.add_argument("--outdir", default=None)
    sp.add_argument("--no-plots", action="store_true")
    return p


_HANDLERS = {
    "value": cmd_value,
    "frontier": cmd_frontier,
    "simulate": cmd_simulate,
    "verify": cmd_verify,
    "mmv-eval": cmd_mmv_eval,
    "example-6-1": cmd_example_6_1,
    "experiment-6-2": cmd_experiment_6_2,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.outdir is None:
        args.outdir = str(Path("out") / args.command)
    try:
        return _HANDLERS[args.command](args)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
