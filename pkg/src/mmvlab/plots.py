"""Figure rendering for the report path.

Every function draws to a file and returns the path; no interactive
backends are touched.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .model import ModelConfig
from .simulation import PathRecord, stock_proxy

_DPI = 150


def plot_portfolio_and_stock(cfg: ModelConfig, records: list[PathRecord], path: str | Path,
                             s0: float = 10.0) -> Path:
    """Optimal stock position against the driving stock price, one panel per path."""
    fig, axes = plt.subplots(len(records), 1, figsize=(7, 2.6 * len(records)), sharex=True,
                             squeeze=False)
    for ax, rec in zip(axes[:, 0], records):
        t = rec.times
        ax.step(t[:-1], rec.pi_steps, where="post", color="tab:blue", lw=0.9, label="stock position")
        ax.set_ylabel("position", color="tab:blue")
        twin = ax.twinx()
        twin.plot(t, stock_proxy(cfg, rec, s0=s0), color="tab:orange", lw=0.9, label="stock price")
        twin.set_ylabel("price", color="tab:orange")
    axes[-1, 0].set_xlabel("t (years)")
    fig.suptitle("Optimal portfolio vs. stock price")
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)
    return Path(path)


def plot_retention_and_claims(records: list[PathRecord], path: str | Path) -> Path:
    """Retention level with claim arrivals marked, one panel per path."""
    fig, axes = plt.subplots(len(records), 1, figsize=(7, 2.6 * len(records)), sharex=True,
                             squeeze=False)
    for ax, rec in zip(axes[:, 0], records):
        ax.step(rec.times[:-1], rec.u_steps, where="post", color="tab:green", lw=0.9,
                label="retention level")
        if rec.jumps:
            jt = [j[0] for j in rec.jumps]
            jz = [j[1] for j in rec.jumps]
            twin = ax.twinx()
            markerline, stemlines, _ = twin.stem(jt, jz, basefmt=" ")
            plt.setp(markerline, color="tab:red", markersize=3)
            plt.setp(stemlines, color="tab:red", linewidth=0.8, alpha=0.6)
            twin.set_ylabel("claim size", color="tab:red")
        ax.set_ylabel("retention", color="tab:green")
    axes[-1, 0].set_xlabel("t (years)")
    fig.suptitle("Optimal retention level vs. claim arrivals")
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)
    return Path(path)


def plot_frontier(points, riskless: float, path: str | Path) -> Path:
    """Efficient frontier in the (variance, mean) plane with the riskless point."""
    var = np.array([p.variance for p in points])
    mean = np.array([p.mean for p in points])
    order = np.argsort(var)
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(var[order], mean[order], "o-", color="tab:blue", lw=1.2, label="efficient frontier")
    ax.plot([0.0], [riskless], "s", color="tab:red", label="riskless point")
    ax.set_xlabel("variance of terminal wealth")
    ax.set_ylabel("expected terminal wealth")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)
    return Path(path)


def plot_preference_comparison(labels, mv_values, mmv_values, path: str | Path) -> Path:
    """Plain vs. monotone mean-variance utilities side by side."""
    xpos = np.arange(len(labels))
    width = 0.35
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.bar(xpos - width / 2, mv_values, width, label="mean-variance", color="tab:blue")
    ax.bar(xpos + width / 2, mmv_values, width, label="monotone mean-variance", color="tab:orange")
    ax.set_xticks(xpos)
    ax.set_xticklabels(labels)
    ax.set_ylabel("utility")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)
    return Path(path)
