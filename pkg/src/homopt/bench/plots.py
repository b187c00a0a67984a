"""Matplotlib figures written next to the CSV reports (PNG and SVG)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from ..problems.cartpole import transcription_of  # noqa: E402


def _save(fig, out: Path, stem: str) -> dict:
    files = {}
    for ext in ("png", "svg"):
        p = out / f"{stem}.{ext}"
        fig.savefig(p, dpi=120, bbox_inches="tight", metadata={"Date": None} if ext == "svg" else None)
        files[f"{stem}_{ext}"] = p
    plt.close(fig)
    return files


def _varying_axes(thetas: np.ndarray):
    """Indices of the (up to two) parameters that actually vary across the sweep."""
    if thetas.size == 0:
        return []
    spread = np.ptp(thetas, axis=0)
    return [int(i) for i in np.flatnonzero(spread > 0)[:2]]


def sweep_figures(report, out: Path) -> dict:
    """Success map (one panel per algorithm, green solved / red not) and a run-time histogram."""
    files = {}
    algs = report.algorithms
    axes_idx = _varying_axes(report.thetas)
    fig, axes = plt.subplots(1, len(algs), figsize=(3.2 * len(algs), 3.0), squeeze=False, sharey=True)
    for ax, alg in zip(axes[0], algs):
        for i, theta in enumerate(report.thetas):
            rows = [r for r in report.rows if r.theta_index == i and r.algorithm == alg]
            frac = np.mean([r.status == "Solved" for r in rows]) if rows else 0.0
            xy = [theta[k] for k in axes_idx] if axes_idx else [i]
            if len(xy) == 1:
                xy = [xy[0], 0.0]
            ax.scatter(*xy, c=[(1 - frac, frac * 0.7, 0.1)], s=18)
        ax.set_title(alg)
        if axes_idx:
            ax.set_xlabel(report.names[axes_idx[0]])
    if len(axes_idx) > 1:
        axes[0][0].set_ylabel(report.names[axes_idx[1]])
    files.update(_save(fig, out, "success_map"))

    fig, ax = plt.subplots(figsize=(5, 3.2))
    for alg in algs:
        t = [r.wall_time for r in report.rows if r.algorithm == alg]
        if t:
            ax.hist(t, bins=20, alpha=0.5, label=alg)
    ax.set_xlabel("wall time per run [s]")
    ax.set_ylabel("runs")
    if report.rows:
        ax.legend()
    files.update(_save(fig, out, "solve_times"))
    return files


def budget_figure(curve, out: Path) -> dict:
    fig, (a1, a2) = plt.subplots(1, 2, figsize=(9, 3.2), layout="constrained")
    for alg in curve.algorithms:
        a1.plot(curve.checkpoints, curve.success_rate[alg], marker="o", label=alg)
        a2.plot(curve.checkpoints, curve.mean_best[alg], marker="o", label=alg)
    a1.set_xlabel(f"budget [{curve.unit}]")
    a1.set_ylabel("success rate")
    a2.set_xlabel(f"budget [{curve.unit}]")
    a2.set_ylabel("mean best cost, solved runs")
    a1.legend()
    return _save(fig, out, "budget_curve")


def trajectory_figure(nlp, trajectories, swings, out: Path) -> dict:
    """Pole angle over time along a homotopy path, light to dark from easy to goal."""
    tr = transcription_of(nlp)
    t = tr.times()
    fig, ax = plt.subplots(figsize=(6, 3.4))
    n = len(trajectories)
    for k, (z, sw) in enumerate(zip(trajectories, swings)):
        S, _ = tr.split(np.asarray(z))
        shade = 0.25 + 0.75 * (k + 1) / n
        ax.plot(t, S[:, 2], color=(0.1, 0.2, shade), lw=1.2, label=f"step {k} ({sw} swings)")
    ax.axhline(np.pi, color="gray", lw=0.6, ls="--")
    ax.set_xlabel("t [s]")
    ax.set_ylabel("phi [rad]")
    if n <= 8:
        ax.legend(fontsize=7)
    return _save(fig, out, "trajectory_evolution")
