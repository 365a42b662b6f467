"""Figure rendering for the command-line report paths.

Figures are a convenience companion to the delimited output; the CSV and
JSON files remain the machine-readable contract.  The Agg backend is
forced so rendering works headless.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def _finish(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
    return str(path)


def save_paths_figure(times, paths, exit_indices, path):
    """Trajectory fan; exited paths are drawn up to their exit index."""
    fig, ax = plt.subplots(figsize=(7, 4))
    for i in range(min(len(paths), 50)):
        stop = exit_indices[i] + 1
        ax.plot(times[:stop], paths[i][:stop], lw=0.8, alpha=0.7)
    ax.set_xlabel("t")
    ax.set_ylabel("state")
    ax.set_title("forward paths")
    return _finish(fig, path)


def save_solution_figure(times, p_mean, p_std, path):
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(times, p_mean, color="C0", label="P mean")
    ax.fill_between(
        times,
        np.asarray(p_mean) - np.asarray(p_std),
        np.asarray(p_mean) + np.asarray(p_std),
        alpha=0.25,
        color="C0",
        label="+- std",
    )
    ax.set_xlabel("t")
    ax.set_ylabel("P")
    ax.set_title("backward value profile")
    ax.legend()
    return _finish(fig, path)


def save_gap_figure(rows, path):
    ms = [r["m"] for r in rows]
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.loglog(ms, [max(r["supGap"], 1e-300) for r in rows], "o-", label="sup gap")
    ax.loglog(ms, [max(r["qkGap"], 1e-300) for r in rows], "s-", label="integrand gap")
    ref = rows[0]["supGap"]
    if ref > 0:
        ax.loglog(ms, [ref / m**2 for m in ms], "k--", lw=0.8, label="1/m^2")
    ax.set_xlabel("perturbation level m")
    ax.set_ylabel("mean squared gap")
    ax.set_title("continuous dependence")
    ax.legend()
    return _finish(fig, path)


def save_convergence_figure(rows, path):
    fig, ax = plt.subplots(figsize=(7, 4))
    seeds = sorted({r["seed"] for r in rows})
    for s in seeds:
        pts = [(r["steps"], r["absError"]) for r in rows if r["seed"] == s]
        pts.sort()
        ax.loglog([p[0] for p in pts], [max(p[1], 1e-300) for p in pts], "o-", label=f"seed {s}")
    ax.set_xlabel("steps")
    ax.set_ylabel("|estimate - oracle|")
    ax.set_title("grid refinement study")
    ax.legend()
    return _finish(fig, path)


def save_surface_figure(rows, path):
    fig, ax = plt.subplots(figsize=(7, 4))
    ts = sorted({r["t"] for r in rows})
    for t in ts:
        pts = [(r["x"][0], r["mean"][0], r["stderr"][0]) for r in rows if r["t"] == t]
        pts.sort()
        xs = [p[0] for p in pts]
        ax.errorbar(
            xs,
            [p[1] for p in pts],
            yerr=[p[2] for p in pts],
            marker="o",
            capsize=2,
            label=f"t={t:g}",
        )
    ax.set_xlabel("x")
    ax.set_ylabel("u(t, x)")
    ax.set_title("estimated solution surface")
    ax.legend()
    return _finish(fig, path)
