"""Figure rendering for the report paths. Every subcommand that writes CSV also
drops PNG figures next to it; rendering is deterministic (fixed dpi, no
metadata stamps) so repeated runs produce identical bytes."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

DPI = 120


def _save(fig, path):
    fig.savefig(path, dpi=DPI, metadata={"Software": None})
    plt.close(fig)
    return path


def plot_training_curves(rows, path):
    it = [r["iteration"] for r in rows]
    fig, axes = plt.subplots(1, 3, figsize=(12, 3.2))
    axes[0].plot(it, [r["loss_gen"] for r in rows], label="generator")
    axes[0].plot(it, [r["loss_fake"] for r in rows], label="fake score")
    axes[0].set_xlabel("iteration")
    axes[0].set_title("objectives")
    axes[0].legend(fontsize=8)
    axes[1].plot(it, [r["residual_norm"] for r in rows], label=r"mean $\|r\|$")
    axes[1].plot(it, [r["delta_norm"] for r in rows], label=r"mean $\|\Delta\|$")
    axes[1].set_xlabel("iteration")
    axes[1].set_title("tracking gaps")
    axes[1].legend(fontsize=8)
    snap = [(r["iteration"], r["energy_distance"]) for r in rows if "energy_distance" in r]
    if snap:
        axes[2].plot(*zip(*snap), marker="o")
    axes[2].set_xlabel("iteration")
    axes[2].set_title("energy distance")
    fig.tight_layout()
    return _save(fig, path)


def plot_samples(gen_samples, teacher_samples, path):
    gen_samples = np.atleast_2d(gen_samples)
    teacher_samples = np.atleast_2d(teacher_samples)
    fig, ax = plt.subplots(figsize=(5, 4.2))
    if gen_samples.shape[1] >= 2:
        ax.scatter(*teacher_samples[:2000, :2].T, s=4, alpha=0.3, label="teacher")
        ax.scatter(*gen_samples[:2000, :2].T, s=4, alpha=0.3, label="generator")
    else:
        bins = np.linspace(
            min(teacher_samples.min(), gen_samples.min()),
            max(teacher_samples.max(), gen_samples.max()),
            80,
        )
        ax.hist(teacher_samples[:, 0], bins=bins, density=True, alpha=0.5, label="teacher")
        ax.hist(gen_samples[:, 0], bins=bins, density=True, alpha=0.5, label="generator")
    ax.legend(fontsize=8)
    ax.set_title("samples")
    fig.tight_layout()
    return _save(fig, path)


def plot_toy1d(grid_x, target_density, fits, path):
    """fits: {label: (density over grid_x, trajectory array)}."""
    fig, axes = plt.subplots(1, 2, figsize=(10, 3.6))
    axes[0].plot(grid_x, target_density, "k--", lw=1.5, label="target")
    for label, (density, _) in fits.items():
        axes[0].plot(grid_x, density, lw=1.2, label=label)
    axes[0].set_xlabel("x")
    axes[0].set_ylabel("density")
    axes[0].legend(fontsize=8)
    axes[0].set_title("fitted model vs target")
    for label, (_, traj) in fits.items():
        axes[1].plot(traj[:, 0], traj[:, 3], lw=1.0, label=label)
    axes[1].set_xlabel("step")
    axes[1].set_ylabel("objective")
    axes[1].set_yscale("log")
    axes[1].legend(fontsize=8)
    axes[1].set_title("optimization trace")
    fig.tight_layout()
    return _save(fig, path)


def plot_lambda_sweep(sweep, path):
    lam = sweep[:, 0]
    fig, ax = plt.subplots(figsize=(5, 3.6))
    ax.plot(lam, sweep[:, 1], label="steady-state bound")
    ax.plot(lam, sweep[:, 2], label="staleness bound")
    ax.plot(lam, sweep[:, 3], lw=2, label="error proxy")
    k = int(np.argmin(sweep[:, 3]))
    ax.scatter([lam[k]], [sweep[k, 3]], zorder=5, color="k")
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel(r"$\lambda$")
    ax.legend(fontsize=8)
    ax.set_title("tracking/staleness trade-off")
    fig.tight_layout()
    return _save(fig, path)


def plot_recursion(trajectory, steady_state, path):
    fig, ax = plt.subplots(figsize=(5, 3.6))
    ax.plot(np.abs(trajectory), lw=1.0, label=r"$|r_k|$")
    ax.axhline(steady_state, color="k", ls="--", lw=1.0, label="steady-state bound")
    ax.set_xlabel("step")
    ax.set_yscale("log")
    ax.legend(fontsize=8)
    ax.set_title("tracking-residual recursion")
    fig.tight_layout()
    return _save(fig, path)


def plot_cost(table, path):
    methods = ["two_step", "baseline"]
    fig, ax = plt.subplots(figsize=(4.6, 3.4))
    times = [table[m]["T"] for m in methods]
    ax.bar(methods, times, color=["tab:blue", "tab:orange"])
    for i, t in enumerate(times):
        ax.text(i, t, f"{t:g}s", ha="center", va="bottom", fontsize=9)
    ax.set_ylabel("seconds / iteration")
    ax.set_title(f"estimated cost (speedup {table['speedup']:.2f}x)")
    fig.tight_layout()
    return _save(fig, path)
