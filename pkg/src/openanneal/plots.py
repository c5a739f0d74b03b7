"""Figure rendering for the CLI report paths (PNG files, Agg backend)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _level_label(i: int) -> str:
    return "ground state" if i == 0 else f"level {i}"


def save_ame_figure(res, path: str) -> str:
    """Level populations from the density-matrix solve."""
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    for i in range(res.populations.shape[1]):
        ax.plot(res.grid_s, res.populations[:, i], label=_level_label(i))
    ax.set_xlabel("s")
    ax.set_ylabel("population")
    ax.set_ylim(-0.02, 1.02)
    ax.legend(loc="best")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def save_ensemble_figure(ens, path: str) -> str:
    """Trajectory-mean populations with a 3 standard-error band."""
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    for i in range(ens.means.shape[1]):
        line, = ax.plot(ens.grid_s, ens.means[:, i], label=_level_label(i))
        if ens.R > 1:
            band = 3.0 * ens.stderrs[:, i]
            ax.fill_between(ens.grid_s, ens.means[:, i] - band,
                            ens.means[:, i] + band,
                            color=line.get_color(), alpha=0.25, linewidth=0)
    ax.set_xlabel("s")
    ax.set_ylabel("population")
    ax.set_ylim(-0.02, 1.02)
    ax.legend(loc="best", title=f"R = {ens.R}")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def save_compare_figure(res, ens, path: str) -> str:
    """Density-matrix curves against trajectory means with error bands."""
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    for i in range(res.populations.shape[1]):
        line, = ax.plot(res.grid_s, res.populations[:, i],
                        label=f"{_level_label(i)} (density matrix)")
        ax.plot(ens.grid_s, ens.means[:, i], "--",
                color=line.get_color(),
                label=f"{_level_label(i)} (trajectories)")
        if ens.R > 1:
            band = 3.0 * ens.stderrs[:, i]
            ax.fill_between(ens.grid_s, ens.means[:, i] - band,
                            ens.means[:, i] + band,
                            color=line.get_color(), alpha=0.2, linewidth=0)
    ax.set_xlabel("s")
    ax.set_ylabel("population")
    ax.set_ylim(-0.02, 1.02)
    ax.legend(loc="best", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def save_bench_figure(report, path: str) -> str:
    """Per-step cost of both solvers and their ratio, log-log in N."""
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9.0, 4.0))
    ax1.loglog(report.dims, report.t_ame_step, "o-", label="density matrix")
    ax1.loglog(report.dims, report.t_traj_step, "s-", label="trajectory")
    ax1.set_xlabel("Hilbert dimension N")
    ax1.set_ylabel("seconds per step")
    ax1.legend(loc="best")
    ratio = report.t_ame_step / report.t_traj_step
    ax2.loglog(report.dims, ratio, "o-")
    ax2.set_xlabel("Hilbert dimension N")
    ax2.set_ylabel("step-time ratio")
    ax2.set_title(f"log-log slope {report.ratio_slope:.2f}")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def save_jump_figure(stats, path: str) -> str:
    """Histogram of per-trajectory net jumps toward the ground state."""
    fig, ax = plt.subplots(figsize=(5.0, 4.0))
    if stats.hist_values.size:
        ax.bar(stats.hist_values, stats.hist_counts, width=0.8)
        ax.set_xticks(np.arange(stats.hist_values.min(),
                                stats.hist_values.max() + 1))
    ax.set_xlabel("net jumps toward the ground state")
    ax.set_ylabel("trajectories")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
