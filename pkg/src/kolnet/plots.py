"""Figure rendering for CLI reports.

Every report path that writes delimited output also renders a PNG next to it.
All figures go through the Agg backend so runs work headless.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def save_training_curves(path, logs, label: str) -> None:
    """Loss and relative-L1 curves over steps, one line per seed."""
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.4))
    for seed, log in logs.items():
        steps = [r.step for r in log.rows]
        ax1.plot(steps, [r.train_mse for r in log.rows], lw=0.8, label=f"seed {seed}")
        ev = log.eval_rows()
        ax2.plot([r.step for r in ev], [r.l1_error for r in ev], marker="o",
                 ms=3, label=f"seed {seed}")
    ax1.set_yscale("log")
    ax1.set_xlabel("step")
    ax1.set_ylabel("train MSE")
    ax2.set_yscale("log")
    ax2.set_xlabel("step")
    ax2.set_ylabel("relative L1 error")
    ax1.legend(fontsize=7)
    fig.suptitle(label)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_error_histogram(path, errors, label: str) -> None:
    """Distribution of per-point normalized errors from one evaluation."""
    fig, ax = plt.subplots(figsize=(5, 3.2))
    ax.hist(np.asarray(errors), bins=60, color="tab:blue", alpha=0.85)
    ax.set_xlabel("|prediction - reference| / (1 + |reference|)")
    ax.set_ylabel("count")
    ax.set_title(label)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_slice_curves(path, x_grid, curves: dict, xlabel: str, ylabel: str,
                      label: str) -> None:
    """Overlayed curves on a common grid (value slices, Greeks slices)."""
    fig, ax = plt.subplots(figsize=(5, 3.4))
    for name, values in curves.items():
        ax.plot(x_grid, values, label=name)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.legend(fontsize=8)
    ax.set_title(label)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_rate_fit(path, grid, slope, label: str) -> None:
    """Strong-error decay on log-log axes with the fitted slope line."""
    ms = np.array([m for m, _ in grid], dtype=float)
    errs = np.array([e for _, e in grid])
    fig, ax = plt.subplots(figsize=(4.6, 3.4))
    ax.loglog(ms, errs, "o-", label="measured")
    if slope is not None and np.all(errs > 0):
        anchor = errs[0] * (ms / ms[0]) ** slope
        ax.loglog(ms, anchor, "--", label=f"slope {slope:.3f}")
    ax.set_xlabel("Euler-Maruyama steps M")
    ax.set_ylabel("strong error")
    ax.legend(fontsize=8)
    ax.set_title(label)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_dim_sweep(path, dims, costs, label: str) -> None:
    """Cost against dimension, with a log-log inset for the growth rate."""
    dims = np.asarray(dims, dtype=float)
    costs = np.asarray(costs, dtype=float)
    fig, ax = plt.subplots(figsize=(5.4, 3.8))
    ax.plot(dims, costs, "o-")
    ax.set_xlabel("problem input dimension")
    ax.set_ylabel("parameters x steps to target")
    ax.set_title(label)
    inset = ax.inset_axes([0.58, 0.12, 0.38, 0.42])
    inset.loglog(dims, costs, "o-", ms=3)
    inset.set_title("log-log", fontsize=7)
    inset.tick_params(labelsize=6)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
