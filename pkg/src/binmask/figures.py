"""Figure rendering for experiment reports.

Each experiment writes PNG figures next to its CSV/JSON output: training
dynamics for sparsification, accuracy-vs-feature-count curves for
selection sweeps, AUC and weight-norm panels for the regularizer
comparison, and an error histogram for the gradient check.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def _band(ax, xs, series, color, label):
    arr = np.asarray(series, dtype=np.float64)
    ax.plot(xs, arr.mean(axis=0), color=color, label=label)
    if arr.shape[0] > 1:
        ax.fill_between(xs, arr.min(axis=0), arr.max(axis=0), color=color, alpha=0.2, lw=0)


def save_dynamics_figure(trial_metrics, path, title=""):
    """Sparsity / test loss / train loss per epoch, min-max band over trials."""
    epochs = [m.epoch for m in trial_metrics[0]]
    fig, axes = plt.subplots(1, 3, figsize=(12, 3.2))
    panels = [
        ("sparsity", lambda m: m.sparsity if m.sparsity is not None else 0.0, "tab:blue"),
        ("test loss", lambda m: m.test_loss, "tab:orange"),
        ("train loss", lambda m: m.train_loss, "tab:green"),
    ]
    for ax, (name, get, color) in zip(axes, panels):
        series = [[get(m) for m in metrics] for metrics in trial_metrics]
        if any(v is None for row in series for v in row):
            ax.set_visible(False)
            continue
        _band(ax, epochs, series, color, name)
        ax.set_xlabel("epoch")
        ax.set_title(name)
        ax.grid(alpha=0.3)
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_selection_figure(v_smooth_trials, selected_counts, path):
    """Smoothed-mask histogram plus per-trial selected-feature counts."""
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.2))
    flat = np.concatenate([np.asarray(v) for v in v_smooth_trials])
    ax1.hist(flat, bins=20, range=(0.0, 1.0), color="tab:blue", alpha=0.8)
    ax1.axvspan(0.15, 0.85, color="tab:red", alpha=0.1)
    ax1.set_xlabel("smoothed mask value")
    ax1.set_ylabel("count")
    ax1.set_title("smoothed mask distribution")
    ax2.bar(range(len(selected_counts)), selected_counts, color="tab:green", alpha=0.8)
    ax2.set_xlabel("trial")
    ax2.set_ylabel("selected features")
    ax2.set_title("selection size per trial")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_sweep_figure(counts, means, halfwidths, path):
    """Retrained accuracy against number of selected features with 95% CI bars."""
    fig, ax = plt.subplots(figsize=(5, 3.5))
    err = [hw if hw is not None else 0.0 for hw in halfwidths]
    ax.errorbar(counts, means, yerr=err, marker="o", capsize=3)
    ax.set_xlabel("number of features")
    ax.set_ylabel("test accuracy")
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_compare_figure(rows, path):
    """Test AUC and mean weight L0 per method/coefficient.

    ``rows`` is a list of dicts carrying method, coefficient, test_auc
    (mean), test_auc_ci (halfwidth or None), and weight_l0 (mean).
    """
    methods = sorted({r["method"] for r in rows})
    colors = {m: f"C{i}" for i, m in enumerate(methods)}
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(10, 3.5))
    for m in methods:
        sub = [r for r in rows if r["method"] == m]
        sub.sort(key=lambda r: r["coefficient"])
        xs = np.arange(len(sub))
        ys = [r["test_auc"] for r in sub]
        err = [r["test_auc_ci"] if r["test_auc_ci"] is not None else 0.0 for r in sub]
        ax1.errorbar(xs, ys, yerr=err, marker="o", capsize=3, label=m, color=colors[m])
        ax2.plot(xs, [max(r["weight_l0"], 1e-4) for r in sub], marker="s", label=m, color=colors[m])
    ax1.set_xlabel("coefficient rank (per method)")
    ax1.set_ylabel("test AUC")
    ax1.legend(fontsize=8)
    ax1.grid(alpha=0.3)
    ax2.set_xlabel("coefficient rank (per method)")
    ax2.set_ylabel("mean weight L0")
    ax2.set_yscale("log")
    ax2.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_gradcheck_figure(rel_errors, path):
    fig, ax = plt.subplots(figsize=(5, 3.5))
    errs = np.asarray(rel_errors, dtype=np.float64)
    errs = np.maximum(errs, 1e-16)
    ax.hist(np.log10(errs), bins=24, color="tab:blue", alpha=0.8)
    ax.axvline(-4, color="tab:red", ls="--", label="tolerance")
    ax.set_xlabel("log10 relative error")
    ax.set_ylabel("networks")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
