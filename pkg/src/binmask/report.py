"""Metric computation and report writing: AUC, t-based confidence intervals,
per-epoch CSV files, and JSON summaries.

All float formatting goes through :func:`format_float` (shortest
round-trip repr) so that reruns with identical seeds produce bit-identical
report files.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import stats

METRICS_FIELDS = ("epoch", "train_loss", "test_loss", "test_acc", "val_auc", "sparsity", "mask_lr")


def auc(scores, labels) -> float:
    """Rank-based (Mann-Whitney) area under the ROC curve; ties count 1/2."""
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    labels = np.asarray(labels).reshape(-1)
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs at least one positive and one negative label")
    _, inverse, counts = np.unique(scores, return_inverse=True, return_counts=True)
    cum = np.cumsum(counts)
    avg_rank = cum - (counts - 1) / 2.0  # 1-based average rank per distinct score
    ranks = avg_rank[inverse]
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def ci95(values) -> tuple[float, float]:
    """Mean and 95% Student-t halfwidth (n-1 degrees of freedom)."""
    values = np.asarray(values, dtype=np.float64).reshape(-1)
    if values.size < 2:
        raise ValueError("confidence interval needs at least two values")
    mean = float(values.mean())
    sd = float(values.std(ddof=1))
    t = float(stats.t.ppf(0.975, values.size - 1))
    return mean, t * sd / np.sqrt(values.size)


@dataclass
class TrialAggregate:
    """Per-metric mean and CI over trials; halfwidth is None for one trial."""

    name: str
    values: list[float]
    mean: float
    ci95_halfwidth: float | None

    def to_json_dict(self) -> dict:
        return {
            "name": self.name,
            "values": self.values,
            "mean": self.mean,
            "ci95_halfwidth": self.ci95_halfwidth,
        }


def aggregate(name: str, values) -> TrialAggregate:
    values = [float(v) for v in values]
    if len(values) == 1:
        return TrialAggregate(name, values, values[0], None)
    mean, half = ci95(values)
    return TrialAggregate(name, values, mean, float(half))


def format_float(x) -> str:
    if x is None:
        return ""
    return repr(float(x))


def metrics_to_csv(metrics, path):
    """Write per-epoch metric rows; empty cells where a metric does not apply."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(METRICS_FIELDS)
        for m in metrics:
            writer.writerow(
                [
                    m.epoch,
                    format_float(m.train_loss),
                    format_float(m.test_loss),
                    format_float(m.test_accuracy),
                    format_float(m.validation_auc),
                    format_float(m.sparsity),
                    format_float(m.mask_lr),
                ]
            )


def write_json(record: dict, path):
    path = Path(path)
    with path.open("w") as fh:
        json.dump(record, fh, indent=2)
        fh.write("\n")
