"""PNG figures for benchmark reports."""

from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {"font.size": 9, "axes.spines.top": False, "axes.spines.right": False, "figure.dpi": 120}


def _save(fig, path: str) -> str:
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def plot_report(report, out_dir: str) -> list[str]:
    """Per-fold accuracy and per-fold cost charts; returns the written paths."""
    folds = [f.fold for f in report.folds]
    paths = []
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.5, 3))
        acc = np.array([f.accuracy for f in report.folds]) * 100
        ax.bar(folds, acc, color="#4C72B0")
        ax.axhline(report.mean_accuracy * 100, color="k", lw=1, ls="--", label=f"mean {report.mean_accuracy:.1%}")
        ax.set_ylim(max(0.0, acc.min() - 10) if len(acc) else 0, 100)
        ax.set_xlabel("fold")
        ax.set_ylabel("accuracy (%)")
        ax.set_title(f"{report.dataset} {report.model}")
        ax.legend(loc="lower right", frameon=False)
        paths.append(_save(fig, os.path.join(out_dir, "accuracy.png")))

        fig, (left, right) = plt.subplots(1, 2, figsize=(7, 3))
        left.bar(folds, [f.seconds for f in report.folds], color="#55A868")
        left.set_xlabel("fold")
        left.set_ylabel("online time (s)")
        right.bar(folds, [f.payload_bits / 8e6 for f in report.folds], color="#C44E52")
        right.set_xlabel("fold")
        right.set_ylabel("payload sent by one party (MB)")
        rounds = report.folds[0].rounds if report.folds else 0
        fig.suptitle(f"{report.dataset} {report.model}: {rounds} rounds per fold")
        paths.append(_save(fig, os.path.join(out_dir, "cost.png")))
    return paths
