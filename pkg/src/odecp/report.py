"""Figure rendering for the report path (files only, no GUI)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .rank import RankReport
from .training import TrainHistory


def render_rank_figures(history: TrainHistory | None, report: RankReport,
                        outdir) -> list[str]:
    """Power/lambda learning curves and the final per-rank power bars."""
    written = []
    rank = report.power.size
    colors = plt.cm.tab10(np.linspace(0, 1, rank))

    if history is not None and history.epochs:
        epochs = np.asarray(history.epochs)
        power = np.stack(history.power)
        lam = np.stack(history.lambda_mean)

        fig, ax = plt.subplots(figsize=(6, 4))
        for r in range(rank):
            ax.semilogy(epochs, np.maximum(power[:, r], 1e-12),
                        color=colors[r], label=f"component {r + 1}")
        ax.set_xlabel("epoch")
        ax.set_ylabel("component power")
        ax.legend(fontsize=8)
        fig.tight_layout()
        path = str(outdir / "power_curves.png")
        fig.savefig(path, dpi=120)
        plt.close(fig)
        written.append(path)

        fig, ax = plt.subplots(figsize=(6, 4))
        for r in range(rank):
            ax.semilogy(epochs, lam[:, r], color=colors[r],
                        label=f"component {r + 1}")
        ax.set_xlabel("epoch")
        ax.set_ylabel("posterior mean of the shrinkage precision")
        ax.legend(fontsize=8)
        fig.tight_layout()
        path = str(outdir / "lambda_curves.png")
        fig.savefig(path, dpi=120)
        plt.close(fig)
        written.append(path)

    fig, ax = plt.subplots(figsize=(6, 4))
    bars = ax.bar(np.arange(1, rank + 1), np.maximum(report.power, 1e-12),
                  color=["tab:blue" if a else "tab:gray" for a in report.active])
    ax.set_yscale("log")
    ax.set_xlabel("component")
    ax.set_ylabel("power")
    ax.set_title(f"revealed rank: {report.revealed_rank} of {rank}")
    ax.bar_label(bars, labels=["kept" if a else "pruned" for a in report.active],
                 fontsize=8)
    fig.tight_layout()
    path = str(outdir / "rank_powers.png")
    fig.savefig(path, dpi=120)
    plt.close(fig)
    written.append(path)
    return written


def render_prediction_figure(times, mean, lo, hi, path, observed=None) -> str:
    """Predictive mean with its central interval band, ordered by time."""
    order = np.argsort(times)
    times = np.asarray(times)[order]
    mean = np.asarray(mean)[order]

    fig, ax = plt.subplots(figsize=(6, 4))
    ax.fill_between(times, np.asarray(lo)[order], np.asarray(hi)[order],
                    alpha=0.25, label="interval")
    ax.plot(times, mean, lw=1.5, label="predictive mean")
    if observed is not None:
        ax.plot(times, np.asarray(observed)[order], "x", ms=4, label="observed")
    ax.set_xlabel("time")
    ax.set_ylabel("entry value")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(str(path), dpi=120)
    plt.close(fig)
    return str(path)


def render_metric_figure(mean, target, path) -> str:
    """Scatter of predictions against targets with the identity line."""
    fig, ax = plt.subplots(figsize=(4.5, 4.5))
    ax.plot(target, mean, ".", ms=2, alpha=0.5)
    span = [min(np.min(target), np.min(mean)), max(np.max(target), np.max(mean))]
    ax.plot(span, span, "k--", lw=1)
    ax.set_xlabel("target")
    ax.set_ylabel("predictive mean")
    fig.tight_layout()
    fig.savefig(str(path), dpi=120)
    plt.close(fig)
    return str(path)
