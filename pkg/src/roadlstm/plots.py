"""Figures written next to the text/CSV reports."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.dpi": 150,
    "savefig.bbox": "tight",
}


def plot_costs(report, path):
    """Per-layer parameter and FLOP bars (log scale) for a cost report."""
    rows = report.table_layers()
    names = [c.name for c in rows]
    x = np.arange(len(rows))
    colors = ["tab:orange" if c.kind == "dist_lstm" else "tab:blue" for c in rows]
    with plt.rc_context(STYLE):
        fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(7, 5), sharex=True)
        ax1.bar(x, [max(c.params, 1) for c in rows], color=colors)
        ax1.set_yscale("log")
        ax1.set_ylabel("parameters")
        ax1.set_title(f"total {report.total_params:,} parameters, "
                      f"{report.total_flops / 1e9:.3f} GFLOPs per input")
        ax2.bar(x, [max(c.flops + c.aux_flops, 1) for c in rows], color=colors)
        ax2.set_yscale("log")
        ax2.set_ylabel("FLOPs")
        ax2.set_xticks(x)
        ax2.set_xticklabels(names, rotation=45, ha="right")
        fig.savefig(path)
        plt.close(fig)


def plot_history(history, path):
    epochs = [r.epoch for r in history]
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(5, 3.2))
        ax.plot(epochs, [r.train_mae for r in history], label="train MAE")
        val = [(r.epoch, r.val_mae) for r in history if r.val_mae is not None]
        if val:
            ax.plot(*zip(*val), label="validation MAE")
        ax.set_yscale("log")
        ax.set_xlabel("epoch")
        ax.set_ylabel("mean absolute error (normalised height)")
        ax.legend(frameon=False)
        fig.savefig(path)
        plt.close(fig)


def plot_metrics(metrics, path, title="segmentation metrics"):
    rows = metrics.rows()
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(5, 3))
        y = np.arange(len(rows))
        ax.barh(y, [v * 100 for _, v in rows], color="tab:green")
        ax.set_yticks(y)
        ax.set_yticklabels([k for k, _ in rows])
        ax.invert_yaxis()
        ax.set_xlim(0, 100)
        ax.set_xlabel("%")
        ax.set_title(title)
        for yi, (_, v) in zip(y, rows):
            ax.text(min(v * 100 + 1, 88), yi, f"{v * 100:.2f}", va="center", fontsize=7)
        fig.savefig(path)
        plt.close(fig)
