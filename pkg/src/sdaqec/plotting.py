"""Report figures written next to the CSV/JSON outputs."""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

# fixed ids and no timestamp so repeated runs write identical SVGs
plt.rcParams["svg.hashsalt"] = "sdaqec"
_SVG_META = {"Date": None}


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata=_SVG_META)
    plt.close(fig)


def roc_figure(path, fpr, tpr, auc_value, band=None, label="model"):
    """ROC curve; ``band`` is an optional (grid, lo, hi) bootstrap envelope."""
    fig, ax = plt.subplots(figsize=(4.5, 4.5))
    if band is not None:
        grid, lo, hi = band
        ax.fill_between(grid, lo, hi, color="0.8", label="95% bootstrap band")
    ax.step(fpr, tpr, where="post", lw=1.5, label=f"{label} (AUC = {auc_value:.4f})")
    ax.plot([0, 1], [0, 1], ls="--", color="0.5", lw=1)
    ax.set_xlim(0, 1)
    ax.set_ylim(0, 1.02)
    ax.set_xlabel("False positive rate")
    ax.set_ylabel("True positive rate")
    ax.legend(loc="lower right", fontsize="small")
    _save(fig, path)


def metric_bars(path, names, values, ci_lo=None, ci_hi=None):
    fig, ax = plt.subplots(figsize=(6, 3.5))
    x = np.arange(len(names))
    yerr = None
    if ci_lo is not None:
        values = np.asarray(values)
        yerr = np.vstack([values - np.asarray(ci_lo), np.asarray(ci_hi) - values]).clip(min=0)
    ax.bar(x, values, yerr=yerr, capsize=4, color="tab:blue")
    ax.set_xticks(x, names, rotation=30, ha="right")
    ax.set_ylim(0, 1.05)
    ax.set_ylabel("score")
    _save(fig, path)


def violin(path, samples: dict):
    """One violin per metric from raw bootstrap samples."""
    names = list(samples)
    fig, ax = plt.subplots(figsize=(1.6 * len(names) + 2, 3.5))
    data = [np.asarray(samples[n]) for n in names]
    # constant samples make the density estimate singular; draw those as a tick
    spread = [d for d in data if np.ptp(d) > 0]
    pos = [i + 1 for i, d in enumerate(data) if np.ptp(d) > 0]
    if spread:
        ax.violinplot(spread, positions=pos, showmedians=True)
    for i, d in enumerate(data):
        if np.ptp(d) == 0:
            ax.plot([i + 0.8, i + 1.2], [d[0], d[0]], color="tab:blue")
    ax.set_xticks(range(1, len(names) + 1), names)
    ax.set_ylabel("bootstrap value")
    _save(fig, path)


def heatmap(path, models, metrics, matrix):
    matrix = np.asarray(matrix, dtype=float)
    fig, ax = plt.subplots(figsize=(1.1 * len(metrics) + 2, 0.6 * len(models) + 1.5))
    im = ax.imshow(matrix, cmap="YlGnBu", vmin=0, vmax=1, aspect="auto")
    ax.set_xticks(range(len(metrics)), metrics, rotation=30, ha="right")
    ax.set_yticks(range(len(models)), models)
    for i in range(len(models)):
        for j in range(len(metrics)):
            ax.text(j, i, f"{matrix[i, j]:.4f}", ha="center", va="center", fontsize=7,
                    color="white" if matrix[i, j] > 0.6 else "black")
    fig.colorbar(im, ax=ax)
    _save(fig, path)


def improvement_bars(path, models, metrics, table):
    """Grouped bars of relative improvement (%) per metric."""
    table = np.asarray(table, dtype=float)
    fig, ax = plt.subplots(figsize=(1.3 * len(metrics) + 2, 3.5))
    width = 0.8 / max(len(models), 1)
    x = np.arange(len(metrics))
    for i, m in enumerate(models):
        ax.bar(x + i * width, table[i], width, label=m)
    ax.axhline(0, color="black", lw=0.8)
    ax.set_xticks(x + width * (len(models) - 1) / 2, metrics, rotation=30, ha="right")
    ax.set_ylabel("improvement over baseline (%)")
    ax.legend(fontsize="small")
    _save(fig, path)
