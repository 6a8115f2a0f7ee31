"""Static SVG figures for pivot distributions; output is byte-deterministic."""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from scipy import stats  # noqa: E402

RC = {"svg.hashsalt": "dflasso", "svg.fonttype": "path", "font.size": 9}


def _save(fig, path):
    fig.savefig(path, format="svg", metadata={"Date": None, "Creator": None})
    plt.close(fig)


def shared_bins(samples):
    pooled = np.concatenate([np.asarray(s, float) for s in samples])
    pooled = pooled[np.isfinite(pooled)]
    if pooled.size < 2 or np.ptp(pooled) == 0:
        return np.linspace(-4, 4, 33)
    return np.histogram_bin_edges(pooled, bins="fd")


def pivot_histogram(values, bins, path, title="", df=None):
    """Density histogram of pivot values with the t_df (or N(0,1)) reference density."""
    x = np.asarray(values, float)
    x = x[np.isfinite(x)]
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(4, 3))
        ax.hist(x, bins=bins, density=True, color="0.7", edgecolor="0.3", linewidth=0.5)
        grid = np.linspace(min(bins[0], -4), max(bins[-1], 4), 400)
        ref = stats.t.pdf(grid, df) if df else stats.norm.pdf(grid)
        ax.plot(grid, ref, color="k", linewidth=1, label=f"t_{df}" if df else "N(0,1)")
        ax.axvline(x.mean() if x.size else 0.0, color="tab:red", linewidth=1, label="mean")
        ax.set_title(title)
        ax.legend(frameon=False, fontsize=7)
        fig.tight_layout()
        _save(fig, path)


def pivot_boxplot(groups: dict, path, title=""):
    """One box per labelled sample, dashed line at zero."""
    labels = list(groups)
    data = [np.asarray(groups[k], float)[np.isfinite(groups[k])] for k in labels]
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(1.2 + 1.1 * len(labels), 3.2))
        ax.boxplot(data, showmeans=True)
        ax.set_xticks(range(1, len(labels) + 1), labels, rotation=30, ha="right", fontsize=7)
        ax.axhline(0.0, color="k", linestyle="--", linewidth=0.8)
        ax.set_ylabel("pivot")
        ax.set_title(title)
        fig.tight_layout()
        _save(fig, path)
