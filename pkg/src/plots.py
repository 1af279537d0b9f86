# plots.py
from pathlib import Path

import numpy as np
import pandas as pd

try:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
except Exception as e:
    raise ImportError("matplotlib is required for `eval --plot`. Please install it via pip.") from e

from scipy.stats import norm

DET_TICKS = np.array([0.001, 0.01, 0.05, 0.1, 0.2, 0.4])


def plot_det(records: pd.DataFrame, path: Path) -> Path:
    """DET curves from long-form {x=p_fa, y=p_miss, condition} records, probit axes."""
    fig, ax = plt.subplots(figsize=(5, 5))
    eps = 1e-4
    for cond, grp in records.groupby("condition", sort=False):
        ax.plot(norm.ppf(np.clip(grp["x"], eps, 1 - eps)), norm.ppf(np.clip(grp["y"], eps, 1 - eps)),
                label=cond, lw=1.2)
    ticks = norm.ppf(DET_TICKS)
    labels = [f"{100 * t:g}" for t in DET_TICKS]
    ax.set_xticks(ticks, labels)
    ax.set_yticks(ticks, labels)
    ax.set_xlabel("False alarm rate (%)")
    ax.set_ylabel("Miss rate (%)")
    ax.grid(True, alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_degradation(table: pd.DataFrame, path: Path) -> Path:
    """Bars of `<metric>_rate_pct` per SNR (output of degradation_table)."""
    rate_cols = [c for c in table.columns if c.endswith("_rate_pct")]
    fig, ax = plt.subplots(figsize=(6, 4))
    width = 0.8 / max(len(rate_cols), 1)
    x = np.arange(len(table))
    for k, col in enumerate(rate_cols):
        ax.bar(x + k * width, table[col], width, label=col.replace("_rate_pct", ""))
    ax.set_xticks(x + width * (len(rate_cols) - 1) / 2, [f"{s:g} dB" for s in table["snr_db"]])
    ax.set_ylabel("Degradation rate (%)")
    ax.axhline(0.0, color="k", lw=0.8)
    ax.legend(fontsize=8)
    fig.tight_layout()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
