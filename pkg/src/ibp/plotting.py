"""Static figures written next to the CSV output (non-interactive backend)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .schema import SnapshotTable  # noqa: E402

__all__ = ["plot_table", "plot_scaling", "plot_compare"]


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_table(table: SnapshotTable, path, title: str = ""):
    """Distribution at each time on a log scale; two-type tables show the m-marginal."""
    fig, ax = plt.subplots(figsize=(6, 4))
    cols = table.columns
    for t in table.times:
        sel = cols["time"] == t
        m = cols["m"][sel]
        p = cols["probability"][sel]
        if table.two_type:
            idx = np.unique(m)
            p = np.array([p[m == i].sum() for i in idx])
            m = idx
        keep = p > 0
        style = "o" if table.monte_carlo else "-"
        ax.plot(m[keep], p[keep], style, ms=3, label=f"t = {t:g}")
    ax.set_yscale("log")
    ax.set_xlabel("m")
    ax.set_ylabel("P(m)" if not table.two_type else "P(m), summed over n")
    ax.set_title(title)
    ax.legend(fontsize=8)
    return _save(fig, path)


def plot_scaling(collapse: dict, path):
    """Collapse plot of m P_m ln t against mu = m/t; ``collapse`` maps t -> (mu, value)."""
    fig, ax = plt.subplots(figsize=(6, 4))
    for t, (mu, value) in sorted(collapse.items()):
        ax.plot(mu, value, "o-", ms=3, label=f"t = {t:g}")
    grid = np.linspace(min(min(v[0]) for v in collapse.values()), max(max(v[0]) for v in collapse.values()), 200)
    ax.plot(grid, np.exp(-grid), "k--", lw=1, label="exp(-mu)")
    ax.set_yscale("log")
    ax.set_xlabel("mu = m / t")
    ax.set_ylabel("m P_m ln t")
    ax.legend(fontsize=8)
    return _save(fig, path)


def plot_compare(keys, deviations, path, metric: str, tol: float):
    """Per-index deviations against their sequence number, with the tolerance line."""
    fig, ax = plt.subplots(figsize=(6, 4))
    dev = np.abs(np.asarray(deviations, dtype=float))
    ax.plot(np.arange(dev.size), dev, ".", ms=3)
    ax.axhline(tol, color="r", lw=1, label=f"tol = {tol:g}")
    if metric != "zscore" and np.any(dev > 0):
        ax.set_yscale("log")
    ax.set_xlabel("row")
    ax.set_ylabel(f"|{metric}|")
    ax.legend(fontsize=8)
    return _save(fig, path)
