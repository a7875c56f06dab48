"""Deterministic figure output (PNG bytes depend only on the data)."""
from __future__ import annotations

from typing import Dict, List, Optional, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

_META = {"Software": None}


def _save(fig, path) -> None:
    fig.savefig(path, dpi=100, metadata=_META)
    plt.close(fig)


def horizon_curves(series: Dict[str, List[Dict[str, float]]], metric: str, path, period: float = 0.1) -> None:
    """One line per labelled report, metric against prediction time."""
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for label in sorted(series):
        rows = series[label]
        t = [r["horizon"] * period for r in rows]
        ax.plot(t, [r[metric] for r in rows], marker="o", ms=3, label=label)
    ax.set_xlabel("prediction time (s)")
    ax.set_ylabel(metric.upper())
    ax.grid(alpha=0.3)
    ax.legend()
    fig.tight_layout()
    _save(fig, path)


def xy_curve(x: Sequence[float], ys: Dict[str, Sequence[float]], path, xlabel: str, ylabel: str,
             logx: bool = False) -> None:
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for label in sorted(ys):
        ax.plot(x, ys[label], marker="o", ms=3, label=label)
    if logx:
        ax.set_xscale("log", base=2)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.grid(alpha=0.3)
    ax.legend()
    fig.tight_layout()
    _save(fig, path)


def costmap_overlay(costs: np.ndarray, paths: Dict[str, Sequence], path,
                    marker: Optional[Sequence[float]] = None) -> None:
    """Costmap image with planned paths drawn over it; cells are (row, col)."""
    fig, ax = plt.subplots(figsize=(5, 5))
    ax.imshow(costs, origin="lower", cmap="gray_r", vmin=0, vmax=254, interpolation="nearest")
    for label in sorted(paths):
        cells = np.asarray(paths[label], dtype=float)
        ax.plot(cells[:, 1], cells[:, 0], lw=1.5, label=label)
    if marker is not None:
        ax.plot([marker[1]], [marker[0]], "rx", ms=8, label="predicted obstacle")
    ax.set_xlabel("col")
    ax.set_ylabel("row")
    ax.legend(loc="upper right", fontsize=7)
    fig.tight_layout()
    _save(fig, path)
