"""Matplotlib figures for the experiment harness, rendered to files.

All entry points take explicit output paths and return them; the Agg
backend keeps rendering headless.
"""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .measures import GridMeasure

_DPI = 130


def _marginal_2d(measure: GridMeasure) -> np.ndarray:
    """Collapse the cell weights to a 2-D array for display.

    Dimensions beyond the first two are summed out; 1-D measures are shown
    as a single row.
    """
    part = measure.partition
    d = part.space.dim
    res = part.resolution
    w = measure.weights.reshape((res,) * d)
    if d == 1:
        return w[None, :]
    if d > 2:
        w = w.sum(axis=tuple(range(2, d)))
    return w


def plot_measure(measure: GridMeasure, path, title: str = "empirical measure"):
    img = _marginal_2d(measure)
    fig, ax = plt.subplots(figsize=(5.2, 4.4))
    im = ax.imshow(img.T, origin="lower", cmap="viridis", aspect="auto",
                   extent=(0, 1, 0, 1))
    fig.colorbar(im, ax=ax, label="cell weight")
    ax.set_title(title)
    ax.set_xlabel("axis 0")
    ax.set_ylabel("axis 1")
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)
    return path


def plot_stability(rows, path):
    """Distance-to-base and defect against perturbation size."""
    ok = [r for r in rows if r.get("status") == "ok"]
    eps = [r["epsilon"] for r in ok]
    dist = [r["distance_to_base"] for r in ok]
    defect = [r["gibbs_defect"] for r in ok]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9.0, 3.8))
    ax1.plot(eps, dist, "o-")
    ax1.set_xlabel("perturbation size")
    ax1.set_ylabel("measure distance to base")
    ax1.set_title("statistical stability")
    positive = [e for e in eps if e > 0]
    if len(positive) >= 2 and all(d > 0 for d, e in zip(dist, eps) if e > 0):
        ax1.set_xscale("log")
        ax1.set_yscale("log")
        ax1.set_xlim(min(positive) * 0.8, max(positive) * 1.25)
    ax2.plot(eps, defect, "s-", color="tab:red")
    ax2.axhline(0.0, color="gray", lw=0.8)
    ax2.set_xlabel("perturbation size")
    ax2.set_ylabel("defect under base potential")
    ax2.set_title("Gibbs audit")
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)
    return path


def plot_spectrum(exponents, path, label: str = ""):
    fig, ax = plt.subplots(figsize=(4.6, 3.6))
    idx = np.arange(1, len(exponents) + 1)
    ax.stem(idx, exponents)
    ax.axhline(0.0, color="gray", lw=0.8)
    ax.set_xticks(idx)
    ax.set_xlabel("index")
    ax.set_ylabel("exponent")
    ax.set_title(f"Lyapunov spectrum {label}".strip())
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)
    return path


def plot_pressure_curve(rows, path):
    ms = [r["m"] for r in rows]
    ps = [r["pressure"] for r in rows]
    fig, ax = plt.subplots(figsize=(4.8, 3.6))
    ax.plot(ms, ps, "o-")
    ax.axhline(0.0, color="gray", lw=0.8)
    ax.set_xlabel("orbit depth m")
    ax.set_ylabel("separated-set pressure")
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)
    return path


def plot_recurrence(counts_by_ic, horizon, path):
    fig, ax = plt.subplots(figsize=(4.8, 3.6))
    ics = np.arange(len(counts_by_ic))
    ax.bar(ics, np.asarray(counts_by_ic, dtype=float) / horizon)
    ax.set_ylim(0, 1.05)
    ax.set_xlabel("initial condition")
    ax.set_ylabel("fraction of steps near target")
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)
    return path
