"""Report figures written next to the CSV/JSON outputs.

Figures are built on bare ``matplotlib.figure.Figure`` objects so nothing
touches pyplot's global state; this keeps rendering safe inside worker
processes and headless runs.
"""

from __future__ import annotations

import math

import numpy as np
from matplotlib.figure import Figure

from .io import IoError

FONT_SIZE = 8


def _save(fig: Figure, path) -> None:
    try:
        fig.savefig(path, dpi=120, bbox_inches="tight")
    except OSError as exc:
        raise IoError(f"{path}: {exc}") from exc


def _grid(n: int) -> tuple[int, int]:
    ncols = min(n, 5)
    return math.ceil(n / ncols), ncols


def plot_abundance_maps(X: np.ndarray, rows: int, cols: int, path, names=None, max_maps: int = 10) -> None:
    """One panel per endmember, strongest total abundance first."""
    X = np.asarray(X)
    order = np.argsort(-X.sum(axis=1), kind="stable")[:max_maps]
    nr, nc = _grid(len(order))
    fig = Figure(figsize=(2.0 * nc, 2.0 * nr))
    for i, p in enumerate(order):
        ax = fig.add_subplot(nr, nc, i + 1)
        im = ax.imshow(X[p].reshape(rows, cols), vmin=0.0, vmax=max(1.0, float(X[p].max())), cmap="viridis")
        ax.set_title(names[p] if names is not None else f"#{p}", fontsize=FONT_SIZE)
        ax.set_xticks([])
        ax.set_yticks([])
    fig.colorbar(im, ax=fig.axes, shrink=0.6)
    _save(fig, path)


def plot_delta_histograms(initial, final, tau_homog: float, path) -> None:
    """Histograms of homogeneity deviations before and after refinement."""
    fig = Figure(figsize=(7, 2.8))
    hi = max(float(np.max(initial.deltas, initial=0)), float(np.max(final.deltas, initial=0)), tau_homog) * 1.05
    bins = np.linspace(0.0, hi if hi > 0 else 1.0, 30)
    for i, (rep, title) in enumerate(((initial, "initial"), (final, "final"))):
        ax = fig.add_subplot(1, 2, i + 1)
        ax.hist(rep.deltas, bins=bins, color="0.4")
        ax.axvline(tau_homog, color="r", lw=1)
        ax.set_title(f"{title}: eta = {rep.eta:.0f}%", fontsize=FONT_SIZE)
        ax.set_xlabel("delta", fontsize=FONT_SIZE)
        ax.tick_params(labelsize=FONT_SIZE)
    _save(fig, path)


def plot_sensitivity(rows: list, path) -> None:
    """SRE against each swept parameter (one panel per parameter)."""
    by_param: dict = {}
    for r in rows:
        by_param.setdefault(r["varied"], []).append((r["value"], r["sre"]))
    if not by_param:
        return
    nr, nc = _grid(len(by_param))
    fig = Figure(figsize=(2.6 * nc, 2.2 * nr))
    for i, (name, pts) in enumerate(sorted(by_param.items())):
        pts = sorted(pts)
        ax = fig.add_subplot(nr, nc, i + 1)
        ax.plot([p[0] for p in pts], [p[1] for p in pts], "o-", ms=3)
        ax.set_xlabel(name, fontsize=FONT_SIZE)
        ax.set_ylabel("SRE (dB)", fontsize=FONT_SIZE)
        ax.tick_params(labelsize=FONT_SIZE)
    fig.tight_layout()
    _save(fig, path)


def plot_deviation_histogram(deviations, path) -> None:
    dev = np.asarray([d for d in deviations if np.isfinite(d)])
    fig = Figure(figsize=(3.5, 2.6))
    ax = fig.add_subplot(1, 1, 1)
    ax.hist(dev, bins=20, color="0.4")
    ax.set_xlabel("deviation from best SRE (%)", fontsize=FONT_SIZE)
    ax.set_ylabel("trials", fontsize=FONT_SIZE)
    if dev.size:
        ax.set_title(f"mean {dev.mean():.1f}%, std {dev.std():.1f}%", fontsize=FONT_SIZE)
    ax.tick_params(labelsize=FONT_SIZE)
    _save(fig, path)
