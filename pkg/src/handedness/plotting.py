"""Matplotlib figures written next to the CSV reports.

Everything renders through the Agg backend into PNG files with the software
tag stripped, so identical inputs give identical bytes.
"""

from __future__ import annotations

import os
from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

_METADATA = {"Software": None}


def _save(fig, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    fig.savefig(tmp, format="png", dpi=110, metadata=_METADATA)
    plt.close(fig)
    os.replace(tmp, path)
    return path


def bland_altman_figure(report, path) -> Path:
    ba = report.bland_altman
    fig, ax = plt.subplots(figsize=(6, 4))
    inside = (ba.differences >= ba.lower) & (ba.differences <= ba.upper)
    ax.scatter(ba.means[inside], ba.differences[inside], s=18, color="tab:blue", label="within limits")
    ax.scatter(ba.means[~inside], ba.differences[~inside], s=18, color="tab:red", label="outside")
    ax.axhline(ba.bias, color="k", lw=1, label=f"bias {ba.bias:.3f}")
    for v in (ba.lower, ba.upper):
        ax.axhline(v, color="k", lw=1, ls="--")
    ax.set_xlabel("mean of score and scaled EI")
    ax.set_ylabel("score minus scaled EI")
    ax.set_title(f"{report.method}: {ba.n_within}/{len(ba.differences)} within limits, r = {report.pearson_r:.3f}")
    ax.legend(fontsize=8, loc="best")
    fig.tight_layout()
    return _save(fig, path)


def fit_figure(report, path) -> Path:
    """Scores against |EI| with the fitted curve."""
    from .evaluation import quadratic

    fig, ax = plt.subplots(figsize=(6, 4))
    s = report.scores
    grid = np.linspace(s.min(), s.max(), 200)
    if report.method == "db":
        ei = 100 - np.abs(report_ei(report))
        ax.set_ylabel("100 - |EI|")
        curve = quadratic(report.fit, grid)
    else:
        ei = np.abs(report_ei(report))
        ax.set_ylabel("|EI|")
        a, b = report.fit
        curve = a * np.exp(b * grid)
    ax.scatter(s, ei, s=18)
    ax.plot(grid, curve, color="tab:orange")
    ax.set_xlabel(f"{report.method} score")
    fig.tight_layout()
    return _save(fig, path)


def report_ei(report) -> np.ndarray:
    """Recover the EI magnitudes an agreement report was built from."""
    from .evaluation import quadratic

    if report.method == "db":
        return 100 - quadratic(report.fit, report.scaled_ei)
    a, b = report.fit
    return a * np.exp(b * report.scaled_ei)


def segmentation_figure(t, y, vy, stroke_ids, path, title: str = "") -> Path:
    fig, (a1, a2) = plt.subplots(2, 1, figsize=(8, 5), sharex=True)
    a1.plot(t, y, lw=1, color="k")
    bounds = np.flatnonzero(np.diff(stroke_ids)) + 1
    for b in bounds:
        a1.axvline(t[b], color="tab:red", lw=0.5)
        a2.axvline(t[b], color="tab:red", lw=0.5)
    a1.set_ylabel("filtered y")
    a2.plot(t, vy, lw=1)
    a2.axhline(0, color="k", lw=0.5)
    a2.set_ylabel("vy, mean-corrected")
    a2.set_xlabel("t (s)")
    a1.set_title(title or f"{len(bounds) + 1} strokes")
    fig.tight_layout()
    return _save(fig, path)


def db_bar_figure(subjects: Sequence[str], scores: Sequence[float], path) -> Path:
    fig, ax = plt.subplots(figsize=(max(4, 0.4 * len(subjects) + 2), 4))
    ax.bar(range(len(subjects)), scores, color="tab:green")
    ax.set_xticks(range(len(subjects)), subjects, rotation=90, fontsize=7)
    ax.set_ylabel("DB score")
    ax.set_yscale("log")
    fig.tight_layout()
    return _save(fig, path)


def loss_figure(curves: Sequence[tuple[str, Sequence[float], Sequence[float]]], path) -> Path:
    """``curves`` holds ``(label, train_loss, val_loss)`` per run."""
    fig, ax = plt.subplots(figsize=(6, 4))
    for i, (label, tl, vl) in enumerate(curves):
        c = f"C{i % 10}"
        ep = np.arange(1, len(tl) + 1)
        ax.plot(ep, tl, color=c, lw=1, label=f"{label} train")
        ax.plot(ep, vl, color=c, lw=1, ls="--", label=f"{label} val")
    ax.set_xlabel("epoch")
    ax.set_ylabel("cross-entropy")
    if len(curves) <= 6:
        ax.legend(fontsize=7)
    fig.tight_layout()
    return _save(fig, path)


def accuracy_bar_figure(labels: Sequence[str], values: Sequence[float], path,
                        ylabel: str = "accuracy (%)", errors: Sequence[float] | None = None) -> Path:
    fig, ax = plt.subplots(figsize=(max(4, 0.5 * len(labels) + 2), 4))
    ax.bar(range(len(labels)), values, yerr=errors, color="tab:purple", capsize=3)
    ax.set_xticks(range(len(labels)), labels, rotation=45, ha="right", fontsize=8)
    ax.axhline(50, color="k", lw=0.5, ls=":")
    ax.set_ylim(0, 100)
    ax.set_ylabel(ylabel)
    fig.tight_layout()
    return _save(fig, path)
