"""Rendering of report figures next to the delimited outputs.

Each function takes the already-computed report data and a target path;
figures are plot-ready summaries of the same numbers the CSV/JSON files
carry, never a separate computation.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .analysis import CATEGORY_NAMES

_SAVE_KW = {"dpi": 110, "metadata": {"Software": None}}


def _finish(fig, path):
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)


def save_roc_figure(report, path) -> None:
    fig, ax = plt.subplots(figsize=(5, 4))
    fprs = [max(p[0], 1e-7) for p in report.points]
    tprs = [p[1] for p in report.points]
    ax.step(fprs, tprs, where="post")
    for target, tpr in sorted(report.tpr_at.items()):
        ax.plot([max(target, 1e-7)], [tpr], "o", ms=4)
    ax.set_xscale("log")
    ax.set_xlabel("FPR")
    ax.set_ylabel("TPR")
    ax.set_ylim(-0.02, 1.02)
    ax.set_title(f"ROC (interval AUC {report.interval_auc:.3f})")
    ax.grid(True, alpha=0.3)
    _finish(fig, path)


def save_uncertainty_figure(report, noise_levels, path) -> None:
    """Histogram of predicted uncertainty, one distribution per noise level."""
    fig, ax = plt.subplots(figsize=(5.5, 4))
    levels = np.unique(np.asarray(noise_levels))
    lo, hi = report.scores.min(), report.scores.max()
    if lo == hi:
        hi = lo + 1e-6
    bins = np.linspace(lo, hi, 40)
    for level in levels:
        sel = report.scores[np.asarray(noise_levels) == level]
        ax.hist(sel, bins=bins, alpha=0.55, label=f"noise {level:.3g}")
    title = "Predicted uncertainty by true noise level"
    if report.auc is not None:
        title += f" (AUC {report.auc:.3f})"
    ax.set_title(title)
    ax.set_xlabel("harmonic-mean sigma")
    ax.set_ylabel("count")
    ax.legend()
    _finish(fig, path)


def save_bad_case_figure(report, path) -> None:
    fig, ax = plt.subplots(figsize=(5.5, 4))
    width = 0.8 / max(len(report.proportions), 1)
    xs = np.arange(len(CATEGORY_NAMES))
    for k, (name, props) in enumerate(report.proportions.items()):
        vals = props if props is not None else np.zeros(len(CATEGORY_NAMES))
        ax.bar(xs + k * width, vals, width=width, label=name)
    ax.set_xticks(xs + width * (len(report.proportions) - 1) / 2)
    ax.set_xticklabels(CATEGORY_NAMES)
    ax.set_ylabel("share of model's errors")
    ax.set_title("Misclassifications by uncertainty tertile")
    ax.legend()
    _finish(fig, path)


def save_intra_class_figure(distances_by_model: dict, path) -> None:
    fig, ax = plt.subplots(figsize=(5.5, 4))
    width = 0.8 / max(len(distances_by_model), 1)
    xs = np.arange(len(CATEGORY_NAMES))
    for k, (name, vals) in enumerate(distances_by_model.items()):
        ax.bar(xs + k * width, np.asarray(vals, dtype=float), width=width, label=name)
    ax.set_xticks(xs + width * (len(distances_by_model) - 1) / 2)
    ax.set_xticklabels(CATEGORY_NAMES)
    ax.set_ylabel("mean distance to class center")
    ax.set_title("Intra-class distances by uncertainty tertile")
    ax.legend()
    _finish(fig, path)


def save_blur_pair_figure(rows, path) -> None:
    fig, ax = plt.subplots(figsize=(5.5, 4))
    models = sorted({r.model for r in rows})
    for name in models:
        pts = sorted((r.level, r.genuine_similarity, r.imposter_similarity)
                     for r in rows if r.model == name)
        levels = [p[0] for p in pts]
        ax.plot(levels, [p[1] for p in pts], "-o", ms=3, label=f"{name} genuine")
        ax.plot(levels, [p[2] for p in pts], "--s", ms=3, label=f"{name} imposter")
    ax.set_xlabel("corruption level")
    ax.set_ylabel("cosine similarity")
    ax.set_title("Pair similarity under progressive corruption")
    ax.legend(fontsize=8)
    ax.grid(True, alpha=0.3)
    _finish(fig, path)


def save_sweep_figure(rows: list[dict], kind: str, path) -> None:
    """Aggregate sweep curves: sigma-bar/accuracy vs lambda, or the first
    TPR column vs noise fraction per model."""
    fig, ax = plt.subplots(figsize=(5.5, 4))
    if kind == "lambda":
        vals = [r["value"] for r in rows]
        ax.plot(vals, [r["sigma_bar"] for r in rows], "-o", ms=4, label="mean harmonic sigma")
        ax.plot(vals, [r["train_acc"] for r in rows], "-s", ms=4, label="train accuracy")
        positive = [v for v in vals if v > 0]
        if positive and min(positive) < max(vals) / 10:
            ax.set_xscale("symlog", linthresh=min(positive))
        ax.set_xlabel("lambda")
    else:
        tpr_keys = sorted(k for k in rows[0] if k.startswith("tpr_at_"))
        key = tpr_keys[0] if tpr_keys else "train_acc"
        for name in sorted({r["model"] for r in rows}):
            pts = sorted((r["value"], r[key]) for r in rows if r["model"] == name)
            ax.plot([p[0] for p in pts], [p[1] for p in pts], "-o", ms=4, label=name)
        ax.set_xlabel("corruption fraction")
        ax.set_ylabel(key)
    ax.legend()
    ax.grid(True, alpha=0.3)
    ax.set_title(f"{kind} sweep")
    _finish(fig, path)
