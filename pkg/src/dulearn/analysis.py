"""Diagnostic analyses of trained models against noise-annotated datasets.

Covers the four studies the trainers exist to support: how the learned
uncertainty tracks true input noise, where each model's misclassifications
fall across uncertainty tertiles, how intra-class distances shift per
tertile, and how pair similarities degrade under progressive corruption.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .embeddings import harmonic_mean_rows
from .errors import ContractViolation
from .losses import ClassifierWeights
from .metrics import cosine_rows
from .model import EncoderModel, predict_labels

CATEGORY_NAMES = ("easy", "semi_hard", "hard")


def sigma_scores(model: EncoderModel, x) -> np.ndarray:
    """Per-sample scalar uncertainty: harmonic mean of the predicted sigma."""
    _, sigma = model.embed(x)
    return harmonic_mean_rows(sigma)


def _rankdata(values: np.ndarray) -> np.ndarray:
    """Average ranks (1-based), ties shared."""
    order = np.argsort(values, kind="stable")
    ranks = np.empty(len(values))
    i = 0
    n = len(values)
    sorted_vals = values[order]
    while i < n:
        j = i
        while j + 1 < n and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i: j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def ranking_auc(positive_scores, negative_scores) -> float:
    """P(random positive outranks random negative), ties counted half."""
    pos = np.asarray(positive_scores, dtype=np.float64)
    neg = np.asarray(negative_scores, dtype=np.float64)
    if pos.size == 0 or neg.size == 0:
        raise ContractViolation("both score groups must be non-empty")
    ranks = _rankdata(np.concatenate([pos, neg]))
    r_pos = ranks[: pos.size].sum()
    u = r_pos - pos.size * (pos.size + 1) / 2.0
    return float(u / (pos.size * neg.size))


@dataclass(frozen=True)
class BucketStat:
    noise_level: float
    count: int
    sigma_mean: float
    sigma_std: float


@dataclass
class UncertaintyReport:
    """Per-sample uncertainty, grouped by true noise level.

    ``auc`` ranks corrupted (noise above the dataset minimum) against
    clean samples by predicted uncertainty; absent when the dataset has a
    single noise level.
    """

    scores: np.ndarray
    buckets: list[BucketStat]
    auc: float | None
    n: int


def uncertainty_report(model: EncoderModel, dataset) -> UncertaintyReport:
    levels = np.asarray(dataset.noise_levels, dtype=np.float64)
    if levels.size == 0:
        raise ContractViolation("dataset has no noise annotations")
    scores = sigma_scores(model, dataset.x)
    buckets = []
    for level in np.unique(levels):
        sel = scores[levels == level]
        buckets.append(BucketStat(
            noise_level=float(level),
            count=int(sel.size),
            sigma_mean=float(sel.mean()),
            sigma_std=float(sel.std()),
        ))
    lo = levels.min()
    corrupted = levels > lo
    auc = None
    if corrupted.any():
        auc = ranking_auc(scores[corrupted], scores[~corrupted])
    return UncertaintyReport(scores=scores, buckets=buckets, auc=auc, n=int(levels.size))


def assign_tertiles(scores):
    """Split scores into easy/semi-hard/hard thirds by value.

    Returns (categories in {0,1,2}, (q1, q2) thresholds). Boundaries are
    the 1/3 and 2/3 quantiles; a score equal to a boundary falls in the
    lower category.
    """
    scores = np.asarray(scores, dtype=np.float64)
    q1, q2 = np.quantile(scores, [1.0 / 3.0, 2.0 / 3.0])
    cats = np.full(scores.shape, 2, dtype=np.int64)
    cats[scores <= q2] = 1
    cats[scores <= q1] = 0
    return cats, (float(q1), float(q2))


@dataclass
class BadCaseReport:
    """Where each model's misclassifications land across sigma tertiles."""

    thresholds: tuple[float, float]
    counts: dict[str, np.ndarray]
    proportions: dict[str, np.ndarray | None]
    total_errors: dict[str, int]


def tally_bad_cases(wrong, categories, n_categories: int = 3):
    """Count errors per category; proportions are None with zero errors."""
    wrong = np.asarray(wrong, dtype=bool)
    cats = np.asarray(categories)
    per_cat = np.array([int(np.count_nonzero(wrong & (cats == k)))
                        for k in range(n_categories)])
    total = int(per_cat.sum())
    return per_cat, (per_cat / total if total > 0 else None), total


def bad_case_report(model_a: EncoderModel, weights_a: ClassifierWeights,
                    model_b: EncoderModel, weights_b: ClassifierWeights,
                    dataset, sigma_model: EncoderModel,
                    names: tuple[str, str] = ("a", "b")) -> BadCaseReport:
    """Tertile breakdown of errors for two models over one dataset.

    Categories come from ``sigma_model``'s predicted uncertainty so both
    models are measured against the same easy/semi-hard/hard split.
    Proportions are normalized per model and absent when a model makes no
    errors.
    """
    cats, thresholds = assign_tertiles(sigma_scores(sigma_model, dataset.x))
    counts: dict[str, np.ndarray] = {}
    proportions: dict[str, np.ndarray | None] = {}
    totals: dict[str, int] = {}
    for name, model, weights in ((names[0], model_a, weights_a), (names[1], model_b, weights_b)):
        wrong = predict_labels(model, weights, dataset.x) != dataset.labels
        counts[name], proportions[name], totals[name] = tally_bad_cases(wrong, cats)
    return BadCaseReport(thresholds=thresholds, counts=counts,
                         proportions=proportions, total_errors=totals)


def center_distance_by_category(distances, labels, categories, num_classes: int,
                                n_categories: int = 3) -> np.ndarray:
    """Within-class means of per-sample distances, then averaged over
    classes, per category; NaN for an empty category."""
    dist = np.asarray(distances, dtype=np.float64)
    labels = np.asarray(labels)
    cats = np.asarray(categories)
    out = np.full(n_categories, np.nan)
    for k in range(n_categories):
        per_class = []
        for c in range(num_classes):
            sel = (labels == c) & (cats == k)
            if np.any(sel):
                per_class.append(dist[sel].mean())
        if per_class:
            out[k] = float(np.mean(per_class))
    return out


def intra_class_distances(model: EncoderModel, weights: ClassifierWeights,
                          dataset, categories, n_categories: int = 3) -> np.ndarray:
    """Mean distance of embeddings to their own class center, per category.

    Distances are averaged within each class first and then across classes
    (classes without samples in a category are skipped there); a category
    with no samples at all reports NaN. Columns of ``weights`` are used
    unit-normalized, matching how they were trained and how the regression
    stage targets them.
    """
    cats = np.asarray(categories)
    if cats.shape != dataset.labels.shape:
        raise ContractViolation("categories must be a per-sample vector")
    class_counts = np.bincount(dataset.labels, minlength=dataset.num_classes)
    if np.any(class_counts == 0):
        raise ContractViolation("every class needs at least one sample")
    mu, _ = model.embed(dataset.x)
    centers = weights.unit_columns().T  # (C, D)
    dist = np.linalg.norm(mu - centers[dataset.labels], axis=1)
    return center_distance_by_category(dist, dataset.labels, cats,
                                       dataset.num_classes, n_categories)


@dataclass(frozen=True)
class ProbePair:
    """Clean reference plus the genuine and imposter inputs to be corrupted."""

    ref: np.ndarray
    genuine: np.ndarray
    imposter: np.ndarray


def make_probe_pairs(dataset, n_pairs: int, seed: int) -> list[ProbePair]:
    """Seeded draws of (reference, same-identity, other-identity) triples."""
    if dataset.num_classes < 2:
        raise ContractViolation("need at least two identities for probe pairs")
    rng = np.random.default_rng(np.random.SeedSequence(int(seed)))
    by_class = [np.nonzero(dataset.labels == c)[0] for c in range(dataset.num_classes)]
    usable = [c for c, idx in enumerate(by_class) if idx.size >= 2]
    if not usable:
        raise ContractViolation("need a class with at least two samples")
    pairs = []
    for _ in range(n_pairs):
        a = usable[rng.integers(0, len(usable))]
        i, j = rng.choice(by_class[a], size=2, replace=False)
        b = int(rng.integers(0, dataset.num_classes - 1))
        if b >= a:
            b += 1
        k = rng.choice(by_class[b])
        pairs.append(ProbePair(ref=dataset.x[i].copy(), genuine=dataset.x[j].copy(),
                               imposter=dataset.x[k].copy()))
    return pairs


@dataclass(frozen=True)
class BlurRow:
    level: float
    model: str
    genuine_similarity: float
    imposter_similarity: float


def blur_pair_probe(models: dict[str, EncoderModel], pairs: list[ProbePair],
                    levels, seed: int) -> list[BlurRow]:
    """Cosine similarity of genuine and imposter pairs under rising corruption.

    One noise direction is drawn per pair and side (seeded) and scaled by
    each level, mirroring how the same image degrades progressively. The
    reference side stays clean. Similarities are averaged over pairs.
    """
    rng = np.random.default_rng(np.random.SeedSequence(int(seed)))
    noise_g = np.stack([rng.standard_normal(p.genuine.shape) for p in pairs])
    noise_i = np.stack([rng.standard_normal(p.imposter.shape) for p in pairs])
    refs = np.stack([p.ref for p in pairs])
    gens = np.stack([p.genuine for p in pairs])
    imps = np.stack([p.imposter for p in pairs])
    rows = []
    for level in levels:
        level = float(level)
        for name in models:
            model = models[name]
            mu_ref, _ = model.embed(refs)
            mu_gen, _ = model.embed(gens + level * noise_g)
            mu_imp, _ = model.embed(imps + level * noise_i)
            rows.append(BlurRow(
                level=level,
                model=name,
                genuine_similarity=float(cosine_rows(mu_ref, mu_gen).mean()),
                imposter_similarity=float(cosine_rows(mu_ref, mu_imp).mean()),
            ))
    return rows
