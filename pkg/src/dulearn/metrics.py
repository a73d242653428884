"""Pair scoring and verification statistics.

Matching scores (cosine, mutual likelihood) and the verification harness:
full threshold-sweep ROC, TPR at fixed FPR targets, normalized area under
the TPR curve over a log-FPR interval, and rank-1 identification.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .embeddings import GaussianEmbedding
from .errors import ContractViolation

# Log-FPR interval over which the normalized area is reported.
AUC_INTERVAL = (1e-5, 1e-3)

DEFAULT_FPR_TARGETS = (1e-5, 1e-4, 1e-3)

_LN_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class ScorePair:
    """One verification trial: a similarity score and whether the pair is genuine."""

    score: float
    genuine: bool


@dataclass(frozen=True)
class RocReport:
    """Operating points plus the derived TPR@FPR and interval-AUC summaries."""

    points: tuple[tuple[float, float], ...]
    tpr_at: dict[float, float]
    interval_auc: float
    n_genuine: int
    n_imposter: int


def cosine_score(a, b) -> float:
    """Cosine similarity of two non-zero vectors, in [-1, 1]."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise ContractViolation("cosine similarity of a zero vector is undefined")
    return float(np.dot(a, b) / (na * nb))


def cosine_rows(a, b) -> np.ndarray:
    """Row-wise cosine similarity between two (N, D) matrices."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na = np.linalg.norm(a, axis=1)
    nb = np.linalg.norm(b, axis=1)
    if np.any(na == 0.0) or np.any(nb == 0.0):
        raise ContractViolation("cosine similarity of a zero vector is undefined")
    return np.sum(a * b, axis=1) / (na * nb)


def mls_score(g1: GaussianEmbedding, g2: GaussianEmbedding) -> float:
    """Mutual likelihood score between two Gaussian embeddings.

    -0.5 * sum_l [(mu1-mu2)^2 / (s1^2+s2^2) + ln(s1^2+s2^2)] - (D/2) ln 2pi;
    symmetric in its arguments. Higher means more likely the same latent.
    """
    if g1.dim != g2.dim:
        raise ContractViolation("embeddings must share one dimension")
    return float(mls_rows(g1.mu[None, :], g1.sigma[None, :], g2.mu[None, :], g2.sigma[None, :])[0])


def mls_rows(mu1, sigma1, mu2, sigma2) -> np.ndarray:
    """Row-wise mutual likelihood scores for (N, D) batches."""
    mu1 = np.asarray(mu1, dtype=np.float64)
    mu2 = np.asarray(mu2, dtype=np.float64)
    s1 = np.asarray(sigma1, dtype=np.float64)
    s2 = np.asarray(sigma2, dtype=np.float64)
    if np.any(s1 <= 0.0) or np.any(s2 <= 0.0):
        raise ContractViolation("sigma must be strictly positive")
    var = s1 * s1 + s2 * s2
    d = mu1.shape[1]
    quad = (mu1 - mu2) ** 2 / var
    return -0.5 * np.sum(quad + np.log(var), axis=1) - 0.5 * d * _LN_2PI


def pair_score_ops(metric: str, dim: int) -> int:
    """Arithmetic operation count of one scalar pair score.

    Straight tallies of the defining formulas (adds, multiplies, divides,
    elementary calls), used to check the cost relationship between the
    metrics rather than wall-clock time.
    """
    if dim < 1:
        raise ContractViolation("dim must be >= 1")
    if metric == "cosine":
        # dot: 2D-1; two squared norms: 2(2D-1); 2 sqrt; 1 mult; 1 div
        return (2 * dim - 1) * 3 + 4
    if metric == "mls":
        # per dim: diff, square, two sigma squares, one add, div, log, accumulate x2
        return 9 * dim + 3
    raise ContractViolation(f"unknown metric {metric!r}")


def _operating_points(scores: np.ndarray, genuine: np.ndarray):
    """All distinct (fpr, tpr) points from the accept-if-score>=threshold sweep.

    Thresholds sit strictly between distinct score values (plus one above
    the maximum, giving the (0, 0) point), so ties share a single
    operating point and a score exactly at a target threshold is accepted.
    """
    n_gen = int(np.count_nonzero(genuine))
    n_imp = int(genuine.size - n_gen)
    order = np.argsort(-scores, kind="stable")
    s_sorted = scores[order]
    g_sorted = genuine[order]
    cum_tp = np.cumsum(g_sorted)
    cum_fp = np.cumsum(~g_sorted)
    # indices closing each block of equal scores
    ends = np.nonzero(np.append(s_sorted[1:] != s_sorted[:-1], True))[0]
    fpr = cum_fp[ends] / n_imp
    tpr = cum_tp[ends] / n_gen
    points = [(0.0, 0.0)] + list(zip(fpr.tolist(), tpr.tolist()))
    return points, n_gen, n_imp


def _envelope(points):
    """Best achievable TPR as a step function of the FPR budget."""
    fprs = []
    tprs = []
    best = 0.0
    for f, t in sorted(points):
        best = max(best, t)
        if fprs and fprs[-1] == f:
            tprs[-1] = best
        else:
            fprs.append(f)
            tprs.append(best)
    return fprs, tprs


def _tpr_at(fprs, tprs, target: float) -> float:
    idx = np.searchsorted(fprs, target, side="right") - 1
    return 0.0 if idx < 0 else tprs[idx]


def _interval_auc(fprs, tprs, lo: float, hi: float) -> float:
    """Exact area of the TPR step envelope over log10-FPR, normalized to [0, 1]."""
    xs = [lo] + [f for f in fprs if lo < f < hi] + [hi]
    total = 0.0
    for a, b in zip(xs[:-1], xs[1:]):
        total += _tpr_at(fprs, tprs, a) * (math.log10(b) - math.log10(a))
    return total / (math.log10(hi) - math.log10(lo))


def roc_from_arrays(scores, genuine, targets=DEFAULT_FPR_TARGETS) -> RocReport:
    """ROC over parallel score/genuine arrays; see :func:`roc`."""
    scores = np.asarray(scores, dtype=np.float64)
    genuine = np.asarray(genuine, dtype=bool)
    if scores.ndim != 1 or scores.shape != genuine.shape:
        raise ContractViolation("scores and genuine flags must be matching vectors")
    if not np.all(np.isfinite(scores)):
        raise ContractViolation("scores must be finite")
    if not genuine.any() or genuine.all():
        raise ContractViolation("need at least one genuine and one imposter pair")
    points, n_gen, n_imp = _operating_points(scores, genuine)
    fprs, tprs = _envelope(points)
    tpr_at = {float(t): float(_tpr_at(fprs, tprs, float(t))) for t in targets}
    auc = _interval_auc(fprs, tprs, *AUC_INTERVAL)
    return RocReport(
        points=tuple(points),
        tpr_at=tpr_at,
        interval_auc=float(auc),
        n_genuine=n_gen,
        n_imposter=n_imp,
    )


def roc(pairs: Iterable[ScorePair], targets=DEFAULT_FPR_TARGETS) -> RocReport:
    """Threshold-sweep ROC over scored pairs.

    TPR@FPR(t) is the best TPR among thresholds whose FPR does not exceed
    t (the conservative convention, monotone in t by construction). The
    interval AUC integrates that envelope over log10(FPR) on
    ``AUC_INTERVAL`` and divides by the interval's log-width, so a perfect
    separator scores exactly 1.
    """
    pairs = list(pairs)
    scores = np.array([p.score for p in pairs], dtype=np.float64)
    genuine = np.array([p.genuine for p in pairs], dtype=bool)
    return roc_from_arrays(scores, genuine, targets)


def rank1(probe_embeddings, probe_labels, gallery_embeddings, gallery_labels) -> float:
    """Fraction of probes whose cosine-nearest gallery entry shares the label.

    Ties resolve to the lowest gallery index.
    """
    probes = np.asarray(probe_embeddings, dtype=np.float64)
    gallery = np.asarray(gallery_embeddings, dtype=np.float64)
    py = np.asarray(probe_labels)
    gy = np.asarray(gallery_labels)
    if gallery.size == 0:
        raise ContractViolation("gallery is empty")
    if probes.ndim != 2 or gallery.ndim != 2 or probes.shape[1] != gallery.shape[1]:
        raise ContractViolation("probe and gallery embeddings must be (N, D) with equal D")
    missing = np.setdiff1d(py, gy)
    if missing.size:
        raise ContractViolation(f"gallery lacks entries for probe identities {missing.tolist()}")
    np_norm = np.linalg.norm(probes, axis=1, keepdims=True)
    ng_norm = np.linalg.norm(gallery, axis=1, keepdims=True)
    if np.any(np_norm == 0.0) or np.any(ng_norm == 0.0):
        raise ContractViolation("zero-norm embedding")
    sim = (probes / np_norm) @ (gallery / ng_norm).T
    nearest = np.argmax(sim, axis=1)
    return float(np.mean(gy[nearest] == py))
