"""Training objectives with analytic forward values and analytic gradients.

All losses are plain numpy with hand-derived backward passes; the test
suite checks every gradient against central finite differences. Gradients
are returned alongside values so the trainer never re-derives anything.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .embeddings import GaussianEmbedding
from .errors import ContractViolation

VARIANTS = ("plain", "am-softmax", "arcface", "l2-softmax")

# Standard hyper-parameters of the respective margin-loss families, used
# when a config does not pin its own margin/scale.
VARIANT_DEFAULTS = {
    "plain": (0.0, 1.0),
    "am-softmax": (0.35, 30.0),
    "arcface": (0.5, 64.0),
    "l2-softmax": (0.0, 16.0),
}

# exp(-r) guard inside the regression loss. Entries outside [-R_CLAMP,
# R_CLAMP] are evaluated at the clamp and get zero gradient; callers see
# how often that happened through the ``clamped`` counter.
R_CLAMP = 15.0

_COS_EPS = 1e-12


@dataclass
class ClassifierWeights:
    """Class-center matrix, one column per class; doubles as regression targets."""

    w: np.ndarray
    normalized: bool = False

    def __post_init__(self) -> None:
        w = np.asarray(self.w, dtype=np.float64)
        if w.ndim != 2:
            raise ContractViolation(f"weights must be a DxC matrix, got shape {w.shape}")
        if self.normalized:
            norms = np.linalg.norm(w, axis=0)
            if np.any(np.abs(norms - 1.0) > 1e-6):
                raise ContractViolation("normalized weights must have unit-norm columns")
        self.w = w

    @property
    def dim(self) -> int:
        return self.w.shape[0]

    @property
    def num_classes(self) -> int:
        return self.w.shape[1]

    @classmethod
    def random_normalized(cls, dim: int, num_classes: int, rng: np.random.Generator) -> "ClassifierWeights":
        w = rng.standard_normal((dim, num_classes))
        w /= np.linalg.norm(w, axis=0, keepdims=True)
        return cls(w=w, normalized=True)

    def unit_columns(self) -> np.ndarray:
        """Columns rescaled to unit norm (a copy; raw weights untouched)."""
        norms = np.linalg.norm(self.w, axis=0, keepdims=True)
        if np.any(norms == 0.0):
            raise ContractViolation("classifier has a zero-norm column")
        return self.w / norms


@dataclass(frozen=True)
class SoftmaxConfig:
    """Margin-softmax family selector plus its margin/scale hyper-parameters.

    ``normalize_features`` only matters for the plain variant; the margin
    variants always l2-normalize both the embedding rows and the weight
    columns before computing logits.
    """

    variant: str = "am-softmax"
    margin: float = 0.35
    scale: float = 30.0
    normalize_features: bool = False

    def __post_init__(self) -> None:
        if self.variant not in VARIANTS:
            raise ContractViolation(f"unknown softmax variant {self.variant!r}")
        if not (math.isfinite(self.margin) and self.margin >= 0.0):
            raise ContractViolation("margin must be finite and >= 0")
        if not (math.isfinite(self.scale) and self.scale > 0.0):
            raise ContractViolation("scale must be finite and > 0")
        if self.variant in ("plain", "l2-softmax") and self.margin != 0.0:
            raise ContractViolation(f"{self.variant} requires margin == 0")
        if self.variant == "arcface" and self.margin >= math.pi / 2:
            raise ContractViolation("arcface margin must be < pi/2")

    @classmethod
    def for_variant(cls, variant: str, margin: float | None = None,
                    scale: float | None = None, normalize_features: bool = False) -> "SoftmaxConfig":
        if variant not in VARIANT_DEFAULTS:
            raise ContractViolation(f"unknown softmax variant {variant!r}")
        dm, ds = VARIANT_DEFAULTS[variant]
        return cls(
            variant=variant,
            margin=dm if margin is None else margin,
            scale=ds if scale is None else scale,
            normalize_features=normalize_features,
        )

    @property
    def normalizes(self) -> bool:
        return self.variant != "plain" or self.normalize_features


@dataclass(frozen=True)
class ClsLossConfig:
    """Combined classification objective: margin softmax plus lam * KL term."""

    softmax: SoftmaxConfig
    lam: float = 0.01

    def __post_init__(self) -> None:
        if not (math.isfinite(self.lam) and self.lam >= 0.0):
            raise ContractViolation("lambda must be finite and >= 0")


@dataclass(frozen=True)
class SoftmaxLossResult:
    value: float
    grad_s: np.ndarray
    grad_w: np.ndarray
    logits: np.ndarray


def _check_batch(s_batch, labels, weights: ClassifierWeights):
    s = np.asarray(s_batch, dtype=np.float64)
    y = np.asarray(labels)
    if s.ndim != 2:
        raise ContractViolation(f"embedding batch must be 2-D, got shape {s.shape}")
    if y.ndim != 1 or y.shape[0] != s.shape[0]:
        raise ContractViolation("labels must be a vector matching the batch size")
    if not np.issubdtype(y.dtype, np.integer):
        raise ContractViolation("labels must be integers")
    if s.shape[1] != weights.dim:
        raise ContractViolation(
            f"embedding dim {s.shape[1]} does not match classifier dim {weights.dim}"
        )
    if y.size and (y.min() < 0 or y.max() >= weights.num_classes):
        raise ContractViolation("label out of range")
    return s, y.astype(np.int64)


def softmax_loss(s_batch, labels, weights: ClassifierWeights, cfg: SoftmaxConfig) -> SoftmaxLossResult:
    """Mean cross-entropy of the configured margin-softmax over a batch.

    Logits per variant, with cos_c the cosine between the normalized
    embedding and normalized class column:

    * plain:      scale * (w_c . s)   (cosines instead if normalize_features)
    * l2-softmax: scale * cos_c
    * am-softmax: scale * (cos_y - margin) on the target, scale * cos_c else
    * arcface:    scale * cos(theta_y + margin) on the target

    Returns the loss together with exact gradients w.r.t. the embedding
    batch and the raw (unnormalized) weight matrix.
    """
    s, y = _check_batch(s_batch, labels, weights)
    w = weights.w
    n, d = s.shape
    c = weights.num_classes
    rows = np.arange(n)

    if cfg.normalizes:
        ns = np.linalg.norm(s, axis=1)
        if np.any(ns == 0.0):
            raise ContractViolation("zero-norm embedding row under a normalizing variant")
        nw = np.linalg.norm(w, axis=0)
        if np.any(nw == 0.0):
            raise ContractViolation("zero-norm classifier column under a normalizing variant")
        s_hat = s / ns[:, None]
        w_hat = w / nw[None, :]
        cos = s_hat @ w_hat
        base = cos.copy()
        if cfg.variant == "am-softmax":
            base[rows, y] = cos[rows, y] - cfg.margin
        elif cfg.variant == "arcface":
            cos_t = np.clip(cos[rows, y], -1.0 + _COS_EPS, 1.0 - _COS_EPS)
            sin_t = np.sqrt(1.0 - cos_t * cos_t)
            base[rows, y] = cos_t * math.cos(cfg.margin) - sin_t * math.sin(cfg.margin)
        logits = cfg.scale * base
    else:
        logits = cfg.scale * (s @ w)

    zmax = logits.max(axis=1, keepdims=True)
    z = logits - zmax
    lse = np.log(np.sum(np.exp(z), axis=1, keepdims=True))
    logp = z - lse
    value = float(-np.mean(logp[rows, y]))

    g = np.exp(logp)  # dL/dlogits * n
    g[rows, y] -= 1.0
    g /= n

    if not cfg.normalizes:
        grad_s = cfg.scale * (g @ w.T)
        grad_w = cfg.scale * (s.T @ g)
    else:
        a = cfg.scale * g  # dL/dcos, before the margin chain on target entries
        if cfg.variant == "arcface":
            a[rows, y] *= math.cos(cfg.margin) + math.sin(cfg.margin) * cos_t / sin_t
        grad_s_hat = a @ w_hat.T
        grad_w_hat = s_hat.T @ a
        # back through the row/column normalizations
        grad_s = (grad_s_hat - np.sum(grad_s_hat * s_hat, axis=1, keepdims=True) * s_hat) / ns[:, None]
        grad_w = (grad_w_hat - np.sum(grad_w_hat * w_hat, axis=0, keepdims=True) * w_hat) / nw[None, :]

    return SoftmaxLossResult(value=value, grad_s=grad_s, grad_w=grad_w, logits=logits)


@dataclass(frozen=True)
class KlResult:
    value: float
    grad_mu: np.ndarray
    grad_sigma: np.ndarray


def kl_batch(mu, sigma):
    """Per-sample KL(N(mu, sigma^2) || N(0, I)) averaged over dimensions.

    Returns (values (N,), grad_mu (N, D), grad_sigma (N, D)) for a batch.
    The per-dimension mean (rather than sum) keeps the trade-off weight
    independent of the embedding size.
    """
    mu = np.asarray(mu, dtype=np.float64)
    sigma = np.asarray(sigma, dtype=np.float64)
    if mu.shape != sigma.shape or mu.ndim != 2:
        raise ContractViolation("mu and sigma must be matching (N, D) matrices")
    if np.any(sigma <= 0.0) or not np.all(np.isfinite(sigma)):
        raise ContractViolation("sigma must be finite and strictly positive")
    d = mu.shape[1]
    values = -0.5 * np.mean(1.0 + 2.0 * np.log(sigma) - mu * mu - sigma * sigma, axis=1)
    grad_mu = mu / d
    grad_sigma = (sigma - 1.0 / sigma) / d
    return values, grad_mu, grad_sigma


def kl_regularizer(g: GaussianEmbedding) -> KlResult:
    """KL divergence of a single embedding to the standard normal."""
    values, gmu, gsig = kl_batch(g.mu[None, :], g.sigma[None, :])
    return KlResult(value=float(values[0]), grad_mu=gmu[0], grad_sigma=gsig[0])


@dataclass(frozen=True)
class ClsLossResult:
    value: float
    softmax_value: float
    kl_value: float
    grad_mu: np.ndarray
    grad_sigma: np.ndarray
    grad_w: np.ndarray
    logits: np.ndarray


def cls_total_loss(mu, sigma, eps, labels, weights: ClassifierWeights,
                   cfg: ClsLossConfig) -> ClsLossResult:
    """Softmax loss on the sampled batch plus lam * batch-mean KL term.

    ``s = mu + eps * sigma`` is formed internally, so gradients reach mu
    both through the softmax path and the KL term, and reach sigma through
    the noise product and the KL term. With lam == 0 the KL branch is
    skipped entirely and the result equals the plain sampled softmax.
    """
    mu = np.asarray(mu, dtype=np.float64)
    sigma = np.asarray(sigma, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if mu.shape != sigma.shape or mu.shape != eps.shape:
        raise ContractViolation("mu, sigma and eps must share one (N, D) shape")
    s = mu + eps * sigma
    sm = softmax_loss(s, labels, weights, cfg.softmax)
    if cfg.lam != 0.0:
        n = mu.shape[0]
        values, gmu, gsig = kl_batch(mu, sigma)
        kl_value = float(np.mean(values))
        value = sm.value + cfg.lam * kl_value
        grad_mu = sm.grad_s + (cfg.lam / n) * gmu
        grad_sigma = sm.grad_s * eps + (cfg.lam / n) * gsig
    else:
        kl_value = 0.0
        value = sm.value
        grad_mu = sm.grad_s
        grad_sigma = sm.grad_s * eps
    return ClsLossResult(
        value=value,
        softmax_value=sm.value,
        kl_value=kl_value,
        grad_mu=grad_mu,
        grad_sigma=grad_sigma,
        grad_w=sm.grad_w,
        logits=sm.logits,
    )


@dataclass(frozen=True)
class HetNllResult:
    value: float
    grad_mu: np.ndarray
    grad_r: np.ndarray
    clamped: int


@dataclass(frozen=True)
class RgsLossResult:
    value: float
    residual_term: float
    logvar_term: float
    grad_mu: np.ndarray
    grad_r: np.ndarray
    clamped: int


def _het_terms(mu, r, targets):
    """Shared core of the heteroscedastic Gaussian NLL on an (N, D) batch.

    Per sample: 0.5 * mean_l [exp(-r_l) * (t_l - mu_l)^2 + r_l], with the
    additive normal constant dropped. r is clamped to +-R_CLAMP in both
    terms; clamped entries contribute no gradient and are counted.
    """
    mu = np.asarray(mu, dtype=np.float64)
    r = np.asarray(r, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if mu.shape != r.shape or mu.shape != targets.shape or mu.ndim != 2:
        raise ContractViolation("mu, r and targets must share one (N, D) shape")
    for name, arr in (("mu", mu), ("r", r), ("targets", targets)):
        if not np.all(np.isfinite(arr)):
            raise ContractViolation(f"{name} must be finite")
    d = mu.shape[1]
    rc = np.clip(r, -R_CLAMP, R_CLAMP)
    active = np.abs(r) < R_CLAMP
    inv = np.exp(-rc)
    sq = (targets - mu) ** 2
    residual = 0.5 * np.mean(inv * sq, axis=1)
    logvar = 0.5 * np.mean(rc, axis=1)
    grad_mu = inv * (mu - targets) / d
    grad_r = 0.5 * (1.0 - inv * sq) / d * active
    clamped = int(np.count_nonzero(~active))
    return residual, logvar, grad_mu, grad_r, clamped


def heteroscedastic_nll(mu, r, target) -> HetNllResult:
    """Gaussian NLL of one sample with log-variance parameterization.

    Minimized over r at r = ln((target - mu)^2): the loss adapts the
    weight of the squared error instead of letting noisy residuals
    dominate.
    """
    mu = np.atleast_1d(np.asarray(mu, dtype=np.float64))
    r = np.atleast_1d(np.asarray(r, dtype=np.float64))
    target = np.atleast_1d(np.asarray(target, dtype=np.float64))
    residual, logvar, gmu, gr, clamped = _het_terms(mu[None, :], r[None, :], target[None, :])
    return HetNllResult(
        value=float(residual[0] + logvar[0]),
        grad_mu=gmu[0],
        grad_r=gr[0],
        clamped=clamped,
    )


def batch_het_loss(mu, r, targets) -> RgsLossResult:
    """Batch mean of the heteroscedastic NLL against explicit targets."""
    residual, logvar, gmu, gr, clamped = _het_terms(mu, r, targets)
    n = mu.shape[0] if hasattr(mu, "shape") else len(mu)
    return RgsLossResult(
        value=float(np.mean(residual + logvar)),
        residual_term=float(np.mean(residual)),
        logvar_term=float(np.mean(logvar)),
        grad_mu=gmu / n,
        grad_r=gr / n,
        clamped=clamped,
    )


def batch_rgs_loss(mu, r, labels, weights: ClassifierWeights) -> RgsLossResult:
    """Batch mean heteroscedastic NLL with each sample's class column as target."""
    mu = np.asarray(mu, dtype=np.float64)
    y = np.asarray(labels)
    if y.ndim != 1 or y.shape[0] != mu.shape[0]:
        raise ContractViolation("labels must be a vector matching the batch size")
    if y.size and (y.min() < 0 or y.max() >= weights.num_classes):
        raise ContractViolation("label out of range")
    targets = weights.w[:, y].T
    return batch_het_loss(mu, r, targets)
