"""Gaussian latent embeddings: reparameterized sampling and spread summaries.

An embedding is a diagonal Gaussian over a D-dimensional latent space,
carried as a (mu, sigma) pair. Sampling uses the reparameterization
s = mu + eps * sigma with caller-supplied standard-normal noise, so the
draw stays differentiable in both parameters and reproducible in tests.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation

SIGMA_PARAMETERIZATION = "log-variance-exp"


def _as_vector(name: str, value) -> np.ndarray:
    arr = np.asarray(value, dtype=np.float64)
    if arr.ndim != 1:
        raise ContractViolation(f"{name} must be a 1-D vector, got shape {arr.shape}")
    return arr


@dataclass(frozen=True)
class LatentConfig:
    """Latent dimensionality and how raw head outputs map to sigma."""

    dim: int
    sigma_parameterization: str = SIGMA_PARAMETERIZATION

    def __post_init__(self) -> None:
        if int(self.dim) < 1:
            raise ContractViolation(f"latent dim must be >= 1, got {self.dim}")
        if self.sigma_parameterization != SIGMA_PARAMETERIZATION:
            raise ContractViolation(
                f"unsupported sigma parameterization {self.sigma_parameterization!r}"
            )


@dataclass(frozen=True)
class GaussianEmbedding:
    """Per-sample identity feature (mu) and uncertainty (sigma), both length D."""

    mu: np.ndarray
    sigma: np.ndarray

    def __post_init__(self) -> None:
        mu = _as_vector("mu", self.mu)
        sigma = _as_vector("sigma", self.sigma)
        if mu.shape != sigma.shape:
            raise ContractViolation(
                f"mu and sigma lengths differ: {mu.shape[0]} vs {sigma.shape[0]}"
            )
        if not np.all(np.isfinite(mu)):
            raise ContractViolation("mu must be finite")
        if not np.all(np.isfinite(sigma)) or np.any(sigma <= 0.0):
            raise ContractViolation("sigma must be finite and strictly positive")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "sigma", sigma)

    @property
    def dim(self) -> int:
        return self.mu.shape[0]


@dataclass(frozen=True)
class SampledEmbedding:
    """A concrete draw s = mu + eps * sigma together with the noise used."""

    s: np.ndarray
    eps: np.ndarray


def sample_embedding(g: GaussianEmbedding, eps) -> SampledEmbedding:
    """Reparameterized draw from ``g`` using caller-supplied noise.

    The gradient of ``s`` w.r.t. mu is the identity and w.r.t. sigma is
    diag(eps), which is what keeps the sampling step trainable.
    """
    eps = _as_vector("eps", eps)
    if eps.shape != g.mu.shape:
        raise ContractViolation(
            f"eps length {eps.shape[0]} does not match embedding dim {g.dim}"
        )
    return SampledEmbedding(s=g.mu + eps * g.sigma, eps=eps)


def harmonic_mean_sigma(g: GaussianEmbedding) -> float:
    """Scalar uncertainty score: harmonic mean of the per-dimension sigma."""
    return float(g.dim / np.sum(1.0 / g.sigma))


def harmonic_mean_rows(sigma) -> np.ndarray:
    """Row-wise harmonic mean for an (N, D) matrix of positive sigmas."""
    sigma = np.asarray(sigma, dtype=np.float64)
    if sigma.ndim != 2:
        raise ContractViolation(f"expected an (N, D) matrix, got shape {sigma.shape}")
    if np.any(sigma <= 0.0) or not np.all(np.isfinite(sigma)):
        raise ContractViolation("sigma entries must be finite and strictly positive")
    return sigma.shape[1] / np.sum(1.0 / sigma, axis=1)


def sigma_from_raw(r) -> np.ndarray:
    """Map raw log-variance head output r to sigma = exp(r / 2).

    Strictly positive and monotone in r; works element-wise on any shape.
    """
    r = np.asarray(r, dtype=np.float64)
    if not np.all(np.isfinite(r)):
        raise ContractViolation("raw log-variance must be finite")
    return np.exp(0.5 * r)
