import math

import numpy as np
import pytest

from dulearn.embeddings import (
    GaussianEmbedding,
    LatentConfig,
    harmonic_mean_rows,
    harmonic_mean_sigma,
    sample_embedding,
    sigma_from_raw,
)
from dulearn.errors import ContractViolation


def test_sample_zero_eps_recovers_mu():
    g = GaussianEmbedding(mu=[1.0, 2.0], sigma=[0.5, 0.5])
    s = sample_embedding(g, [0.0, 0.0])
    assert np.array_equal(s.s, [1.0, 2.0])


def test_sample_identity_on_eps():
    g = GaussianEmbedding(mu=[0.0, 0.0], sigma=[1.0, 1.0])
    s = sample_embedding(g, [1.0, -1.0])
    assert np.array_equal(s.s, [1.0, -1.0])


def test_sample_direct_substitution():
    # scalar-loop oracle: s_l = mu_l + eps_l * sigma_l
    mu, sigma, eps = [1.0, 2.0], [0.5, 2.0], [2.0, -1.0]
    expected = [m + e * s for m, s, e in zip(mu, sigma, eps)]
    assert expected == [2.0, 0.0]
    got = sample_embedding(GaussianEmbedding(mu, sigma), eps)
    assert np.allclose(got.s, expected, rtol=0, atol=0)
    assert np.array_equal(got.eps, eps)


def test_sample_dimension_mismatch():
    g = GaussianEmbedding(mu=[1.0, 2.0], sigma=[0.5, 0.5])
    with pytest.raises(ContractViolation):
        sample_embedding(g, [0.0, 0.0, 0.0])


def test_sample_linear_in_eps():
    rng = np.random.default_rng(42)
    for _ in range(20):
        d = rng.integers(1, 8)
        g = GaussianEmbedding(rng.standard_normal(d), rng.uniform(0.1, 2.0, d))
        e1, e2 = rng.standard_normal(d), rng.standard_normal(d)
        a, b = rng.standard_normal(2)
        lhs = sample_embedding(g, a * e1 + b * e2).s
        rhs = (a * sample_embedding(g, e1).s + b * sample_embedding(g, e2).s
               - (a + b - 1) * g.mu)
        assert np.allclose(lhs, rhs, atol=1e-12)


def test_sample_moments_converge():
    # empirical mean within 3 sigma/sqrt(N) per dim, std within 5% relative
    rng = np.random.default_rng(7)
    g = GaussianEmbedding(mu=[0.3, -1.2, 2.0], sigma=[0.4, 1.0, 2.5])
    n = 100_000
    eps = rng.standard_normal((n, 3))
    samples = g.mu + eps * g.sigma
    assert np.all(np.abs(samples.mean(axis=0) - g.mu) <= 3.0 * g.sigma / math.sqrt(n))
    assert np.all(np.abs(samples.std(axis=0) / g.sigma - 1.0) < 0.05)


def test_harmonic_mean_examples():
    assert harmonic_mean_sigma(GaussianEmbedding([0, 0, 0], [0.5, 0.5, 0.5])) == pytest.approx(0.5)
    # oracle: D / sum(1/sigma) = 2 / (1 + 2)
    assert harmonic_mean_sigma(GaussianEmbedding([0, 0], [1.0, 0.5])) == pytest.approx(2.0 / 3.0)
    assert harmonic_mean_sigma(GaussianEmbedding([0] * 4, [1.0] * 4)) == pytest.approx(1.0)


def test_harmonic_mean_scale_equivariant():
    rng = np.random.default_rng(3)
    for _ in range(20):
        sigma = rng.uniform(0.05, 3.0, rng.integers(1, 9))
        mu = np.zeros_like(sigma)
        k = rng.uniform(0.1, 10.0)
        assert harmonic_mean_sigma(GaussianEmbedding(mu, k * sigma)) == pytest.approx(
            k * harmonic_mean_sigma(GaussianEmbedding(mu, sigma)))


def test_harmonic_mean_rows_matches_scalar():
    rng = np.random.default_rng(5)
    sig = rng.uniform(0.1, 2.0, (6, 4))
    rows = harmonic_mean_rows(sig)
    for i in range(6):
        assert rows[i] == pytest.approx(harmonic_mean_sigma(GaussianEmbedding(np.zeros(4), sig[i])))


def test_sigma_from_raw_examples():
    assert np.allclose(sigma_from_raw([0.0, 0.0]), [1.0, 1.0])
    assert sigma_from_raw([math.log(4.0)])[0] == pytest.approx(2.0)
    assert sigma_from_raw([-2.0 * math.log(2.0)])[0] == pytest.approx(0.5)


def test_sigma_from_raw_round_trip():
    rng = np.random.default_rng(11)
    sigma = rng.uniform(0.01, 5.0, 32)
    assert np.allclose(sigma_from_raw(2.0 * np.log(sigma)), sigma, rtol=1e-12)


def test_sigma_from_raw_rejects_nonfinite():
    with pytest.raises(ContractViolation):
        sigma_from_raw([np.inf])


def test_embedding_validation():
    with pytest.raises(ContractViolation):
        GaussianEmbedding(mu=[1.0, 2.0], sigma=[1.0])
    with pytest.raises(ContractViolation):
        GaussianEmbedding(mu=[1.0], sigma=[0.0])
    with pytest.raises(ContractViolation):
        GaussianEmbedding(mu=[1.0], sigma=[-0.5])
    with pytest.raises(ContractViolation):
        LatentConfig(dim=0)
