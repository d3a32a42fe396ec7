import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from numpy.testing import assert_allclose

from engsf.errors import NotPositiveDefinite
from engsf.stats import (
    RngStream,
    WeightedEnsemble,
    cholesky_jittered,
    gaussian_logpdf,
    mixture_moments,
    sample_mvn,
    weighted_covariance,
    weighted_mean,
)

finite = st.floats(-100, 100, allow_nan=False, allow_infinity=False)


@st.composite
def ensembles(draw, max_m=4, max_n=12):
    m = draw(st.integers(1, max_m))
    n = draw(st.integers(1, max_n))
    X = draw(arrays(float, (m, n), elements=finite))
    raw = draw(arrays(float, n, elements=st.floats(0.0, 1.0)))
    raw = raw + 1e-3
    return WeightedEnsemble(X, raw / raw.sum())


@pytest.mark.parametrize(
    ("particles", "weights", "expected"),
    [
        ([0.0, 2.0], [0.5, 0.5], 1.0),
        ([3.7], [1.0], 3.7),
        ([1.0, 2.0, 4.0], [0.5, 0.25, 0.25], 2.0),
    ],
)
def test_weighted_mean(particles, weights, expected):
    e = WeightedEnsemble(np.array([particles]), weights)
    assert weighted_mean(e)[0] == pytest.approx(expected, abs=1e-15)


def test_weighted_covariance_examples():
    e = WeightedEnsemble(np.array([[-1.0, 1.0]]), [0.5, 0.5])
    assert weighted_covariance(e)[0, 0] == pytest.approx(1.0)
    assert np.all(weighted_covariance(WeightedEnsemble(np.array([[2.0], [5.0]]))) == 0)
    e2 = WeightedEnsemble(np.array([[-1.0, 1.0], [0.0, 0.0]]))
    assert_allclose(weighted_covariance(e2), np.diag([1.0, 0.0]), atol=1e-15)


@given(ensembles())
def test_weighted_covariance_is_valid_cov(e):
    P = weighted_covariance(e)
    m = e.dim
    assert_allclose(P, P.T, rtol=1e-12, atol=0)
    tr = max(np.trace(P), 1e-300)
    assert np.linalg.eigvalsh(P).min() >= -1e-10 * tr / m


@given(ensembles())
def test_mixture_moments_zero_kernels_equals_ensemble_moments(e):
    mean, cov = mixture_moments(e.weights, e.particles, np.zeros((e.dim, e.dim)))
    assert np.array_equal(mean, weighted_mean(e))
    assert np.array_equal(cov, weighted_covariance(e))


def test_mixture_moments_examples():
    mu, S = np.array([0.3, -1.0]), np.array([[2.0, 0.1], [0.1, 0.5]])
    mean, cov = mixture_moments([1.0], mu[:, None], S)
    assert_allclose(mean, mu)
    assert_allclose(cov, S)
    mean, cov = mixture_moments([0.5, 0.5], np.array([[1.5, -1.5]]), [[0.01]])
    assert mean[0] == pytest.approx(0.0)
    assert cov[0, 0] == pytest.approx(2.26)


def test_mixture_moments_monte_carlo(rng):
    w = np.array([0.2, 0.5, 0.3])
    means = np.array([[-2.0, 0.5, 3.0], [1.0, -1.0, 0.0]])
    covs = np.stack([np.array([[1.0, 0.3], [0.3, 0.5]]), np.diag([0.2, 2.0]),
                     np.array([[0.7, -0.2], [-0.2, 0.4]])])
    n = 10**6
    comp = rng.choice(3, size=n, p=w)
    samples = np.empty((n, 2))
    for k in range(3):
        idx = comp == k
        samples[idx] = rng.multivariate_normal(means[:, k], covs[k], size=idx.sum())
    mean, cov = mixture_moments(w, means, covs)
    mc_mean = samples.mean(axis=0)
    mc_cov = np.cov(samples.T)
    se_mean = np.sqrt(np.diag(mc_cov) / n)
    assert np.all(np.abs(mc_mean - mean) < 3 * se_mean)
    # standard error of a covariance entry: sqrt(var((xi-mi)(xj-mj)) / n)
    dev = samples - mc_mean
    for i in range(2):
        for j in range(2):
            prod = dev[:, i] * dev[:, j]
            se = prod.std() / np.sqrt(n)
            assert abs(mc_cov[i, j] - cov[i, j]) < 3 * se


def test_gaussian_logpdf_examples():
    assert gaussian_logpdf([0.0], [0.0], [[1.0]]) == pytest.approx(-0.5 * np.log(2 * np.pi), abs=1e-15)
    assert gaussian_logpdf([1.0, 1.0], [0.0, 0.0], np.eye(2)) == pytest.approx(-(np.log(2 * np.pi) + 1))
    C = np.array([[2.0, 0.3, 0.0], [0.3, 1.0, 0.1], [0.0, 0.1, 0.5]])
    mu = np.array([1.0, -2.0, 0.5])
    expected = -0.5 * (3 * np.log(2 * np.pi) + np.log(np.linalg.det(C)))
    assert gaussian_logpdf(mu, mu, C) == pytest.approx(expected, rel=1e-13)


def test_gaussian_logpdf_batch_matches_scalar(rng):
    C = np.array([[1.0, 0.4], [0.4, 2.0]])
    X = rng.standard_normal((2, 5))
    batch = gaussian_logpdf(X, [0.1, 0.2], C)
    single = [gaussian_logpdf(X[:, k], [0.1, 0.2], C) for k in range(5)]
    assert_allclose(batch, single, rtol=1e-14)


@pytest.mark.parametrize("sigma", [0.1, 1.0, 7.5])
def test_gaussian_pdf_integrates_to_one(sigma):
    x = np.linspace(-8 * sigma, 8 * sigma, 20001) + 0.3
    logp = gaussian_logpdf(x[None, :], [0.3], [[sigma**2]])
    assert abs(np.trapezoid(np.exp(logp), x) - 1.0) < 1e-6


def test_cholesky_examples():
    assert_allclose(cholesky_jittered(np.eye(3)), np.eye(3))
    assert_allclose(cholesky_jittered(np.diag([4.0, 9.0])), np.diag([2.0, 3.0]))
    C = np.array([[1.0, 1.0], [1.0, 1.0]])
    L, eps = cholesky_jittered(C, return_jitter=True)
    assert eps > 0
    assert np.max(np.abs(L @ L.T - C)) < 1e-6 * np.trace(C)
    assert np.max(np.abs(L @ L.T - (C + eps * np.eye(2)))) < 1e-10 * np.trace(C)


def test_cholesky_fails_on_indefinite():
    with pytest.raises(NotPositiveDefinite):
        cholesky_jittered(np.array([[1.0, 0.0], [0.0, -1.0]]))


@given(arrays(float, (3, 2), elements=st.floats(-10, 10)))
def test_cholesky_reconstruction(B):
    C = B @ B.T  # rank <= 2, so jitter is needed
    if np.trace(C) < 1e-8:
        return
    L, eps = cholesky_jittered(C, return_jitter=True)
    assert np.allclose(L, np.tril(L))
    assert np.max(np.abs(L @ L.T - (C + eps * np.eye(3)))) < 1e-10 * np.trace(C)


def test_sample_mvn_zero_cov():
    X = sample_mvn([1.0, -2.0], np.zeros((2, 2)), 7, RngStream(3, "x"))
    assert np.all(X == np.array([[1.0], [-2.0]]))


def test_sample_mvn_covariance():
    X = sample_mvn([0.0, 0.0], np.diag([1.0, 4.0]), 10**5, RngStream(11, "lln"))
    C = np.cov(X)
    assert abs(C[0, 0] - 1) < 0.05 and abs(C[1, 1] - 4) < 0.2
    assert abs(C[0, 1]) < 0.05 * 2


def test_sample_mvn_deterministic():
    a = sample_mvn([0.0, 1.0], np.eye(2), 50, RngStream(5, "obs/step=3"))
    b = sample_mvn([0.0, 1.0], np.eye(2), 50, RngStream(5, "obs/step=3"))
    c = sample_mvn([0.0, 1.0], np.eye(2), 50, RngStream(5, "obs/step=4"))
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_rng_stream_independent_of_interleaving():
    s1, s2 = RngStream(9, "forecast/particle=1"), RngStream(9, "forecast/particle=2")
    g1 = s1.generator()
    a = g1.standard_normal(4)
    s2.generator().standard_normal(1000)
    b = s1.generator().standard_normal(4)
    assert np.array_equal(a, b)
    assert RngStream(9, "a").child("b") == RngStream(9, "a/b")


def test_sample_prefix_property():
    # particle j's draw does not depend on how many particles follow it
    a = sample_mvn([0.0], [[1.0]], 10, RngStream(1, "p"))
    b = sample_mvn([0.0], [[1.0]], 25, RngStream(1, "p"))
    assert np.array_equal(a, b[:, :10])


def test_weighted_ensemble_validation():
    with pytest.raises(ValueError):
        WeightedEnsemble(np.zeros((1, 2)), [0.7, 0.7])
    with pytest.raises(ValueError):
        WeightedEnsemble(np.zeros((1, 2)), [1.5, -0.5])
    e = WeightedEnsemble(np.zeros((2, 4)))
    assert np.all(e.weights == 0.25)
