"""Small dense statistics: weighted moments, Gaussian densities, sampling.

Ensembles are stored column-wise: ``particles`` has shape (m, N), one
particle per column, matching the usual data-assimilation notation.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular

from .errors import NotPositiveDefinite

LOG_2PI = np.log(2.0 * np.pi)

# jitter schedule, as multiples of trace/m
_JITTER_START = 1e-10
_JITTER_STOP = 1e-6


@dataclass(frozen=True)
class RngStream:
    """Counter-based random stream keyed by ``(seed, label)``.

    Each distinct label gets an independent Philox key derived from a hash of
    the pair, so the draws of one stream never depend on how many draws were
    made from any other stream.
    """

    seed: int
    label: str = ""

    def key(self) -> int:
        digest = hashlib.sha256(f"{int(self.seed)}\x1f{self.label}".encode()).digest()
        return int.from_bytes(digest[:16], "little")

    def generator(self) -> np.random.Generator:
        return np.random.Generator(np.random.Philox(key=self.key()))

    def child(self, name) -> "RngStream":
        label = f"{self.label}/{name}" if self.label else str(name)
        return RngStream(self.seed, label)


def as_generator(rng) -> np.random.Generator:
    if isinstance(rng, RngStream):
        return rng.generator()
    if isinstance(rng, np.random.Generator):
        return rng
    raise TypeError(f"expected RngStream or numpy Generator, got {type(rng).__name__}")


@dataclass
class WeightedEnsemble:
    """N particles of dimension m (columns of ``particles``) with weights."""

    particles: np.ndarray
    weights: np.ndarray = field(default=None)

    def __post_init__(self):
        X = np.asarray(self.particles, dtype=float)
        if X.ndim == 1:
            X = X[None, :]
        if X.ndim != 2 or X.shape[1] < 1:
            raise ValueError("particles must be an (m, N) array with N >= 1")
        self.particles = X
        if self.weights is None:
            w = np.full(X.shape[1], 1.0 / X.shape[1])
        else:
            w = np.asarray(self.weights, dtype=float).reshape(-1)
        if w.shape[0] != X.shape[1]:
            raise ValueError("weights length must equal the number of particles")
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise ValueError("weights must be finite and non-negative")
        if abs(w.sum() - 1.0) > 1e-12:
            raise ValueError(f"weights must sum to 1 (sum={w.sum()!r})")
        self.weights = w

    @property
    def dim(self) -> int:
        return self.particles.shape[0]

    @property
    def size(self) -> int:
        return self.particles.shape[1]

    @classmethod
    def uniform(cls, particles) -> "WeightedEnsemble":
        return cls(particles)


def normalize_weights(w) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    return w / w.sum()


def weighted_mean(e: WeightedEnsemble) -> np.ndarray:
    return e.particles @ e.weights


def weighted_covariance(e: WeightedEnsemble) -> np.ndarray:
    """Weighted ensemble covariance without any bias correction."""
    dev = e.particles - weighted_mean(e)[:, None]
    P = (dev * e.weights) @ dev.T
    return 0.5 * (P + P.T)


def mixture_moments(weights, means, kernel_covs):
    """Mean and covariance of a Gaussian mixture.

    ``means`` is (m, l). ``kernel_covs`` is either a single (m, m) matrix shared
    by all kernels or an (l, m, m) stack.
    """
    w = np.asarray(weights, dtype=float)
    M = np.atleast_2d(np.asarray(means, dtype=float))
    C = np.asarray(kernel_covs, dtype=float)
    mean = M @ w
    dev = M - mean[:, None]
    spread = (dev * w) @ dev.T
    if C.ndim == 3:
        within = np.tensordot(w, C, axes=1)
    else:
        within = np.atleast_2d(C) * w.sum()
    cov = within + spread
    return mean, 0.5 * (cov + cov.T)


def cholesky_jittered(cov, return_jitter=False):
    """Lower Cholesky factor of ``cov + eps*I`` with escalating jitter.

    eps is 0 first, then 1e-10*trace/m, growing tenfold up to 1e-6*trace/m.
    """
    C = np.atleast_2d(np.asarray(cov, dtype=float))
    m = C.shape[0]
    scale = np.trace(C) / m
    if scale == 0.0 and not np.any(C):
        L = np.zeros_like(C)
        return (L, 0.0) if return_jitter else L
    if not np.isfinite(scale) or scale < 0:
        raise NotPositiveDefinite(f"covariance has invalid trace {np.trace(C)!r}")

    eps_list = [0.0]
    rel = _JITTER_START
    while rel <= _JITTER_STOP * (1 + 1e-9):
        eps_list.append(rel * scale)
        rel *= 10.0
    eye = np.eye(m)
    for eps in eps_list:
        try:
            L = np.linalg.cholesky(C + eps * eye if eps else C)
        except np.linalg.LinAlgError:
            continue
        return (L, eps) if return_jitter else L
    raise NotPositiveDefinite(f"Cholesky failed after jitter up to {eps_list[-1]:.3g}")


def logpdf_chol(diff, L) -> np.ndarray:
    """Gaussian log-density of residuals ``diff`` (k,) or (k, K) given L."""
    d = np.asarray(diff, dtype=float)
    k = L.shape[0]
    z = solve_triangular(L, d, lower=True, check_finite=False)
    maha = np.sum(z * z, axis=0)
    logdet = 2.0 * np.sum(np.log(np.diag(L)))
    return -0.5 * (k * LOG_2PI + logdet + maha)


def gaussian_logpdf(x, mean, cov):
    """log N(x - mean, cov); x may be a vector or a (k, K) batch of columns."""
    x = np.asarray(x, dtype=float)
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    L = cholesky_jittered(cov)
    if x.ndim <= 1:
        x = np.atleast_1d(x)
        if np.any(np.diag(L) == 0):
            raise NotPositiveDefinite("degenerate covariance has no density")
        return float(logpdf_chol(x - mean, L))
    if np.any(np.diag(L) == 0):
        raise NotPositiveDefinite("degenerate covariance has no density")
    return logpdf_chol(x - mean[:, None], L)


def sample_mvn(mean, cov, n, rng) -> np.ndarray:
    """Draw ``n`` columns from N(mean, cov).

    Normals are drawn as an (n, m) block so column j only depends on the first
    (j+1)*m draws of the stream.
    """
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    L = cholesky_jittered(cov)
    z = as_generator(rng).standard_normal((n, mean.shape[0])).T
    return mean[:, None] + L @ z
