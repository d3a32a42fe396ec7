"""Ensemble Gaussian sum filter.

Each particle carries a Gaussian kernel whose covariance (the bandwidth) is a
shrunken copy of the weighted ensemble covariance. The Bayesian update is the
exact Gaussian-sum posterior: kernels are reweighted by their predictive
likelihood and each mean gets a Kalman correction with a shared gain. The
posterior is resampled at every assimilation.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve, solve_triangular
from scipy.special import logsumexp

from .errors import NotPositiveDefinite
from .stats import (
    WeightedEnsemble,
    as_generator,
    cholesky_jittered,
    mixture_moments,
    sample_mvn,
    weighted_covariance,
    weighted_mean,
)

log = logging.getLogger(__name__)

# a posterior weight this close to 1 triggers Gaussian resampling
SINGLE_KERNEL_TOL = 1e-9


class BandwidthRule(enum.Enum):
    MODIFIED = "modified"
    SILVERMAN = "silverman"
    SILVERMAN_EXACT_C = "silverman_exact_c"

    @classmethod
    def parse(cls, value) -> "BandwidthRule":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).strip().lower())
        except ValueError:
            names = ", ".join(r.value for r in cls)
            raise ValueError(f"unknown bandwidth rule {value!r} (expected one of {names})") from None


@dataclass
class ObservationOp:
    """Linear observation y = H x + r with r ~ N(0, R)."""

    H: np.ndarray
    R: np.ndarray

    def __post_init__(self):
        self.H = np.atleast_2d(np.asarray(self.H, dtype=float))
        self.R = np.atleast_2d(np.asarray(self.R, dtype=float))
        n = self.H.shape[0]
        if n < 1 or self.R.shape != (n, n):
            raise ValueError(f"R must be {n}x{n}")
        if not np.allclose(self.R, self.R.T, rtol=1e-12, atol=0):
            raise ValueError("R must be symmetric")
        if np.linalg.eigvalsh(self.R).min() <= 0:
            raise ValueError("R must be positive definite")

    @property
    def n(self) -> int:
        return self.H.shape[0]

    @property
    def m(self) -> int:
        return self.H.shape[1]

    @classmethod
    def identity(cls, m, variance) -> "ObservationOp":
        var = np.broadcast_to(np.asarray(variance, dtype=float), (m,))
        return cls(np.eye(m), np.diag(var))


@dataclass
class GaussianSumPosterior:
    weights: np.ndarray
    means: np.ndarray  # (m, l)
    shared_cov: np.ndarray

    def mean(self) -> np.ndarray:
        return self.means @ self.weights

    def moments(self):
        return mixture_moments(self.weights, self.means, self.shared_cov)

    def as_ensemble(self) -> WeightedEnsemble:
        return WeightedEnsemble(self.means, self.weights)


def silverman_c(m) -> float:
    return (4.0 / (m + 2.0)) ** (2.0 / (m + 4.0))


def bandwidth_factor(N, m, rule=BandwidthRule.MODIFIED) -> float:
    rule = BandwidthRule.parse(rule)
    if rule is BandwidthRule.MODIFIED:
        return float(N) ** (-2.0 / (m + 2.0))
    factor = float(N) ** (-2.0 / (m + 4.0))
    if rule is BandwidthRule.SILVERMAN_EXACT_C:
        factor *= silverman_c(m)
    return factor


def bandwidth_sigma(P_e, N, m, rule=BandwidthRule.MODIFIED) -> np.ndarray:
    if N < 1:
        raise ValueError("N must be >= 1")
    return bandwidth_factor(N, m, rule) * np.atleast_2d(np.asarray(P_e, dtype=float))


def _gain(sigma_f, obs: ObservationOp):
    """Shared Kalman gain and the Cholesky factor of the innovation covariance."""
    HS = obs.H @ sigma_f
    S = HS @ obs.H.T + obs.R
    L = cholesky_jittered(0.5 * (S + S.T))
    if np.any(np.diag(L) == 0):
        raise NotPositiveDefinite("innovation covariance is singular")
    K = cho_solve((L, True), HS, check_finite=False).T
    return K, L


def analysis_update(prior: WeightedEnsemble, sigma_f, obs: ObservationOp, y) -> GaussianSumPosterior:
    """Gaussian-sum Bayesian update with one kernel covariance shared by all particles."""
    sigma_f = np.atleast_2d(np.asarray(sigma_f, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    K, L = _gain(sigma_f, obs)

    innov = y[:, None] - obs.H @ prior.particles
    z = solve_triangular(L, innov, lower=True, check_finite=False)
    # constant terms of the log-density are identical for every kernel
    with np.errstate(divide="ignore"):
        logw = np.log(prior.weights) - 0.5 * np.sum(z * z, axis=0)
    logw -= logsumexp(logw)
    w = np.exp(logw)
    w /= w.sum()

    means = prior.particles + K @ innov
    cov = sigma_f - K @ obs.H @ sigma_f
    return GaussianSumPosterior(w, means, 0.5 * (cov + cov.T))


def effective_sample_size(weights) -> float:
    w = np.asarray(weights, dtype=float)
    return 1.0 / float(np.sum(w * w))


def resample(ens: WeightedEnsemble, rng=None, uniforms=None) -> WeightedEnsemble:
    """CDF-inversion resampling with sorted uniforms.

    Sorting the N uniforms lets a single upward pass over the CDF serve every
    draw; ``searchsorted`` performs that pass. ``uniforms`` overrides the draws.
    """
    N = ens.size
    if uniforms is None:
        u = as_generator(rng).random(N)
    else:
        u = np.asarray(uniforms, dtype=float)
        if u.shape != (N,):
            raise ValueError("need exactly N uniforms")
    u = np.sort(u)
    cdf = np.cumsum(ens.weights)
    idx = np.searchsorted(cdf, u, side="left")
    # roundoff can leave cdf[-1] a hair below a uniform
    last = np.flatnonzero(ens.weights > 0)[-1]
    idx = np.minimum(idx, last)
    return WeightedEnsemble(ens.particles[:, idx].copy())


def gaussian_resample(winner, forecast: WeightedEnsemble, obs: ObservationOp, y, rng,
                      rule=BandwidthRule.MODIFIED) -> WeightedEnsemble:
    """Redraw an N-member ensemble around a single surviving kernel.

    State perturbations are the weighted forecast deviations scaled by the
    bandwidth factor; measurement perturbations are the centred columns of
    y + r_j. Both are scaled by sqrt(N) so the output sample covariance
    approaches the analysis covariance of the winning kernel.
    """
    winner = np.atleast_1d(np.asarray(winner, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    m, N = forecast.dim, forecast.size
    xbar = weighted_mean(forecast)
    c = bandwidth_factor(N, m, rule)
    A = np.sqrt(forecast.weights * c) * (forecast.particles - xbar[:, None])
    sigma_f = A @ A.T
    K, _ = _gain(sigma_f, obs)

    D = y[:, None] + sample_mvn(np.zeros(obs.n), obs.R, N, rng)
    Dp = D - D.mean(axis=1, keepdims=True)
    Ap = np.sqrt(N) * A
    out = winner[:, None] + Ap + K @ (Dp - obs.H @ Ap)
    return WeightedEnsemble(out)


def forecast(ens: WeightedEnsemble, model, steps, rng=None) -> WeightedEnsemble:
    """Advance every particle ``steps`` model steps; weights are kept.

    Step s draws its noise from ``rng.child("step=s")`` as an (N, m) block, so
    particle i always receives row i of that block.
    """
    X = ens.particles
    for s in range(steps):
        xi = None
        if model.noisy:
            if rng is None:
                raise ValueError("a noisy model needs an rng")
            g = rng.child(f"step={s}").generator() if hasattr(rng, "child") else as_generator(rng)
            xi = g.standard_normal((ens.size, ens.dim)).T
        X = model.step(X, xi)
    return WeightedEnsemble(X, ens.weights.copy())


@dataclass
class AssimilationResult:
    posterior: GaussianSumPosterior
    ensemble: WeightedEnsemble
    sigma_f: np.ndarray
    n_eff: float
    gaussian_resampled: bool


def engsf_assimilate(ens: WeightedEnsemble, obs: ObservationOp, y, rng,
                     rule=BandwidthRule.MODIFIED) -> AssimilationResult:
    """Bandwidth, Gaussian-sum update and resampling for one observation time."""
    rule = BandwidthRule.parse(rule)
    sigma_f = bandwidth_sigma(weighted_covariance(ens), ens.size, ens.dim, rule)
    post = analysis_update(ens, sigma_f, obs, y)
    n_eff = effective_sample_size(post.weights)
    s = int(np.argmax(post.weights))
    child = rng.child if hasattr(rng, "child") else (lambda _: rng)
    if ens.size > 1 and post.weights[s] >= 1.0 - SINGLE_KERNEL_TOL:
        out = gaussian_resample(post.means[:, s], ens, obs, y, child("gauss"), rule)
        used = True
    else:
        out = resample(post.as_ensemble(), child("resample"))
        used = False
    log.debug("engsf analysis: n_eff=%.3f gaussian_resample=%s", n_eff, used)
    return AssimilationResult(post, out, sigma_f, n_eff, used)


def engsf_step(ens: WeightedEnsemble, obs: ObservationOp, y, rng,
               rule=BandwidthRule.MODIFIED) -> WeightedEnsemble:
    """One EnGSF assimilation on an already-forecast ensemble."""
    return engsf_assimilate(ens, obs, y, rng, rule).ensemble
