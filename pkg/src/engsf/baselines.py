"""Reference filters: stochastic EnKF (two forms), serial EnSRF and SIR.

The EnKF gain uses the unbiased 1/(N-1) sample covariance of the ensemble,
which differs from the weighted, uncorrected covariance inside EnGSF.
"""

from __future__ import annotations

import enum

import numpy as np
from scipy.linalg import cho_solve
from scipy.special import logsumexp

from .errors import AllWeightsZero, NonDiagonalR, NotPositiveDefinite
from .filter import ObservationOp, forecast, resample
from .stats import WeightedEnsemble, cholesky_jittered, logpdf_chol, sample_mvn


class EnkfVariant(enum.Enum):
    PERTURBED_OBS = "perturbed_obs"
    APPENDIX = "appendix"


def _sample_gain(A, obs: ObservationOp):
    N = A.shape[1]
    HA = obs.H @ A
    PHt = A @ HA.T / (N - 1)
    S = HA @ HA.T / (N - 1) + obs.R
    L = cholesky_jittered(0.5 * (S + S.T))
    if np.any(np.diag(L) == 0):
        raise NotPositiveDefinite("innovation covariance is singular")
    return cho_solve((L, True), PHt.T, check_finite=False).T


def enkf_update(ens: WeightedEnsemble, obs: ObservationOp, y, rng,
                variant=EnkfVariant.PERTURBED_OBS) -> WeightedEnsemble:
    """Stochastic EnKF analysis with perturbed observations D = y + r_j.

    The APPENDIX variant updates the mean with the mean observation and the
    anomalies with the observation anomalies separately, then adds them.
    """
    variant = EnkfVariant(variant)
    X = ens.particles
    N = X.shape[1]
    if N < 2:
        raise ValueError("EnKF needs at least two members")
    y = np.atleast_1d(np.asarray(y, dtype=float))
    xbar = X.mean(axis=1)
    A = X - xbar[:, None]
    K = _sample_gain(A, obs)
    D = y[:, None] + sample_mvn(np.zeros(obs.n), obs.R, N, rng)

    if variant is EnkfVariant.PERTURBED_OBS:
        Xa = X + K @ (D - obs.H @ X)
    else:
        dbar = D.mean(axis=1)
        mean_a = xbar + K @ (dbar - obs.H @ xbar)
        Xa = mean_a[:, None] + (A + K @ ((D - dbar[:, None]) - obs.H @ A))
    return WeightedEnsemble(Xa)


def ensrf_update(ens: WeightedEnsemble, obs: ObservationOp, y) -> WeightedEnsemble:
    """Serial square-root EnKF; one scalar observation at a time, no perturbed obs.

    Anomalies get the reduced gain K / (1 + sqrt(R_jj / (HPH' + R_jj))).
    """
    R = obs.R
    if np.any(R - np.diag(np.diag(R))):
        raise NonDiagonalR("serial EnSRF needs a diagonal R")
    X = ens.particles
    N = X.shape[1]
    if N < 2:
        raise ValueError("EnSRF needs at least two members")
    y = np.atleast_1d(np.asarray(y, dtype=float))
    xbar = X.mean(axis=1)
    A = X - xbar[:, None]
    for j in range(obs.n):
        h = obs.H[j]
        r = R[j, j]
        hA = h @ A
        hph = hA @ hA / (N - 1)
        K = A @ hA / (N - 1) / (hph + r)
        xbar = xbar + K * (y[j] - h @ xbar)
        alpha = 1.0 / (1.0 + np.sqrt(r / (hph + r)))
        A = A - alpha * np.outer(K, hA)
    return WeightedEnsemble(xbar[:, None] + A)


def sir_reweight(ens: WeightedEnsemble, obs: ObservationOp, y) -> WeightedEnsemble:
    """Multiply weights by the observation likelihood (log domain) and renormalize."""
    y = np.atleast_1d(np.asarray(y, dtype=float))
    L = cholesky_jittered(obs.R)
    loglik = logpdf_chol(y[:, None] - obs.H @ ens.particles, L)
    with np.errstate(divide="ignore"):
        logw = np.log(ens.weights) + loglik
    if not np.any(np.isfinite(logw)):
        raise AllWeightsZero("every particle has zero likelihood")
    logw = logw - logsumexp(logw)
    w = np.exp(logw)
    return WeightedEnsemble(ens.particles, w / w.sum())


def sir_update(ens: WeightedEnsemble, obs: ObservationOp, y, rng):
    """Reweight then resample; returns (weighted ensemble, resampled ensemble)."""
    weighted = sir_reweight(ens, obs, y)
    return weighted, resample(weighted, rng)


def sir_step(ens: WeightedEnsemble, model, obs: ObservationOp, y, rng, steps=1) -> WeightedEnsemble:
    """Bootstrap particle filter step: propagate, reweight, resample."""
    moved = forecast(ens, model, steps, rng.child("forecast") if hasattr(rng, "child") else rng)
    _, out = sir_update(moved, obs, y, rng.child("resample") if hasattr(rng, "child") else rng)
    return out
