"""Grid densities, the grid-Bayes oracle, discrete KL divergence and RMSE."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .errors import LengthMismatch, ZeroMass
from .filter import BandwidthRule, GaussianSumPosterior, bandwidth_sigma
from .stats import WeightedEnsemble, weighted_covariance

KL_FLOOR = 1e-300


def trapezoid_weights(points) -> np.ndarray:
    """Quadrature weights so that sum(w * f) is the trapezoid rule on ``points``."""
    x = np.asarray(points, dtype=float)
    w = np.zeros_like(x)
    dx = np.diff(x)
    w[:-1] += 0.5 * dx
    w[1:] += 0.5 * dx
    return w


@dataclass
class GridDensity:
    points: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.points.ndim != 1 or self.points.shape != self.values.shape:
            raise ValueError("points and values must be 1-D arrays of equal length")
        if np.any(np.diff(self.points) <= 0):
            raise ValueError("grid must be strictly increasing")
        if np.any(self.values < 0):
            raise ValueError("density values must be non-negative")

    @classmethod
    def normalized(cls, points, values) -> "GridDensity":
        points = np.asarray(points, dtype=float)
        values = np.asarray(values, dtype=float)
        mass = trapezoid_weights(points) @ values
        if not mass > 0 or not np.isfinite(mass):
            raise ZeroMass("density integrates to zero on the grid")
        return cls(points, values / mass)

    def integral(self) -> float:
        return float(trapezoid_weights(self.points) @ self.values)

    def mean(self) -> float:
        return float(trapezoid_weights(self.points) @ (self.points * self.values))


def uniform_grid(lo=-4.0, hi=4.0, n=10000) -> np.ndarray:
    return np.linspace(lo, hi, n)


def grid_bayes_posterior(prior: GridDensity, likelihood) -> GridDensity:
    lik = np.asarray(likelihood, dtype=float)
    if lik.shape != prior.points.shape:
        raise ValueError("likelihood must be evaluated on the prior grid")
    return GridDensity.normalized(prior.points, prior.values * lik)


def _log_mixture_on_grid(points, centers, weights, variance, chunk=2_000_000):
    x = np.asarray(points, dtype=float)
    c = np.asarray(centers, dtype=float)
    with np.errstate(divide="ignore"):
        logw = np.log(weights)
    keep = np.isfinite(logw)
    c, logw = c[keep], logw[keep]
    out = np.empty_like(x)
    step = max(1, chunk // max(1, c.size))
    for i in range(0, x.size, step):
        d = x[i:i + step, None] - c[None, :]
        out[i:i + step] = logsumexp(logw[None, :] - 0.5 * d * d / variance, axis=1)
    return out - 0.5 * np.log(2.0 * np.pi * variance)


def mixture_density_on_grid(posterior, points, rule=BandwidthRule.MODIFIED) -> GridDensity:
    """Evaluate a 1-D Gaussian mixture (or a KDE of an ensemble) on a grid.

    A WeightedEnsemble is smoothed with Gaussian kernels whose variance comes
    from ``bandwidth_sigma`` on its weighted covariance. Kernel variances are
    floored at the squared grid spacing so a collapsed ensemble still
    resolves on the grid.
    """
    points = np.asarray(points, dtype=float)
    if isinstance(posterior, GaussianSumPosterior):
        centers, weights = posterior.means, posterior.weights
        var = float(np.atleast_2d(posterior.shared_cov)[0, 0])
    elif isinstance(posterior, WeightedEnsemble):
        centers, weights = posterior.particles, posterior.weights
        P = weighted_covariance(posterior)
        var = float(bandwidth_sigma(P, posterior.size, 1, rule)[0, 0])
    else:
        raise TypeError("expected GaussianSumPosterior or WeightedEnsemble")
    if np.atleast_2d(centers).shape[0] != 1:
        raise ValueError("grid densities are 1-D only")
    dx = np.min(np.diff(points))
    var = max(var, dx * dx)
    logp = _log_mixture_on_grid(points, np.ravel(centers), weights, var)
    return GridDensity.normalized(points, np.exp(logp - logp.max()))


def gaussian_on_grid(points, mean, var) -> GridDensity:
    x = np.asarray(points, dtype=float)
    return GridDensity.normalized(x, np.exp(-0.5 * (x - mean) ** 2 / var))


def kl_divergence(p: GridDensity, q: GridDensity) -> float:
    """Discrete KL(p || q) = sum_i log(p_i / q_i) p_i dx_i, q floored at 1e-300."""
    if p.points.shape != q.points.shape or not np.array_equal(p.points, q.points):
        raise ValueError("densities must share a grid")
    w = trapezoid_weights(p.points)
    mask = p.values > 0
    pv = p.values[mask]
    qv = np.maximum(q.values[mask], KL_FLOOR)
    return float(np.sum(np.log(pv / qv) * pv * w[mask]))


@dataclass
class MetricSeries:
    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.times.shape != self.values.shape:
            raise LengthMismatch("times and values differ in length")
        if np.any(self.values < 0):
            raise ValueError("metric values must be non-negative")


def rmse_series(truth_states, estimates, times) -> MetricSeries:
    """RMSE over state components at each time; states are (m, T) arrays."""
    t = np.atleast_2d(np.asarray(truth_states, dtype=float))
    e = np.atleast_2d(np.asarray(estimates, dtype=float))
    if t.shape != e.shape:
        raise LengthMismatch(f"truth {t.shape} vs estimates {e.shape}")
    times = np.asarray(times, dtype=float)
    if times.shape[0] != t.shape[1]:
        raise LengthMismatch("times do not match the number of states")
    return MetricSeries(times, np.sqrt(np.mean((t - e) ** 2, axis=0)))


def time_averaged(series: MetricSeries, spinup=0) -> float:
    """Mean of the series after dropping the first ``spinup`` entries."""
    vals = series.values[spinup:]
    if vals.size == 0:
        raise LengthMismatch("spinup exclusion removes every entry")
    return float(np.mean(vals))
