"""Benchmark models: double-well SDE, Lorenz63, Lorenz95 and linear tests.

Drifts act on a single state (m,) or on a whole ensemble (m, N) at once.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import NonFiniteState
from .stats import as_generator

RK4 = "rk4"
EULER_MARUYAMA = "euler_maruyama"

L63_X0 = (1.508870, -1.531271, 25.46091)


def rk4_step(drift, x, dt):
    x = np.asarray(x, dtype=float)
    k1 = drift(x)
    k2 = drift(x + 0.5 * dt * k1)
    k3 = drift(x + 0.5 * dt * k2)
    k4 = drift(x + dt * k3)
    out = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if not np.all(np.isfinite(out)):
        raise NonFiniteState("RK4 step produced non-finite values")
    return out


def euler_step(drift, x, dt):
    x = np.asarray(x, dtype=float)
    out = x + dt * drift(x)
    if not np.all(np.isfinite(out)):
        raise NonFiniteState("Euler step produced non-finite values")
    return out


def double_well_drift(u):
    u = np.asarray(u, dtype=float)
    return 4.0 * u - 4.0 * u**3


def lorenz63_drift(state, gamma=10.0, rho=28.0, beta=8.0 / 3.0):
    s = np.asarray(state, dtype=float)
    x, y, z = s[0], s[1], s[2]
    return np.stack([gamma * (y - x), rho * x - y - x * z, x * y - beta * z])


def lorenz95_drift(state, F=8.0):
    x = np.asarray(state, dtype=float)
    if x.shape[0] < 4:
        raise ValueError("Lorenz95 needs at least 4 variables")
    # component j: (x[j+1] - x[j-2]) * x[j-1] - x[j] + F, cyclic
    return (np.roll(x, -1, axis=0) - np.roll(x, 2, axis=0)) * np.roll(x, 1, axis=0) - x + F


@dataclass
class DynamicsModel:
    """Deterministic drift plus additive noise ``sigma * sqrt(dt) * xi`` per step.

    ``noise_std`` is the per-component sigma per unit time. With the RK4
    integrator the noise is added after the deterministic step.
    """

    dim: int
    drift: Callable
    dt: float
    integrator: str = RK4
    noise_std: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.integrator not in (RK4, EULER_MARUYAMA):
            raise ValueError(f"unknown integrator {self.integrator!r}")
        if self.noise_std is None:
            self.noise_std = np.zeros(self.dim)
        s = np.broadcast_to(np.asarray(self.noise_std, dtype=float), (self.dim,)).copy()
        if np.any(s < 0):
            raise ValueError("noise_std must be non-negative")
        self.noise_std = s

    @property
    def noisy(self) -> bool:
        return bool(np.any(self.noise_std > 0))

    def deterministic_step(self, x):
        if self.integrator == RK4:
            return rk4_step(self.drift, x, self.dt)
        return euler_step(self.drift, x, self.dt)

    def step(self, x, xi=None):
        """Advance one step; ``xi`` holds standard normals shaped like ``x``."""
        out = self.deterministic_step(x)
        if xi is not None and self.noisy:
            scale = self.noise_std * np.sqrt(self.dt)
            if out.ndim == 2:
                scale = scale[:, None]
            out = out + scale * xi
        return out


def double_well_model(kappa=0.7, dt=0.01) -> DynamicsModel:
    return DynamicsModel(1, double_well_drift, dt, EULER_MARUYAMA, np.array([kappa]))


def lorenz63_model(variances=(2.0, 12.13, 12.31), dt=0.01, gamma=10.0, rho=28.0,
                   beta=8.0 / 3.0) -> DynamicsModel:
    def drift(s):
        return lorenz63_drift(s, gamma, rho, beta)
    return DynamicsModel(3, drift, dt, RK4, np.sqrt(np.asarray(variances, dtype=float)))


def lorenz95_model(m=40, F=8.0, variance=25.0, dt=0.01) -> DynamicsModel:
    def drift(s):
        return lorenz95_drift(s, F)
    return DynamicsModel(m, drift, dt, RK4, np.full(m, np.sqrt(variance)))


def linear_model(rate=0.0, m=1, dt=0.01, noise_std=0.0) -> DynamicsModel:
    """dx/dt = rate * x, integrated with RK4."""
    def drift(s):
        return rate * np.asarray(s, dtype=float)
    return DynamicsModel(m, drift, dt, RK4, np.full(m, float(noise_std)))


@dataclass
class TrajectoryRecord:
    times: np.ndarray
    states: np.ndarray  # (m, T)
    observations: list  # [(time index, y)]

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.states = np.atleast_2d(np.asarray(self.states, dtype=float))
        if self.states.shape[1] != self.times.shape[0]:
            raise ValueError("states must have one column per time")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("times must be strictly increasing")
        for k, _ in self.observations:
            if not 0 <= k < self.times.shape[0]:
                raise ValueError(f"observation index {k} out of range")

    def observation_map(self) -> dict:
        return {k: y for k, y in self.observations}


def simulate_truth(model: DynamicsModel, x0, n_steps, obs, obs_every, rng, spinup=0):
    """Integrate a noisy reference trajectory and observe it every ``obs_every`` steps.

    ``rng`` is an RngStream (children "noise" and "obs" are used) or a numpy
    Generator. ``spinup`` steps are integrated first and discarded; the record
    starts at t=0 right after them. Observations are taken at step indices
    obs_every, 2*obs_every, ... (none at t=0).
    """
    if obs_every < 1:
        raise ValueError("obs_every must be >= 1")
    if hasattr(rng, "child"):
        noise_rng = rng.child("noise").generator()
        obs_rng = rng.child("obs").generator()
    else:
        noise_rng = obs_rng = as_generator(rng)

    x = np.asarray(x0, dtype=float).reshape(model.dim)
    for _ in range(spinup):
        x = model.step(x, noise_rng.standard_normal(model.dim) if model.noisy else None)

    states = np.empty((model.dim, n_steps + 1))
    states[:, 0] = x
    observations = []
    L = np.linalg.cholesky(obs.R)
    for k in range(1, n_steps + 1):
        x = model.step(x, noise_rng.standard_normal(model.dim) if model.noisy else None)
        states[:, k] = x
        if k % obs_every == 0:
            r = L @ obs_rng.standard_normal(obs.n)
            observations.append((k, obs.H @ x + r))
    times = model.dt * np.arange(n_steps + 1)
    return TrajectoryRecord(times, states, observations)
