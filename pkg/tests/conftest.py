import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


def kalman_oracle(x, P, H, R, y):
    """Closed-form Kalman update with explicit inverses (independent of the package)."""
    S = H @ P @ H.T + R
    K = P @ H.T @ np.linalg.inv(S)
    xa = x + K @ (y - H @ x)
    Pa = (np.eye(P.shape[0]) - K @ H) @ P
    return xa, Pa


def random_spd(rng, m, scale=1.0):
    A = rng.standard_normal((m, m))
    return scale * (A @ A.T + m * np.eye(m)) / m
