import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from conftest import kalman_oracle, random_spd
from engsf.baselines import (
    EnkfVariant,
    enkf_update,
    ensrf_update,
    sir_reweight,
    sir_step,
    sir_update,
)
from engsf.config import build_config
from engsf.dynamics import linear_model
from engsf.errors import AllWeightsZero, NonDiagonalR
from engsf.filter import ObservationOp, effective_sample_size
from engsf.harness import build_obs, ex1_problem, sample_ex1_prior
from engsf.metrics import kl_divergence, mixture_density_on_grid
from engsf.stats import RngStream, WeightedEnsemble, sample_mvn


def _gaussian_ensemble(mean, var, N, label="prior"):
    return WeightedEnsemble(RngStream(11, label).generator().normal(mean, np.sqrt(var), (1, N)))


# -- EnKF -----------------------------------------------------------------------

@pytest.mark.parametrize("variant", list(EnkfVariant))
def test_enkf_zero_gain(variant, rng):
    ens = WeightedEnsemble(rng.standard_normal((2, 30)))
    obs = ObservationOp(np.eye(2), 1e8 * np.eye(2))
    out = enkf_update(ens, obs, [1.0, -1.0], RngStream(1, "e"), variant)
    # K ~ 1e-8 times perturbations of size ~1e4
    assert_allclose(out.particles, ens.particles, atol=1e-3)


@pytest.mark.parametrize("variant", list(EnkfVariant))
def test_enkf_linear_gaussian_moments(variant):
    ens = _gaussian_ensemble(1.0, 2.0, 10**5)
    obs = ObservationOp([[1.0]], [[0.5]])
    out = enkf_update(ens, obs, [3.0], RngStream(1, "e"), variant)
    xa, Pa = kalman_oracle(np.array([1.0]), np.array([[2.0]]), obs.H, obs.R, np.array([3.0]))
    assert out.particles.mean() == pytest.approx(xa[0], rel=0.02)
    assert out.particles.var(ddof=1) == pytest.approx(Pa[0, 0], rel=0.02)


def test_enkf_appendix_mean_identity(rng):
    X = rng.standard_normal((3, 25))
    ens = WeightedEnsemble(X)
    H = rng.standard_normal((2, 3))
    obs = ObservationOp(H, random_spd(rng, 2, 0.5))
    y = np.array([0.4, -0.2])
    out = enkf_update(ens, obs, y, RngStream(9, "e"), EnkfVariant.APPENDIX)

    # rebuild gain and draws independently
    N = X.shape[1]
    xbar = X.mean(axis=1)
    A = X - xbar[:, None]
    P = A @ A.T / (N - 1)
    K = P @ H.T @ np.linalg.inv(H @ P @ H.T + obs.R)
    D = y[:, None] + sample_mvn(np.zeros(2), obs.R, N, RngStream(9, "e"))
    dbar = D.mean(axis=1)
    assert_allclose(out.particles.mean(axis=1), xbar + K @ (dbar - H @ xbar), atol=1e-12)

    perturbed = enkf_update(ens, obs, y, RngStream(9, "e"), EnkfVariant.PERTURBED_OBS)
    assert_allclose(out.particles.mean(axis=1), perturbed.particles.mean(axis=1), atol=1e-12)
    assert_allclose(out.particles, perturbed.particles, atol=1e-12)


# -- EnSRF -------------------------------------------------------------------------

def test_ensrf_zero_gain(rng):
    ens = WeightedEnsemble(rng.standard_normal((2, 30)))
    out = ensrf_update(ens, ObservationOp(np.eye(2), 1e8 * np.eye(2)), [5.0, 5.0])
    assert_allclose(out.particles, ens.particles, atol=1e-6)


def test_ensrf_linear_gaussian_moments():
    ens = _gaussian_ensemble(1.0, 2.0, 10**5)
    obs = ObservationOp([[1.0]], [[0.5]])
    out = ensrf_update(ens, obs, [3.0])
    # exact relative to the sample prior: no observation draws are involved
    m0 = ens.particles.mean()
    P0 = ens.particles.var(ddof=1)
    xa, Pa = kalman_oracle(np.array([m0]), np.array([[P0]]), obs.H, obs.R, np.array([3.0]))
    assert out.particles.mean() == pytest.approx(xa[0], rel=1e-12)
    assert out.particles.var(ddof=1) == pytest.approx(Pa[0, 0], rel=1e-10)
    xa, Pa = kalman_oracle(np.array([1.0]), np.array([[2.0]]), obs.H, obs.R, np.array([3.0]))
    assert out.particles.var(ddof=1) == pytest.approx(Pa[0, 0], rel=0.02)


def test_ensrf_deterministic(rng):
    ens = WeightedEnsemble(rng.standard_normal((3, 20)))
    obs = ObservationOp.identity(3, 0.4)
    a = ensrf_update(ens, obs, [0.1, 0.2, 0.3])
    b = ensrf_update(ens, obs, [0.1, 0.2, 0.3])
    assert np.array_equal(a.particles, b.particles)


def test_ensrf_rejects_correlated_noise():
    ens = WeightedEnsemble(np.arange(10.0).reshape(2, 5))
    with pytest.raises(NonDiagonalR):
        ensrf_update(ens, ObservationOp(np.eye(2), [[1.0, 0.3], [0.3, 1.0]]), [0.0, 0.0])


@given(st.integers(0, 2**32 - 1))
def test_ensrf_order_independent(seed):
    rng = np.random.default_rng(seed)
    ens = WeightedEnsemble(rng.standard_normal((2, 12)) * rng.uniform(0.5, 3))
    H = rng.standard_normal((2, 2))
    r = rng.uniform(0.1, 2.0, 2)
    y = rng.standard_normal(2)
    a = ensrf_update(ens, ObservationOp(H, np.diag(r)), y)
    b = ensrf_update(ens, ObservationOp(H[::-1], np.diag(r[::-1])), y[::-1])
    # square roots are not unique; the first two moments are
    assert_allclose(a.particles.mean(axis=1), b.particles.mean(axis=1), atol=1e-8)
    assert_allclose(np.cov(a.particles), np.cov(b.particles), atol=1e-8)


@given(st.integers(0, 2**32 - 1), st.integers(2, 20), st.sampled_from(["enkf", "enkf_appendix", "ensrf"]))
def test_gaussian_updates_keep_size_and_equal_weights(seed, N, name):
    rng = np.random.default_rng(seed)
    ens = WeightedEnsemble(rng.standard_normal((2, N)))
    obs = ObservationOp.identity(2, 0.3)
    if name == "ensrf":
        out = ensrf_update(ens, obs, [0.0, 1.0])
    else:
        variant = EnkfVariant.APPENDIX if name == "enkf_appendix" else EnkfVariant.PERTURBED_OBS
        out = enkf_update(ens, obs, [0.0, 1.0], RngStream(seed, "e"), variant)
    assert out.particles.shape == (2, N)
    assert np.all(out.weights == 1.0 / N)


# -- SIR ----------------------------------------------------------------------------

def test_sir_single_particle():
    model = linear_model(-1.0, 1, 0.1)
    ens = WeightedEnsemble(np.array([[2.0]]))
    out = sir_step(ens, model, ObservationOp([[1.0]], [[0.1]]), [40.0], RngStream(1, "s"))
    assert out.weights[0] == 1.0
    assert out.particles[0, 0] == pytest.approx(float(model.deterministic_step(np.array([2.0]))[0]))


def test_sir_ten_sigma_weights():
    ens = WeightedEnsemble(np.array([[0.0, 1.0]]))
    w = sir_reweight(ens, ObservationOp([[1.0]], [[0.01]]), [0.0]).weights
    assert w[0] == pytest.approx(1.0, abs=1e-20)
    assert w[1] == pytest.approx(np.exp(-50.0), rel=1e-12)
    assert w[1] == pytest.approx(1.93e-22, rel=1e-2)


def test_sir_all_weights_zero():
    ens = WeightedEnsemble(np.array([[0.0, 1.0]]), [1.0, 0.0])
    with pytest.raises(AllWeightsZero):
        sir_reweight(WeightedEnsemble(np.array([[np.inf, np.inf]])), ObservationOp([[1.0]], [[1.0]]), [0.0])
    assert sir_reweight(ens, ObservationOp([[1.0]], [[1.0]]), [0.5]).weights[1] == 0.0


def test_sir_degeneracy_is_monotone():
    # no process noise, fixed target: weights only sharpen
    ens = WeightedEnsemble(RngStream(3, "p").generator().normal(0, 1, (1, 200)))
    obs = ObservationOp([[1.0]], [[0.5]])
    n_eff = []
    for k in range(10):
        ens = sir_reweight(ens, obs, [0.3])
        n_eff.append(effective_sample_size(ens.weights))
    assert all(b < a for a, b in zip(n_eff, n_eff[1:]))
    assert n_eff[-1] < n_eff[0]


def test_sir_update_returns_both_ensembles():
    ens = WeightedEnsemble(np.linspace(-1, 1, 50)[None, :])
    weighted, resampled = sir_update(ens, ObservationOp([[1.0]], [[0.2]]), [0.5], RngStream(2, "s"))
    assert not np.allclose(weighted.weights, 1 / 50)
    assert np.all(resampled.weights == 1 / 50)


def _sir_ex1_kl(seed, obs_var):
    cfg = build_config({"experiment": "ex1", "obs_var": (obs_var,)})
    x, _, _, post = ex1_problem(cfg)
    prior = sample_ex1_prior(cfg, 10**4, RngStream(seed, "init"))
    weighted = sir_reweight(prior, build_obs(cfg), [cfg.d])
    return kl_divergence(post, mixture_density_on_grid(weighted, x))


def test_sir_ex1_reference_close_to_grid_bayes():
    # a 10^4-particle SIR approximates the broad-likelihood posterior well
    kls = [_sir_ex1_kl(s, 0.1) for s in (1, 2, 3)]
    assert max(kls) < 0.05


@pytest.mark.xfail(strict=False, reason="KDE smoothing bias of a 10^4-particle reference sits near 0.02-0.04")
def test_sir_ex1_reference_tight_threshold():
    kls = [_sir_ex1_kl(s, 0.1) for s in (1, 2, 3)]
    assert max(kls) < 0.02
