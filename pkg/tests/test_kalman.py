import numpy as np
import pytest
from oracles import condition_linear_gaussian, crandn

from vcrtrack.kalman import (
    LinearGaussianModel,
    kalman_filter,
    rts_smoother,
    stationary_var,
)


def _problem(seed, n=3, p=2, n_blocks=6, noise=0.3):
    rng = np.random.default_rng(seed)
    f = rng.uniform(0.5, 0.99, n)
    q = rng.uniform(0.1, 1.0, n)
    h = crandn(rng, p, n)
    model = LinearGaussianModel(f, q, h, noise)
    x = crandn(rng, n) * np.sqrt(stationary_var(f, q))
    ys = []
    for _ in range(n_blocks):
        ys.append(h @ x + np.sqrt(noise) * crandn(rng, p))
        x = f * x + np.sqrt(q) * crandn(rng, n)
    return model, np.array(ys)


@pytest.mark.parametrize("seed, n, p, n_blocks", [(0, 1, 1, 4), (1, 3, 2, 6), (2, 4, 6, 10), (3, 6, 3, 10)])
def test_smoother_matches_dense_conditioning(seed, n, p, n_blocks):
    model, y = _problem(seed, n, p, n_blocks)
    means, covs, cross, loglik, filt = condition_linear_gaussian(
        model.transition, model.process_var, model.init_cov, model.observation, model.obs_noise_var, y
    )
    fr = kalman_filter(model, y)
    sm = rts_smoother(model, y, fr)
    assert np.allclose(fr.filt_means, filt, atol=1e-9)
    assert np.allclose(sm.means, means, atol=1e-9)
    assert np.allclose(sm.covs, covs, atol=1e-9)
    assert np.allclose(sm.cross_covs, cross, atol=1e-9)
    assert sm.loglik == pytest.approx(loglik, abs=1e-8)


def test_moment_helpers():
    model, y = _problem(5, 2, 2, 4)
    sm = rts_smoother(model, y)
    m = sm.means
    assert np.allclose(sm.second_moments[1], sm.covs[1] + np.outer(m[1], m[1].conj()))
    assert np.allclose(sm.cross_moments[0], sm.cross_covs[0] + np.outer(m[0], m[1].conj()))


def test_stationary_var_fallback():
    assert np.allclose(stationary_var([0.0, 0.5, 1.0], [1.0, 0.75, 2.0]), [1.0, 1.0, 2.0])


def test_observation_length_checked():
    model, y = _problem(0, 2, 2, 3)
    with pytest.raises(ValueError, match="observation length"):
        kalman_filter(model, y[:, :1])


def test_inconsistent_dimensions_rejected():
    with pytest.raises(ValueError):
        LinearGaussianModel([0.5, 0.5], [1.0], np.eye(2), 1.0)
