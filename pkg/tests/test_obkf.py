import numpy as np
import pytest
from oracles import condition_linear_gaussian, crandn, dl_chain_loglik
from scipy import integrate, stats
from scipy.linalg import solve_discrete_are

from vcrtrack.cgauss import NotPositiveDefiniteError
from vcrtrack.obkf import (
    NoiseHypothesis,
    NoisePrior,
    classical_kf,
    fg_forward_message,
    fg_initial_message,
    fg_likelihood,
    fg_terminal,
    mh_posterior_means,
    obkf_init,
    obkf_step,
    restore_posteriors,
    track_dl,
)


def _chain(rng, m, lam, s, alpha):
    lam = np.asarray(lam, float)
    q = lam.size
    w = np.sqrt(lam) * crandn(rng, q)
    ys = []
    for _ in range(m):
        ys.append(w + np.sqrt(s) * crandn(rng, q))
        w = alpha * w + np.sqrt(lam) * crandn(rng, q)
    return np.array(ys)


# ---------------------------------------------------------------- parameter types


def test_hypothesis_log_round_trip():
    th = NoiseHypothesis(0.3, [1.0, 2.0])
    back = NoiseHypothesis.from_log(th.to_log())
    assert back.sigma_dl_sq == pytest.approx(0.3) and np.allclose(back.lambda_dl_diag, [1.0, 2.0])
    assert th.effective_noise(2.0) == pytest.approx(0.15)


@pytest.mark.parametrize("sigma, lam", [(0.0, [1.0]), (1.0, [0.0]), (np.nan, [1.0]), (1.0, [])])
def test_hypothesis_rejects_invalid(sigma, lam):
    with pytest.raises(ValueError):
        NoiseHypothesis(sigma, lam)


def test_prior_integrates_to_one():
    prior = NoisePrior(0.2, [-0.3], scale=0.5)

    def dens(u1, u0):  # packed log coordinates; exp(u) du is the natural measure
        th = NoiseHypothesis.from_log([u0, u1])
        return np.exp(prior.log_density(th) + u0 + u1)

    total, _ = integrate.dblquad(dens, -5, 5, -5, 5, epsabs=1e-10)
    assert total == pytest.approx(1.0, abs=1e-6)


def test_prior_means_are_lognormal_means():
    prior = NoisePrior.centred_on(2.0, [3.0, 4.0], scale=0.5)
    pm = prior.means()
    assert pm.sigma_dl_sq == pytest.approx(2.0 * np.exp(0.125))
    assert np.allclose(pm.lambda_dl_diag, np.array([3.0, 4.0]) * np.exp(0.125))
    assert np.allclose(prior.median().lambda_dl_diag, [3.0, 4.0])


def test_point_mass_prior_density():
    th = NoiseHypothesis(0.5, [1.0])
    prior = NoisePrior.point_mass(th)
    assert prior.is_point_mass
    assert prior.log_density_log_space(th.to_log() + 0.1) == -np.inf


# ---------------------------------------------------------------- message passing


def test_initial_message():
    msg = fg_initial_message(NoiseHypothesis(0.1, [2.0, 3.0]))
    assert msg.log_weight == 0.0
    assert np.allclose(msg.mean, 0) and np.allclose(msg.cov, np.diag([2.0, 3.0]))


@pytest.mark.parametrize("method", ["messages", "diagonal"])
def test_single_block_is_marginal(method):
    th = NoiseHypothesis(0.5, [2.0, 1.0])
    y = np.array([[0.3 + 0.1j, -1.0j]])
    ref = sum(-np.log(np.pi) - np.log(v) - abs(x) ** 2 / v for x, v in zip(y[0], [2.5, 1.5]))
    assert fg_likelihood(y, th, 0.9, method=method) == pytest.approx(ref, abs=1e-12)


def test_scalar_two_block_hand_derivation():
    lam, s, a = 1.5, 0.4, 0.8
    y = np.array([[0.7 - 0.2j], [-0.1 + 0.9j]])
    cov = np.array([[lam + s, a * lam], [a * lam, (a * a + 1) * lam + s]])
    yv = y[:, 0]
    ref = -2 * np.log(np.pi) - np.log(np.linalg.det(cov)) - (yv.conj() @ np.linalg.solve(cov, yv)).real
    th = NoiseHypothesis(s, [lam])
    msg = fg_forward_message(fg_initial_message(th), y[0], th, a)
    # one forward step: Sigma_2 = Lambda + a^2 / (1/s + 1/Lambda)
    assert msg.cov[0, 0].real == pytest.approx(lam + a * a / (1 / s + 1 / lam))
    assert fg_terminal(msg, y[1], th)[0] == pytest.approx(ref, abs=1e-12)


@pytest.mark.parametrize("method", ["messages", "diagonal"])
def test_white_chain_factorises(method):
    rng = np.random.default_rng(4)
    lam = np.array([0.7, 1.3])
    s = 0.2
    y = _chain(rng, 5, lam, s, 0.0)
    ref = np.sum(-np.log(np.pi) - np.log(lam + s) - np.abs(y) ** 2 / (lam + s))
    assert fg_likelihood(y, NoiseHypothesis(s, lam), 0.0, method=method) == pytest.approx(ref, abs=1e-10)


def test_likelihood_matches_dense_oracle_over_random_draws():
    rng = np.random.default_rng(123)
    for _ in range(50):
        q = int(rng.integers(1, 5))
        m = int(rng.integers(1, 7))
        lam = rng.uniform(0.1, 3.0, q)
        s = float(rng.uniform(0.01, 2.0))
        a = float(rng.uniform(0.0, 0.999))
        pp = float(rng.uniform(0.5, 2.0))
        y = _chain(rng, m, lam, s / pp, a)
        th = NoiseHypothesis(s, lam)
        ref = dl_chain_loglik(y, lam, s / pp, a)
        for method in ("messages", "diagonal"):
            assert fg_likelihood(y, th, a, pp, method=method) == pytest.approx(ref, rel=1e-7)


def test_terminal_moments_are_filtered_posterior():
    rng = np.random.default_rng(9)
    lam = np.array([1.0, 0.5])
    s, a = 0.3, 0.95
    y = _chain(rng, 4, lam, s, a)
    th = NoiseHypothesis(s, lam)
    msg = fg_initial_message(th)
    for yi in y[:-1]:
        msg = fg_forward_message(msg, yi, th, a)
    _, term = fg_terminal(msg, y[-1], th)
    _, covs, _, _, filt = condition_linear_gaussian(np.full(2, a), lam, lam, np.eye(2), s, y)
    assert np.allclose(term.g, filt[-1], atol=1e-10)
    # the last smoothed covariance is the filtered one
    assert np.allclose(term.delta, covs[-1], atol=1e-10)


def test_likelihood_monte_carlo():
    rng = np.random.default_rng(0)
    lam, s, a = 1.0, 0.5, 0.9
    y = np.array([0.4 + 0.3j, -0.2 + 0.8j, 0.5j])
    n = 100_000
    w = np.sqrt(lam) * crandn(rng, n)
    like = np.ones(n)
    for yi in y:
        like *= np.exp(-np.abs(yi - w) ** 2 / s) / (np.pi * s)
        w = a * w + np.sqrt(lam) * crandn(rng, n)
    mc = np.log(like.mean())
    assert fg_likelihood(y[:, None], NoiseHypothesis(s, [lam]), a) == pytest.approx(mc, abs=0.02)


def test_likelihood_phase_and_conjugation_invariant():
    rng = np.random.default_rng(2)
    y = _chain(rng, 6, [1.0, 2.0, 0.5], 0.2, 0.9)
    th = NoiseHypothesis(0.2, [1.0, 2.0, 0.5])
    base = fg_likelihood(y, th, 0.9)
    assert fg_likelihood(y.conj(), th, 0.9) == pytest.approx(base, abs=1e-10)
    assert fg_likelihood(y * np.exp(0.7j), th, 0.9) == pytest.approx(base, abs=1e-10)


def test_likelihood_input_checks():
    th = NoiseHypothesis(0.2, [1.0])
    with pytest.raises(ValueError):
        fg_likelihood(np.zeros((2, 2)), th, 0.9)
    with pytest.raises(ValueError):
        fg_likelihood(np.zeros((2, 1)), th, 0.9, method="bogus")


# ---------------------------------------------------------------- sampler


def test_point_mass_prior_returns_the_point():
    th = NoiseHypothesis(0.3, [1.2, 0.8])
    y = _chain(np.random.default_rng(0), 5, th.lambda_dl_diag, 0.3, 0.9)
    res = mh_posterior_means(y, NoisePrior.point_mass(th), 0.9, rng_seed=0)
    assert res.sigma_mean == 0.3 and np.allclose(res.lambda_mean, [1.2, 0.8])
    assert not res.degenerate


def _scalar_posterior_problem():
    rng = np.random.default_rng(17)
    lam, s, a = 1.0, 0.25, 0.9
    y = _chain(rng, 10, [lam], s, a)
    prior = NoisePrior(np.log(s), [0.3], scale=0.5, proposal_scale=0.5, sigma_scale=0.0)
    return y, prior, s, a


def _quadrature_posterior(y, prior, s, a, grid):
    logpost = np.array(
        [dl_chain_loglik(y, [np.exp(u)], s, a) for u in grid]
    ) + stats.norm.logpdf(grid, prior.lambda_loc[0], prior.scale)
    w = np.exp(logpost - logpost.max())
    return w / integrate.trapezoid(w, grid)


def test_sampler_matches_quadrature_posterior():
    y, prior, s, a = _scalar_posterior_problem()
    grid = np.linspace(-4, 4, 4001)
    dens = _quadrature_posterior(y, prior, s, a, grid)
    exact_mean = integrate.trapezoid(np.exp(grid) * dens, grid)
    res = mh_posterior_means(y, prior, a, n_iters=21_000, burn_in=1000, rng_seed=1)
    assert np.all(res.samples[:, 0] == s)  # fixed coordinate never moves
    draws = res.samples[:, 1]
    batches = draws.reshape(20, -1).mean(axis=1)
    se = batches.std(ddof=1) / np.sqrt(batches.size)
    assert abs(res.lambda_mean[0] - exact_mean) <= 3 * se
    # total variation on a coarse partition of ln Lambda
    edges = np.linspace(-2.5, 2.5, 21)
    cdf = np.concatenate(([0.0], integrate.cumulative_trapezoid(dens, grid)))
    probs = np.diff(np.interp(edges, grid, cdf))
    freq = np.histogram(np.log(draws), edges)[0] / draws.size
    assert 0.5 * np.sum(np.abs(freq - probs)) <= 0.05


def test_sampler_two_seeds_agree():
    y, prior, _s, a = _scalar_posterior_problem()
    r1 = mh_posterior_means(y, prior, a, n_iters=6000, burn_in=500, rng_seed=11)
    r2 = mh_posterior_means(y, prior, a, n_iters=6000, burn_in=500, rng_seed=12)
    assert r1.lambda_mean[0] == pytest.approx(r2.lambda_mean[0], rel=0.1)
    assert 0.05 < r1.acceptance_rate < 0.9


def test_sampler_is_deterministic_given_seed():
    y, prior, _s, a = _scalar_posterior_problem()
    r1 = mh_posterior_means(y, prior, a, n_iters=300, burn_in=50, rng_seed=3)
    r2 = mh_posterior_means(y, prior, a, n_iters=300, burn_in=50, rng_seed=3)
    assert np.array_equal(r1.samples, r2.samples)


def test_sampler_argument_checks():
    y, prior, _, a = _scalar_posterior_problem()
    with pytest.raises(ValueError):
        mh_posterior_means(y, prior, a, n_iters=10, burn_in=10)
    with pytest.raises(ValueError):
        mh_posterior_means(np.zeros((3, 2)), prior, a)


def test_longer_restoration_beats_single_block():
    alpha = 0.99
    errs_1, errs_15 = [], []
    for seed in range(5):
        rng = np.random.default_rng(100 + seed)
        lam = np.array([0.8, 1.5, 0.4, 1.1]) * 0.02
        sig = 0.01
        y = _chain(rng, 15, lam, sig, alpha)
        anchor = lam * np.exp(rng.uniform(np.log(0.5), np.log(2.0), lam.size))
        prior = NoisePrior.centred_on(sig * 1.5, anchor)
        post = restore_posteriors(y, alpha, prior, 15, n_iters=200, burn_in=50, rng_seed=seed)
        errs_1.append(np.sum((post.lambda_history[0] - lam) ** 2))
        errs_15.append(np.sum((post.lambda_history[14] - lam) ** 2))
    assert np.mean(errs_15) < np.mean(errs_1)


# ---------------------------------------------------------------- filters


def test_obkf_under_point_mass_is_classical_kf():
    th = NoiseHypothesis(0.05, [0.5, 0.2, 0.9])
    y = _chain(np.random.default_rng(1), 20, th.lambda_dl_diag, 0.05, 0.95)
    res = track_dl(y, 0.95, NoisePrior.point_mass(th), m_d=10, n_iters=20, burn_in=5, rng_seed=0)
    kf = classical_kf(y, th.lambda_dl_diag, 0.05, 0.95)
    assert np.allclose(res.track.filtered, kf.filtered, atol=1e-12)
    assert np.allclose(res.track.gains, kf.gains, atol=1e-12)


def test_kf_matches_dense_oracle():
    lam = np.array([0.6, 1.4])
    s, a = 0.3, 0.9
    y = _chain(np.random.default_rng(8), 7, lam, s, a)
    kf = classical_kf(y, lam, s, a)
    *_, filt = condition_linear_gaussian(np.full(2, a), lam, lam, np.eye(2), s, y)
    assert np.allclose(kf.filtered, filt, atol=1e-10)


def test_kf_white_chain_is_per_block_wiener():
    lam = np.array([2.0])
    s = 0.5
    y = _chain(np.random.default_rng(5), 6, lam, s, 0.0)
    kf = classical_kf(y, lam, s, 0.0)
    assert np.allclose(kf.filtered, y * lam / (lam + s))
    assert np.allclose(kf.predicted, 0.0)


def test_kf_prediction_covariance_rises_monotonically_to_riccati_point():
    lam, s, a = 0.3, 0.1, 0.97
    y = np.zeros((200, 1))
    kf = classical_kf(y, [lam], s, a)
    p = kf.pred_covs[:, 0, 0].real
    assert np.all(np.diff(p) >= -1e-14)
    fixed = solve_discrete_are(np.array([[a]]), np.array([[1.0]]), np.array([[lam]]), np.array([[s]]))[0, 0]
    assert p[-1] == pytest.approx(fixed, rel=1e-9)
    # the fixed point satisfies P = Lambda + a^2 P s / (P + s)
    assert fixed == pytest.approx(lam + a * a * fixed * s / (fixed + s), rel=1e-12)


def test_kf_without_process_noise_averages():
    c, s = 4.0, 1.0
    y = np.array([[1.0], [2.0], [0.0], [3.0]], complex)
    kf = classical_kf(y, [0.0], s, 1.0, init_cov=np.array([[c]]))
    for m in range(1, 5):
        assert kf.filtered[m - 1, 0] == pytest.approx(y[:m, 0].sum() / (m + s / c))


def test_obkf_step_rejects_singular_innovation():
    state = obkf_init(NoisePrior.centred_on(1.0, [1.0]))
    state.expected_err_cov = np.array([[-1.0 + 0j]])
    state.noise_mean = 0.5
    with pytest.raises(NotPositiveDefiniteError):
        obkf_step(state, np.zeros(1), 0.9, [1.0], 0.0)


def test_track_dl_records_posteriors_and_theta():
    lam = np.array([0.5, 0.7])
    y = _chain(np.random.default_rng(3), 12, lam, 0.1, 0.95)
    prior = NoisePrior.centred_on(0.1, lam)
    res = track_dl(y, 0.95, prior, m_d=4, n_iters=60, burn_in=20, rng_seed=0)
    assert res.posteriors.lambda_history.shape == (4, 2)
    assert res.theta.sigma_dl_sq == pytest.approx(res.posteriors.sigma_history[3])
    assert res.track.filtered.shape == (12, 2)
