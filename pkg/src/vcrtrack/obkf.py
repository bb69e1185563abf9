"""Downlink restoration with an optimal Bayesian Kalman filter.

The downlink on-support virtual channel follows

    w_1 ~ CN(0, Lambda'),   w_{i+1} = alpha' w_i + CN(0, Lambda'),
    y~'_i = w_i + CN(0, (sigma'^2 / sigma_p^2) I),

with alpha' known from reconstruction and theta = (sigma'^2, diag Lambda')
unknown.  The filter replaces the noise statistics in the Kalman recursion by
their posterior means given the data so far.  Those means come from a
random-walk Metropolis-Hastings chain whose likelihood p(y~'(1..m) | theta)
is computed by forward Gaussian message passing along the chain w_1..w_m,
with every scale factor kept in the log domain.  After M_d blocks the noise
statistics are frozen and a classical Kalman filter takes over.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .cgauss import (
    ComplexGaussian,
    NotPositiveDefiniteError,
    cn_logpdf,
    hermitian_inv,
    hermitize,
    logdet_pd,
)

__all__ = [
    "ChainMessage",
    "DlTrackResult",
    "KfTrack",
    "LikelihoodTerminal",
    "MhResult",
    "NoiseHypothesis",
    "NoisePrior",
    "ObkfState",
    "PosteriorTrajectory",
    "RecursionScratch",
    "classical_kf",
    "fg_forward_message",
    "fg_initial_message",
    "fg_likelihood",
    "fg_scratch",
    "fg_terminal",
    "mh_posterior_means",
    "obkf_filter",
    "obkf_init",
    "obkf_step",
    "restore_posteriors",
    "track_dl",
]

_LN_PI = float(np.log(np.pi))
_LN_2PI = float(np.log(2.0 * np.pi))


# ---------------------------------------------------------------------------
# Parameter types


@dataclass(frozen=True)
class NoiseHypothesis:
    """theta = (sigma'^2, diag Lambda' on the downlink support)."""

    sigma_dl_sq: float
    lambda_dl_diag: np.ndarray

    def __post_init__(self):
        lam = np.atleast_1d(np.asarray(self.lambda_dl_diag, dtype=float)).copy()
        if not (np.isfinite(self.sigma_dl_sq) and self.sigma_dl_sq > 0):
            raise ValueError("sigma_dl_sq must be finite and positive")
        if lam.ndim != 1 or lam.size == 0 or not np.all(np.isfinite(lam)) or np.any(lam <= 0):
            raise ValueError("lambda_dl_diag must be a nonempty vector of positive reals")
        lam.setflags(write=False)
        object.__setattr__(self, "sigma_dl_sq", float(self.sigma_dl_sq))
        object.__setattr__(self, "lambda_dl_diag", lam)

    @property
    def dim(self) -> int:
        return self.lambda_dl_diag.size

    def effective_noise(self, pilot_power: float = 1.0) -> float:
        return self.sigma_dl_sq / pilot_power

    def to_log(self) -> np.ndarray:
        """Packed log-parameters (ln sigma'^2, ln Lambda'_1, ...)."""
        return np.concatenate(([np.log(self.sigma_dl_sq)], np.log(self.lambda_dl_diag)))

    @classmethod
    def from_log(cls, z) -> NoiseHypothesis:
        z = np.asarray(z, dtype=float)
        return cls(float(np.exp(z[0])), np.exp(z[1:]))


@dataclass(frozen=True)
class NoisePrior:
    """Independent log-normal priors: ln theta_j ~ N(loc_j, scale_j^2).

    ``scale`` applies to the Lambda' entries and, unless ``sigma_scale`` is
    given, to sigma'^2 too.  A zero scale makes that coordinate a point mass
    at exp(loc); the sampler then holds it fixed.  ``proposal_scale`` is the
    initial random-walk step in log space.
    """

    sigma_loc: float
    lambda_loc: np.ndarray
    scale: float = 0.5
    proposal_scale: float = 0.15
    sigma_scale: float | None = None

    def __post_init__(self):
        loc = np.atleast_1d(np.asarray(self.lambda_loc, dtype=float)).copy()
        if not np.all(np.isfinite(loc)) or not np.isfinite(self.sigma_loc):
            raise ValueError("prior locations must be finite")
        if self.sigma_scale is None:
            object.__setattr__(self, "sigma_scale", float(self.scale))
        if self.scale < 0 or self.proposal_scale < 0 or self.sigma_scale < 0:
            raise ValueError("scales must be nonnegative")
        loc.setflags(write=False)
        object.__setattr__(self, "lambda_loc", loc)

    @classmethod
    def centred_on(cls, sigma_dl_sq: float, lambda_diag, scale: float = 0.5,
                   proposal_scale: float = 0.15, sigma_scale: float | None = None) -> NoisePrior:
        """Prior whose medians are the given anchor values."""
        lam = np.asarray(lambda_diag, dtype=float)
        if sigma_dl_sq <= 0 or np.any(lam <= 0):
            raise ValueError("anchor values must be positive")
        return cls(float(np.log(sigma_dl_sq)), np.log(lam), scale, proposal_scale, sigma_scale)

    @classmethod
    def point_mass(cls, theta: NoiseHypothesis) -> NoisePrior:
        return cls(float(np.log(theta.sigma_dl_sq)), np.log(theta.lambda_dl_diag), 0.0, 0.0)

    @property
    def dim(self) -> int:
        return self.lambda_loc.size

    @property
    def scales(self) -> np.ndarray:
        """Per-coordinate prior scales of the packed log-parameters."""
        return np.concatenate(([self.sigma_scale], np.full(self.dim, self.scale)))

    @property
    def free(self) -> np.ndarray:
        """Coordinates with a nondegenerate prior (the sampled ones)."""
        return self.scales > 0

    @property
    def is_point_mass(self) -> bool:
        return not np.any(self.free)

    @property
    def loc(self) -> np.ndarray:
        return np.concatenate(([self.sigma_loc], self.lambda_loc))

    def log_density_log_space(self, z) -> float:
        """Density of the free packed log-parameters (Jacobian included);
        -inf when a point-mass coordinate is off its point."""
        z = np.asarray(z, dtype=float)
        free = self.free
        if not np.allclose(z[~free], self.loc[~free]):
            return -np.inf
        sc = self.scales[free]
        d = (z[free] - self.loc[free]) / sc
        return float(-0.5 * np.sum(d * d) - np.sum(np.log(sc)) - d.size * 0.5 * _LN_2PI)

    def log_density(self, theta: NoiseHypothesis) -> float:
        """Log-normal density of the free coordinates of theta in natural units."""
        z = theta.to_log()
        return self.log_density_log_space(z) - float(np.sum(z[self.free]))

    def means(self) -> NoiseHypothesis:
        return NoiseHypothesis.from_log(self.loc + 0.5 * self.scales**2)

    def median(self) -> NoiseHypothesis:
        return NoiseHypothesis.from_log(self.loc)

    def sample(self, rng: np.random.Generator) -> NoiseHypothesis:
        return NoiseHypothesis.from_log(self.loc + self.scales * rng.standard_normal(self.dim + 1))


# ---------------------------------------------------------------------------
# Factor-graph likelihood


@dataclass(frozen=True)
class ChainMessage:
    """Forward message omega * CN(w_i; mu_i, Sigma_i), omega kept as ln omega."""

    log_weight: float
    mean: np.ndarray
    cov: np.ndarray

    def density(self) -> ComplexGaussian:
        return ComplexGaussian(self.mean, self.cov)


@dataclass(frozen=True)
class RecursionScratch:
    """nu_i (information vector) and Gamma_i of one forward step."""

    nu: np.ndarray
    gamma: np.ndarray


@dataclass(frozen=True)
class LikelihoodTerminal:
    """Delta_m and G_m of the final integral over w_m."""

    delta: np.ndarray
    g: np.ndarray


def fg_initial_message(theta: NoiseHypothesis) -> ChainMessage:
    """Omega_{f_A,1 -> w_1} = 1 * CN(w_1; 0, Lambda')."""
    q = theta.dim
    return ChainMessage(0.0, np.zeros(q, dtype=complex), np.diag(theta.lambda_dl_diag).astype(complex))


def fg_scratch(prev: ChainMessage, y_i, theta: NoiseHypothesis, alpha_dl: float,
               pilot_power: float = 1.0) -> RecursionScratch:
    """nu_i = y_i / s + Sigma_i^{-1} mu_i and
    Gamma_i = (alpha^2 Lambda^{-1} + I / s + Sigma_i^{-1})^{-1}."""
    s = theta.effective_noise(pilot_power)
    sig_inv = hermitian_inv(prev.cov)
    nu = np.asarray(y_i, dtype=complex) / s + sig_inv @ prev.mean
    prec = alpha_dl**2 * np.diag(1.0 / theta.lambda_dl_diag) + np.eye(theta.dim) / s + sig_inv
    return RecursionScratch(nu, hermitian_inv(prec))


def fg_forward_message(prev: ChainMessage, y_i, theta: NoiseHypothesis, alpha_dl: float,
                       pilot_power: float = 1.0) -> ChainMessage:
    """One step of the forward recursion, w_i integrated out.

    Sigma_{i+1} = (L^{-1} - a^2 L^{-1} Gamma L^{-1})^{-1},
    mu_{i+1} = a Sigma_{i+1} L^{-1} Gamma nu, and
    ln omega_{i+1} = ln omega_i + ln CN(0; y_i, s I) + ln CN(0; mu_i, Sigma_i)
                     + ln|Gamma| + ln|Sigma_{i+1}| + ln|K| - ln|L|
                     - ln CN(nu; 0, K^{-1}),
    with K = Gamma + a^2 Gamma L^{-1} Sigma_{i+1} L^{-1} Gamma.  Raises
    :class:`NotPositiveDefiniteError` when Sigma_{i+1} is not PD.
    """
    q = theta.dim
    a = float(alpha_dl)
    s = theta.effective_noise(pilot_power)
    y_i = np.asarray(y_i, dtype=complex)
    if y_i.shape != (q,):
        raise ValueError(f"observation must have length {q}")
    scratch = fg_scratch(prev, y_i, theta, a, pilot_power)
    gam = scratch.gamma
    l_inv = np.diag(1.0 / theta.lambda_dl_diag)
    sigma_next = hermitize(np.linalg.inv(hermitize(l_inv - a * a * l_inv @ gam @ l_inv)))
    nxt = ComplexGaussian(
        a * sigma_next @ l_inv @ gam @ scratch.nu, sigma_next
    )  # raises NotPositiveDefiniteError when Sigma_{i+1} is not PD
    k = hermitize(gam + a * a * gam @ l_inv @ sigma_next @ l_inv @ gam)
    zero = np.zeros(q)
    log_w = (
        prev.log_weight
        + cn_logpdf(zero, ComplexGaussian(y_i, s * np.eye(q)))
        + cn_logpdf(zero, prev.density())
        + logdet_pd(gam)
        + logdet_pd(sigma_next)
        + logdet_pd(k)
        - float(np.sum(np.log(theta.lambda_dl_diag)))
        - cn_logpdf(scratch.nu, ComplexGaussian(zero, hermitian_inv(k)))
    )
    return ChainMessage(float(log_w), nxt.mean, nxt.cov)


def fg_terminal(msg: ChainMessage, y_m, theta: NoiseHypothesis, pilot_power: float = 1.0):
    """Final integral over w_m: returns (log p, LikelihoodTerminal)."""
    q = theta.dim
    s = theta.effective_noise(pilot_power)
    y_m = np.asarray(y_m, dtype=complex)
    sig_inv = hermitian_inv(msg.cov)
    delta = hermitian_inv(np.eye(q) / s + sig_inv)
    g = delta @ (y_m / s + sig_inv @ msg.mean)
    zero = np.zeros(q)
    logp = (
        msg.log_weight
        + cn_logpdf(zero, ComplexGaussian(y_m, s * np.eye(q)))
        + cn_logpdf(zero, msg.density())
        - cn_logpdf(zero, ComplexGaussian(g, delta))
    )
    return float(logp), LikelihoodTerminal(delta, g)


def _loglik_messages(obs, theta, alpha_dl, pilot_power):
    msg = fg_initial_message(theta)
    for y in obs[:-1]:
        msg = fg_forward_message(msg, y, theta, alpha_dl, pilot_power)
    return fg_terminal(msg, obs[-1], theta, pilot_power)[0]


def _loglik_diagonal(obs, lam, s, a):
    """The same recursion for diagonal Lambda', coordinate by coordinate.

    All matrices stay diagonal, so each support bin is an independent scalar
    chain; the formulas are the scalar forms of the matrix recursion.
    """
    def ln_cn0(mean, var):  # ln CN(0; mean, var), elementwise
        return -_LN_PI - np.log(var) - np.abs(mean) ** 2 / var

    q = lam.size
    log_w = np.zeros(q)
    mu = np.zeros(q, dtype=complex)
    sig = lam.copy()
    for y in obs[:-1]:
        nu = y / s + mu / sig
        gam = 1.0 / (a * a / lam + 1.0 / s + 1.0 / sig)
        # Lambda^2 / (Lambda - a^2 Gamma) = Lambda + a^2 / (1/s + 1/Sigma)
        sig_next = lam + a * a / (1.0 / s + 1.0 / sig)
        mu_next = a * sig_next * gam * nu / lam
        k = gam + a * a * gam * gam * sig_next / (lam * lam)
        log_w += (
            ln_cn0(y, s) + ln_cn0(mu, sig) + np.log(gam) + np.log(sig_next) + np.log(k)
            - np.log(lam) - (-_LN_PI + np.log(k) - k * np.abs(nu) ** 2)
        )
        mu, sig = mu_next, sig_next
    y = obs[-1]
    delta = 1.0 / (1.0 / s + 1.0 / sig)
    g = delta * (y / s + mu / sig)
    logp = log_w + ln_cn0(y, s) + ln_cn0(mu, sig) - ln_cn0(g, delta)
    return float(np.sum(logp))


def fg_likelihood(observations, theta: NoiseHypothesis, alpha_dl: float, pilot_power: float = 1.0,
                  method: str = "diagonal") -> float:
    """ln p(y~'(1..m) | theta) by forward message passing.

    ``method="messages"`` runs the general matrix recursion through the
    Gaussian-algebra primitives; ``method="diagonal"`` exploits the diagonal
    Lambda' and is the fast path used by the sampler.
    """
    obs = np.atleast_2d(np.asarray(observations, dtype=complex))
    if obs.shape[0] < 1:
        raise ValueError("need at least one observation")
    if obs.shape[1] != theta.dim:
        raise ValueError("observation length must match the support size")
    if method == "messages":
        return _loglik_messages(obs, theta, alpha_dl, pilot_power)
    if method == "diagonal":
        return _loglik_diagonal(obs, theta.lambda_dl_diag, theta.effective_noise(pilot_power), float(alpha_dl))
    raise ValueError(f"unknown method {method!r}")


# ---------------------------------------------------------------------------
# Metropolis-Hastings


@dataclass
class MhResult:
    """Posterior means and chain diagnostics.

    ``samples`` holds the post-burn-in chain states (natural coordinates,
    column 0 is sigma'^2).  ``degenerate`` flags a chain that accepted no
    proposal, in which case the means are the prior means.
    """

    sigma_mean: float
    lambda_mean: np.ndarray
    samples: np.ndarray
    acceptance_rate: float
    degenerate: bool
    final_log_state: np.ndarray
    step: float

    def as_hypothesis(self) -> NoiseHypothesis:
        return NoiseHypothesis(self.sigma_mean, self.lambda_mean)


def _safe_loglik(obs, z, alpha_dl, pilot_power):
    try:
        theta = NoiseHypothesis.from_log(z)
        val = fg_likelihood(obs, theta, alpha_dl, pilot_power)
    except (NotPositiveDefiniteError, ValueError, FloatingPointError):
        return -np.inf
    return val if np.isfinite(val) else -np.inf


def mh_posterior_means(observations, prior: NoisePrior, alpha_dl: float, n_iters: int = 200,
                       burn_in: int = 50, rng_seed=None, init=None, step: float | None = None,
                       pilot_power: float = 1.0, adapt: bool = True, adapt_window: int = 25) -> MhResult:
    """Random-walk Metropolis-Hastings on ln theta.

    Proposals are z' = z + step * N(0, I) on the free coordinates
    (symmetric), so the acceptance
    ratio is the likelihood ratio times the prior ratio in log space.
    During burn-in the step is halved when the acceptance over the last
    ``adapt_window`` proposals falls below 25% and doubled above 40%; it is
    frozen afterwards.  Posterior means are averages of the post-burn-in
    states.  ``init`` (packed log-parameters) warm-starts the chain.
    """
    if not n_iters > burn_in >= 0:
        raise ValueError("need n_iters > burn_in >= 0")
    obs = np.atleast_2d(np.asarray(observations, dtype=complex))
    if obs.shape[1] != prior.dim:
        raise ValueError("observation length must match the prior dimension")
    if prior.is_point_mass or (step is not None and step == 0.0) or prior.proposal_scale == 0.0:
        point = prior.median() if prior.is_point_mass else NoiseHypothesis.from_log(
            prior.loc if init is None else init)
        z = point.to_log()
        samples = np.tile(np.concatenate(([point.sigma_dl_sq], point.lambda_dl_diag)), (n_iters - burn_in, 1))
        return MhResult(point.sigma_dl_sq, point.lambda_dl_diag.copy(), samples, 0.0, False, z, 0.0)
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    z = np.array(prior.loc if init is None else init, dtype=float)
    free = prior.free
    z[~free] = prior.loc[~free]
    step = prior.proposal_scale if step is None else float(step)
    ll = _safe_loglik(obs, z, alpha_dl, pilot_power)
    lp = prior.log_density_log_space(z)
    kept = np.empty((n_iters - burn_in, z.size))
    accepted_total = 0
    window = 0
    for it in range(n_iters):
        cand = z.copy()
        cand[free] += step * rng.standard_normal(int(free.sum()))
        ll_c = _safe_loglik(obs, cand, alpha_dl, pilot_power)
        lp_c = prior.log_density_log_space(cand)
        log_r = (ll_c + lp_c) - (ll + lp)
        if np.isfinite(ll_c) and (not np.isfinite(ll) or np.log(rng.uniform()) < log_r):
            z, ll, lp = cand, ll_c, lp_c
            accepted_total += 1
            window += 1
        if it < burn_in:
            if adapt and (it + 1) % adapt_window == 0:
                rate = window / adapt_window
                if rate < 0.25:
                    step *= 0.5
                elif rate > 0.40:
                    step *= 2.0
                window = 0
        else:
            kept[it - burn_in] = np.exp(z)
    if accepted_total == 0:
        pm = prior.means()
        return MhResult(pm.sigma_dl_sq, pm.lambda_dl_diag.copy(), kept, 0.0, True, z, step)
    means = kept.mean(axis=0)
    return MhResult(float(means[0]), means[1:].copy(), kept, accepted_total / n_iters, False, z, step)


# ---------------------------------------------------------------------------
# Filters


@dataclass
class ObkfState:
    """OBKF state entering block m.

    ``channel_estimate`` is the prediction of w_m from blocks before m and
    ``expected_err_cov`` its expected error covariance; ``lambda_mean`` and
    ``noise_mean`` are the posterior means of Lambda' and of the effective
    noise power sigma'^2 / sigma_p^2 given the data so far.
    """

    channel_estimate: np.ndarray
    expected_err_cov: np.ndarray
    lambda_mean: np.ndarray
    noise_mean: float
    gain: np.ndarray | None = None
    innovation: np.ndarray | None = None
    filtered: np.ndarray | None = None
    sample_pool: list = field(default_factory=list)


def obkf_init(prior: NoisePrior, pilot_power: float = 1.0) -> ObkfState:
    """Block-1 state: zero mean, covariance and noise statistics at the prior means."""
    pm = prior.means()
    q = prior.dim
    return ObkfState(
        np.zeros(q, dtype=complex),
        np.diag(pm.lambda_dl_diag).astype(complex),
        pm.lambda_dl_diag.copy(),
        pm.effective_noise(pilot_power),
    )


def obkf_step(state: ObkfState, y_m, alpha_dl: float, lambda_mean, noise_mean: float) -> ObkfState:
    """One OBKF update with the newly available posterior means.

    The gain uses the noise statistics held in ``state`` (posterior given the
    previous blocks); the covariance prediction uses the new ``lambda_mean``.
    The returned state carries ``noise_mean`` for the next gain.
    """
    y_m = np.asarray(y_m, dtype=complex)
    p = state.expected_err_cov
    q = p.shape[0]
    z = y_m - state.channel_estimate
    s = hermitize(p + state.noise_mean * np.eye(q))
    try:
        chol = np.linalg.cholesky(s)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefiniteError("singular innovation covariance") from exc
    k = np.linalg.solve(chol.conj().T, np.linalg.solve(chol, p)).conj().T  # p s^{-1}
    filt = state.channel_estimate + k @ z
    p_next = hermitize(alpha_dl**2 * (np.eye(q) - k) @ p + np.diag(np.asarray(lambda_mean, float)))
    return ObkfState(
        alpha_dl * filt, p_next, np.asarray(lambda_mean, float).copy(), float(noise_mean),
        gain=k, innovation=z, filtered=filt, sample_pool=state.sample_pool,
    )


@dataclass
class KfTrack:
    """Per-block filtered/predicted estimates, gains and prediction covariances."""

    filtered: np.ndarray
    predicted: np.ndarray
    gains: np.ndarray
    pred_covs: np.ndarray


def classical_kf(observations, lambda_diag, noise_eff: float, alpha_dl: float,
                 init_mean=None, init_cov=None) -> KfTrack:
    """Kalman filter with known noise statistics on the downlink model.

    Starts from w_1 ~ CN(init_mean, init_cov), defaulting to CN(0, Lambda').
    """
    obs = np.atleast_2d(np.asarray(observations, dtype=complex))
    lam = np.asarray(lambda_diag, dtype=float)
    q = lam.size
    state = ObkfState(
        np.zeros(q, complex) if init_mean is None else np.asarray(init_mean, complex),
        np.diag(lam).astype(complex) if init_cov is None else np.asarray(init_cov, complex),
        lam, float(noise_eff),
    )
    return _run_fixed(state, obs, alpha_dl, lam, float(noise_eff))


def _run_fixed(state, obs, alpha_dl, lam, noise_eff):
    n_blocks, q = obs.shape
    filt = np.empty((n_blocks, q), complex)
    pred = np.empty((n_blocks, q), complex)
    gains = np.empty((n_blocks, q, q), complex)
    covs = np.empty((n_blocks, q, q), complex)
    for m in range(n_blocks):
        pred[m] = state.channel_estimate
        covs[m] = state.expected_err_cov
        state = obkf_step(state, obs[m], alpha_dl, lam, noise_eff)
        filt[m] = state.filtered
        gains[m] = state.gain
    return KfTrack(filt, pred, gains, covs)


@dataclass
class PosteriorTrajectory:
    """Posterior means after each of the first blocks.

    ``lambda_history[m]`` and ``sigma_history[m]`` are E[Lambda' | y~'(1..m+1)]
    and E[sigma'^2 | y~'(1..m+1)]; ``acceptance[m]`` is the chain's acceptance
    rate at that block (0 where the sampler was skipped).
    """

    lambda_history: np.ndarray
    sigma_history: np.ndarray
    acceptance: np.ndarray
    degenerate_blocks: list

    def hypothesis(self, m_d: int) -> NoiseHypothesis:
        """Restored theta after ``m_d`` blocks."""
        return NoiseHypothesis(float(self.sigma_history[m_d - 1]), self.lambda_history[m_d - 1])


def restore_posteriors(observations, alpha_dl: float, prior: NoisePrior, n_blocks: int, n_iters: int = 200,
                       burn_in: int = 50, rng_seed=None, pilot_power: float = 1.0,
                       mcmc_every: int = 1) -> PosteriorTrajectory:
    """Posterior means of theta on the growing prefixes y~'(1..m), m <= n_blocks.

    Each chain is warm-started from the final state and step of the previous
    one.  ``mcmc_every > 1`` reruns the sampler only on every that-many
    blocks (and always on the last), reusing the latest means in between.
    """
    if n_blocks < 1:
        raise ValueError("n_blocks must be >= 1")
    if mcmc_every < 1:
        raise ValueError("mcmc_every must be >= 1")
    obs = np.atleast_2d(np.asarray(observations, dtype=complex))
    if obs.shape[1] != prior.dim:
        raise ValueError("observation length must match the prior dimension")
    n_blocks = min(n_blocks, obs.shape[0])
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    lam_hist = np.empty((n_blocks, prior.dim))
    sig_hist = np.empty(n_blocks)
    acc = np.zeros(n_blocks)
    degenerate = []
    z = step = res = None
    for m in range(n_blocks):
        if res is None or (m + 1) % mcmc_every == 0 or m == n_blocks - 1:
            res = mh_posterior_means(obs[: m + 1], prior, alpha_dl, n_iters, burn_in, rng,
                                     init=z, step=step, pilot_power=pilot_power)
            z, step = res.final_log_state, (res.step or None)
            if res.degenerate:
                degenerate.append(m)
            acc[m] = res.acceptance_rate
        lam_hist[m] = res.lambda_mean
        sig_hist[m] = res.sigma_mean
    return PosteriorTrajectory(lam_hist, sig_hist, acc, degenerate)


def obkf_filter(observations, alpha_dl: float, prior: NoisePrior, posteriors: PosteriorTrajectory,
                m_d: int, pilot_power: float = 1.0) -> KfTrack:
    """Run the OBKF recursion for ``m_d`` blocks, then a classical KF.

    Block m (1-based, m <= m_d) updates with the posterior means given
    y~'(1..m); afterwards the noise statistics stay at the block-m_d means.
    """
    obs = np.atleast_2d(np.asarray(observations, dtype=complex))
    n_blocks, q = obs.shape
    if not 1 <= m_d <= posteriors.sigma_history.size:
        raise ValueError("m_d must lie between 1 and the number of restored blocks")
    state = obkf_init(prior, pilot_power)
    filt = np.empty((n_blocks, q), complex)
    pred = np.empty((n_blocks, q), complex)
    gains = np.empty((n_blocks, q, q), complex)
    covs = np.empty((n_blocks, q, q), complex)
    head = min(m_d, n_blocks)
    for m in range(head):
        pred[m] = state.channel_estimate
        covs[m] = state.expected_err_cov
        state = obkf_step(state, obs[m], alpha_dl, posteriors.lambda_history[m],
                          posteriors.sigma_history[m] / pilot_power)
        filt[m] = state.filtered
        gains[m] = state.gain
    if n_blocks > head:
        rest = _run_fixed(state, obs[head:], alpha_dl, posteriors.lambda_history[m_d - 1],
                          posteriors.sigma_history[m_d - 1] / pilot_power)
        filt[head:], pred[head:] = rest.filtered, rest.predicted
        gains[head:], covs[head:] = rest.gains, rest.pred_covs
    return KfTrack(filt, pred, gains, covs)


@dataclass
class DlTrackResult:
    """Downlink tracking output: the estimate trajectory, the posterior means
    over the OBKF blocks and the restored hypothesis after block M_d."""

    track: KfTrack
    posteriors: PosteriorTrajectory
    theta: NoiseHypothesis


def track_dl(observations, alpha_dl: float, prior: NoisePrior, m_d: int = 10, n_iters: int = 200,
             burn_in: int = 50, rng_seed=None, pilot_power: float = 1.0, mcmc_every: int = 1) -> DlTrackResult:
    """OBKF for the first ``m_d`` blocks, then a classical KF with frozen means."""
    if m_d < 1:
        raise ValueError("m_d must be >= 1")
    obs = np.atleast_2d(np.asarray(observations, dtype=complex))
    post = restore_posteriors(obs, alpha_dl, prior, m_d, n_iters, burn_in, rng_seed, pilot_power, mcmc_every)
    m_eff = post.sigma_history.size
    track = obkf_filter(obs, alpha_dl, prior, post, m_eff, pilot_power)
    return DlTrackResult(track, post, post.hypothesis(m_eff))
