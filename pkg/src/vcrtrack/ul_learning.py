"""Uplink model-parameter learning by coordinate-wise EM.

E-step: Kalman filter + RTS smoother on the linear-Gaussian model linking the
stacked virtual channels to the received training blocks.  M-step:
closed-form maximizers for alpha, diag(Lambda) and the noise power, a
windowed edge search on Lambda for the support, and a box-constrained
quadratic solve for the off-grid biases.

Orthogonal training decouples the users exactly: despreading the received
block with each user's conjugate training column yields an independent
per-user observation, and the component orthogonal to all training columns
carries noise only.  The E-step exploits that; :func:`kalman_rts_posteriors`
keeps the joint formulation for reference and testing.
"""

from __future__ import annotations

import warnings
from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import chi2

from .channel_model import (
    ModelParams,
    SystemConfig,
    derivative_basis,
    dft_basis,
    make_training,
    phi_h,
    unvec,
)
from .kalman import LinearGaussianModel, rts_smoother, stationary_var

__all__ = [
    "DegeneratePowerError",
    "EmResult",
    "JointStateSpace",
    "PosteriorStats",
    "bias_quadratic",
    "bias_subspace_fit",
    "build_joint_model",
    "despread",
    "e_step",
    "em_learn",
    "initial_params",
    "kalman_rts_posteriors",
    "prune_support_edges",
    "refine_bias",
    "residual_beam_lambda",
    "update_alpha",
    "update_bias",
    "update_lambda",
    "update_noise_var",
    "update_support",
    "user_posteriors",
]

_LN_PI = float(np.log(np.pi))
PRUNE_THRESHOLD = float(chi2.ppf(0.99, 2))


class DegeneratePowerError(ValueError):
    """The alpha update has a zero denominator (no prior power on support)."""


@dataclass
class JointStateSpace:
    """Stacked model: r_{m+1} = diag(transition) r_m + v, y_m = J r_m + n."""

    transition: np.ndarray
    process_cov: np.ndarray
    observation: np.ndarray
    obs_noise_var: float

    def to_linear_gaussian(self) -> LinearGaussianModel:
        return LinearGaussianModel(
            self.transition, self.process_cov, self.observation, self.obs_noise_var
        )


@dataclass
class PosteriorStats:
    """Smoothed moments: r_hat (M, n), Theta (M, n, n), Pi (M-1, n, n).

    ``cross_moments[m]`` is E[r_m r_{m+1}^H | all data] (0-based m).
    """

    means: np.ndarray
    second_moments: np.ndarray
    cross_moments: np.ndarray
    loglik: float = float("nan")

    @property
    def n_blocks(self) -> int:
        return self.means.shape[0]

    def block(self, sl: slice) -> PosteriorStats:
        return PosteriorStats(
            self.means[:, sl],
            self.second_moments[:, sl, sl],
            self.cross_moments[:, sl, sl],
            self.loglik,
        )


def _observation_block(params: ModelParams, s_col):
    """J_k = (s_k kron Phi(rho_k)^H) diag(c_k)."""
    dic = phi_h(params.bias) * params.support[None, :]
    return np.kron(np.asarray(s_col)[:, None], dic)


def build_joint_model(params: Sequence[ModelParams], training) -> JointStateSpace:
    training = np.asarray(training)
    n = params[0].n_antennas
    trans = np.concatenate([np.full(n, p.alpha) for p in params])
    proc = np.concatenate([p.lambda_diag for p in params])
    obs = np.hstack([_observation_block(p, training[:, k]) for k, p in enumerate(params)])
    return JointStateSpace(trans, proc, obs, params[0].noise_var)


def _stats_from_smoother(sm) -> PosteriorStats:
    return PosteriorStats(sm.means, sm.second_moments, sm.cross_moments, sm.loglik)


def kalman_rts_posteriors(model: JointStateSpace, observations) -> PosteriorStats:
    """Exact smoothed moments of the joint model (stationary initial prior)."""
    lg = model.to_linear_gaussian()
    return _stats_from_smoother(rts_smoother(lg, observations))


def despread(observations, training, n_antennas: int):
    """Per-user statistics u_{k,m} = Y_m conj(s_k) / ||s_k||, shape (tau, M, N).

    Also returns the energy of the training-orthogonal complement per block.
    """
    training = np.asarray(training)
    ys = unvec(np.atleast_2d(observations), n_antennas)  # (M, N, L_s)
    norms = np.linalg.norm(training, axis=0)
    u = np.einsum("mnl,lk->kmn", ys, training.conj()) / norms[:, None, None]
    total = np.sum(np.abs(ys) ** 2, axis=(1, 2))
    resid = total - np.sum(np.abs(u) ** 2, axis=(0, 2))
    return u, np.maximum(resid, 0.0)


def _floored(lam, rel=1e-9):
    lam = np.asarray(lam, dtype=float)
    top = float(np.max(lam)) if lam.size else 0.0
    floor = max(rel * top, 1e-300)
    return np.maximum(lam, floor)


def _prior_moments(alpha: float, lam, init_var, n_blocks: int):
    """Second and lag-one moments of an unobserved AR(1) coordinate."""
    var = np.empty((n_blocks, lam.size))
    var[0] = init_var
    for m in range(1, n_blocks):
        var[m] = alpha**2 * var[m - 1] + lam
    return var, alpha * var[:-1]


def user_posteriors(params: ModelParams, u, s_norm: float) -> PosteriorStats:
    """Smoothed moments for one user from its despread statistics ``u``.

    Off-support coordinates have zero observation columns and are a priori
    independent, so their posterior equals the AR prior; the smoother runs
    on the support coordinates only and the prior moments fill the rest.
    """
    u = np.atleast_2d(u)
    n_blocks, n = u.shape
    lam = _floored(params.lambda_diag)
    trans = np.full(n, params.alpha)
    init = stationary_var(trans, lam)
    idx = np.flatnonzero(params.support)
    means = np.zeros((n_blocks, n), dtype=complex)
    second = np.zeros((n_blocks, n, n), dtype=complex)
    cross = np.zeros((n_blocks - 1, n, n), dtype=complex)
    off = np.flatnonzero(~params.support)
    if off.size:
        var, cov1 = _prior_moments(params.alpha, lam[off], init[off], n_blocks)
        second[:, off, off] = var
        cross[:, off, off] = cov1
    if idx.size == 0:
        ll = float(np.sum(-n * (_LN_PI + np.log(params.noise_var)) - np.sum(np.abs(u) ** 2, 1) / params.noise_var))
        return PosteriorStats(means, second, cross, ll)
    h = s_norm * phi_h(params.bias)[:, idx]
    model = LinearGaussianModel(
        trans[idx], lam[idx], h, max(params.noise_var, 1e-300), init_cov=init[idx]
    )
    sm = rts_smoother(model, u)
    means[:, idx] = sm.means
    ix = np.ix_(np.arange(n_blocks), idx, idx)
    second[ix] = sm.second_moments
    cross[np.ix_(np.arange(n_blocks - 1), idx, idx)] = sm.cross_moments
    return PosteriorStats(means, second, cross, sm.loglik)


# ---------------------------------------------------------------------------
# M-step pieces


def _trace_mask(lambda_diag, support=None, rel=1e-6):
    lam = np.asarray(lambda_diag, dtype=float)
    mask = lam > rel * float(np.max(lam)) if lam.size and np.max(lam) > 0 else np.zeros(lam.size, bool)
    if support is not None:
        mask &= np.asarray(support, dtype=bool)
    return mask


def update_alpha(stats: PosteriorStats, lambda_diag, support=None) -> float:
    """alpha = sum Re tr(L^-1 Pi) / sum tr(L^-1 Theta_{m-1}), clamped to [0, 1].

    Only bins with Lambda above 1e-6 of its maximum (and inside ``support``
    when given) enter the traces.
    """
    mask = _trace_mask(lambda_diag, support)
    w = np.zeros(mask.size)
    w[mask] = 1.0 / np.asarray(lambda_diag, dtype=float)[mask]
    pi_diag = np.einsum("mjj->mj", stats.cross_moments).real
    th_diag = np.einsum("mjj->mj", stats.second_moments[:-1]).real
    num = float(np.sum(pi_diag @ w))
    den = float(np.sum(th_diag @ w))
    if not den > 0:
        raise DegeneratePowerError("degenerate prior power: zero denominator in alpha update")
    return float(np.clip(num / den, 0.0, 1.0))


def update_lambda(stats: PosteriorStats, alpha: float):
    """Average over m >= 2 of E|r_m - alpha r_{m-1}|^2 per bin, clipped at 0."""
    th = np.einsum("mjj->mj", stats.second_moments).real
    pi = np.einsum("mjj->mj", stats.cross_moments).real
    lam = np.mean(th[1:] + alpha**2 * th[:-1] - 2.0 * alpha * pi, axis=0)
    return np.maximum(lam, 0.0)


def update_support(lambda_diag, flat_ratio: float = 10.0, floor_rel: float = 1e-3):
    """Windowed edge search on the estimated process powers.

    d_j = ln(s2 / s1) with s1 the sum over bins j..j+2 and s2 over j+3..j+5.
    The rising edge (maximum of d) marks the first support bin at j+3 and the
    falling edge (minimum of d) the last one at j+2.  Powers are floored at
    ``floor_rel`` times the maximum first, so that ratios between bins that
    are all negligible cannot masquerade as edges.  Returns ``(mask,
    detected)``; a spectrum whose max/min ratio is below ``flat_ratio`` gives
    the all-ones mask with ``detected=False``.
    """
    lam = np.asarray(lambda_diag, dtype=float)
    n = lam.size
    if n < 6:
        raise ValueError("support search needs at least 6 bins")
    top = float(np.max(lam))
    if not top > 0 or top < flat_ratio * float(np.min(lam)):
        return np.ones(n, dtype=bool), False
    floored = np.maximum(lam, floor_rel * top)
    csum = np.concatenate(([0.0], np.cumsum(floored)))
    j = np.arange(n - 5)
    s1 = csum[j + 3] - csum[j]
    s2 = csum[j + 6] - csum[j + 3]
    d = np.log(s2 / s1)
    p_st = int(np.argmax(d)) + 3
    p_en = int(np.argmin(d)) + 2
    if p_st > p_en:
        p_st, p_en = p_en, p_st
    mask = np.zeros(n, dtype=bool)
    mask[p_st : p_en + 1] = True
    return mask, True


def prune_support_edges(params: ModelParams, u, s_norm: float, threshold: float = PRUNE_THRESHOLD):
    """Drop support edge bins that do not earn their keep in likelihood.

    Repeatedly tries removing the first or last support bin (with the other
    parameters held) and accepts the removal when twice the per-user
    log-likelihood loss is below ``threshold`` (default: the 99% point of a
    chi-square with 2 degrees of freedom, one for the bin's power and one for
    its bias).  EM shrinks the power of a spurious bin only slowly, so the
    edge search alone tends to keep it.  Returns the pruned mask.
    """
    p = params.copy()
    ll = user_posteriors(p, u, s_norm).loglik
    while p.support.sum() > 1:
        idx = p.indices
        for edge in (idx[0], idx[-1]):
            trial = p.copy()
            trial.support[edge] = False
            trial.bias[edge] = 0.0
            ll_trial = user_posteriors(trial, u, s_norm).loglik
            if 2.0 * (ll - ll_trial) < threshold:
                p, ll = trial, ll_trial
                break
        else:
            break
    return p.support


def bias_quadratic(stats: PosteriorStats, support, u, s_norm: float):
    """Quadratic model of the expected residual in the biases.

    Returns (g, H) such that the expected squared residual equals
    const - 2 rho^T g + rho^T H rho (times s_norm^2 / sigma^2 scaling
    absorbed), with ``u`` the despread statistics (M, N).
    """
    c = np.asarray(support, dtype=float)
    n = c.size
    a = dft_basis(n)
    b = derivative_basis(n)
    th = stats.second_moments * c[None, :, None] * c[None, None, :]
    theta_sum = th.sum(axis=0)
    # despread data z = Y conj(s) = s_norm * u
    bz = (s_norm * np.asarray(u)) @ b.T  # rows: B z_m
    g = np.sum((bz.conj() * (c[None, :] * stats.means)).real, axis=0)
    g -= s_norm**2 * np.real(np.diag(theta_sum @ a @ b.conj().T))
    bbh = b @ b.conj().T
    hess = s_norm**2 * np.real(theta_sum * bbh.T)
    return g, 0.5 * (hess + hess.T)


def update_bias(
    stats: PosteriorStats, support, u, s_norm: float, prev_bias=None, method: str = "exact",
    sweeps: int = 200, tol: float = 1e-12,
):
    """Off-grid bias update on the support, clamped to [-1/2, 1/2].

    ``method="exact"`` minimizes the full quadratic by projected coordinate
    descent (each coordinate step is the closed form with the others held at
    their latest values).  ``method="diagonal"`` is the single-coordinate
    closed form that drops the coupling between bins.  A zero curvature entry
    keeps the previous value.  Off-support entries are set to 0.
    """
    sup = np.asarray(support, dtype=bool)
    n = sup.size
    prev = np.zeros(n) if prev_bias is None else np.asarray(prev_bias, dtype=float)
    g, hess = bias_quadratic(stats, sup, u, s_norm)
    rho = np.where(sup, prev, 0.0).astype(float)
    diag = np.diag(hess).copy()
    active = np.flatnonzero(sup & (diag > 0))
    if method == "diagonal":
        rho[active] = np.clip(g[active] / diag[active], -0.5, 0.5)
    elif method == "exact":
        rho[active] = np.clip(rho[active], -0.5, 0.5)
        hs = hess[np.ix_(active, active)]
        gs = g[active]
        x = rho[active].copy()
        for _ in range(sweeps):
            delta = 0.0
            for i in range(active.size):
                new = (gs[i] - hs[i] @ x + hs[i, i] * x[i]) / hs[i, i]
                new = min(0.5, max(-0.5, new))
                delta = max(delta, abs(new - x[i]))
                x[i] = new
            if delta < tol:
                break
        rho[active] = x
    else:
        raise ValueError(f"unknown bias method {method!r}")
    rho[~sup] = 0.0
    return rho


def bias_subspace_fit(u, support, grid: int = 21, sweeps: int = 3, restarts: int = 16, seed: int = 0):
    """Bias guess maximizing the data energy captured by the support beams.

    Treats the virtual channel as deterministic and maximizes
    tr(P(rho) R), with R = sum_m u_m u_m^H and P(rho) the projector onto the
    span of the support columns of Phi(rho)^H.  A coordinate grid search is
    followed by bounded quasi-Newton polishing, repeated from ``restarts``
    uniformly drawn starting points (the objective has shallow local optima
    where neighbouring bins trade their biases).  Used to seed the EM bias
    refinement when the support changes.
    """
    from scipy.optimize import minimize

    sup = np.asarray(support, dtype=bool)
    idx = np.flatnonzero(sup)
    n = sup.size
    rho = np.zeros(n)
    if idx.size == 0:
        return rho
    u = np.atleast_2d(u)
    ut = u.T  # tr(Q^H R Q) = ||Q^H U^T||_F^2 with R = U^T conj(U)
    nn = np.arange(n)
    ah = np.exp(2j * np.pi * np.outer(nn, idx) / n) / np.sqrt(n)
    bh = ah * (2j * np.pi * nn[:, None] / n)

    def captured(x):
        q, _ = np.linalg.qr(ah + bh * x[None, :])
        return float(np.sum(np.abs(q.conj().T @ ut) ** 2))

    x = np.zeros(idx.size)
    best = captured(x)
    cands = np.linspace(-0.5, 0.5, grid)
    for _ in range(sweeps):
        moved = False
        for i in range(idx.size):
            for c in cands:
                trial = x.copy()
                trial[i] = c
                val = captured(trial)
                if val > best * (1 + 1e-12):
                    best, x, moved = val, trial, True
        if not moved:
            break
    scale = max(best, 1e-300)
    bounds = [(-0.5, 0.5)] * idx.size
    starts = [x] + list(np.random.default_rng(seed).uniform(-0.5, 0.5, (restarts, idx.size)))
    for x0 in starts:
        res = minimize(lambda z: -captured(z) / scale, x0, method="L-BFGS-B", bounds=bounds)
        if -res.fun * scale > best:
            best, x = -res.fun * scale, res.x
    rho[idx] = np.clip(x, -0.5, 0.5)
    return rho


def refine_bias(
    params: ModelParams, stats: PosteriorStats, u, s_norm: float, method: str = "exact",
    cycles: int = 50, tol: float = 1e-4,
):
    """Bias update alternated with E-steps (multicycle ECM).

    Each cycle applies the closed-form bias update to the current posterior
    and then re-runs the smoother with the new bias (all other parameters
    held at ``params``).  Stops once the largest bias change is below
    ``tol`` or after ``cycles`` cycles.  Returns the bias and the posterior
    statistics computed under it.
    """
    trial = params.copy()
    rho = trial.bias
    for _ in range(max(cycles, 1)):
        new = update_bias(stats, params.support, u, s_norm, rho, method)
        change = np.max(np.abs(new - rho), initial=0.0)
        rho = new
        trial.bias = rho
        stats = user_posteriors(trial, u, s_norm)
        if change < tol:
            break
    return rho, stats


def update_noise_var(stats: Sequence[PosteriorStats], params: Sequence[ModelParams], observations, training):
    """Average expected residual power per received sample.

    Uses the per-user structure J_k^H J_j = 0 (k != j) of orthogonal training.
    """
    training = np.asarray(training)
    obs = np.atleast_2d(observations)
    n_blocks, dim = obs.shape
    n = params[0].n_antennas
    ys = unvec(obs, n)
    total = float(np.sum(np.abs(obs) ** 2))
    for k, (st, p) in enumerate(zip(stats, params)):
        s = training[:, k]
        dic = phi_h(p.bias) * p.support[None, :]
        psi = dic.conj().T @ dic
        z = ys @ s.conj()  # (M, N)
        fitted = st.means @ dic.T  # rows Phi^H D_c r_m
        total -= 2.0 * float(np.sum((z.conj() * fitted).real))
        total += float(np.vdot(s, s).real) * float(
            np.einsum("ij,mji->", psi, st.second_moments).real
        )
    return max(total / (n_blocks * dim), np.finfo(float).eps)


# ---------------------------------------------------------------------------
# Driver


@dataclass
class EmResult:
    params: list
    stats: list
    logliks: list = field(default_factory=list)
    history: list = field(default_factory=list)  # params after each iteration
    support_detected: list = field(default_factory=list)
    stopped_early: bool = False


def initial_params(observations, training, n_antennas: int, mode: str = "beam") -> list[ModelParams]:
    """Starting point for EM.

    ``mode="flat"``: alpha 0.9, Lambda = (received power / N) on every bin,
    all-ones support, zero bias, noise = 10% of the mean received power per
    sample.

    ``mode="beam"``: alpha 0.9, all-ones support, zero bias; the noise power
    comes from the training-orthogonal complement of the received blocks
    when tau < L_s (noise only there), else from the lower decile of the
    beam-domain powers; Lambda_j = (1 - 0.9^2) * (beam power_j - noise) /
    ||s||^2, floored at 1e-3 of its maximum.
    """
    training = np.asarray(training)
    obs = np.atleast_2d(observations)
    n_blocks = obs.shape[0]
    u, resid = despread(obs, training, n_antennas)
    tau, l_s = training.shape[1], training.shape[0]
    alpha0 = 0.9
    out = []
    if mode == "flat":
        sigma0 = 0.1 * float(np.mean(np.sum(np.abs(obs) ** 2, axis=1))) / obs.shape[1]
        for k in range(tau):
            s2 = float(np.vdot(training[:, k], training[:, k]).real)
            power = float(np.mean(np.sum(np.abs(u[k]) ** 2, axis=1))) / s2
            out.append(
                ModelParams(alpha0, np.full(n_antennas, power / n_antennas),
                            np.ones(n_antennas, bool), np.zeros(n_antennas), sigma0)
            )
        return out
    if mode != "beam":
        raise ValueError(f"unknown init mode {mode!r}")
    f = dft_basis(n_antennas)
    beam_power = np.mean(np.abs(u @ f.T) ** 2, axis=1)  # (tau, N)
    if tau < l_s:
        sigma0 = float(np.sum(resid)) / (n_blocks * n_antennas * (l_s - tau))
    else:
        sigma0 = float(np.quantile(beam_power, 0.1))
    sigma0 = max(sigma0, 1e-12 * float(np.max(beam_power)))
    for k in range(tau):
        s2 = float(np.vdot(training[:, k], training[:, k]).real)
        lam = (1.0 - alpha0**2) * np.maximum(beam_power[k] - sigma0, 0.0) / s2
        lam = np.maximum(lam, 1e-3 * float(np.max(lam)) if np.max(lam) > 0 else 1.0)
        out.append(
            ModelParams(alpha0, lam, np.ones(n_antennas, bool), np.zeros(n_antennas), sigma0)
        )
    return out


def _complement_loglik(resid_energy, n_dims: int, sigma2: float) -> float:
    if n_dims == 0:
        return 0.0
    return float(np.sum(-n_dims * (_LN_PI + np.log(sigma2)) - resid_energy / sigma2))


def e_step(params: Sequence[ModelParams], observations, training):
    """Per-user posteriors plus the total data log-likelihood."""
    training = np.asarray(training)
    n = params[0].n_antennas
    u, resid = despread(observations, training, n)
    norms = np.linalg.norm(training, axis=0)
    stats = [user_posteriors(p, u[k], norms[k]) for k, p in enumerate(params)]
    tau, l_s = training.shape[1], training.shape[0]
    ll = sum(s.loglik for s in stats) + _complement_loglik(
        resid, n * (l_s - tau), max(params[0].noise_var, 1e-300)
    )
    return stats, float(ll), u, norms


def residual_beam_lambda(params: ModelParams, stats: PosteriorStats, u, s_norm: float):
    """Process-power estimate for off-support bins from the model residual.

    The off-support posterior equals the prior, so the closed-form update
    carries no information there.  Instead, the beam-domain power of the
    residual u_m - ||s|| Phi^H diag(c) r_hat_m in excess of the noise is
    converted to an AR innovation power: (1 - alpha^2) * excess / ||s||^2.
    Bins the current model explains fall to ~0; an excluded true bin keeps
    its power and can re-enter the support.
    """
    u = np.atleast_2d(u)
    n = u.shape[1]
    fitted = s_norm * stats.means @ (phi_h(params.bias) * params.support[None, :]).T
    power = np.mean(np.abs((u - fitted) @ dft_basis(n).T) ** 2, axis=0)
    excess = np.maximum(power - params.noise_var, 0.0)
    return (1.0 - params.alpha**2) * excess / s_norm**2


def _m_step_jacobi(params, stats, u, norms, bias_method):
    """Every update reads the previous iterate and one set of posteriors."""
    new, detected = [], []
    for k, q in enumerate(params):
        p = q.copy()
        p.support, ok = update_support(q.lambda_diag)
        p.bias = update_bias(stats[k], q.support, u[k], norms[k], q.bias, bias_method)
        p.bias[~p.support] = 0.0
        p.alpha = update_alpha(stats[k], q.lambda_diag, q.support)
        p.lambda_diag = update_lambda(stats[k], q.alpha)
        new.append(p)
        detected.append(ok)
    return new, stats, detected


def _m_step_ecm(params, stats, u, norms, bias_method, bias_cycles, bias_tol, prune=True):
    """Gauss-Seidel sweep support -> bias -> alpha -> lambda per user.

    The posterior is refreshed after the structural updates (support, bias)
    so that alpha, Lambda and the noise power are fitted against moments that
    match the freshest structure.
    """
    new, fresh, detected = [], [], []
    for k, q in enumerate(params):
        p = q.copy()
        p.support, ok = update_support(q.lambda_diag)
        p.bias[~p.support] = 0.0
        if ok and prune:
            p.support = prune_support_edges(p, u[k], norms[k])
            p.bias[~p.support] = 0.0
        st = stats[k]
        if not np.array_equal(p.support, q.support):
            st = user_posteriors(p, u[k], norms[k])
        rho, st_rho = refine_bias(p, st, u[k], norms[k], bias_method, bias_cycles, bias_tol)
        if p.support.any() and (not np.array_equal(p.support, q.support) or not np.any(q.bias)):
            # new structure: also try a subspace-fit seed, keep the likelier
            seed = p.copy()
            seed.bias = bias_subspace_fit(u[k], p.support)
            st_seed = user_posteriors(seed, u[k], norms[k])
            rho2, st2 = refine_bias(seed, st_seed, u[k], norms[k], bias_method, bias_cycles, bias_tol)
            if st2.loglik > st_rho.loglik:
                rho, st_rho = rho2, st2
        p.bias, st = rho, st_rho
        try:
            p.alpha = update_alpha(st, p.lambda_diag, p.support)
        except DegeneratePowerError:
            pass  # keep the previous alpha
        lam = update_lambda(st, p.alpha)
        off = ~p.support
        lam[off] = residual_beam_lambda(p, st, u[k], norms[k])[off]
        p.lambda_diag = lam
        new.append(p)
        fresh.append(st)
        detected.append(ok)
    return new, fresh, detected


def em_learn(
    observations,
    config: SystemConfig,
    init: Sequence[ModelParams] | None = None,
    n_iters: int = 5,
    training=None,
    bias_method: str = "exact",
    scheme: str = "ecm",
    init_mode: str = "beam",
    bias_cycles: int = 50,
    bias_tol: float = 1e-4,
) -> EmResult:
    """Learn every user's parameters from M blocks of received training.

    Each iteration runs the E-step under the current estimates and then the
    M-step.  ``scheme="ecm"`` (default) updates support, bias, alpha and
    Lambda in that order per user, refreshing the posterior after structural
    changes; ``scheme="jacobi"`` computes every update from the previous
    iterate.
    Iteration stops early, returning the best iterate, if the data
    log-likelihood drops by more than 1% on two consecutive iterations.
    """
    if n_iters < 1:
        raise ValueError("n_iters must be >= 1")
    if scheme not in ("jacobi", "ecm"):
        raise ValueError(f"unknown update scheme {scheme!r}")
    obs = np.atleast_2d(np.asarray(observations, dtype=complex))
    n = config.n_antennas
    if training is None:
        training = make_training(config.group_size, config.train_len, config.pilot_power)
    training = np.asarray(training)
    tau = training.shape[1]
    if obs.shape[1] != n * training.shape[0]:
        raise ValueError("observation length must be N_t * L_s")
    if obs.shape[0] < 2:
        raise ValueError("EM needs at least 2 blocks")
    params = [p.copy() for p in init] if init is not None else initial_params(obs, training, n, init_mode)
    if len(params) != tau:
        raise ValueError("need one initial parameter set per training column")

    result = EmResult(params, [])
    best = (-np.inf, [p.copy() for p in params], None)
    drops = 0
    prev_ll = None
    for _ in range(n_iters):
        stats, ll, u, norms = e_step(params, obs, training)
        result.logliks.append(ll)
        if ll > best[0]:
            best = (ll, [p.copy() for p in params], stats)
        if prev_ll is not None and ll < prev_ll - 0.01 * abs(prev_ll):
            drops += 1
            if drops >= 2:
                result.stopped_early = True
                break
        else:
            drops = 0
        prev_ll = ll
        if scheme == "jacobi":
            new, fresh, detected = _m_step_jacobi(params, stats, u, norms, bias_method)
        else:
            new, fresh, detected = _m_step_ecm(params, stats, u, norms, bias_method, bias_cycles, bias_tol)
        sigma2 = update_noise_var(fresh, params if scheme == "jacobi" else new, obs, training)
        for p in new:
            p.noise_var = sigma2
        params = new
        result.history.append([p.copy() for p in params])
        result.support_detected.append(detected)
    if result.stopped_early:
        params = best[1]
        stats = best[2]
    else:
        stats, ll, _, _ = e_step(params, obs, training)
        result.logliks.append(ll)
    result.params = params
    result.stats = stats
    if not all(result.support_detected[-1] if result.support_detected else [True]):
        warnings.warn("flat process-power estimate: support not detected for some users")
    return result
