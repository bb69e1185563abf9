"""Linear-Gaussian filtering and smoothing for complex state vectors.

The model is

    x_1 ~ CN(m0, P0),   x_{m+1} = F x_m + w_m,   w_m ~ CN(0, Q),
    y_m = H x_m + e_m,  e_m ~ CN(0, s I),

with diagonal F and Q given as vectors.  Everything here is standard; the
module exists so the uplink E-step, the uplink tracker and the downlink
baselines share one audited implementation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .cgauss import NotPositiveDefiniteError, cholesky_jitter, hermitize

__all__ = ["FilterResult", "LinearGaussianModel", "SmootherResult", "kalman_filter", "rts_smoother"]

_LN_PI = float(np.log(np.pi))


@dataclass
class LinearGaussianModel:
    transition: np.ndarray  # (n,) diagonal of F
    process_var: np.ndarray  # (n,) diagonal of Q
    observation: np.ndarray  # (p, n)
    obs_noise_var: float
    init_mean: np.ndarray | None = None
    init_cov: np.ndarray | None = None  # (n,) diagonal or (n, n)

    def __post_init__(self):
        self.transition = np.asarray(self.transition, dtype=float)
        self.process_var = np.asarray(self.process_var, dtype=float)
        self.observation = np.atleast_2d(np.asarray(self.observation, dtype=complex))
        n = self.transition.size
        if self.process_var.shape != (n,) or self.observation.shape[1] != n:
            raise ValueError("inconsistent state dimension")
        if self.init_mean is None:
            self.init_mean = np.zeros(n, dtype=complex)
        if self.init_cov is None:
            self.init_cov = stationary_var(self.transition, self.process_var)

    @property
    def dim(self) -> int:
        return self.transition.size


def stationary_var(transition, process_var):
    """Q / (1 - F^2) entrywise, falling back to Q where |F| >= 1."""
    f2 = np.asarray(transition, dtype=float) ** 2
    q = np.asarray(process_var, dtype=float)
    out = q.copy()
    ok = f2 < 1.0
    out[ok] = q[ok] / (1.0 - f2[ok])
    return out


def _as_matrix(cov):
    cov = np.asarray(cov)
    return np.diag(cov).astype(complex) if cov.ndim == 1 else cov.astype(complex)


@dataclass
class FilterResult:
    pred_means: np.ndarray  # (M, n) E[x_m | y_1..m-1]
    pred_covs: np.ndarray  # (M, n, n)
    filt_means: np.ndarray  # (M, n) E[x_m | y_1..m]
    filt_covs: np.ndarray
    gains: np.ndarray  # (M, n, p)
    loglik: float


@dataclass
class SmootherResult:
    means: np.ndarray  # (M, n)
    covs: np.ndarray  # (M, n, n)
    cross_covs: np.ndarray  # (M-1, n, n) Cov(x_m, x_{m+1} | all)
    loglik: float

    @property
    def second_moments(self):
        return self.covs + np.einsum("mi,mj->mij", self.means, self.means.conj())

    @property
    def cross_moments(self):
        """E[x_m x_{m+1}^H | all] for m = 1..M-1."""
        return self.cross_covs + np.einsum(
            "mi,mj->mij", self.means[:-1], self.means[1:].conj()
        )


def kalman_filter(model: LinearGaussianModel, observations) -> FilterResult:
    """Forward pass; the log-likelihood is the prediction-error decomposition."""
    obs = np.atleast_2d(np.asarray(observations, dtype=complex))
    n_blocks = obs.shape[0]
    n = model.dim
    h = model.observation
    p = h.shape[0]
    if obs.shape[1] != p:
        raise ValueError(f"observation length {obs.shape[1]} != model output dim {p}")
    f = model.transition
    q = np.diag(model.process_var).astype(complex)
    pred_m = np.empty((n_blocks, n), dtype=complex)
    pred_p = np.empty((n_blocks, n, n), dtype=complex)
    filt_m = np.empty_like(pred_m)
    filt_p = np.empty_like(pred_p)
    gains = np.empty((n_blocks, n, p), dtype=complex)
    mean = np.asarray(model.init_mean, dtype=complex)
    cov = _as_matrix(model.init_cov)
    loglik = 0.0
    eye_p = np.eye(p)
    for m in range(n_blocks):
        if m > 0:
            mean = f * filt_m[m - 1]
            cov = hermitize(f[:, None] * filt_p[m - 1] * f[None, :] + q)
        pred_m[m], pred_p[m] = mean, cov
        ph = cov @ h.conj().T
        s = hermitize(h @ ph + model.obs_noise_var * eye_p)
        chol = cholesky_jitter(s, what="innovation covariance")
        innov = obs[m] - h @ mean
        w = sla.solve_triangular(chol, innov, lower=True)
        loglik += -p * _LN_PI - 2.0 * np.sum(np.log(np.diag(chol).real)) - np.vdot(w, w).real
        gain = sla.cho_solve((chol, True), ph.conj().T).conj().T
        gains[m] = gain
        filt_m[m] = mean + gain @ innov
        filt_p[m] = hermitize(cov - gain @ ph.conj().T)
    return FilterResult(pred_m, pred_p, filt_m, filt_p, gains, float(loglik))


def _right_solve(a, b):
    """b a^{-1} for Hermitian PSD ``a`` (Cholesky, pseudo-inverse fallback)."""
    try:
        chol = cholesky_jitter(a)
        return sla.cho_solve((chol, True), b.conj().T).conj().T
    except NotPositiveDefiniteError:
        return b @ sla.pinvh(hermitize(a))


def rts_smoother(model: LinearGaussianModel, observations, filtered: FilterResult | None = None):
    """Rauch-Tung-Striebel smoother with lag-one cross covariances."""
    fr = filtered if filtered is not None else kalman_filter(model, observations)
    n_blocks, n = fr.filt_means.shape
    f = model.transition
    means = fr.filt_means.copy()
    covs = fr.filt_covs.copy()
    cross = np.empty((max(n_blocks - 1, 0), n, n), dtype=complex)
    for m in range(n_blocks - 2, -1, -1):
        # G = P_{m|m} F^H P_{m+1|m}^{-1}
        g = _right_solve(fr.pred_covs[m + 1], fr.filt_covs[m] * f[None, :])
        means[m] = fr.filt_means[m] + g @ (means[m + 1] - fr.pred_means[m + 1])
        covs[m] = hermitize(
            fr.filt_covs[m] + g @ (covs[m + 1] - fr.pred_covs[m + 1]) @ g.conj().T
        )
        cross[m] = g @ covs[m + 1]
    return SmootherResult(means, covs, cross, fr.loglik)
