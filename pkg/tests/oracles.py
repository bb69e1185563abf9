"""Independent reference computations used by the tests.

Every oracle here builds the full joint Gaussian of a small problem and
conditions it directly with dense linear algebra, without any recursion.
"""

from __future__ import annotations

import numpy as np

LN_PI = float(np.log(np.pi))


def crandn(rng, *shape):
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)


def random_pd(rng, n, cond=10.0):
    """Random Hermitian PD matrix with eigenvalues in [1, cond]."""
    q, _ = np.linalg.qr(crandn(rng, n, n))
    ev = np.exp(rng.uniform(0.0, np.log(cond), n))
    return (q * ev) @ q.conj().T


def dense_cn_logpdf(x, mean, cov):
    """ln CN(x; mean, cov) with an explicit inverse and determinant."""
    x = np.atleast_1d(x)
    d = x - mean
    n = x.size
    return float(-n * LN_PI - np.log(np.linalg.det(cov).real) - (d.conj() @ np.linalg.inv(cov) @ d).real)


def ar_state_cov(transition, process_var, init_var, n_blocks):
    """Joint covariance of x_1..x_M for x_{m+1} = F x_m + v, F and Q diagonal.

    Returns an (M n, M n) matrix ordered block by block.
    """
    f = np.asarray(transition, float)
    q = np.asarray(process_var, float)
    n = f.size
    var = np.empty((n_blocks, n))
    var[0] = init_var
    for m in range(1, n_blocks):
        var[m] = f**2 * var[m - 1] + q
    cov = np.zeros((n_blocks * n, n_blocks * n))
    for i in range(n_blocks):
        for j in range(i, n_blocks):
            c = var[i] * f ** (j - i)
            cov[i * n:(i + 1) * n, j * n:(j + 1) * n] = np.diag(c)
            cov[j * n:(j + 1) * n, i * n:(i + 1) * n] = np.diag(c)
    return cov


def condition_linear_gaussian(transition, process_var, init_var, obs_matrix, noise_var, observations):
    """Posterior of the stacked states given all observations.

    Returns (means (M, n), covs (M, n, n), cross (M-1, n, n) with
    cross[m] = Cov(x_m, x_{m+1} | y), loglik, filtered means (M, n)).
    """
    y = np.atleast_2d(observations)
    n_blocks = y.shape[0]
    h = np.atleast_2d(obs_matrix)
    p, n = h.shape
    sx = ar_state_cov(transition, process_var, init_var, n_blocks)
    big_h = np.kron(np.eye(n_blocks), h)
    sxy = sx @ big_h.conj().T
    syy = big_h @ sxy + noise_var * np.eye(n_blocks * p)
    yv = y.reshape(-1)
    gain = np.linalg.solve(syy, sxy.conj().T).conj().T
    mean = gain @ yv
    cov = sx - gain @ sxy.conj().T
    means = mean.reshape(n_blocks, n)
    covs = np.stack([cov[i * n:(i + 1) * n, i * n:(i + 1) * n] for i in range(n_blocks)])
    cross = np.stack([cov[i * n:(i + 1) * n, (i + 1) * n:(i + 2) * n] for i in range(n_blocks - 1)]) \
        if n_blocks > 1 else np.zeros((0, n, n))
    loglik = dense_cn_logpdf(yv, np.zeros_like(yv), syy)
    filt = np.empty((n_blocks, n), complex)
    for m in range(n_blocks):
        k = (m + 1) * p
        g = np.linalg.solve(syy[:k, :k], sxy[m * n:(m + 1) * n, :k].conj().T).conj().T
        filt[m] = g @ yv[:k]
    return means, covs, cross, loglik, filt


def dl_chain_loglik(observations, lambda_diag, noise_eff, alpha):
    """ln p(y_1..y_m) for w_1 ~ CN(0, L), w_{i+1} = a w_i + CN(0, L),
    y_i = w_i + CN(0, s I), from the dense joint covariance."""
    y = np.atleast_2d(observations)
    m, q = y.shape
    lam = np.asarray(lambda_diag, float)
    sx = ar_state_cov(np.full(q, alpha), lam, lam, m)
    syy = sx + noise_eff * np.eye(m * q)
    yv = y.reshape(-1)
    return dense_cn_logpdf(yv, np.zeros_like(yv), syy)
