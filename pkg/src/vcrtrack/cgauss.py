"""Complex circularly-symmetric Gaussian densities and their algebra.

A density CN(x; mu, Sigma) on C^N has log-density

    -N ln(pi) - ln|Sigma| - (x - mu)^H Sigma^{-1} (x - mu).

Products and quotients of such densities are again (scaled) Gaussians.  All
scale factors are carried as natural logarithms so that long chains of
sub-unity weights never underflow.
"""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

__all__ = [
    "FLAT",
    "ComplexGaussian",
    "NotPositiveDefiniteError",
    "ScaledGaussian",
    "cholesky_jitter",
    "cn_logpdf",
    "cn_product",
    "cn_quotient",
    "cn_rescale",
    "hermitian_inv",
    "hermitian_solve",
    "hermitize",
    "logdet_pd",
]

_LN_PI = float(np.log(np.pi))
HERMITIAN_RTOL = 1e-12


class NotPositiveDefiniteError(np.linalg.LinAlgError):
    """Raised when a matrix that must be Hermitian positive definite is not.

    The offending smallest eigenvalue is kept in ``min_eigenvalue``.
    """

    def __init__(self, message: str, min_eigenvalue: float = float("nan")):
        super().__init__(f"{message} (smallest eigenvalue {min_eigenvalue:.3e})")
        self.min_eigenvalue = float(min_eigenvalue)


def hermitize(a):
    """Return the Hermitian part (a + a^H) / 2."""
    a = np.asarray(a)
    return 0.5 * (a + a.conj().T)


def _min_eig(a) -> float:
    try:
        return float(np.linalg.eigvalsh(hermitize(a))[0])
    except np.linalg.LinAlgError:
        return float("nan")


def cholesky_jitter(a, *, what: str = "matrix"):
    """Lower Cholesky factor of a Hermitian PD matrix.

    On failure, a diagonal jitter of ``1e-12 * trace(a) / N`` is added and the
    factorization retried once.  A second failure raises
    :class:`NotPositiveDefiniteError`.
    """
    a = hermitize(np.atleast_2d(np.asarray(a, dtype=complex)))
    try:
        return np.linalg.cholesky(a)
    except np.linalg.LinAlgError:
        pass
    n = a.shape[0]
    jitter = 1e-12 * abs(np.trace(a).real) / n
    if jitter > 0:
        try:
            return np.linalg.cholesky(a + jitter * np.eye(n))
        except np.linalg.LinAlgError:
            pass
    raise NotPositiveDefiniteError(f"{what} is not positive definite", _min_eig(a))


def logdet_pd(a) -> float:
    """ln|a| for Hermitian PD ``a`` via its Cholesky factor."""
    chol = cholesky_jitter(a)
    return float(2.0 * np.sum(np.log(np.diag(chol).real)))


def hermitian_solve(a, b):
    """Solve ``a x = b`` for Hermitian PD ``a`` (Cholesky with jitter)."""
    chol = cholesky_jitter(a)
    return sla.cho_solve((chol, True), b)


def hermitian_inv(a):
    """Inverse of a Hermitian PD matrix, returned exactly Hermitian."""
    a = np.atleast_2d(a)
    return hermitize(hermitian_solve(a, np.eye(a.shape[0], dtype=complex)))


@dataclass(frozen=True)
class ComplexGaussian:
    """CN(mean, cov).

    With ``definite=False`` the positive-definiteness check is skipped; such
    objects arise as intermediate quotients whose "covariance" may be
    indefinite.  They still support :func:`cn_logpdf`, which then uses
    ln|det| in place of ln det.
    """

    mean: np.ndarray
    cov: np.ndarray
    definite: bool = True

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=complex))
        cov = np.atleast_2d(np.asarray(self.cov, dtype=complex))
        if mean.ndim != 1:
            raise ValueError("mean must be a vector")
        if cov.shape != (mean.size, mean.size):
            raise ValueError(
                f"dimension mismatch: mean has length {mean.size}, covariance {cov.shape}"
            )
        scale = max(float(np.max(np.abs(cov))), np.finfo(float).tiny)
        if np.max(np.abs(cov - cov.conj().T)) > HERMITIAN_RTOL * scale:
            raise ValueError("covariance is not Hermitian")
        cov = hermitize(cov)
        if self.definite:
            lo = _min_eig(cov)
            if not lo > 0:
                raise NotPositiveDefiniteError("covariance is not positive definite", lo)
        mean.setflags(write=False)
        cov.setflags(write=False)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def dim(self) -> int:
        return self.mean.size

    @classmethod
    def from_precision(cls, mean, precision, definite=True) -> ComplexGaussian:
        precision = hermitize(np.atleast_2d(precision))
        if definite:
            cov = hermitian_inv(precision)
        else:
            cov = hermitize(np.linalg.inv(precision))
        return cls(mean, cov, definite=definite)


@dataclass(frozen=True)
class ScaledGaussian:
    """exp(log_weight) * density.

    ``density is None`` encodes the flat (constant) function; it is what the
    quotient of a density by itself produces.
    """

    log_weight: float
    density: ComplexGaussian | None

    def __post_init__(self):
        if not np.isfinite(self.log_weight):
            raise FloatingPointError(f"log weight is not finite: {self.log_weight}")
        object.__setattr__(self, "log_weight", float(self.log_weight))

    @property
    def is_flat(self) -> bool:
        return self.density is None

    def log_eval(self, x) -> float:
        """ln of the scaled function evaluated at ``x``."""
        if self.density is None:
            return self.log_weight
        return self.log_weight + cn_logpdf(x, self.density)


FLAT = ScaledGaussian(0.0, None)


def _quad_and_logdet(diff, cov, definite):
    if definite:
        chol = cholesky_jitter(cov, what="covariance")
        w = sla.solve_triangular(chol, diff, lower=True)
        return float(np.vdot(w, w).real), float(2.0 * np.sum(np.log(np.diag(chol).real)))
    _, logabsdet = np.linalg.slogdet(cov)
    quad = np.vdot(diff, np.linalg.solve(cov, diff)).real
    return float(quad), float(logabsdet)


def cn_logpdf(x, g: ComplexGaussian) -> float:
    """Natural-log density of ``g`` at ``x``."""
    x = np.atleast_1d(np.asarray(x, dtype=complex))
    if x.shape != g.mean.shape:
        raise ValueError(f"dimension mismatch: x has shape {x.shape}, density dim {g.dim}")
    quad, logdet = _quad_and_logdet(x - g.mean, g.cov, g.definite)
    return -g.dim * _LN_PI - logdet - quad


def _zeta(mean, precision_mean, logdet_cov, n):
    # ln CN(0; mu, Sigma) = -N ln pi - ln|Sigma| - mu^H Sigma^{-1} mu
    return -n * _LN_PI - logdet_cov - float(np.vdot(mean, precision_mean).real)


def cn_product(factors: Sequence[ComplexGaussian]) -> ScaledGaussian:
    """Product of Gaussian densities in the same variable.

    Returns the scaled Gaussian whose pointwise value equals the product.
    The log weight is sum(zeta_i) - zeta_bar where zeta = ln CN(0; mu, Sigma).
    """
    factors = list(factors)
    if not factors:
        raise ValueError("need at least one factor")
    n = factors[0].dim
    if any(f.dim != n for f in factors):
        raise ValueError("dimension mismatch among factors")
    if len(factors) == 1:
        return ScaledGaussian(0.0, factors[0])
    prec_sum = np.zeros((n, n), dtype=complex)
    info_sum = np.zeros(n, dtype=complex)
    zeta_sum = 0.0
    for f in factors:
        chol = cholesky_jitter(f.cov, what="factor covariance")
        prec = sla.cho_solve((chol, True), np.eye(n, dtype=complex))
        info = prec @ f.mean
        zeta_sum += _zeta(f.mean, info, 2.0 * np.sum(np.log(np.diag(chol).real)), n)
        prec_sum += prec
        info_sum += info
    try:
        chol = cholesky_jitter(prec_sum, what="precision sum")
    except NotPositiveDefiniteError as exc:
        raise np.linalg.LinAlgError(f"singular precision sum: {exc}") from exc
    cov = hermitize(sla.cho_solve((chol, True), np.eye(n, dtype=complex)))
    mean = cov @ info_sum
    logdet_cov = -2.0 * float(np.sum(np.log(np.diag(chol).real)))
    zeta_bar = _zeta(mean, info_sum, logdet_cov, n)
    return ScaledGaussian(zeta_sum - zeta_bar, ComplexGaussian(mean, cov))


def cn_quotient(numerator: ComplexGaussian, denominator: ComplexGaussian) -> ScaledGaussian:
    """CN(x; mu2, S2) / CN(x; mu1, S1) as a scaled Gaussian.

    The result has precision S2^{-1} - S1^{-1}, which may be indefinite; in that
    case the returned density is built with ``definite=False``.  Identical
    arguments give :data:`FLAT`.
    """
    if numerator.dim != denominator.dim:
        raise ValueError("dimension mismatch")
    n = numerator.dim
    if np.array_equal(numerator.mean, denominator.mean) and np.array_equal(
        numerator.cov, denominator.cov
    ):
        return FLAT
    p2 = hermitian_inv(numerator.cov)
    p1 = hermitian_inv(denominator.cov)
    prec = hermitize(p2 - p1)
    info = p2 @ numerator.mean - p1 @ denominator.mean
    scale = max(np.linalg.norm(p2, 2), np.linalg.norm(p1, 2))
    eigs = np.linalg.eigvalsh(prec)
    if np.min(np.abs(eigs)) <= 1e-13 * scale:
        raise np.linalg.LinAlgError(
            "singular precision difference in quotient; regularize the operands"
        )
    definite = bool(eigs[0] > 0)
    cov = hermitize(np.linalg.inv(prec))
    mean = cov @ info
    result = ComplexGaussian(mean, cov, definite=definite)
    log_weight = (
        cn_logpdf(np.zeros(n), numerator)
        - cn_logpdf(np.zeros(n), denominator)
        - cn_logpdf(np.zeros(n), result)
    )
    return ScaledGaussian(log_weight, result)


def cn_rescale(g: ComplexGaussian, a: float) -> ScaledGaussian:
    """Re-express CN(x; a w, Sigma) as a scaled density in ``w``.

    ``g`` holds (x, Sigma) as (mean, cov).  The identity is
    CN(x; a w, Sigma) = a^{-2N} CN(w; x / a, Sigma / a^2).
    """
    a = float(a)
    if a == 0.0:
        raise ValueError("rescale factor must be nonzero")
    return ScaledGaussian(
        -2.0 * g.dim * np.log(abs(a)), ComplexGaussian(g.mean / a, g.cov / a**2)
    )
