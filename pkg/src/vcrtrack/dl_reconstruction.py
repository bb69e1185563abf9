"""Downlink model reconstruction from uplink estimates.

Path directions are shared by both links, so the downlink support and
off-grid biases follow from the uplink ones by rescaling grid positions with
the wavelength ratio, and the downlink correlation follows from the uplink
Doppler.  The process powers and the downlink noise power are not
reconstructed; they are the unknowns of the restoration stage.

Downlink training sends, for each group of users with disjoint downlink
supports, one beam per support bin.  Despreading with a user's own training
rows recovers its on-support virtual channel plus white noise.
"""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np

from .channel_model import (
    ModelParams,
    bessel_j0,
    contiguous_runs,
    doppler_from_alpha,
    make_training,
    phi_h,
)
from .ul_tracking import GroupAssignment, group_users

__all__ = [
    "DlModelPartial",
    "DlTraining",
    "build_dl_training",
    "dl_group_users",
    "dl_observe_despread",
    "map_alpha_dl",
    "map_lambda_dl",
    "map_support_bias",
    "reconstruct_dl",
]


@dataclass
class DlModelPartial:
    """Reconstructed downlink parameters of one user.

    ``source_bins`` maps every downlink support bin to the uplink bins it
    came from (empty for bins added to close gaps).
    """

    alpha_dl: float
    support_dl: np.ndarray
    bias_dl: np.ndarray
    wavelength_ratio: float  # lambda' / lambda
    source_bins: dict

    def __post_init__(self):
        self.support_dl = np.asarray(self.support_dl, bool)
        self.bias_dl = np.asarray(self.bias_dl, float)
        if not 0.0 <= self.alpha_dl <= 1.0:
            raise ValueError("alpha_dl must lie in [0, 1]")
        if np.any(np.abs(self.bias_dl) > 0.5 + 1e-12):
            raise ValueError("bias_dl entries must lie in [-1/2, 1/2]")
        if len(contiguous_runs(self.support_dl)) > 1:
            raise ValueError("support_dl must be contiguous")

    @property
    def indices(self) -> np.ndarray:
        return np.flatnonzero(self.support_dl)


def map_alpha_dl(nu_max: float, block_len: int, symbol_period: float, wavelength_ratio: float,
                 direction: str = "stated") -> float:
    """Downlink correlation J0(2 pi nu' L_c T_s).

    ``direction="stated"`` scales the Doppler as nu' = (lambda'/lambda) nu;
    ``direction="physical"`` uses nu' = (lambda/lambda') nu, which is what a
    common speed implies (Doppler is proportional to carrier frequency).  The
    two agree for equal carriers.
    """
    if not wavelength_ratio > 0:
        raise ValueError("wavelength_ratio must be positive")
    if nu_max < 0:
        raise ValueError("nu_max must be nonnegative")
    if direction == "stated":
        nu = wavelength_ratio * nu_max
    elif direction == "physical":
        nu = nu_max / wavelength_ratio
    else:
        raise ValueError(f"unknown direction {direction!r}")
    return float(np.clip(bessel_j0(2.0 * np.pi * nu * block_len * symbol_period), 0.0, 1.0))


def map_support_bias(support_ul, bias_ul, position_ratio: float, n_antennas: int | None = None):
    """Remap support bins and biases by the grid-position ratio lambda/lambda'.

    Each uplink bin p maps to x = (p + rho_p) * ratio, split as
    p' = floor(x), rho' = x - p' in [0, 1); rho' > 1/2 is re-centred to
    (p' + 1, rho' - 1).  Bins landing on the same p' are merged by averaging
    their biases, and holes inside [min p', max p'] are filled with bias 0.
    Returns ``(support_dl, bias_dl, source_bins)``.
    """
    support_ul = np.asarray(support_ul, bool)
    bias_ul = np.asarray(bias_ul, float)
    n = support_ul.size if n_antennas is None else int(n_antennas)
    if not position_ratio > 0:
        raise ValueError("position ratio must be positive")
    sums: dict[int, float] = {}
    sources: dict[int, list] = {}
    for p in np.flatnonzero(support_ul):
        x = (p + bias_ul[p]) * position_ratio
        q = int(np.floor(x))
        r = x - q
        if r > 0.5:
            q, r = q + 1, r - 1.0
        if not 0 <= q < n:
            raise ValueError(f"uplink bin {p} maps outside the downlink grid ({q})")
        sums[q] = sums.get(q, 0.0) + r
        sources.setdefault(q, []).append(int(p))
    support = np.zeros(n, bool)
    bias = np.zeros(n)
    for q, s in sums.items():
        support[q] = True
        bias[q] = s / len(sources[q])
    if sources:
        lo, hi = min(sources), max(sources)
        for q in range(lo, hi + 1):
            if not support[q]:
                support[q] = True
                sources[q] = []
    return support, bias, {q: sources[q] for q in sorted(sources)}


def map_lambda_dl(lambda_ul, source_bins: dict, n_antennas: int):
    """Carry uplink process powers to downlink bins (prior anchors).

    A merged bin takes the mean of its sources; a gap-filled bin takes the
    mean of its nearest filled neighbours.
    """
    lam_ul = np.asarray(lambda_ul, float)
    out = np.zeros(n_antennas)
    filled = {q: float(np.mean(lam_ul[s])) for q, s in source_bins.items() if s}
    for q in source_bins:
        if q in filled:
            out[q] = filled[q]
        else:
            left = max((b for b in filled if b < q), default=None)
            right = min((b for b in filled if b > q), default=None)
            vals = [filled[b] for b in (left, right) if b is not None]
            out[q] = float(np.mean(vals)) if vals else 0.0
    return out


def reconstruct_dl(params: ModelParams, carrier_ul: float, carrier_dl: float, block_len: int,
                   symbol_period: float, direction: str = "stated") -> DlModelPartial:
    """Downlink partial model (alpha', support', bias') of one user."""
    ratio = carrier_ul / carrier_dl  # lambda' / lambda
    nu = doppler_from_alpha(params.alpha, block_len, symbol_period)
    alpha = map_alpha_dl(nu, block_len, symbol_period, ratio, direction)
    support, bias, sources = map_support_bias(params.support, params.bias, 1.0 / ratio)
    return DlModelPartial(alpha, support, bias, ratio, sources)


def dl_group_users(supports_dl: Sequence, pilot_power: float = 1.0) -> GroupAssignment:
    """Group users so that downlink supports inside a group are disjoint."""
    return group_users(supports_dl, pilot_power)


@dataclass
class DlTraining:
    """Training of one downlink group.

    ``beams`` is N x M_g (the transmitted block Gamma_g); ``rows[k]`` is the
    |Q'_k| x M_g training of member k, the first |Q'_k| rows of T_g, with
    T_g T_g^H = M_g sigma_p^2 I.
    """

    beams: np.ndarray
    rows: dict
    block_len: int
    pilot_power: float


def build_dl_training(members: Sequence[int], supports_dl: dict, biases_dl: dict,
                      pilot_power: float = 1.0) -> DlTraining:
    """Beamformed training for the users in ``members``."""
    sizes = {k: int(np.sum(supports_dl[k])) for k in members}
    m_g = max(max(sizes.values(), default=0), 1)
    t_g = make_training(m_g, m_g, pilot_power)  # square, rows orthogonal too
    n = np.asarray(supports_dl[members[0]]).size
    beams = np.zeros((n, m_g), dtype=complex)
    rows = {}
    for k in members:
        idx = np.flatnonzero(supports_dl[k])
        s_k = t_g[: idx.size, :]
        rows[k] = s_k
        beams += phi_h(biases_dl[k])[:, idx] @ s_k
    return DlTraining(beams, rows, m_g, float(pilot_power))


def dl_observe_despread(channel, training: DlTraining, user: int, noise_var: float, rng):
    """Despread downlink observation of one user, shape (..., |Q'_k|).

    The user receives y'^H = g^H Gamma_g + n^H and forms
    S_k y' / (M_g sigma_p^2).  The receiver noise per training symbol is
    drawn with variance M_g sigma_n'^2 so that the despread noise has the
    per-entry variance sigma_n'^2 / sigma_p^2 used by the restoration model.
    ``channel`` is (N,) or (M, N) antenna-domain channels.
    """
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    g = np.asarray(channel, dtype=complex)
    m_g = training.block_len
    clean = g @ training.beams.conj()  # rows: (g^H Gamma)^* = Gamma^H g
    var = m_g * noise_var
    noise = np.sqrt(var / 2.0) * (rng.standard_normal(clean.shape) + 1j * rng.standard_normal(clean.shape))
    y = clean + noise
    s_k = training.rows[user]
    return (y @ s_k.T) / (m_g * training.pilot_power)
