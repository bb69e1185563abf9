"""Uplink tracking after learning: grouping, group extraction and a
reduced-dimension Kalman filter.

Users whose spatial signatures do not overlap share one training column.
With G groups and a G x G orthogonal training matrix S_G, despreading the
received block with group g's column leaves the sum of that group's channels
plus white noise of variance sigma_n^2 / (G sigma_p^2).  Because each member
only occupies its own support bins, the sum is a linear function of the
stacked on-support virtual coefficients, and tracking needs only
sum_k |Q_k| states instead of N per user.
"""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np

from .channel_model import (
    ModelParams,
    VirtualChannelTrajectory,
    make_training,
    phi_h,
    unvec,
)
from .kalman import LinearGaussianModel, kalman_filter, stationary_var

__all__ = [
    "GroupAssignment",
    "ReducedStateSpace",
    "UlTrackResult",
    "build_reduced_model",
    "extract_group_signal",
    "group_users",
    "reduced_kf_track",
    "supports_overlap",
    "synthesize_group_observations",
    "track_ul",
]


def supports_overlap(a, b) -> bool:
    """True when two masks share a bin (c_a c_b^T != 0)."""
    return bool(np.any(np.asarray(a, bool) & np.asarray(b, bool)))


@dataclass(frozen=True)
class GroupAssignment:
    """User groups with pairwise disjoint supports and their training matrix.

    ``training_matrix`` is G x G; column g is the sequence group g sends, and
    S_G^H S_G = G sigma_p^2 I.
    """

    groups: tuple
    training_matrix: np.ndarray
    pilot_power: float = 1.0

    @property
    def n_groups(self) -> int:
        return len(self.groups)

    def group_of(self, user: int) -> int:
        for g, members in enumerate(self.groups):
            if user in members:
                return g
        raise KeyError(f"user {user} is not assigned")

    def validate(self, supports) -> None:
        supports = [np.asarray(s, bool) for s in supports]
        seen = sorted(k for members in self.groups for k in members)
        if seen != list(range(len(supports))):
            raise ValueError("every user must appear in exactly one group")
        for members in self.groups:
            for i, a in enumerate(members):
                for b in members[i + 1 :]:
                    if supports_overlap(supports[a], supports[b]):
                        raise ValueError(f"users {a} and {b} overlap inside one group")
        s = self.training_matrix
        g = self.n_groups
        if s.shape != (g, g):
            raise ValueError("training matrix must be G x G")
        if not np.allclose(s.conj().T @ s, g * self.pilot_power * np.eye(g), atol=1e-10 * g):
            raise ValueError("training matrix columns are not orthogonal")


def group_users(supports: Sequence, pilot_power: float = 1.0) -> GroupAssignment:
    """Greedy first-fit grouping by support start index.

    Users are visited in order of their first support bin (empty supports
    first, ties by user index) and placed in the first group none of whose
    members overlaps them.  Deterministic.
    """
    supports = [np.asarray(s, bool) for s in supports]
    if not supports:
        raise ValueError("need at least one user")

    def start(k):
        idx = np.flatnonzero(supports[k])
        return (int(idx[0]) if idx.size else -1, k)

    groups: list[list[int]] = []
    for k in sorted(range(len(supports)), key=start):
        for members in groups:
            if not any(supports_overlap(supports[k], supports[j]) for j in members):
                members.append(k)
                break
        else:
            groups.append([k])
    g = len(groups)
    return GroupAssignment(
        tuple(tuple(m) for m in groups), make_training(g, g, pilot_power), float(pilot_power)
    )


def synthesize_group_observations(channels: Sequence, assignment: GroupAssignment, noise_var: float, rng_seed):
    """Received blocks (M, N, G) when every member of group g sends column g."""
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    hs = [c.physical if isinstance(c, VirtualChannelTrajectory) else np.asarray(c) for c in channels]
    n_blocks, n = hs[0].shape
    s = assignment.training_matrix
    rx = np.zeros((n_blocks, n, s.shape[0]), dtype=complex)
    for k, h in enumerate(hs):
        rx += h[:, :, None] * s[:, assignment.group_of(k)][None, None, :]
    scale = np.sqrt(noise_var / 2.0)
    rx += scale * (rng.standard_normal(rx.shape) + 1j * rng.standard_normal(rx.shape))
    return rx


def extract_group_signal(received, group: int, assignment: GroupAssignment):
    """y_{g,m} = Y_m conj(s_g) / (G sigma_p^2) for one block or a batch.

    ``received`` is (N, G), (M, N, G) or vectorized (..., N G) blocks.  The
    result equals the sum of the group's channels plus white noise of
    per-entry variance sigma_n^2 / (G sigma_p^2).
    """
    s = assignment.training_matrix
    g_total = s.shape[0]
    y = np.asarray(received)
    if y.shape[-1] != g_total:
        raise ValueError("last axis must hold the G received training symbols")
    return (y @ s[:, group].conj()) / (g_total * assignment.pilot_power)


@dataclass
class ReducedStateSpace:
    """Tracking model of one group on the stacked on-support coefficients.

    ``user_slices`` maps each member to (support indices, column slice) so
    that estimates can be scattered back per user.
    """

    transition_diag: np.ndarray
    process_cov_diag: np.ndarray
    observation: np.ndarray  # N x sum |Q_k|
    obs_noise_var: float
    user_slices: dict

    def __post_init__(self):
        cols = sum(sl.stop - sl.start for _, sl in self.user_slices.values())
        if self.observation.shape[1] != cols or self.transition_diag.size != cols:
            raise ValueError("column count must equal the summed support sizes")

    @property
    def dim(self) -> int:
        return self.transition_diag.size

    def to_linear_gaussian(self) -> LinearGaussianModel:
        return LinearGaussianModel(
            self.transition_diag,
            self.process_cov_diag,
            self.observation,
            self.obs_noise_var,
            init_cov=stationary_var(self.transition_diag, self.process_cov_diag),
        )


def build_reduced_model(
    params: dict, noise_var: float, n_groups: int, pilot_power: float = 1.0
) -> ReducedStateSpace:
    """Reduced model for the users in ``params`` (user -> ModelParams)."""
    trans, proc, cols, slices = [], [], [], {}
    start = 0
    for user in sorted(params):
        p: ModelParams = params[user]
        idx = p.indices
        trans.append(np.full(idx.size, p.alpha))
        proc.append(p.lambda_diag[idx])
        cols.append(phi_h(p.bias)[:, idx])
        slices[user] = (idx, slice(start, start + idx.size))
        start += idx.size
    n = next(iter(params.values())).n_antennas
    obs = np.hstack(cols) if cols else np.zeros((n, 0), complex)
    return ReducedStateSpace(
        np.concatenate(trans), np.concatenate(proc), obs,
        float(noise_var) / (n_groups * pilot_power), slices,
    )


@dataclass
class UlTrackResult:
    """Filtered virtual coefficients and channels per user (rows = blocks)."""

    virtual: dict  # user -> (M, N) full-length virtual estimates, zero off support
    channels: dict  # user -> (M, N) antenna-domain estimates
    loglik: float


def reduced_kf_track(model: ReducedStateSpace, signals, params: dict) -> UlTrackResult:
    """Kalman filter on the group signals; estimates scattered back per user.

    ``h_k = [Phi(rho_k)^H]_{:, Q_k} [r]_{Q_k}`` is rebuilt from the filtered
    coefficients.
    """
    signals = np.atleast_2d(signals)
    fr = kalman_filter(model.to_linear_gaussian(), signals)
    n_blocks = signals.shape[0]
    virtual, channels = {}, {}
    for user, (idx, sl) in model.user_slices.items():
        n = params[user].n_antennas
        r = np.zeros((n_blocks, n), dtype=complex)
        r[:, idx] = fr.filt_means[:, sl]
        virtual[user] = r
        channels[user] = fr.filt_means[:, sl] @ model.observation[:, sl].T
    return UlTrackResult(virtual, channels, fr.loglik)


def track_ul(received, params: Sequence[ModelParams], assignment: GroupAssignment, noise_var: float):
    """Track every user from (M, N, G) received blocks; merges group results."""
    received = np.asarray(received)
    if received.ndim == 2:
        received = unvec(received, params[0].n_antennas)
    virtual, channels, ll = {}, {}, 0.0
    for g, members in enumerate(assignment.groups):
        sub = {k: params[k] for k in members}
        model = build_reduced_model(sub, noise_var, assignment.n_groups, assignment.pilot_power)
        res = reduced_kf_track(model, extract_group_signal(received, g, assignment), sub)
        virtual.update(res.virtual)
        channels.update(res.channels)
        ll += res.loglik
    return UlTrackResult(virtual, channels, ll)
