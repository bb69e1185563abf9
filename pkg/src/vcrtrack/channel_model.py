"""Ground-truth synthesis for the time-varying beamspace (virtual) channel.

The antenna-domain channel of a user is written in the DFT basis with a
first-order off-grid correction,

    h_m = Phi(rho)^H diag(c) r_m,      Phi(rho)^H = A^H + B^H diag(rho),

and the virtual channel r_m follows a diagonal AR(1) recursion
r_m = alpha r_{m-1} + v_m with v_m ~ CN(0, diag(lam)).
"""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass, replace

import numpy as np
from scipy import special

__all__ = [
    "SPEED_OF_LIGHT",
    "ModelParams",
    "SystemConfig",
    "UserGeometry",
    "VirtualChannelTrajectory",
    "bessel_j0",
    "contiguous_runs",
    "derivative_basis",
    "dft_basis",
    "doppler_from_alpha",
    "grid_position",
    "make_training",
    "off_grid_support",
    "phi_h",
    "sample_truth",
    "simulate_ray_channel",
    "simulate_trajectory",
    "spawn_rngs",
    "steering_vector",
    "support_range",
    "synthesize_ul_observations",
    "time_correlation",
    "unvec",
    "vec",
]

SPEED_OF_LIGHT = 299_792_458.0


@dataclass(frozen=True)
class SystemConfig:
    """System-level constants (array, training, timing, carriers, SNR)."""

    n_antennas: int = 32
    n_users: int = 2
    group_size: int = 2
    train_len: int = 4
    block_len: int = 160
    symbol_period: float = 1e-6
    carrier_ul: float = 2e9
    carrier_dl: float = 2e9
    antenna_spacing_over_lambda: float = 0.5
    pilot_power: float = 1.0
    snr_db: float = 30.0

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        for name in ("n_antennas", "n_users", "group_size", "train_len", "block_len"):
            v = getattr(self, name)
            if int(v) != v or v < 1:
                raise ValueError(f"{name} must be a positive integer, got {v!r}")
        if self.n_users % self.group_size:
            raise ValueError("n_users must be a multiple of group_size")
        if self.group_size > self.train_len:
            raise ValueError("group_size cannot exceed train_len (orthogonal training)")
        if not 0.0 < self.antenna_spacing_over_lambda <= 0.5:
            raise ValueError("antenna_spacing_over_lambda must lie in (0, 0.5]")
        if not self.symbol_period > 0 or not self.carrier_ul > 0 or not self.carrier_dl > 0:
            raise ValueError("symbol period and carriers must be positive")
        if not self.pilot_power > 0:
            raise ValueError("pilot_power must be positive")
        if not np.isfinite(self.snr_db):
            raise ValueError("snr_db must be finite")

    @property
    def noise_var(self) -> float:
        """Uplink noise variance sigma_p^2 / SNR."""
        return self.pilot_power / 10.0 ** (self.snr_db / 10.0)

    @property
    def wavelength_ul(self) -> float:
        return SPEED_OF_LIGHT / self.carrier_ul

    @property
    def wavelength_dl(self) -> float:
        return SPEED_OF_LIGHT / self.carrier_dl

    def with_snr(self, snr_db: float) -> SystemConfig:
        return replace(self, snr_db=float(snr_db))


@dataclass(frozen=True)
class UserGeometry:
    """Angle spread, path count, speed and gain law of one user.

    ``path_gain_var`` is the variance of each i.i.d. CN path gain in the
    ray-sum channel; the AR ground truth draws process-noise powers from
    ``[lambda_low, lambda_high]`` (log-uniform) times ``channel_power``.
    """

    angle_min: float
    angle_max: float
    n_paths: int = 8
    velocity: float = 30.0
    path_gain_var: float | None = None
    channel_power: float = 1.0
    lambda_low: float = 0.5
    lambda_high: float = 2.0

    def __post_init__(self):
        if not -np.pi / 2 < self.angle_min < self.angle_max < np.pi / 2:
            raise ValueError("need -pi/2 < angle_min < angle_max < pi/2")
        if self.n_paths < 1:
            raise ValueError("n_paths must be >= 1")
        if not 0 < self.lambda_low <= self.lambda_high:
            raise ValueError("need 0 < lambda_low <= lambda_high")

    @classmethod
    def from_degrees(cls, lo: float, hi: float, **kw) -> UserGeometry:
        return cls(np.deg2rad(lo), np.deg2rad(hi), **kw)


def contiguous_runs(mask) -> list[tuple[int, int]]:
    """Inclusive (start, end) index pairs of the runs of ones in ``mask``."""
    m = np.asarray(mask, dtype=bool).astype(np.int8)
    edges = np.diff(np.concatenate(([0], m, [0])))
    starts = np.flatnonzero(edges == 1)
    ends = np.flatnonzero(edges == -1) - 1
    return list(zip(starts.tolist(), ends.tolist()))


@dataclass
class ModelParams:
    """Per-user channel model parameters (alpha, diag Lambda, c, rho, noise)."""

    alpha: float
    lambda_diag: np.ndarray
    support: np.ndarray
    bias: np.ndarray
    noise_var: float

    def __post_init__(self):
        self.lambda_diag = np.asarray(self.lambda_diag, dtype=float).copy()
        self.support = np.asarray(self.support).astype(bool)
        self.bias = np.asarray(self.bias, dtype=float).copy()
        self.alpha = float(self.alpha)
        self.noise_var = float(self.noise_var)

    @property
    def n_antennas(self) -> int:
        return self.lambda_diag.size

    def validate(self, require_contiguous: bool = True) -> None:
        n = self.n_antennas
        if self.support.shape != (n,) or self.bias.shape != (n,):
            raise ValueError("lambda_diag, support and bias must share length")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")
        if np.any(self.lambda_diag < 0) or not np.all(np.isfinite(self.lambda_diag)):
            raise ValueError("lambda_diag must be finite and nonnegative")
        if np.any(np.abs(self.bias) > 0.5):
            raise ValueError("bias entries must lie in [-1/2, 1/2]")
        if self.noise_var < 0:
            raise ValueError("noise_var must be nonnegative")
        if require_contiguous and len(contiguous_runs(self.support)) > 1:
            raise ValueError("support must be a single contiguous run")

    def copy(self) -> ModelParams:
        return ModelParams(
            self.alpha, self.lambda_diag.copy(), self.support.copy(), self.bias.copy(),
            self.noise_var,
        )

    @property
    def indices(self) -> np.ndarray:
        return np.flatnonzero(self.support)


@dataclass
class VirtualChannelTrajectory:
    """Virtual states r_m (rows) and the matching antenna-domain channel."""

    states: np.ndarray
    physical: np.ndarray

    @property
    def n_blocks(self) -> int:
        return self.states.shape[0]


# ---------------------------------------------------------------------------
# Array geometry and bases


def steering_vector(theta: float, n_antennas: int, spacing_over_lambda: float = 0.5):
    """ULA response exp(j 2 pi (d / lambda) n sin(theta)), n = 0..N-1."""
    if not abs(theta) < np.pi / 2:
        raise ValueError("|theta| must be below pi/2")
    n = np.arange(n_antennas)
    return np.exp(2j * np.pi * spacing_over_lambda * n * np.sin(theta))


def dft_basis(n_antennas: int):
    """Unitary DFT matrix F with F[p, q] = exp(-j 2 pi p q / N) / sqrt(N)."""
    n = np.arange(n_antennas)
    return np.exp(-2j * np.pi * np.outer(n, n) / n_antennas) / np.sqrt(n_antennas)


def derivative_basis(n_antennas: int):
    """Derivative basis B with B^H[:, p] = d/dp of A^H[:, p], A = F.

    A^H[n, p] = exp(j 2 pi n p / N) / sqrt(N), so the p-derivative multiplies
    row n by j 2 pi n / N.  Returned as B (not B^H).
    """
    n = np.arange(n_antennas)
    return dft_basis(n_antennas) * (-2j * np.pi * n / n_antennas)[None, :]


def phi_h(bias, n_antennas: int | None = None):
    """Off-grid dictionary Phi(rho)^H = A^H + B^H diag(rho) (N x N)."""
    bias = np.asarray(bias, dtype=float)
    n = bias.size if n_antennas is None else n_antennas
    idx = np.arange(n)
    ah = np.exp(2j * np.pi * np.outer(idx, idx) / n) / np.sqrt(n)
    return ah * (1.0 + 2j * np.pi * idx[:, None] / n * bias[None, :])


def grid_position(theta, n_antennas: int, spacing_over_lambda: float = 0.5):
    """Continuous beam index N (d / lambda) sin(theta)."""
    return n_antennas * spacing_over_lambda * np.sin(theta)


def support_range(geometry: UserGeometry, n_antennas: int, spacing_over_lambda: float = 0.5):
    """Inclusive (start, end) bin range covering the user's angle spread.

    Bins are floor(N d sin(theta) / lambda) taken modulo N; ranges straddling
    the wrap point are rejected.
    """
    lo = int(np.floor(grid_position(geometry.angle_min, n_antennas, spacing_over_lambda)))
    hi = int(np.floor(grid_position(geometry.angle_max, n_antennas, spacing_over_lambda)))
    if lo < 0 <= hi:
        raise ValueError("angle spread crosses the DFT index wrap point")
    return lo % n_antennas, hi % n_antennas


def off_grid_support(
    geometry: UserGeometry,
    config: SystemConfig,
    path_angles: Sequence[float] | None = None,
):
    """Support mask, per-bin bias and (bin, bias) path pairs.

    Each path angle maps to p + rho = N (d / lambda) sin(theta) with integer p
    and rho in [-1/2, 1/2].  Paths falling in the same bin share the bin and
    their biases are averaged.  The mask is the contiguous bin range of the
    angle spread.
    """
    n = config.n_antennas
    start, end = support_range(geometry, n, config.antenna_spacing_over_lambda)
    mask = np.zeros(n, dtype=bool)
    mask[start : end + 1] = True
    bias = np.zeros(n)
    pairs: list[tuple[int, float]] = []
    if path_angles is not None:
        sums = np.zeros(n)
        counts = np.zeros(n)
        for theta in path_angles:
            pos = float(grid_position(theta, n, config.antenna_spacing_over_lambda))
            p = int(np.floor(pos + 0.5))
            rho = pos - p
            if rho < -0.5:  # guard against floating round-up
                p, rho = p - 1, rho + 1.0
            pairs.append((p % n, rho))
            sums[p % n] += rho
            counts[p % n] += 1
        hit = counts > 0
        bias[hit] = sums[hit] / counts[hit]
    return mask, bias, pairs


# ---------------------------------------------------------------------------
# Temporal correlation


def bessel_j0(x):
    """Bessel function of the first kind, order zero."""
    return special.j0(x)


def time_correlation(velocity: float, carrier: float, block_len: int, symbol_period: float):
    """Block-to-block correlation J0(2 pi nu_max L_c T_s), nu_max = v f_c / c0."""
    if velocity < 0:
        raise ValueError("velocity must be nonnegative")
    nu_max = velocity * carrier / SPEED_OF_LIGHT
    return float(bessel_j0(2.0 * np.pi * nu_max * block_len * symbol_period))


def doppler_from_alpha(alpha: float, block_len: int, symbol_period: float) -> float:
    """Maximum Doppler nu >= 0 with J0(2 pi nu L_c T_s) = alpha.

    The inverse is taken on the main lobe of J0 (argument in [0, 2.4048]);
    alpha <= 0 maps to the first zero.
    """
    from scipy.optimize import brentq

    first_zero = float(special.jn_zeros(0, 1)[0])
    scale = 2.0 * np.pi * block_len * symbol_period
    if alpha >= 1.0:
        return 0.0
    if alpha <= 0.0:
        return first_zero / scale
    x = brentq(lambda t: float(special.j0(t)) - alpha, 0.0, first_zero, xtol=1e-14)
    return x / scale


# ---------------------------------------------------------------------------
# Ground truth and synthesis


def spawn_rngs(seed, n: int) -> list[np.random.Generator]:
    """``n`` independent generators derived from ``seed`` via SeedSequence."""
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    return [np.random.default_rng(s) for s in ss.spawn(n)]


def sample_truth(
    geometry: UserGeometry, config: SystemConfig, rng: np.random.Generator
) -> tuple[ModelParams, list[tuple[int, float]]]:
    """Draw a ground-truth parameter set for one user.

    One path per support bin with bias uniform in [-1/2, 1/2]; alpha from
    the Jakes law at the UL carrier; on-support stationary powers are
    N * channel_power / |Q| times a log-uniform factor in [lambda_low,
    lambda_high] (so E||h||^2 is about N * channel_power, as for a sum of
    unit-modulus steering vectors), and the process powers are
    (1 - alpha^2) times those, exactly zero off support.
    """
    n = config.n_antennas
    mask, _, _ = off_grid_support(geometry, config)
    idx = np.flatnonzero(mask)
    offsets = rng.uniform(-0.5, 0.5, idx.size)
    bias = np.zeros(n)
    bias[idx] = offsets
    pairs = list(zip(idx.tolist(), offsets.tolist()))
    alpha = time_correlation(
        geometry.velocity, config.carrier_ul, config.block_len, config.symbol_period
    )
    lam = np.zeros(n)
    # unit-modulus steering vectors give E||h||^2 = N * channel_power,
    # spread over the support bins
    per_bin = geometry.channel_power * n / idx.size
    lam[idx] = (1.0 - alpha**2) * per_bin * np.exp(
        rng.uniform(np.log(geometry.lambda_low), np.log(geometry.lambda_high), idx.size)
    )
    params = ModelParams(alpha, lam, mask, bias, config.noise_var)
    params.validate()
    return params, pairs


def _complex_normal(rng: np.random.Generator, shape, var=1.0):
    scale = np.sqrt(np.asarray(var, dtype=float) / 2.0)
    return scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


def simulate_trajectory(params: ModelParams, n_blocks: int, rng_seed, stationary: bool = True):
    """AR(1) virtual-channel trajectory and its antenna-domain image.

    r_1 ~ CN(0, lam / (1 - alpha^2)) when ``stationary`` and alpha < 1, else
    CN(0, lam).  Deterministic given ``rng_seed`` (int, SeedSequence or
    Generator).
    """
    if n_blocks < 1:
        raise ValueError("n_blocks must be >= 1")
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    lam = params.lambda_diag
    n = lam.size
    a = params.alpha
    init_var = lam / (1.0 - a * a) if (stationary and a < 1.0) else lam
    states = np.empty((n_blocks, n), dtype=complex)
    states[0] = _complex_normal(rng, n, init_var)
    innov = _complex_normal(rng, (n_blocks, n), lam)
    for m in range(1, n_blocks):
        states[m] = a * states[m - 1] + innov[m]
    dictionary = phi_h(params.bias) * params.support[None, :]
    physical = states @ dictionary.T
    return VirtualChannelTrajectory(states, physical)


def simulate_ray_channel(
    geometry: UserGeometry, config: SystemConfig, n_blocks: int, rng: np.random.Generator,
    carrier: float | None = None,
):
    """Mismatched-truth channel: an explicit sum of rays with Jakes Doppler.

    Path angles are uniform in the angle spread, gains i.i.d. CN(0, 1/L) (or
    ``path_gain_var``), Doppler nu_max sin(phase) with a uniform phase.
    Returns an (n_blocks, N) array of antenna-domain channels.
    """
    carrier = config.carrier_ul if carrier is None else carrier
    n_paths = geometry.n_paths
    var = geometry.path_gain_var if geometry.path_gain_var is not None else 1.0 / n_paths
    angles = rng.uniform(geometry.angle_min, geometry.angle_max, n_paths)
    gains = _complex_normal(rng, n_paths, var)
    nu_max = geometry.velocity * carrier / SPEED_OF_LIGHT
    nus = nu_max * np.sin(rng.uniform(0, 2 * np.pi, n_paths))
    steer = np.stack(
        [steering_vector(t, config.n_antennas, config.antenna_spacing_over_lambda) for t in angles],
        axis=1,
    )
    m = np.arange(n_blocks)[:, None]
    phases = np.exp(2j * np.pi * nus[None, :] * m * config.block_len * config.symbol_period)
    return (phases * gains[None, :]) @ steer.T


def make_training(tau: int, train_len: int, pilot_power: float = 1.0):
    """Orthogonal training: the first ``tau`` columns of a scaled L_s-point DFT.

    Columns satisfy s_i^H s_j = L_s sigma_p^2 delta_ij.
    """
    if tau > train_len:
        raise ValueError("tau cannot exceed train_len")
    if tau < 1:
        raise ValueError("tau must be >= 1")
    n = np.arange(train_len)
    return np.sqrt(pilot_power) * np.exp(2j * np.pi * np.outer(n, np.arange(tau)) / train_len)


def vec(mat):
    """Column-stacking vectorization (works on a leading batch axis too)."""
    mat = np.asarray(mat)
    return np.swapaxes(mat, -1, -2).reshape(mat.shape[:-2] + (-1,))


def unvec(v, n_rows: int):
    """Inverse of :func:`vec` for matrices with ``n_rows`` rows."""
    v = np.asarray(v)
    return np.swapaxes(v.reshape(v.shape[:-1] + (-1, n_rows)), -1, -2)


def synthesize_ul_observations(channels: Sequence, training, noise_var: float, rng_seed):
    """Received training blocks y_m = vec(sum_k h_{k,m} s_k^T + N_m).

    ``channels`` holds one (M, N) antenna-domain array (or trajectory) per user;
    user k transmits column k of ``training``.  Returns an (M, N L_s) array.
    """
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    hs = [c.physical if isinstance(c, VirtualChannelTrajectory) else np.asarray(c) for c in channels]
    training = np.asarray(training)
    if training.ndim != 2 or training.shape[1] < len(hs):
        raise ValueError("training must have one column per user")
    shapes = {h.shape for h in hs}
    if len(shapes) != 1:
        raise ValueError("all users must share the number of blocks and antennas")
    n_blocks, n = hs[0].shape
    rx = np.zeros((n_blocks, n, training.shape[0]), dtype=complex)
    for k, h in enumerate(hs):
        rx += h[:, :, None] * training[:, k][None, None, :]
    rx += _complex_normal(rng, rx.shape, noise_var)
    return vec(rx)
