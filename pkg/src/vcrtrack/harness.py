"""Monte-Carlo experiment harness for the full uplink/downlink pipeline.

One trial draws ground truth for every user, learns the uplink model with
EM, tracks the uplink with the reduced Kalman filter, reconstructs the
downlink model, restores the downlink noise statistics with the OBKF and
compares its channel estimates against a Kalman filter with the true
parameters and one with perturbed ("weak") parameters.  Every result is a
long-format record ``(snr_db, velocity, m_d, trial, stage, metric, index,
value)`` so that CSV output stays plot-ready and independent of completion
order.
"""

from __future__ import annotations

import csv
import itertools
import logging
import math
import time
from collections.abc import Sequence
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .cgauss import NotPositiveDefiniteError
from .channel_model import (
    ModelParams,
    SystemConfig,
    UserGeometry,
    doppler_from_alpha,
    make_training,
    sample_truth,
    simulate_trajectory,
    synthesize_ul_observations,
)
from .dl_reconstruction import (
    map_alpha_dl,
    map_lambda_dl,
    map_support_bias,
    reconstruct_dl,
)
from .obkf import NoisePrior, classical_kf, obkf_filter, restore_posteriors
from .ul_learning import em_learn
from .ul_tracking import group_users, synthesize_group_observations, track_ul

__all__ = [
    "CSV_COLUMNS",
    "SCHEMA_VERSION",
    "UL_PARAMETERS",
    "ExperimentResult",
    "ExperimentSpec",
    "Record",
    "dl_ground_truth",
    "dl_prior",
    "emit_csv",
    "emit_summary",
    "mean_mse",
    "mse",
    "physical_alpha_dl",
    "read_csv",
    "run_experiment",
    "run_trial",
    "synthesize_dl_observations",
]

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
CSV_COLUMNS = ("snr_db", "velocity", "m_d", "trial", "stage", "metric", "index", "value")
UL_PARAMETERS = ("alpha", "support", "lambda", "bias", "noise_var")
BASELINES = ("perfect", "weak")


def mse(estimate, truth) -> float:
    """Normalized squared error ||x_hat - x||^2 / ||x||^2."""
    x = np.asarray(truth)
    xh = np.asarray(estimate)
    den = float(np.sum(np.abs(x) ** 2))
    if not den > 0:
        raise ValueError("truth has zero norm")
    return float(np.sum(np.abs(xh - x) ** 2)) / den


def mean_mse(estimates: Sequence, truths: Sequence) -> float:
    """Average of :func:`mse` over users."""
    if len(estimates) != len(truths) or not truths:
        raise ValueError("need matching, nonempty estimate and truth lists")
    return float(np.mean([mse(e, t) for e, t in zip(estimates, truths)]))


# ---------------------------------------------------------------------------
# Specification


def _desk_users() -> tuple:
    return (UserGeometry.from_degrees(20, 26), UserGeometry.from_degrees(43, 49))


def _full_users() -> tuple:
    return tuple(UserGeometry.from_degrees(lo, hi) for lo, hi in ((-49, -43), (-26, -20), (20, 26), (43, 49)))


@dataclass(frozen=True)
class ExperimentSpec:
    """Scenario, sweep axes and budgets of an experiment.

    ``velocities`` are absolute speeds in m/s applied to every user (``None``
    keeps the geometries' own).  ``m_d`` lists the OBKF lengths whose channel
    trajectories are recorded; the sampler runs for ``max(max(m_d),
    restore_blocks)`` blocks so restored-parameter trajectories are available
    up to that length.  ``weak_range`` is the log-uniform factor range of the
    weak baseline.
    """

    config: SystemConfig = field(default_factory=SystemConfig)
    users: tuple = field(default_factory=_desk_users)
    snr_db: tuple = (30.0,)
    velocities: tuple | None = None
    m_u: int = 15
    em_iters: int = 5
    ul_track_blocks: int = 20
    m_d: tuple = (10,)
    restore_blocks: int = 15
    dl_blocks: int = 40
    steady_from: int = 20
    trials: int = 10
    baselines: tuple = BASELINES
    master_seed: int = 0
    mcmc_iters: int = 200
    burn_in: int = 50
    mcmc_every: int = 1
    prior_scale: float = 0.5
    proposal_scale: float = 0.15
    dl_perturb_range: tuple = (0.5, 2.0)
    weak_range: tuple = (0.25, 4.0)
    stages: tuple = ("ul", "track_ul", "dl")

    def __post_init__(self):
        object.__setattr__(self, "snr_db", tuple(float(s) for s in self.snr_db))
        object.__setattr__(self, "m_d", tuple(int(m) for m in self.m_d))
        if self.velocities is not None:
            object.__setattr__(self, "velocities", tuple(float(v) for v in self.velocities))
        object.__setattr__(self, "users", tuple(self.users))
        self.validate()

    def validate(self) -> None:
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if not self.snr_db or (self.velocities is not None and not self.velocities) or not self.m_d:
            raise ValueError("sweep lists must be nonempty")
        if not all(math.isfinite(s) for s in self.snr_db):
            raise ValueError("SNR values must be finite")
        if self.velocities is not None and any(v < 0 or not math.isfinite(v) for v in self.velocities):
            raise ValueError("velocities must be finite and nonnegative")
        if len(self.users) != self.config.n_users:
            raise ValueError("need one geometry per user")
        if self.m_u < 2 or self.em_iters < 1 or self.ul_track_blocks < 1:
            raise ValueError("need m_u >= 2, em_iters >= 1, ul_track_blocks >= 1")
        if min(self.m_d) < 1 or self.restore_blocks < 1:
            raise ValueError("OBKF lengths must be >= 1")
        if self.dl_blocks < max(self.n_restore, 1) or not 0 <= self.steady_from < self.dl_blocks:
            raise ValueError("dl_blocks must cover the OBKF blocks and steady_from must lie inside it")
        if not self.mcmc_iters > self.burn_in >= 0 or self.mcmc_every < 1:
            raise ValueError("invalid MCMC budget")
        if self.prior_scale < 0 or self.proposal_scale < 0:
            raise ValueError("prior and proposal scales must be nonnegative")
        for lo, hi in (self.dl_perturb_range, self.weak_range):
            if not 0 < lo <= hi:
                raise ValueError("perturbation ranges need 0 < low <= high")
        unknown = set(self.baselines) - set(BASELINES)
        if unknown:
            raise ValueError(f"unknown baselines {sorted(unknown)}")
        unknown = set(self.stages) - {"ul", "track_ul", "dl"}
        if unknown or "ul" not in self.stages:
            raise ValueError("stages must include 'ul' and only use ul/track_ul/dl")

    @property
    def n_restore(self) -> int:
        return max(max(self.m_d), self.restore_blocks)

    @property
    def velocity_axis(self) -> tuple:
        return self.velocities if self.velocities is not None else (None,)

    @classmethod
    def desk(cls, **kw) -> ExperimentSpec:
        """N_t = 32 array, two users with disjoint angular spreads."""
        return cls(**kw)

    @classmethod
    def full(cls, **kw) -> ExperimentSpec:
        """N_t = 128 array, one group of four users on four training columns."""
        kw.setdefault("config", SystemConfig(n_antennas=128, n_users=4, group_size=4, train_len=4))
        kw.setdefault("users", _full_users())
        return cls(**kw)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["config"] = asdict(self.config)
        d["users"] = [asdict(u) for u in self.users]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> ExperimentSpec:
        d = dict(d)
        profile = d.pop("profile", "desk")
        if profile not in ("desk", "full"):
            raise ValueError(f"unknown profile {profile!r}")
        base = cls.full() if profile == "full" else cls.desk()
        if "config" in d:
            d["config"] = SystemConfig(**d["config"])
        if "users" in d:
            d["users"] = tuple(_geometry_from_dict(u) for u in d["users"])
        for key in ("snr_db", "m_d", "baselines", "stages", "dl_perturb_range", "weak_range", "velocities"):
            if key in d and d[key] is not None:
                d[key] = tuple(d[key])
        unknown = set(d) - {f for f in cls.__dataclass_fields__}
        if unknown:
            raise ValueError(f"unknown experiment fields {sorted(unknown)}")
        return replace(base, **d)


def _geometry_from_dict(d: dict) -> UserGeometry:
    d = dict(d)
    if "angles_deg" in d:
        lo, hi = d.pop("angles_deg")
        return UserGeometry.from_degrees(lo, hi, **d)
    return UserGeometry(**d)


# ---------------------------------------------------------------------------
# Results


@dataclass(frozen=True)
class Record:
    snr_db: float
    velocity: float
    m_d: int
    trial: int
    stage: str
    metric: str
    index: int
    value: float


@dataclass
class ExperimentResult:
    """Flat list of records plus per-trial failures ``(snr, velocity, trial,
    stage, message)`` and wall-clock timings ``(snr, velocity, trial, stage,
    seconds)``.  Timings are kept apart from the records so that the metric
    CSV is reproducible byte for byte."""

    spec: ExperimentSpec | None = None
    records: list = field(default_factory=list)
    failures: list = field(default_factory=list)
    timings: list = field(default_factory=list)

    def select(self, metric: str, **where) -> list:
        out = [r for r in self.records if r.metric == metric]
        for key, val in where.items():
            out = [r for r in out if getattr(r, key) == val]
        return out

    def values(self, metric: str, index: int | None = None, **where) -> np.ndarray:
        """Values of ``metric`` ordered by trial (one per trial when the
        remaining keys identify a single point)."""
        rows = self.select(metric, **where)
        if index is not None:
            rows = [r for r in rows if r.index == index]
        rows.sort(key=lambda r: (r.snr_db, r.velocity, r.m_d, r.trial, r.index))
        return np.array([r.value for r in rows], dtype=float)

    def median(self, metric: str, index: int | None = None, **where) -> float:
        v = self.values(metric, index, **where)
        return float(np.median(v)) if v.size else float("nan")

    def trajectory(self, metric: str, **where) -> np.ndarray:
        """(trials, indices) array of an indexed metric at one sweep point."""
        rows = self.select(metric, **where)
        trials = sorted({r.trial for r in rows})
        idx = sorted({r.index for r in rows})
        out = np.full((len(trials), len(idx)), np.nan)
        ti = {t: i for i, t in enumerate(trials)}
        ii = {k: i for i, k in enumerate(idx)}
        for r in rows:
            out[ti[r.trial], ii[r.index]] = r.value
        return out


# ---------------------------------------------------------------------------
# One trial


def _trial_streams(master_seed: int, trial: int) -> dict:
    """Independent generators per purpose, shared across sweep points of a
    trial (common random numbers keep sweep comparisons paired)."""
    names = ("truth", "ul_traj", "ul_noise", "track_noise", "dl_truth", "dl_traj", "dl_noise", "mcmc", "weak")
    children = np.random.SeedSequence([int(master_seed), int(trial)]).spawn(len(names))
    return {n: np.random.default_rng(c) for n, c in zip(names, children)}


def _segments(n_users: int, group_size: int) -> list:
    return [list(range(s, s + group_size)) for s in range(0, n_users, group_size)]


def _ul_records(history: list, truths: list, noise_var: float) -> list:
    """(metric, index, value) for every UL parameter after each EM iteration."""
    out = []
    for it, params in enumerate(history, start=1):
        pairs = {
            "alpha": ([[p.alpha] for p in params], [[t.alpha] for t in truths]),
            "support": ([p.support.astype(float) for p in params], [t.support.astype(float) for t in truths]),
            "lambda": ([p.lambda_diag for p in params], [t.lambda_diag for t in truths]),
            "bias": ([p.bias for p in params], [t.bias for t in truths]),
        }
        for name, (est, tru) in pairs.items():
            out.append((name, it, mean_mse(est, tru)))
        out.append(("noise_var", it, float(np.mean([mse([p.noise_var], [noise_var]) for p in params]))))
    return out


def _draw_truths(spec: ExperimentSpec, config: SystemConfig, velocity, rng) -> list:
    truths = []
    for geo in spec.users:
        if velocity is not None:
            geo = replace(geo, velocity=velocity)
        truths.append(sample_truth(geo, config, rng)[0])
    return truths


def run_trial(spec: ExperimentSpec, snr_db: float, velocity, trial: int) -> tuple:
    """Run one trial at one sweep point; returns ``(records, failures, timings)``."""
    cfg = spec.config.with_snr(snr_db)
    rng = _trial_streams(spec.master_seed, trial)
    vel = float("nan") if velocity is None else float(velocity)
    records: list = []
    failures: list = []
    timings: list = []

    def add(stage, metric, index, value, m_d=0):
        records.append(Record(float(snr_db), vel, int(m_d), int(trial), stage, metric, int(index), float(value)))

    # ----- ground truth and uplink learning
    t0 = time.perf_counter()
    truths = _draw_truths(spec, cfg, velocity, rng["truth"])
    total = spec.m_u + spec.ul_track_blocks
    trajs = [simulate_trajectory(p, total, rng["ul_traj"]) for p in truths]
    training = make_training(cfg.group_size, cfg.train_len, cfg.pilot_power)
    learned: list = [None] * cfg.n_users
    try:
        for seg in _segments(cfg.n_users, cfg.group_size):
            heads = [trajs[k].physical[: spec.m_u] for k in seg]
            obs = synthesize_ul_observations(heads, training, cfg.noise_var, rng["ul_noise"])
            res = em_learn(obs, cfg, n_iters=spec.em_iters, training=training)
            hist = list(res.history) + [res.history[-1]] * (spec.em_iters - len(res.history))
            for name, it, val in _ul_records(hist, [truths[k] for k in seg], cfg.noise_var):
                add("ul", name, it, val)
            for j, k in enumerate(seg):
                learned[k] = res.params[j]
    except (NotPositiveDefiniteError, np.linalg.LinAlgError, FloatingPointError, ValueError) as exc:
        failures.append((snr_db, velocity, trial, "ul", repr(exc)))
        return records, failures, timings
    # worst user: fraction of correctly classified bins and on-support bias RMSE
    add("ul", "support_match", 0, min(float(np.mean(p.support == t.support)) for p, t in zip(learned, truths)))
    add("ul", "bias_rmse", 0, max(float(np.sqrt(np.mean((p.bias - t.bias)[t.support] ** 2)))
                                  for p, t in zip(learned, truths)))
    timings.append((snr_db, velocity, trial, "ul", time.perf_counter() - t0))

    # ----- uplink tracking on later blocks
    if "track_ul" in spec.stages:
        t0 = time.perf_counter()
        try:
            assignment = group_users([p.support for p in learned], cfg.pilot_power)
            tails = [t.physical[spec.m_u:] for t in trajs]
            rx = synthesize_group_observations(tails, assignment, cfg.noise_var, rng["track_noise"])
            tr = track_ul(rx, learned, assignment, cfg.noise_var)
            for m in range(spec.ul_track_blocks):
                add("track_ul", "h_tilde", m + 1, mean_mse(
                    [tr.virtual[k][m] for k in range(cfg.n_users)],
                    [trajs[k].states[spec.m_u + m] for k in range(cfg.n_users)]))
        except (NotPositiveDefiniteError, np.linalg.LinAlgError, ValueError) as exc:
            failures.append((snr_db, velocity, trial, "track_ul", repr(exc)))
        timings.append((snr_db, velocity, trial, "track_ul", time.perf_counter() - t0))

    if "dl" in spec.stages:
        t0 = time.perf_counter()
        try:
            _run_dl(spec, cfg, truths, learned, rng, add)
        except (NotPositiveDefiniteError, np.linalg.LinAlgError, FloatingPointError, ValueError) as exc:
            failures.append((snr_db, velocity, trial, "dl", repr(exc)))
        timings.append((snr_db, velocity, trial, "dl", time.perf_counter() - t0))
    return records, failures, timings


def dl_ground_truth(truth: ModelParams, cfg: SystemConfig, rng, perturb=(0.5, 2.0)) -> ModelParams:
    """True downlink model of one user.

    Support and bias are the remap of the true uplink ones; alpha' is the
    correlation of the same speed at the DL carrier; Lambda' is the remapped
    uplink Lambda and sigma'^2 the uplink noise power, each entry multiplied
    by an independent log-uniform factor in ``perturb``.
    """
    ratio = cfg.carrier_ul / cfg.carrier_dl
    support, bias, sources = map_support_bias(truth.support, truth.bias, 1.0 / ratio, cfg.n_antennas)
    lo, hi = np.log(perturb[0]), np.log(perturb[1])
    lam = map_lambda_dl(truth.lambda_diag, sources, cfg.n_antennas)
    lam[support] *= np.exp(rng.uniform(lo, hi, int(support.sum())))
    sigma = cfg.noise_var * float(np.exp(rng.uniform(lo, hi)))
    return ModelParams(physical_alpha_dl(truth.alpha, cfg), lam, support, bias, sigma)


def physical_alpha_dl(alpha_ul: float, cfg: SystemConfig) -> float:
    """alpha' for the same speed at the DL carrier (Doppler scales with carrier)."""
    nu = doppler_from_alpha(alpha_ul, cfg.block_len, cfg.symbol_period)
    return map_alpha_dl(nu, cfg.block_len, cfg.symbol_period, cfg.carrier_ul / cfg.carrier_dl, "physical")


def dl_prior(lambda_anchor, sigma_anchor: float, scale: float = 0.5, proposal_scale: float = 0.15) -> NoisePrior:
    """Log-normal prior centred on the uplink estimates carried to the downlink."""
    lam = np.asarray(lambda_anchor, float)
    lam = np.maximum(lam, 1e-6 * max(float(lam.max()), 1e-12))
    return NoisePrior.centred_on(float(sigma_anchor), lam, scale, proposal_scale)


def synthesize_dl_observations(states, support_idx, noise_eff: float, rng):
    """Despread downlink observations y~'_m = [w_m]_Q' + CN(0, noise_eff I)."""
    x = np.asarray(states)[:, support_idx]
    return x + np.sqrt(noise_eff / 2.0) * (rng.standard_normal(x.shape) + 1j * rng.standard_normal(x.shape))


def _run_dl(spec: ExperimentSpec, cfg: SystemConfig, truths: list, learned: list, rng: dict, add) -> None:
    n = cfg.n_antennas
    pp = cfg.pilot_power
    n_restore = spec.n_restore
    g_true = {}
    tracks = {("obkf", m_d): [] for m_d in spec.m_d}
    tracks.update({(b, 0): [] for b in spec.baselines})
    theta_err = {"theta": [], "lambda_dl": [], "sigma_dl": []}
    acc = []
    for k, (truth, est) in enumerate(zip(truths, learned)):
        dl = dl_ground_truth(truth, cfg, rng["dl_truth"], spec.dl_perturb_range)
        alpha_dl_true = dl.alpha
        w = simulate_trajectory(dl, spec.dl_blocks, rng["dl_traj"], stationary=False).states
        partial = reconstruct_dl(est, cfg.carrier_ul, cfg.carrier_dl, cfg.block_len, cfg.symbol_period)
        idx = partial.indices
        if idx.size == 0:
            raise ValueError(f"user {k}: empty reconstructed downlink support")
        s_true = dl.noise_var / pp
        obs = synthesize_dl_observations(w, idx, s_true, rng["dl_noise"])
        lam_anchor = map_lambda_dl(est.lambda_diag, partial.source_bins, n)[idx]
        prior = dl_prior(lam_anchor, est.noise_var, spec.prior_scale, spec.proposal_scale)
        post = restore_posteriors(obs, partial.alpha_dl, prior, n_restore, spec.mcmc_iters, spec.burn_in,
                                  rng["mcmc"], pp, spec.mcmc_every)
        acc.append(post.acceptance)
        true_theta = np.concatenate(([dl.noise_var], dl.lambda_diag))
        for m in range(post.sigma_history.size):
            lam_full = np.zeros(n)
            lam_full[idx] = post.lambda_history[m]
            est_theta = np.concatenate(([post.sigma_history[m]], lam_full))
            if len(theta_err["theta"]) <= m:
                for hist in theta_err.values():
                    hist.append([])
            theta_err["theta"][m].append(mse(est_theta, true_theta))
            theta_err["lambda_dl"][m].append(mse(lam_full, dl.lambda_diag))
            theta_err["sigma_dl"][m].append(mse([post.sigma_history[m]], [dl.noise_var]))

        def scatter(x, idx=idx):
            out = np.zeros((spec.dl_blocks, n), complex)
            out[:, idx] = x
            return out

        g_true[k] = w
        for m_d in spec.m_d:
            tracks[("obkf", m_d)].append(scatter(obkf_filter(obs, partial.alpha_dl, prior, post, m_d, pp).filtered))
        if "perfect" in spec.baselines:
            lam_t = dl.lambda_diag[idx]
            tracks[("perfect", 0)].append(scatter(classical_kf(obs, lam_t, s_true, alpha_dl_true).filtered))
        if "weak" in spec.baselines:
            lo, hi = np.log(spec.weak_range[0]), np.log(spec.weak_range[1])
            f = np.exp(rng["weak"].uniform(lo, hi, idx.size + 1))
            lam_w = dl.lambda_diag[idx] * f[1:]
            lam_w = np.where(lam_w > 0, lam_w, f[1:] * float(np.mean(dl.lambda_diag[dl.support])))
            tracks[("weak", 0)].append(scatter(classical_kf(obs, lam_w, s_true * f[0], partial.alpha_dl).filtered))

    for m in range(len(theta_err["theta"])):
        for key in theta_err:
            add("dl", key, m + 1, float(np.mean(theta_err[key][m])))
    mean_acc = np.mean(np.stack(acc), axis=0)
    for m, a in enumerate(mean_acc):
        add("dl", "acceptance", m + 1, a)
    users = sorted(g_true)
    for (name, m_d), per_user in tracks.items():
        per_block = [
            float(np.mean([mse(per_user[j][b], g_true[k][b]) for j, k in enumerate(users)]))
            for b in range(spec.dl_blocks)
        ]
        for b, v in enumerate(per_block):
            add("dl", f"g_{name}", b + 1, v, m_d)
        add("dl", f"g_{name}_steady", 0, float(np.mean(per_block[spec.steady_from:])), m_d)


# ---------------------------------------------------------------------------
# Sweeps


def _run_point(args):
    spec, snr, vel, trial = args
    return run_trial(spec, snr, vel, trial)


def run_experiment(spec: ExperimentSpec, workers: int = 1) -> ExperimentResult:
    """Every (SNR, velocity, trial) combination, optionally in a process pool.

    Records are sorted by key, so the result does not depend on the worker
    count or completion order.
    """
    spec.validate()
    jobs = [(spec, s, v, t) for s, v, t in itertools.product(spec.snr_db, spec.velocity_axis, range(spec.trials))]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outs = list(pool.map(_run_point, jobs))
    else:
        outs = [_run_point(j) for j in jobs]
    result = ExperimentResult(spec)
    for recs, fails, times in outs:
        result.records.extend(recs)
        result.failures.extend(fails)
        result.timings.extend(times)
    result.records.sort(key=lambda r: (r.snr_db, _nan_key(r.velocity), r.trial, r.stage, r.metric, r.m_d, r.index))
    for f in result.failures:
        log.warning("trial failure at snr=%s velocity=%s trial=%s stage=%s: %s", *f)
    return result


def _nan_key(v: float) -> float:
    return -1.0 if math.isnan(v) else v


# ---------------------------------------------------------------------------
# CSV


def emit_csv(result: ExperimentResult, path) -> Path:
    """Write records as CSV: a ``schema_version`` row, the header, then rows.

    Floats are written with ``repr`` so that reading back is exact.
    """
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["schema_version", SCHEMA_VERSION])
        w.writerow(CSV_COLUMNS)
        for r in result.records:
            w.writerow([repr(r.snr_db), repr(r.velocity), r.m_d, r.trial, r.stage, r.metric, r.index, repr(r.value)])
    return path


def read_csv(path) -> ExperimentResult:
    """Inverse of :func:`emit_csv`."""
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][0] != "schema_version":
        raise ValueError("missing schema_version row")
    if int(rows[0][1]) != SCHEMA_VERSION:
        raise ValueError(f"unsupported schema version {rows[0][1]}")
    if tuple(rows[1]) != CSV_COLUMNS:
        raise ValueError("unexpected CSV header")
    recs = [Record(float(a), float(b), int(c), int(d), e, f, int(g), float(h)) for a, b, c, d, e, f, g, h in rows[2:]]
    return ExperimentResult(None, recs)


SUMMARY_COLUMNS = ("snr_db", "velocity", "m_d", "stage", "metric", "index", "n", "median", "q25", "q75")


def emit_summary(result: ExperimentResult, path) -> Path:
    """Median and inter-quartile range across trials for every metric/index."""
    groups: dict = {}
    for r in result.records:
        groups.setdefault((r.snr_db, _nan_key(r.velocity), r.m_d, r.stage, r.metric, r.index), (r.velocity, []))[1].append(r.value)
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["schema_version", SCHEMA_VERSION])
        w.writerow(SUMMARY_COLUMNS)
        for key in sorted(groups):
            vel, vals = groups[key]
            q25, med, q75 = np.percentile(vals, [25, 50, 75])
            w.writerow([repr(key[0]), repr(vel), key[2], key[3], key[4], key[5], len(vals), repr(float(med)),
                        repr(float(q25)), repr(float(q75))])
    return path
