"""Command-line interface.

Every subcommand reads the same scenario file (``--config``, JSON with the
fields of :class:`~vcrtrack.harness.ExperimentSpec` plus an optional
``"profile": "desk" | "full"``) and writes into ``--out-dir``.  Exit codes:
0 success, 2 invalid input, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .cgauss import NotPositiveDefiniteError
from .channel_model import (
    make_training,
    sample_truth,
    simulate_trajectory,
    synthesize_ul_observations,
)
from .dl_reconstruction import map_lambda_dl, reconstruct_dl
from .harness import (
    SCHEMA_VERSION,
    ExperimentSpec,
    dl_ground_truth,
    dl_prior,
    emit_csv,
    emit_summary,
    mean_mse,
    mse,
    run_experiment,
    synthesize_dl_observations,
)
from .io import (
    load_params,
    partial_from_dict,
    partial_to_dict,
    read_json,
    save_params,
    write_json,
)
from .obkf import classical_kf, obkf_filter, restore_posteriors
from .ul_learning import em_learn
from .ul_tracking import group_users, synthesize_group_observations, track_ul

__all__ = ["EXIT_NUMERICAL", "EXIT_OK", "EXIT_VALIDATION", "build_parser", "main"]

log = logging.getLogger("vcrtrack")

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_NUMERICAL = 3


class ValidationError(ValueError):
    """Invalid user input (missing files, bad fields)."""


def _load_spec(args) -> ExperimentSpec:
    d = read_json(args.config) if args.config else {}
    if not isinstance(d, dict):
        raise ValidationError("scenario file must hold a JSON object")
    if getattr(args, "full", False):
        d.setdefault("profile", "full")
    if args.seed is not None:
        d["master_seed"] = args.seed
    if getattr(args, "snr_db", None) is not None:
        d["snr_db"] = [args.snr_db]
    return ExperimentSpec.from_dict(d)


def _write_rows(path: Path, header, rows) -> Path:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["schema_version", SCHEMA_VERSION])
        w.writerow(header)
        w.writerows(rows)
    return path


def _require(path, what: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise ValidationError(f"{what} not found: {p}")
    return p


def _rngs(seed: int, n: int):
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n)]


# ---------------------------------------------------------------------------
# Subcommands


def _snr(args, spec) -> float:
    return spec.snr_db[0] if getattr(args, "snr_db", None) is None else float(args.snr_db)


def _simulate_ul(spec, cfg, n_blocks: int):
    """Truth, trajectories and per-segment UL training observations."""
    r_truth, r_traj, r_noise = _rngs(spec.master_seed, 3)
    truths = [sample_truth(g, cfg, r_truth)[0] for g in spec.users]
    total = n_blocks + spec.ul_track_blocks
    trajs = [simulate_trajectory(p, total, r_traj) for p in truths]
    training = make_training(cfg.group_size, cfg.train_len, cfg.pilot_power)
    obs = []
    for s in range(0, cfg.n_users, cfg.group_size):
        heads = [trajs[k].physical[:n_blocks] for k in range(s, s + cfg.group_size)]
        obs.append(synthesize_ul_observations(heads, training, cfg.noise_var, r_noise))
    return truths, trajs, np.stack(obs)


def _save_channels(trajs, out: Path) -> None:
    states = np.stack([t.states for t in trajs])
    np.savez(out / "channels.npz", states=states, physical=np.stack([t.physical for t in trajs]))
    rows = [[k, m + 1, n, repr(float(v.real)), repr(float(v.imag))]
            for k in range(states.shape[0]) for m in range(states.shape[1])
            for n, v in enumerate(states[k, m])]
    _write_rows(out / "trajectory.csv", ("user", "block", "antenna_index", "re", "im"), rows)


def cmd_simulate(args) -> int:
    spec = _load_spec(args)
    cfg = spec.config.with_snr(_snr(args, spec))
    truths, trajs, obs = _simulate_ul(spec, cfg, spec.m_u)
    out = args.out_dir
    save_params(truths, out / "truth.json")
    np.save(out / "ul_observations.npy", obs)
    _save_channels(trajs, out)
    log.info("wrote truth, %d segments of %d training blocks and %d-block trajectories",
             obs.shape[0], spec.m_u, trajs[0].n_blocks)
    return EXIT_OK


def cmd_learn(args) -> int:
    spec = _load_spec(args)
    cfg = spec.config.with_snr(_snr(args, spec))
    n_blocks = args.blocks or spec.m_u
    if n_blocks < 2:
        raise ValidationError("--blocks must be >= 2")
    truths = None
    if args.synthesize:
        truths, trajs, obs = _simulate_ul(spec, cfg, n_blocks)
        save_params(truths, args.out_dir / "truth.json")
        _save_channels(trajs, args.out_dir)
    else:
        obs = np.load(_require(args.observations or args.out_dir / "ul_observations.npy", "observations"))
        if obs.ndim == 2:
            obs = obs[None]
        if obs.shape[1] < n_blocks:
            raise ValidationError(f"observation dump holds {obs.shape[1]} blocks, {n_blocks} requested")
        obs = obs[:, :n_blocks]
        truth_path = args.truth or args.out_dir / "truth.json"
        if Path(truth_path).is_file():
            truths = load_params(truth_path)
    training = make_training(cfg.group_size, cfg.train_len, cfg.pilot_power)
    iters = args.em_iters or spec.em_iters
    learned, history = [], [[] for _ in range(iters)]
    for y in obs:
        res = em_learn(y, cfg, n_iters=iters, training=training)
        learned.extend(res.params)
        hist = list(res.history) + [res.history[-1]] * (iters - len(res.history))
        for it in range(iters):
            history[it].extend(hist[it])
    save_params(learned, args.out_dir / "learned.json")
    if truths is not None:
        if len(truths) != len(learned):
            raise ValidationError("truth file and observations list different user counts")
        rows = [[it] + [repr(v) for v in _param_mses(ps, truths)] for it, ps in enumerate(history, start=1)]
        _write_rows(args.out_dir / "learn_mse.csv",
                    ("iter", "mse_alpha", "mse_c", "mse_lambda", "mse_rho", "mse_sigma"), rows)
    else:
        log.warning("no truth file: skipping learn_mse.csv")
    return EXIT_OK


def _param_mses(est, truths):
    return (
        mean_mse([[p.alpha] for p in est], [[t.alpha] for t in truths]),
        mean_mse([p.support.astype(float) for p in est], [t.support.astype(float) for t in truths]),
        mean_mse([p.lambda_diag for p in est], [t.lambda_diag for t in truths]),
        mean_mse([p.bias for p in est], [t.bias for t in truths]),
        float(np.mean([mse([p.noise_var], [t.noise_var]) for p, t in zip(est, truths)])),
    )


def cmd_track_ul(args) -> int:
    spec = _load_spec(args)
    cfg = spec.config.with_snr(_snr(args, spec))
    learned = load_params(_require(args.params or args.out_dir / "learned.json", "parameter file"))
    ch = np.load(_require(args.channels or args.out_dir / "channels.npz", "channel file"))
    start = ch["states"].shape[1] - spec.ul_track_blocks
    n_blocks = args.blocks or spec.ul_track_blocks
    states = ch["states"][:, start:start + n_blocks]
    physical = ch["physical"][:, start:start + n_blocks]
    if physical.shape[0] != len(learned) or physical.shape[1] < n_blocks or start < 0:
        raise ValidationError("channel file does not match the parameter file and block count")
    assignment = group_users([p.support for p in learned], cfg.pilot_power)
    rx = synthesize_group_observations(list(physical), assignment, cfg.noise_var, spec.master_seed + 1)
    res = track_ul(rx, learned, assignment, cfg.noise_var)
    rows = []
    for m in range(n_blocks):
        for k in range(len(learned)):
            rows.append([m + 1, k, assignment.group_of(k), repr(mse(res.virtual[k][m], states[k, m]))])
    _write_rows(args.out_dir / "track_ul.csv", ("block", "user", "group", "mse_h"), rows)
    return EXIT_OK


def cmd_reconstruct_dl(args) -> int:
    spec = _load_spec(args)
    cfg = spec.config
    carrier_dl = cfg.carrier_dl if args.carrier_dl is None else float(args.carrier_dl)
    if not carrier_dl > 0:
        raise ValidationError("--carrier-dl must be positive")
    learned = load_params(_require(args.params or args.out_dir / "learned.json", "parameter file"))
    users = []
    for p in learned:
        part = reconstruct_dl(p, cfg.carrier_ul, carrier_dl, cfg.block_len, cfg.symbol_period,
                              args.direction)
        anchor = map_lambda_dl(p.lambda_diag, part.source_bins, cfg.n_antennas)[part.indices]
        users.append(partial_to_dict(part, anchor, p.noise_var))
    write_json({"users": users}, args.out_dir / "dl_partial.json")
    return EXIT_OK


def cmd_track_dl(args) -> int:
    spec = _load_spec(args)
    cfg = spec.config.with_snr(_snr(args, spec))
    doc = read_json(_require(args.partial or args.out_dir / "dl_partial.json", "downlink file"))
    truths = load_params(_require(args.truth or args.out_dir / "truth.json", "truth file"))
    partials = [partial_from_dict(u) for u in doc["users"]]
    if len(partials) != len(truths):
        raise ValidationError("downlink file and truth file list different user counts")
    m_d = args.obkf_blocks
    n_blocks = max(args.dl_blocks or spec.dl_blocks, m_d)
    r_truth, r_traj, r_noise, r_mcmc = _rngs(spec.master_seed, 4)
    rows = {}
    for k, (part, rec, truth) in enumerate(zip(partials, doc["users"], truths)):
        if "lambda_anchor" not in rec or "sigma_anchor" not in rec:
            raise ValidationError(f"user {k}: downlink file lacks prior anchors")
        # the downlink carrier is the one the partial model was reconstructed for
        cfg_k = replace(cfg, carrier_dl=cfg.carrier_ul / part.wavelength_ratio)
        dl = dl_ground_truth(truth, cfg_k, r_truth, spec.dl_perturb_range)
        w = simulate_trajectory(dl, n_blocks, r_traj, stationary=False).states
        idx = part.indices
        s_true = dl.noise_var / cfg.pilot_power
        obs = synthesize_dl_observations(w, idx, s_true, r_noise)
        prior = dl_prior(rec["lambda_anchor"], rec["sigma_anchor"], spec.prior_scale, spec.proposal_scale)
        post = restore_posteriors(obs, part.alpha_dl, prior, m_d, args.mcmc_iters or spec.mcmc_iters,
                                  spec.burn_in if args.burn_in is None else args.burn_in, r_mcmc,
                                  cfg.pilot_power, args.mcmc_every)
        if args.baseline == "perfect":
            est = classical_kf(obs, dl.lambda_diag[idx], s_true, dl.alpha).filtered
        elif args.baseline == "weak":
            f = np.exp(r_mcmc.uniform(np.log(spec.weak_range[0]), np.log(spec.weak_range[1]), idx.size + 1))
            est = classical_kf(obs, dl.lambda_diag[idx] * f[1:] + 1e-12, s_true * f[0], part.alpha_dl).filtered
        else:
            est = obkf_filter(obs, part.alpha_dl, prior, post, m_d, cfg.pilot_power).filtered
        for m in range(n_blocks):
            g_hat = np.zeros(cfg.n_antennas, complex)
            g_hat[idx] = est[m]
            h = min(m, m_d - 1)
            lam_full = np.zeros(cfg.n_antennas)
            lam_full[idx] = post.lambda_history[h]
            rows.setdefault(m, []).append((
                mse(g_hat, w[m]), mse(lam_full, dl.lambda_diag),
                mse([post.sigma_history[h]], [dl.noise_var]), post.acceptance[h] if m < m_d else 0.0,
            ))
    out = [[m + 1] + [repr(float(np.mean([r[i] for r in rows[m]]))) for i in range(4)] for m in sorted(rows)]
    _write_rows(args.out_dir / "track_dl.csv",
                ("block", "mse_g", "mse_lambda_dl", "mse_sigma_dl", "acceptance_rate"), out)
    return EXIT_OK


def cmd_experiment(args) -> int:
    spec = _load_spec(args)
    result = run_experiment(spec, workers=args.workers)
    emit_csv(result, args.out_dir / "records.csv")
    emit_summary(result, args.out_dir / "summary.csv")
    write_json(spec.to_dict(), args.out_dir / "spec.json")
    _write_rows(args.out_dir / "timings.csv", ("snr_db", "velocity", "trial", "stage", "seconds"),
                [[repr(float(t[0])), t[1], t[2], t[3], repr(t[4])] for t in result.timings])
    if result.failures:
        _write_rows(args.out_dir / "failures.csv", ("snr_db", "velocity", "trial", "stage", "message"),
                    [list(f) for f in result.failures])
        log.warning("%d trial stage(s) failed; see failures.csv", len(result.failures))
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="scenario JSON file")
    common.add_argument("--seed", type=int, help="master seed (overrides the scenario file)")
    common.add_argument("--out-dir", type=Path, default=Path("."), help="output directory")
    common.add_argument("--workers", type=int, default=1, help="worker processes for sweeps")
    common.add_argument("--full", action="store_true", help="use the full-size profile defaults")
    common.add_argument("--snr-db", type=float, dest="snr_db", help="SNR in dB (default: first scenario SNR)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="vcrtrack", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[common], help="draw truth, trajectories and UL training data")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("learn", parents=[common], help="EM learning of the UL model")
    p.add_argument("--observations", type=Path)
    p.add_argument("--truth", type=Path)
    p.add_argument("--em-iters", type=int)
    p.add_argument("--blocks", type=int, help="training blocks M used for learning")
    p.add_argument("--synthesize", action="store_true", help="draw truth and observations from --seed")
    p.set_defaults(func=cmd_learn)

    p = sub.add_parser("track-ul", parents=[common], help="grouped reduced-state UL tracking")
    p.add_argument("--params", type=Path)
    p.add_argument("--channels", type=Path)
    p.add_argument("--blocks", type=int, help="tracked blocks (default: scenario ul_track_blocks)")
    p.set_defaults(func=cmd_track_ul)

    p = sub.add_parser("reconstruct-dl", parents=[common], help="map UL estimates to the DL")
    p.add_argument("--params", type=Path)
    p.add_argument("--carrier-dl", type=float, dest="carrier_dl", help="DL carrier in Hz")
    p.add_argument("--direction", choices=("stated", "physical"), default="stated")
    p.set_defaults(func=cmd_reconstruct_dl)

    p = sub.add_parser("track-dl", parents=[common], help="OBKF restoration and DL tracking")
    p.add_argument("--partial", type=Path)
    p.add_argument("--truth", type=Path)
    p.add_argument("--obkf-blocks", type=int, default=10, dest="obkf_blocks")
    p.add_argument("--dl-blocks", type=int)
    p.add_argument("--mcmc-iters", type=int)
    p.add_argument("--burn-in", type=int)
    p.add_argument("--mcmc-every", type=int, default=1)
    p.add_argument("--baseline", choices=("perfect", "weak", "none"), default="none")
    p.set_defaults(func=cmd_track_dl)

    p = sub.add_parser("experiment", parents=[common], help="Monte-Carlo sweep with CSV output")
    p.set_defaults(func=cmd_experiment)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.workers < 1:
            raise ValidationError("--workers must be >= 1")
        if getattr(args, "obkf_blocks", 1) < 1:
            raise ValidationError("--obkf-blocks must be >= 1")
        args.out_dir.mkdir(parents=True, exist_ok=True)
        return args.func(args)
    except (NotPositiveDefiniteError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ValueError, KeyError, TypeError) as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
