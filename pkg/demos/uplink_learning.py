"""
Learning an uplink channel model from training blocks
======================================================

Draw the desk scenario, simulate a short run of training blocks for one
pilot segment and run EM on it.  The printout follows the parameter error
iteration by iteration and then compares the learned support with the true
one, bin by bin.

Run with ``python3 demos/uplink_learning.py``.
"""

import numpy as np

from vcrtrack.channel_model import (
    make_training,
    sample_truth,
    simulate_trajectory,
    synthesize_ul_observations,
)
from vcrtrack.harness import ExperimentSpec, mean_mse
from vcrtrack.ul_learning import em_learn

spec = ExperimentSpec.desk()
cfg = spec.config.with_snr(20.0)
rng = np.random.default_rng(2024)

# one pilot segment: the first `group_size` users share orthogonal training
users = spec.users[: cfg.group_size]
truths = [sample_truth(g, cfg, rng)[0] for g in users]
trajs = [simulate_trajectory(p, spec.m_u, rng) for p in truths]
training = make_training(cfg.group_size, cfg.train_len, cfg.pilot_power)
obs = synthesize_ul_observations([t.physical for t in trajs], training, cfg.noise_var, rng)
print(f"{cfg.n_antennas} antennas, {len(users)} users, {spec.m_u} training blocks, SNR 20 dB")

res = em_learn(obs, cfg, n_iters=8, training=training)

# %%
# Parameter error per iteration, averaged over the users of the segment.
print("\niter   alpha       Lambda      bias        noise var")
for it, params in enumerate(res.history, start=1):
    print(f"{it:4d}   {mean_mse([[p.alpha] for p in params], [[t.alpha] for t in truths]):.3e}"
          f"   {mean_mse([p.lambda_diag for p in params], [t.lambda_diag for t in truths]):.3e}"
          f"   {mean_mse([p.bias for p in params], [t.bias for t in truths]):.3e}"
          f"   {np.mean([(p.noise_var - cfg.noise_var) ** 2 for p in params]) / cfg.noise_var ** 2:.3e}")

# %%
# Support: '#' marks a bin in the true support, '^' a learned one.
for k, (p, t) in enumerate(zip(res.params, truths)):
    lo = max(int(np.flatnonzero(t.support | p.support).min()) - 3, 0)
    hi = min(int(np.flatnonzero(t.support | p.support).max()) + 4, cfg.n_antennas)
    print(f"\nuser {k}: bins {lo}..{hi - 1}, alpha true {t.alpha:.4f} learned {p.alpha:.4f}")
    print("  true    " + "".join("#" if s else "." for s in t.support[lo:hi]))
    print("  learned " + "".join("^" if s else "." for s in p.support[lo:hi]))
    on = t.support & p.support
    print(f"  bias RMSE on shared bins: {np.sqrt(np.mean((p.bias - t.bias)[on] ** 2)):.4f} bins")
