"""
Restoring the downlink model and tracking the downlink channel
==============================================================

Start from a learned uplink model, carry support, bias and time correlation
over to the downlink carrier and restore the remaining noise parameters
from a handful of downlink blocks with the Bayesian sampler.  The filter
that averages over the restored posterior is then compared with a filter
that knows the true downlink model and one fed with mis-scaled parameters.

Run with ``python3 demos/downlink_restoration.py``.
"""

import numpy as np

from vcrtrack.channel_model import (
    make_training,
    sample_truth,
    simulate_trajectory,
    synthesize_ul_observations,
)
from vcrtrack.dl_reconstruction import map_lambda_dl, reconstruct_dl
from vcrtrack.harness import (
    ExperimentSpec,
    dl_ground_truth,
    dl_prior,
    mse,
    synthesize_dl_observations,
)
from vcrtrack.obkf import classical_kf, obkf_filter, restore_posteriors
from vcrtrack.ul_learning import em_learn

spec = ExperimentSpec.desk()
cfg = spec.config.with_snr(20.0)
rng = np.random.default_rng(7)
m_d, n_blocks = 10, 40

users = spec.users[: cfg.group_size]
truths = [sample_truth(g, cfg, rng)[0] for g in users]
trajs = [simulate_trajectory(p, spec.m_u, rng) for p in truths]
training = make_training(cfg.group_size, cfg.train_len, cfg.pilot_power)
obs_ul = synthesize_ul_observations([t.physical for t in trajs], training, cfg.noise_var, rng)
learned = em_learn(obs_ul, cfg, n_iters=spec.em_iters, training=training).params

# %%
# Downlink for the first user.  The true downlink model perturbs the
# remapped uplink powers, so the carried-over values are only a prior.
truth, est = truths[0], learned[0]
dl = dl_ground_truth(truth, cfg, rng, spec.dl_perturb_range)
part = reconstruct_dl(est, cfg.carrier_ul, cfg.carrier_dl, cfg.block_len, cfg.symbol_period)
idx = part.indices
print(f"downlink support {idx.size} bins, alpha' reconstructed {part.alpha_dl:.4f} true {dl.alpha:.4f}")

w = simulate_trajectory(dl, n_blocks, rng, stationary=False).states
noise_eff = dl.noise_var / cfg.pilot_power
y = synthesize_dl_observations(w, idx, noise_eff, rng)

anchor = map_lambda_dl(est.lambda_diag, part.source_bins, cfg.n_antennas)[idx]
prior = dl_prior(anchor, est.noise_var, spec.prior_scale, spec.proposal_scale)
post = restore_posteriors(y, part.alpha_dl, prior, m_d, spec.mcmc_iters, spec.burn_in, rng, cfg.pilot_power)

# %%
# Posterior means of the downlink noise power after each restoration block.
print("\nblock   sigma'^2 mean   true      acceptance")
for m in range(m_d):
    print(f"{m + 1:5d}   {post.sigma_history[m]:.4e}      {dl.noise_var:.4e}   {post.acceptance[m]:.2f}")

# %%
# Tracking error over all blocks for the three filters.
filters = {
    "restored": obkf_filter(y, part.alpha_dl, prior, post, m_d, cfg.pilot_power).filtered,
    "true model": classical_kf(y, dl.lambda_diag[idx], noise_eff, dl.alpha).filtered,
    "mis-scaled": classical_kf(y, 4.0 * dl.lambda_diag[idx] + 1e-12, 0.25 * noise_eff, part.alpha_dl).filtered,
}
print("\nfilter        mean MSE blocks 1-10   mean MSE blocks 21-40")
for name, est_g in filters.items():
    errs = [mse(est_g[m], w[m, idx]) for m in range(n_blocks)]
    print(f"{name:12s}  {np.mean(errs[:10]):.4e}             {np.mean(errs[20:]):.4e}")
