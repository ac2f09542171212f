"""
Pre-train, then probe
=====================

A short pre-training run on the toy dataset followed by a linear probe on
frozen features, compared against a probe on a randomly initialised encoder.
This uses 20 epochs so it finishes in about a minute; the default 100 epochs
give a clearer gap.
"""
import numpy as np

from multichoice_mim import init_params, linear_probe, make_dataset, parse_config, pretrain
from multichoice_mim.training import epoch_mean_losses

cfg = parse_config(overrides={"epochs": 20, "warmup_epochs": 2})
ds = make_dataset(cfg)

# %%
# Random-init baseline.
base = linear_probe(init_params(cfg.model_config(), cfg.seed), cfg, ds, run_id="random")
print(f"random-init probe: {base.top1:.1f}% top-1")

# %%
# Pre-train.  The history holds one row per optimiser step.
state = pretrain(cfg, ds)
losses = epoch_mean_losses(state.history, cfg.steps_per_epoch())
print("epoch mean loss:", np.round(losses[::4], 3).tolist(), "->", round(float(losses[-1]), 3))

# %%
# Probe the pre-trained encoder.
row = linear_probe(state.params, cfg, ds, run_id="pretrained")
print(f"pre-trained probe: {row.top1:.1f}% top-1 (best epoch {row.epoch})")
