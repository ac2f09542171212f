"""
multichoice_mim
===============

Masked image modeling with multi-choice token targets, in plain numpy.

A frozen k-means tokenizer assigns every image patch a distribution over a
visual vocabulary.  A small vision transformer sees the image with most
patches replaced by a mask token and is trained to predict, for each masked
patch, a soft target that mixes

- the tokenizer's temperature-softened distribution ``p``, and
- ``W @ p``: those distributions shared between patches in proportion to
  the cosine similarity of the transformer's own patch features.

Basic example
-------------

.. code:: python

    from multichoice_mim import parse_config, make_dataset, pretrain, linear_probe

    cfg = parse_config(overrides={"epochs": 10})
    ds = make_dataset(cfg)
    state = pretrain(cfg, ds)
    print(linear_probe(state.params, cfg, ds).top1)
"""
from .checkpoint import load_checkpoint, save_checkpoint
from .config import TrainConfig, parse_config
from .data import Image, PatchGrid, augment_train, generate_toy_dataset, patchify, unpatchify
from .evaluation import MetricsRow, fine_tune, linear_probe, top1_accuracy
from .masking import MaskSpec, apply_mask_tokens, block_mask, random_mask
from .targets import TargetDistribution, blend_targets, build_targets, patch_affinity, soft_probs
from .tokenizer import Codebook, encode_logits, fit_codebook, hard_ids
from .training import (
    TrainState, grad_check, hard_mim_loss, make_dataset, mc_mim_loss, pretrain, train_step,
)
from .vit import ModelConfig, init_params, vit_backward, vit_forward

__version__ = "0.1.0"
