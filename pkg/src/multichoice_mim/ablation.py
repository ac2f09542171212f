"""Hyper-parameter sweeps: one pre-train plus linear probe per value."""
from __future__ import annotations

import csv
import logging
from pathlib import Path

from .config import TrainConfig
from .errors import ConfigError
from .evaluation import linear_probe
from .training import fit_tokenizer, make_dataset, pretrain

log = logging.getLogger(__name__)

DEFAULT_VALUES = {
    "tau": ["0.1", "1.0", "4.0", "10.0"],
    "omega": ["0.0", "0.2", "0.4", "0.6", "0.8", "1.0"],
    "mask": [f"{s}:{r}" for s in ("block", "random") for r in ("0.45", "0.6", "0.75", "0.9")],
}
ABLATE_FIELDS = ("axis", "value", "top1", "final_loss")


def overrides_for(axis: str, value: str) -> dict:
    """Config overrides for one sweep point.

    ``tau`` accepts ``single`` for the hard-label baseline; ``mask`` values
    are ``strategy:ratio``.
    """
    if axis == "tau":
        if value == "single":
            return {"target.mode": "single"}
        return {"target.mode": "multi", "target.tau": value}
    if axis == "omega":
        return {"target.mode": "multi", "target.omega": value}
    if axis == "mask":
        strategy, _, ratio = value.partition(":")
        if not ratio:
            raise ConfigError(f"mask sweep values look like 'random:0.75', got {value!r}")
        return {"mask.strategy": strategy, "mask.ratio": ratio}
    raise ConfigError(f"unknown ablation axis {axis!r}; choose tau, omega or mask")


def run_point(cfg: TrainConfig, dataset=None, codebook=None, out_dir=None):
    """Pre-train and probe one configuration.  Returns (top1, final_loss, state)."""
    dataset = dataset or make_dataset(cfg)
    codebook = codebook or fit_tokenizer(cfg, dataset)
    state = pretrain(cfg, dataset, codebook, out_dir)
    row = linear_probe(state.params, cfg, dataset)
    return row.top1, state.history[-1]["loss"], state


def cmd_ablate(axis: str, values, base: TrainConfig, out_path=None, run_dir=None) -> list[dict]:
    """Sweep ``axis`` over ``values`` with shared seed, data and tokenizer.

    A ``tau`` sweep always includes the ``single`` (hard-label) row.
    """
    values = [str(v) for v in (values or DEFAULT_VALUES[axis])]
    if axis == "tau" and "single" not in values:
        values = ["single"] + values
    cfgs = [base.replace(**overrides_for(axis, v)) for v in values]  # validate all first
    dataset = make_dataset(base)
    codebook = fit_tokenizer(base, dataset)
    rows = []
    for v, cfg in zip(values, cfgs):
        sub = Path(run_dir) / f"{axis}_{v.replace(':', '_')}" if run_dir else None
        top1, loss, _ = run_point(cfg, dataset, codebook, sub)
        log.info("%s=%s top1 %.2f final loss %.4f", axis, v, top1, loss)
        rows.append({"axis": axis, "value": v, "top1": top1, "final_loss": loss})
    if out_path:
        write_ablation_csv(rows, out_path)
    return rows


def write_ablation_csv(rows, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(ABLATE_FIELDS)
        for r in rows:
            w.writerow([r["axis"], r["value"], repr(float(r["top1"])), repr(float(r["final_loss"]))])
