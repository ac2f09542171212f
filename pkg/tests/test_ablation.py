import csv

import pytest

from multichoice_mim import training as T
from multichoice_mim.ablation import DEFAULT_VALUES, cmd_ablate, overrides_for, run_point
from multichoice_mim.errors import ConfigError


def test_default_grids():
    assert len(DEFAULT_VALUES["omega"]) == 6
    assert DEFAULT_VALUES["omega"][0] == "0.0" and DEFAULT_VALUES["omega"][-1] == "1.0"
    assert DEFAULT_VALUES["tau"] == ["0.1", "1.0", "4.0", "10.0"]
    assert "block:0.45" in DEFAULT_VALUES["mask"] and "random:0.9" in DEFAULT_VALUES["mask"]


def test_overrides():
    assert overrides_for("tau", "single") == {"target.mode": "single"}
    assert overrides_for("mask", "block:0.6") == {"mask.strategy": "block", "mask.ratio": "0.6"}
    with pytest.raises(ConfigError):
        overrides_for("mask", "block")
    with pytest.raises(ConfigError):
        overrides_for("depth", "3")


def test_bad_value_fails_before_training(tiny_cfg):
    with pytest.raises(ConfigError, match="target.omega"):
        cmd_ablate("omega", ["0.5", "2.0"], tiny_cfg)


def test_single_point_matches_standalone_run(tiny_cfg, tmp_path):
    rows = cmd_ablate("omega", ["0.4"], tiny_cfg, tmp_path / "abl.csv")
    cfg = tiny_cfg.replace(**{"target.omega": "0.4"})
    ds = T.make_dataset(cfg)
    top1, loss, _ = run_point(cfg, ds, T.fit_tokenizer(cfg, ds))
    assert rows == [{"axis": "omega", "value": "0.4", "top1": top1, "final_loss": loss}]
    with open(tmp_path / "abl.csv") as fh:
        got = list(csv.DictReader(fh))
    assert float(got[0]["final_loss"]) == loss


def test_tau_sweep_includes_single(tiny_cfg):
    cfg = tiny_cfg.replace(epochs=1, warmup_epochs=0, **{"probe.epochs": 1})
    rows = cmd_ablate("tau", ["4.0"], cfg)
    assert [r["value"] for r in rows] == ["single", "4.0"]


@pytest.mark.parametrize("axis, n_rows", [("omega", 6), ("mask", 8)])
def test_full_grids_write_csv(tiny_cfg, tmp_path, axis, n_rows):
    cfg = tiny_cfg.replace(epochs=1, warmup_epochs=0, **{"probe.epochs": 1})
    cmd_ablate(axis, None, cfg, tmp_path / "abl.csv")
    with open(tmp_path / "abl.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert [r["value"] for r in rows] == DEFAULT_VALUES[axis] and len(rows) == n_rows
