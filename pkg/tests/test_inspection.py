import csv

import numpy as np
import pytest

from multichoice_mim import training as T
from multichoice_mim.inspection import (
    cmd_inspect_targets, read_heatmap, read_matrix_csv, target_views,
)
from multichoice_mim.targets import patch_affinity


@pytest.fixture
def state(tiny_cfg):
    ds = T.make_dataset(tiny_cfg)
    return T.TrainState.create(tiny_cfg, T.fit_tokenizer(tiny_cfg, ds)), ds


def test_dump_files_and_consistency(state, tmp_path):
    st, ds = state
    v = cmd_inspect_targets(st, ds, 3, tmp_path)
    d = tmp_path / "test_00003"
    for name in ("token_ids.csv", "top3.csv", "p.csv", "z_hat.csv", "W.csv", "features.csv",
                 "affinity.pgm", "entropy.csv"):
        assert (d / name).exists(), name
    feats = read_matrix_csv(d / "features.csv")
    W_again = patch_affinity(feats)
    np.testing.assert_allclose(W_again.sum(1), 1.0, atol=1e-6)
    np.testing.assert_allclose(read_matrix_csv(d / "W.csv"), W_again, atol=1e-5)
    heat = read_heatmap(d / "affinity.pgm")
    np.testing.assert_allclose(heat.sum(1), 1.0, atol=st.cfg.grid ** 2 * heat.max() / 65535)
    ids = np.loadtxt(d / "token_ids.csv", delimiter=",", dtype=int)
    assert ids.shape == (st.cfg.grid, st.cfg.grid)
    np.testing.assert_array_equal(ids.ravel(), v["z"].argmax(-1))
    with open(d / "top3.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert sum(int(r["masked"]) for r in rows) == v["mask"].masked.size
    first = rows[0]
    assert float(first["p1"]) >= float(first["p2"]) >= float(first["p3"])


def test_out_of_range_index(state, tmp_path):
    st, ds = state
    with pytest.raises(IndexError, match="out of range"):
        cmd_inspect_targets(st, ds, len(ds.test_x), tmp_path)


def test_duplicate_patches_share_ids_and_top3(state, tmp_path):
    st, ds = state
    ds.test_x = np.full_like(ds.test_x[:1], 0.3)
    cmd_inspect_targets(st, ds, 0, tmp_path)
    d = tmp_path / "test_00000"
    ids = np.loadtxt(d / "token_ids.csv", delimiter=",", dtype=int)
    assert len(set(ids.ravel().tolist())) == 1
    with open(d / "top3.csv") as fh:
        tops = {(r["id1"], r["id2"], r["id3"]) for r in csv.DictReader(fh)}
    assert len(tops) == 1


def test_omega_one_gives_tokenizer_distribution(state):
    st, ds = state
    st.cfg = st.cfg.replace(**{"target.omega": 1.0})
    td = target_views(st, ds.test_x[0])["td"]
    np.testing.assert_array_equal(td.z_hat, td.p)
