import numpy as np
import pytest

from multichoice_mim.config import parse_config
from multichoice_mim.vit import ModelConfig


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


TINY = {
    "data.n_train": 32, "data.n_test": 16, "data.image_size": 16, "model.patch": 4,
    "model.layers": 1, "model.dim": 16, "model.heads": 2, "model.vocab": 16,
    "epochs": 2, "batch_size": 8, "warmup_epochs": 1, "tokenizer.iters": 5,
    "probe.epochs": 5, "finetune.epochs": 1,
}


@pytest.fixture
def tiny_cfg():
    """A config small enough to pre-train in a few seconds."""
    return parse_config(overrides=TINY)


@pytest.fixture
def tiny_config_file(tmp_path):
    path = tmp_path / "tiny.cfg"
    path.write_text("".join(f"{k} = {v}\n" for k, v in TINY.items()))
    return path


@pytest.fixture
def small_model_cfg():
    return ModelConfig(layers=2, dim=8, heads=2, patch=2, vocab=5, n_patches=4, channels=1,
                       dtype="float64")
