import json

import pytest

from multichoice_mim.cli import main


def test_pipeline(tiny_config_file, tmp_path, capsys):
    out = tmp_path / "run"
    assert main(["tokenizer-fit", "--config", str(tiny_config_file), "--out", str(out)]) == 0
    assert (out / "codebook.ckpt").exists()
    assert main(["pretrain", "--config", str(tiny_config_file), "--out", str(out),
                 "--tokenizer", str(out / "codebook.ckpt")]) == 0
    ckpt = out / "checkpoint.ckpt"
    assert ckpt.exists() and (out / "metrics.csv").exists()
    assert main(["probe", "--checkpoint", str(ckpt), "--out", str(out)]) == 0
    assert main(["finetune", "--checkpoint", str(ckpt), "--out", str(out)]) == 0
    lines = (out / "results.csv").read_text().splitlines()
    assert len(lines) == 3 and lines[1].split(",")[1] == "probe"
    assert main(["inspect-targets", "--checkpoint", str(ckpt), "--index", "0",
                 "--out", str(out)]) == 0
    assert (out / "test_00000" / "affinity.pgm").exists()
    assert "top1" in capsys.readouterr().out


def test_overrides_and_env_out(tiny_config_file, tmp_path, monkeypatch):
    monkeypatch.setenv("MCMIM_OUT", str(tmp_path / "env"))
    assert main(["tokenizer-fit", "--config", str(tiny_config_file), "--model.vocab", "8"]) == 0
    assert "model.vocab = 8" in (tmp_path / "env" / "config.txt").read_text()


@pytest.mark.parametrize("argv, code", [
    (["pretrain", "--target.omega", "1.5"], 2),
    (["pretrain", "--no.such.key", "1"], 2),
    (["probe", "--checkpoint", "missing.ckpt"], 1),
])
def test_exit_codes(argv, code, tmp_path, capsys):
    assert main(argv + ["--out", str(tmp_path)]) == code
    assert "error" in capsys.readouterr().err


def test_corrupt_checkpoint_exit_code(tmp_path):
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(b"MIMCKPT 9 2\n{}")
    assert main(["probe", "--checkpoint", str(bad), "--out", str(tmp_path)]) == 3


def test_inspect_index_out_of_range(tiny_config_file, tmp_path):
    out = tmp_path / "run"
    main(["pretrain", "--config", str(tiny_config_file), "--out", str(out), "--epochs", "1",
          "--warmup_epochs", "0"])
    assert main(["inspect-targets", "--checkpoint", str(out / "checkpoint.ckpt"),
                 "--index", "999", "--out", str(out)]) == 1


def test_grad_check_command(tiny_config_file, tmp_path):
    assert main(["grad-check", "--config", str(tiny_config_file), "--out", str(tmp_path),
                 "--samples", "3"]) == 0
    report = json.loads((tmp_path / "grad_check.json").read_text())
    assert report["float64"]["max_rel_err"] < 1e-6
