"""Command-line entry point.

    python -m multichoice_mim <command> [--config FILE] [--out DIR] [--<key> <value> ...]

Any ``--<key> <value>`` pair not consumed by the command is a config
override (``--target.tau 4.0``).  The output directory defaults to
``$MCMIM_OUT`` or ``./runs``.  Exit codes: 0 success, 1 other error,
2 configuration, 3 checkpoint, 4 numerical.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from .config import parse_config, write_config_file
from .errors import MIMError

log = logging.getLogger("multichoice_mim")

COMMANDS = ("tokenizer-fit", "pretrain", "probe", "finetune", "ablate", "inspect-targets",
            "grad-check")


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="multichoice_mim", description=__doc__.split("\n\n")[0])
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="flat key = value config file")
        p.add_argument("--out", help="output directory (default $MCMIM_OUT or ./runs)")
        p.add_argument("-v", "--verbose", action="store_true")
        if name in ("probe", "finetune", "inspect-targets"):
            p.add_argument("--checkpoint", required=True)
        if name == "pretrain":
            p.add_argument("--tokenizer", help="codebook file from tokenizer-fit")
            p.add_argument("--resume", help="checkpoint to resume from")
        if name == "ablate":
            p.add_argument("--axis", required=True, choices=("tau", "omega", "mask"))
            p.add_argument("--values", help="comma separated; default is the full grid")
        if name == "inspect-targets":
            p.add_argument("--index", type=int, required=True)
            p.add_argument("--split", choices=("train", "test"), default="test")
            p.add_argument("--mask-seed", type=int, default=0)
        if name == "grad-check":
            p.add_argument("--samples", type=int, default=12)
            p.add_argument("--head-only", action="store_true")
        if name in ("probe", "finetune"):
            p.add_argument("--run-id", default=None)
    return ap


def _out_dir(args) -> Path:
    d = Path(args.out or os.environ.get("MCMIM_OUT", "runs"))
    d.mkdir(parents=True, exist_ok=True)
    return d


def _run(args, overrides) -> int:
    from . import ablation, checkpoint, evaluation, inspection, training

    out = _out_dir(args)
    if args.command in ("probe", "finetune", "inspect-targets"):
        state = checkpoint.load_checkpoint(args.checkpoint)
        cfg = state.cfg.replace(**overrides) if overrides else state.cfg
        ds = training.make_dataset(cfg)
        if args.command == "inspect-targets":
            state.cfg = cfg
            inspection.cmd_inspect_targets(state, ds, args.index, out, args.split, args.mask_seed)
            print(out / f"{args.split}_{args.index:05d}")
            return 0
        run_id = args.run_id or Path(args.checkpoint).stem
        if args.command == "probe":
            row = evaluation.linear_probe(state.params, cfg, ds, run_id=run_id)
        else:
            row = evaluation.fine_tune(state.params, cfg, ds, run_id=run_id)
        evaluation.append_results(row, out / "results.csv")
        print(f"{row.mode} top1 {row.top1:.2f} (epoch {row.epoch})")
        return 0

    cfg = parse_config(args.config, overrides)
    write_config_file(cfg, out / "config.txt")
    if args.command == "tokenizer-fit":
        ds = training.make_dataset(cfg)
        cb = training.fit_tokenizer(cfg, ds)
        checkpoint.save_codebook(cb, out / "codebook.ckpt", {"config": cfg.to_flat()})
        print(f"codebook V={cb.V} d_tok={cb.d_tok} inertia {cb.inertia_history[-1]:.4g}")
    elif args.command == "pretrain":
        ds = training.make_dataset(cfg)
        state = checkpoint.load_checkpoint(args.resume) if args.resume else None
        cb = checkpoint.load_codebook(args.tokenizer) if args.tokenizer else None
        state = training.pretrain(cfg, ds, cb, out, state=state)
        print(f"final loss {state.history[-1]['loss']:.4f} -> {out / 'checkpoint.ckpt'}")
    elif args.command == "ablate":
        values = args.values.split(",") if args.values else None
        rows = ablation.cmd_ablate(args.axis, values, cfg, out / f"ablate_{args.axis}.csv", out)
        for r in rows:
            print(f"{r['axis']}={r['value']}: top1 {r['top1']:.2f} final loss {r['final_loss']:.4f}")
    elif args.command == "grad-check":
        blocks = ["head.w1", "head.b1", "head.w2", "head.b2"] if args.head_only else None
        reports = training.grad_check(cfg, cfg.seed, samples=args.samples, blocks=blocks)
        limits = {"float64": 1e-6, "float32": 1e-4}
        ok = all(r["max_rel_err"] < limits[dt] for dt, r in reports.items())
        (out / "grad_check.json").write_text(json.dumps(reports, indent=1, sort_keys=True))
        for dt, r in reports.items():
            print(f"{dt}: max relative error {r['max_rel_err']:.3e} (limit {limits[dt]:g})")
        return 0 if ok else 4
    return 0


def main(argv=None) -> int:
    args, rest = _parser().parse_known_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        from .config import parse_overrides

        return _run(args, parse_overrides(rest))
    except MIMError as e:
        print(f"error ({type(e).__name__}): {e}", file=sys.stderr)
        return e.exit_code
    except (IndexError, ValueError, OSError) as e:
        print(f"error ({type(e).__name__}): {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
