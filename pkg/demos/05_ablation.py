"""
A small omega sweep
===================

Each point pre-trains from the same seed, dataset and tokenizer and reports
the probe accuracy and the final loss.  omega = 1 uses only the tokenizer's
own distribution; smaller values lean more on patch similarity.
"""
from multichoice_mim import parse_config
from multichoice_mim.ablation import cmd_ablate

cfg = parse_config(overrides={"epochs": 10, "warmup_epochs": 1, "data.n_train": 256})
for r in cmd_ablate("omega", ["1.0", "0.8", "0.4"], cfg):
    print(f"omega {r['value']}: top-1 {r['top1']:.1f}%, final loss {r['final_loss']:.3f}")
