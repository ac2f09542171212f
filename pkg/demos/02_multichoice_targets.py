"""
Building multi-choice targets
=============================

A masked patch is trained towards a distribution, not a single token id.
The distribution blends the tokenizer's softened scores for that patch with
the scores of patches the encoder considers similar.
"""
import numpy as np

from multichoice_mim.targets import build_targets, row_entropy

rng = np.random.default_rng(0)

# %%
# Six patches, ten tokens.  Patches 0 and 1 have nearly the same features,
# patch 5 is unlike the rest.
z = rng.normal(0, 3, (6, 10))
features = rng.normal(size=(6, 4))
features[1] = features[0] + 0.05 * rng.normal(size=4)
features[5] = -features[:5].mean(0) * 3

td = build_targets(z, features, tau=4.0, omega=0.8)
np.set_printoptions(precision=3, suppress=True)
print("affinity W:\n", td.W)

# %%
# Patch 0 borrows probability mass from patch 1 because W[0, 1] is large.
for name, row in (("p", td.p[0]), ("z_hat", td.z_hat[0]), ("p of patch 1", td.p[1])):
    top = np.argsort(-row)[:3]
    print(f"{name:>12}: top tokens {top.tolist()} with mass {row[top].round(3).tolist()}")

# %%
# Temperature controls how many choices survive; omega controls how much is
# shared between patches.
for tau in (0.1, 1.0, 4.0, 10.0):
    print(f"tau {tau:5.1f}: mean entropy {row_entropy(build_targets(z, features, tau, 0.8).z_hat).mean():.3f}")
for omega in (1.0, 0.5, 0.0):
    zh = build_targets(z, features, 4.0, omega).z_hat
    print(f"omega {omega:.1f}: patch 0 vs patch 1 target distance {np.abs(zh[0] - zh[1]).sum():.4f}")
