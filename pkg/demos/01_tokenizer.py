"""
A k-means visual tokenizer
==========================

Every image patch gets a score for each entry of a small visual vocabulary.
The vocabulary is a k-means codebook fitted on training patches, and the
scores are scaled negative squared distances.
"""
import numpy as np

from multichoice_mim import generate_toy_dataset, fit_codebook, encode_logits, hard_ids
from multichoice_mim.data import patchify_batch
from multichoice_mim.targets import row_entropy, soft_probs

# %%
# A toy dataset of 32 x 32 images with simple shapes on gradient backgrounds.
ds = generate_toy_dataset(seed=0, n_train=256, n_test=0, classes=4, image_size=32)
patches = patchify_batch(ds.train_x, 8)
print("patches:", patches.shape)

# %%
# Fit a 64-entry codebook.  The inertia history shows Lloyd's iterations
# settling down.
flat = patches.reshape(-1, patches.shape[-1])
cb = fit_codebook(flat, 64, iters=20, seed=0, gain=10.0)
print("inertia:", [round(v, 1) for v in cb.inertia_history[::5]])

# %%
# Token ids are the arg-max of the logits.  A healthy codebook spreads the
# patches over many entries.
z = encode_logits(patches[:16], cb)
ids = hard_ids(z)
used = np.bincount(ids.ravel(), minlength=cb.V)
print("codes used by 16 images:", int((used > 0).sum()), "of", cb.V)
print("first image as a token grid:\n", ids[0].reshape(4, 4))

# %%
# The gain scales patches before clustering, so logits grow with its square.
# A larger gain concentrates the softened distribution on fewer tokens.
for gain in (1.0, 3.0, 10.0):
    g = fit_codebook(flat, 64, iters=10, seed=0, gain=gain)
    H = row_entropy(soft_probs(encode_logits(patches[:16], g), 4.0)).mean()
    print(f"gain {gain:4.1f}: mean entropy {H:.2f} nats (uniform is {np.log(g.V):.2f})")
