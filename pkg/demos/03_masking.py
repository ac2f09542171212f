"""
Random and block masks
======================

Two ways of choosing which patches the encoder must reconstruct.
"""
import numpy as np

from multichoice_mim import block_mask, random_mask


def show(m, rows, cols):
    grid = m.as_bool().reshape(rows, cols)
    print("\n".join("".join("#" if v else "." for v in r) for r in grid))
    print(f"{m.masked.size} of {m.n} masked ({m.fraction:.1%})\n")


rng = np.random.default_rng(7)

# %%
# Random masking picks an exact count: 75% of a 14 x 14 grid is 147 patches.
show(random_mask(196, 0.75, rng), 14, 14)

# %%
# Block masking grows rectangles until the target is reached, so the
# achieved fraction lands anywhere in [ratio, ratio + 0.1].
for ratio in (0.45, 0.75):
    show(block_mask(14, 14, ratio, rng), 14, 14)

fr = [block_mask(14, 14, 0.6, rng).fraction for _ in range(500)]
print(f"block 0.6 over 500 draws: min {min(fr):.3f}, mean {np.mean(fr):.3f}, max {max(fr):.3f}")
