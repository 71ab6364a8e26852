"""Fusing a burst of more than two frames by repeated pairwise fusion.

Run with ``python3 demos/05_burst_fusion.py``.
"""
import numpy as np

from hgfusion.dataset import generate_procedural_sample
from hgfusion.fusion import AVERAGE, DUMMY_A, fuse_burst, fuse_pair
from hgfusion.imaging import blur, composite_pair, gaussian_kernel

rng = np.random.default_rng(3)
sample = generate_procedural_sample(48, 48, 2, rng)
y = sample.image
y_blur = blur(y, gaussian_kernel(2.0))

# Three frames, each focused on one label: background, object 1, object 2.
frames = []
for label in range(3):
    g = (sample.mask != label).astype(float)  # 1 where this frame is blurred
    frames.append(composite_pair(y, y_blur, g)[0])

# The fold is f(f(x0, x1), x2), so with averaging the last frame gets half
# the weight and the first two a quarter each.
avg = fuse_burst(AVERAGE, frames)
print("average fold matches 0.25/0.25/0.5:", np.array_equal(avg, 0.25 * frames[0] + 0.25 * frames[1] + 0.5 * frames[2]))
print("dummy A fold returns the first frame:", np.array_equal(fuse_burst(DUMMY_A, frames), frames[0]))

# With two frames the burst is just a pair.
print("two-frame burst equals a pair:", np.array_equal(fuse_burst(AVERAGE, frames[:2]), fuse_pair(AVERAGE, frames[:2])))

# Averaging never picks the sharp frame, so every fold keeps some blur.
err = [np.abs(f - y).mean() for f in frames]
print("per-frame mean error to the all-in-focus image:", np.round(err, 4))
print("average-fold error:", round(float(np.abs(avg - y).mean()), 4))
