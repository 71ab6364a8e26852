"""The NPS dissimilarity and the regression head.

Run with ``python3 demos/03_regression_losses.py``.
"""
import numpy as np

from hgfusion.dataset import SynthesisConfig, example_rng, procedural_samples, synthesize_example
from hgfusion.fusion import Fuser, fuse_pair
from hgfusion.losses import l1_loss, mse_loss, nps, regression_loss
from hgfusion.network import HourglassConfig, Model
from hgfusion.training import Schedule, train

# NPS saturates quickly: a 0.1 intensity error already costs almost 0.3,
# while L1 charges 0.1 and MSE 0.01.
for d in (0.01, 0.05, 0.1, 0.3, 1.0):
    print(f"d={d:4.2f}  nps6={float(nps(0.0, d)):.4f}  l1={d:.4f}  mse={d * d:.4f}")

# The full regression loss adds per-channel min/max range penalties.
y = np.zeros((4, 4, 3))
print("regression loss for a constant 0.1 offset:", regression_loss(y + 0.1, y).value)
print("l1 and mse for the same offset:", l1_loss(y + 0.1, y).value, mse_loss(y + 0.1, y).value)

# A short regression-head run. The raw output is an RGB estimate; with the
# nearest-source option each pixel is snapped back to one of the inputs.
synth = SynthesisConfig(crop=32)
model = Model.create(HourglassConfig(depth=2, base_channels=8, head="reg"), seed=0)
train(model, procedural_samples(1, 30, 32, 32, 3), Schedule(lr=2e-3, max_iterations=120, synthesis=synth), loss="nps")

ex = synthesize_example(procedural_samples(2, 1, 32, 32, 3)[0], synth, example_rng(99, 0))
for near in (False, True):
    fused = fuse_pair(Fuser.hf_reg(model, near=near), ex.pair)
    print(f"near={near}: mean abs error to truth {np.abs(fused - ex.truth).mean():.4f}")
