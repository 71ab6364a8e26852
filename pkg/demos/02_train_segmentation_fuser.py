"""Training the segmentation-head fuser on a toy dataset and comparing it with baselines.

Takes about a minute on one core. Run with
``python3 demos/02_train_segmentation_fuser.py``.
"""
import time

import numpy as np

from hgfusion.dataset import SynthesisConfig, example_rng, procedural_samples, synthesize_example
from hgfusion.fusion import AVERAGE, DUMMY_A, DUMMY_B, Fuser, commutativity_gap, fuse_pair
from hgfusion.metrics import ssim
from hgfusion.network import HourglassConfig, Model
from hgfusion.training import Schedule, smooth, train

train_samples = procedural_samples(1, 60, 32, 32, 3)
test_samples = procedural_samples(2, 20, 32, 32, 3)
synth = SynthesisConfig(crop=32)

model = Model.create(HourglassConfig(depth=2, base_channels=16, head="seg"), seed=0)

# Each minibatch holds 3 examples plus their reversed pairs (6 forwards).
# The learning rate is far above the full-scale 1e-5 so that 300 steps are enough.
schedule = Schedule(epochs=1000, batch_size=3, lr=2e-3, max_iterations=300, synthesis=synth)
t0 = time.perf_counter()
report = train(model, train_samples, schedule, loss="bce")
print(f"trained {report.iterations} steps in {time.perf_counter() - t0:.0f} s")
print("BCE, means of 20-step windows:", np.round(smooth(report.iteration_losses), 3))

fuser = Fuser.hf_seg(model)
rows = []
for i, s in enumerate(test_samples):
    ex = synthesize_example(s, synth, example_rng(99, i))
    rows.append([ssim(fuse_pair(f, ex.pair), ex.truth) for f in (fuser, DUMMY_A, DUMMY_B, AVERAGE)])
    if i == 0:
        print("commutativity gap on the first held-out pair:", commutativity_gap(fuser, ex.pair))
rows = np.array(rows)
for name, col in zip(("hf_seg", "dummy_a", "dummy_b", "average"), rows.T):
    print(f"{name:8s} mean SSIM to truth {col.mean():.4f}")
