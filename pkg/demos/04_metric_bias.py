"""Why fusion metrics can prefer a fuser that does nothing.

A "dummy" fuser returns one source unchanged. Mutual-information style
metrics reward similarity to the sources, so the dummy often outscores a
plain average even though its mean SSIM to the true all-in-focus image is
far lower. SSIM still favours a dummy on pairs where that source happens to
be sharp over most of the frame.

Run with ``python3 demos/04_metric_bias.py``.
"""
import numpy as np

from hgfusion.dataset import SynthesisConfig, example_rng, procedural_samples, synthesize_example
from hgfusion.fusion import AVERAGE, DUMMY_A, DUMMY_B
from hgfusion.metrics import METRICS, bias_study

cfg = SynthesisConfig()
pairs, truths = [], []
for i, s in enumerate(procedural_samples(5, 10, 64, 64, 3)):
    ex = synthesize_example(s, cfg, example_rng(5, i))
    pairs.append(ex.pair)
    truths.append(ex.truth)

table = bias_study(pairs, [DUMMY_A, DUMMY_B, AVERAGE], truths)

print("mean score per fuser")
print("fuser    " + " ".join(f"{m:>8s}" for m in METRICS))
for name in ("dummy_a", "dummy_b", "average"):
    rows = [r for r in table.rows if r["fuser"] == name]
    print(f"{name:8s} " + " ".join(f"{np.mean([r[m] for r in rows]):8.4f}" for m in METRICS))

print()
for metric, hits in sorted(table.flagged.items()):
    pairs_hit = sorted({pid for pid, _ in hits})
    print(f"{metric}: a dummy beats the average on {len(pairs_hit)}/10 pairs")
