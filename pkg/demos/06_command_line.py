"""The file-based pipeline: synthesize, train, fuse, evaluate, benchmark.

The same steps from a shell::

    hgfusion synth --count 12 --width 32 --height 32 --out work/data
    hgfusion train --manifest work/data/manifest.jsonl --depth 2 --channels 8 \\
        --lr 1e-3 --iterations 60 --crop 32 --out work/model
    hgfusion fuse work/data/00000_source_a.png work/data/00000_source_b.png \\
        --checkpoint work/model/model.ckpt --out work/fused

Run with ``python3 demos/06_command_line.py [WORK_DIR]``.
"""
import json
import os
import sys
import tempfile

from hgfusion.cli import main

work = sys.argv[1] if len(sys.argv) > 1 else tempfile.mkdtemp(prefix="hgfusion-cli-")
data, model, fused, evald, bench = (os.path.join(work, d) for d in ("data", "model", "fused", "eval", "bench"))


def run(*argv):
    code = main(list(argv))
    print(f"hgfusion {argv[0]} -> exit {code}")
    assert code == 0


run("synth", "--seed", "1", "--count", "12", "--width", "32", "--height", "32", "--out", data)
run("train", "--seed", "1", "--manifest", os.path.join(data, "manifest.jsonl"), "--depth", "2",
    "--channels", "8", "--lr", "1e-3", "--iterations", "60", "--crop", "32", "--checkpoint-every", "5",
    "--out", model)
run("fuse", os.path.join(data, "00000_source_a.png"), os.path.join(data, "00000_source_b.png"),
    "--checkpoint", os.path.join(model, "model.ckpt"), "--out", fused)

# Evaluate the fused image against the synthetic truth.
manifest = os.path.join(work, "eval.jsonl")
with open(manifest, "w") as fh:
    fh.write(json.dumps({
        "id": 0,
        "source_a": os.path.join(data, "00000_source_a.png"),
        "source_b": os.path.join(data, "00000_source_b.png"),
        "fused": os.path.join(fused, "fused.png"),
        "reference": os.path.join(data, "00000_truth.png"),
    }) + "\n")
run("eval", "--manifest", manifest, "--out", evald)
run("bench", "--checkpoint", os.path.join(model, "model.ckpt"), "--sizes", "64,128", "--repeat", "2", "--out", bench)
print("artifacts in", work)
