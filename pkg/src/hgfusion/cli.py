"""Command line: ``hgfusion {synth,train,fuse,eval,bench}``.

Exit codes: 0 success, 1 configuration or input error, 2 I/O error,
3 numerical abort. Options may also come from a ``key = value`` file given
with ``--config``; flags given on the command line win.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time

import numpy as np

from . import dataset, fileio, metrics
from .fusion import AVERAGE, DUMMY_A, DUMMY_B, Fuser, focus_map, fuse_burst, fuse_pair
from .network import CheckpointError, HourglassConfig, Model
from .training import Schedule, TrainingAborted, check_loss_for_head, train

log = logging.getLogger("hgfusion")

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC = 0, 1, 2, 3


class CLIError(Exception):
    def __init__(self, message, code=EXIT_CONFIG):
        super().__init__(message)
        self.code = code


# option name -> (type, default); shared by flags and config files
OPTIONS = {
    "seed": (int, 0),
    "out": (str, "out"),
    "epochs": (int, 1000),
    "batch": (int, 3),
    "lr": (float, 1e-5),
    "alpha": (float, 6.0),
    "depth": (int, 3),
    "channels": (int, 16),
    "head": (str, "seg"),
    "loss": (str, None),
    "near": (bool, False),
    "sizes": (str, "130,260,520"),
    "repeat": (int, 5),
    "iterations": (int, None),
    "checkpoint_every": (int, 20),
    "checkpoint": (str, None),
    "strategy": (str, "model"),
    "manifest": (str, None),
    "images": (str, None),
    "masks": (str, None),
    "count": (int, 0),
    "width": (int, 64),
    "height": (int, 64),
    "objects": (int, 3),
    "sigma_low": (float, 1.0),
    "sigma_high": (float, 5.0),
    "noise": (float, 0.0),
    "crop": (int, 400),
    "bias_study": (bool, False),
    "no_commutative": (bool, False),
}


def _parse_bool(text):
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def read_config_file(path):
    values = {}
    try:
        fh = open(path)
    except OSError as exc:
        raise CLIError(f"cannot read config {path}: {exc}", EXIT_IO) from exc
    with fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise CLIError(f"{path}:{lineno}: expected key = value")
            key, val = (s.strip() for s in line.split("=", 1))
            key = key.replace("-", "_")
            if key not in OPTIONS:
                raise CLIError(f"{path}:{lineno}: unknown key {key!r}")
            typ = OPTIONS[key][0]
            try:
                values[key] = _parse_bool(val) if typ is bool else typ(val)
            except ValueError as exc:
                raise CLIError(f"{path}:{lineno}: {exc}") from exc
    return values


def resolve(args):
    """Merge command-line flags over the config file over the defaults."""
    cfg = read_config_file(args.config) if args.config else {}
    resolved = {}
    for key, (_, default) in OPTIONS.items():
        flag = getattr(args, key, None)
        if flag is not None and flag is not False:
            resolved[key] = flag
        elif key in cfg:
            resolved[key] = cfg[key]
        else:
            resolved[key] = default
    return argparse.Namespace(**resolved, inputs=getattr(args, "inputs", []), command=args.command)


def _mkdir(path):
    try:
        os.makedirs(path, exist_ok=True)
    except OSError as exc:
        raise CLIError(f"cannot create output directory {path}: {exc}", EXIT_IO) from exc
    if not os.access(path, os.W_OK):
        raise CLIError(f"output directory {path} is not writable", EXIT_IO)


def _synthesis_config(opts):
    try:
        return dataset.SynthesisConfig(
            sigma_low=opts.sigma_low,
            sigma_high=opts.sigma_high,
            noise_std_high=opts.noise,
            crop=opts.crop,
            seed=opts.seed,
        )
    except ValueError as exc:
        raise CLIError(str(exc)) from exc


def _load_samples(opts):
    """Segmented samples from a manifest, image/mask directories, or procedurally."""
    try:
        if opts.manifest:
            return dataset.load_manifest(opts.manifest)
        if opts.images or opts.masks:
            if not (opts.images and opts.masks):
                raise CLIError("--images and --masks go together")
            return dataset.load_segmented_samples(opts.images, opts.masks)
        return dataset.procedural_samples(opts.seed, opts.count, opts.width, opts.height, opts.objects)
    except (dataset.DatasetError, fileio.ImageFormatError) as exc:
        raise CLIError(str(exc)) from exc
    except OSError as exc:
        raise CLIError(str(exc), EXIT_IO) from exc


# -- synth -------------------------------------------------------------------


def cmd_synth(opts):
    cfg = _synthesis_config(opts)
    if opts.count < 0:
        raise CLIError("--count must be >= 0")
    samples = _load_samples(opts)
    _mkdir(opts.out)
    records = []
    for i, sample in enumerate(samples):
        ex = dataset.synthesize_example(sample, cfg, dataset.example_rng(opts.seed, i))
        names = {k: f"{i:05d}_{k}.png" for k in ("source_a", "source_b", "truth", "target")}
        try:
            fileio.save_png(os.path.join(opts.out, names["source_a"]), ex.pair[0])
            fileio.save_png(os.path.join(opts.out, names["source_b"]), ex.pair[1])
            fileio.save_png(os.path.join(opts.out, names["truth"]), ex.truth)
            fileio.save_png(os.path.join(opts.out, names["target"]), ex.target)
        except OSError as exc:
            raise CLIError(str(exc), EXIT_IO) from exc
        records.append({"id": i, "sigma": ex.sigma, **names})
    dataset.write_manifest(os.path.join(opts.out, "manifest.jsonl"), records)
    log.info("wrote %d examples to %s", len(records), opts.out)
    return EXIT_OK


def _read_jsonl(path):
    try:
        with open(path) as fh:
            return [json.loads(line) for line in fh if line.strip()]
    except OSError as exc:
        raise CLIError(f"cannot read {path}: {exc}", EXIT_IO) from exc
    except json.JSONDecodeError as exc:
        raise CLIError(f"{path}: {exc}") from exc


def load_examples(manifest):
    """Training examples written by ``synth``."""
    base = os.path.dirname(os.path.abspath(manifest))
    examples = []
    for rec in _read_jsonl(manifest):
        p = {k: os.path.join(base, rec[k]) for k in ("source_a", "source_b", "truth", "target")}
        target = fileio.load_png(p["target"])[:, :, 0]
        examples.append(
            dataset.TrainingExample(
                pair=(fileio.load_png(p["source_a"]), fileio.load_png(p["source_b"])),
                truth=fileio.load_png(p["truth"]),
                target=np.round(target),
                sigma=float(rec.get("sigma", 0.0)),
            )
        )
    return examples


def _is_example_manifest(path):
    recs = _read_jsonl(path)
    return bool(recs) and "source_a" in recs[0]


# -- train -------------------------------------------------------------------


def cmd_train(opts):
    loss = opts.loss or ("bce" if opts.head == "seg" else "nps")
    try:
        config = HourglassConfig(depth=opts.depth, base_channels=opts.channels, head=opts.head)
        check_loss_for_head(opts.head, loss)
    except ValueError as exc:
        raise CLIError(str(exc)) from exc
    if opts.epochs < 0 or opts.batch < 1:
        raise CLIError("--epochs must be >= 0 and --batch >= 1")
    cfg = _synthesis_config(opts)
    if opts.manifest and _is_example_manifest(opts.manifest):
        try:
            data = load_examples(opts.manifest)
        except (KeyError, fileio.ImageFormatError) as exc:
            raise CLIError(f"{opts.manifest}: {exc}") from exc
    else:
        data = _load_samples(opts)
    _mkdir(opts.out)
    model = Model.create(config, seed=opts.seed)
    trace = []
    if opts.epochs > 0:
        if not data:
            raise CLIError("the dataset is empty")
        schedule = Schedule(
            epochs=opts.epochs,
            batch_size=opts.batch,
            lr=opts.lr,
            seed=opts.seed,
            commutative=not opts.no_commutative,
            max_iterations=opts.iterations,
            checkpoint_every=opts.checkpoint_every,
            checkpoint_dir=opts.out,
            synthesis=cfg,
        )
        try:
            report = train(model, data, schedule, loss=loss, alpha=opts.alpha)
        except TrainingAborted as exc:
            print(f"hgfusion train: {exc}", file=sys.stderr)
            return EXIT_NUMERIC
        trace = report.epoch_losses
    model.save(os.path.join(opts.out, "model.ckpt"))
    if opts.epochs == 0:
        return EXIT_OK
    with open(os.path.join(opts.out, "loss_trace.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "mean_loss"])
        for e, v in enumerate(trace, 1):
            w.writerow([e, repr(float(v))])
    return EXIT_OK


# -- fuse --------------------------------------------------------------------

STRATEGIES = {"dummy-a": DUMMY_A, "dummy-b": DUMMY_B, "average": AVERAGE}


def _load_fuser(opts):
    if opts.strategy in STRATEGIES:
        return STRATEGIES[opts.strategy]
    if opts.strategy != "model":
        raise CLIError(f"unknown strategy {opts.strategy!r}")
    if not opts.checkpoint:
        raise CLIError("--checkpoint is required for the model strategy")
    try:
        model = Model.load(opts.checkpoint)
    except (OSError, CheckpointError) as exc:
        raise CLIError(f"bad checkpoint: {exc}", EXIT_IO) from exc
    if model.config.head == "seg":
        return Fuser.hf_seg(model)
    return Fuser.hf_reg(model, near=opts.near)


def _read_images(paths):
    try:
        return [fileio.load_image(p) for p in paths]
    except FileNotFoundError as exc:
        raise CLIError(str(exc)) from exc
    except fileio.ImageFormatError as exc:
        raise CLIError(str(exc)) from exc


def cmd_fuse(opts):
    if len(opts.inputs) < 2:
        raise CLIError("fuse needs at least two input images")
    frames = _read_images(opts.inputs)
    for path, fr in zip(opts.inputs[1:], frames[1:]):
        if fr.shape != frames[0].shape:
            raise CLIError(f"{path}: shape {fr.shape} differs from {frames[0].shape}")
    frames = [np.repeat(f, 3, axis=2) if f.shape[2] == 1 else f for f in frames]
    fuser = _load_fuser(opts)
    _mkdir(opts.out)
    fused = fuse_burst(fuser, frames)
    fileio.save_image(os.path.join(opts.out, "fused.png"), fused)
    if fuser.kind == "hf_seg" and len(frames) == 2:
        fileio.save_png(os.path.join(opts.out, "focus_map.png"), focus_map(fuser, frames))
    return EXIT_OK


# -- eval --------------------------------------------------------------------


def _summary(rows):
    out = []
    for m in metrics.METRICS:
        vals = [r[m] for r in rows if r.get(m) is not None]
        if vals:
            out.append((m, float(np.mean(vals)), float(np.std(vals))))
    return out


def cmd_eval(opts):
    if not opts.manifest:
        raise CLIError("--manifest is required")
    records = _read_jsonl(opts.manifest)
    base = os.path.dirname(os.path.abspath(opts.manifest))
    keys = ("source_a", "source_b") + (() if opts.bias_study else ("fused",))
    missing = []
    for rec in records:
        for k in keys + (("reference",) if "reference" in rec else ()):
            if k not in rec:
                missing.append(f"record {rec.get('id', '?')}: no {k}")
            elif not os.path.exists(os.path.join(base, rec[k])):
                missing.append(os.path.join(base, rec[k]))
    if missing:
        for m in missing:
            print(f"missing: {m}", file=sys.stderr)
        return EXIT_CONFIG
    _mkdir(opts.out)

    def img(rec, key):
        return fileio.load_image(os.path.join(base, rec[key])) if key in rec else None

    if opts.bias_study:
        fusers = [DUMMY_A, DUMMY_B, AVERAGE]
        if opts.checkpoint:
            fusers.append(_load_fuser(opts))
        pairs = [(img(r, "source_a"), img(r, "source_b")) for r in records]
        truths = [img(r, "reference") for r in records]
        if not pairs:
            metrics.write_csv(os.path.join(opts.out, "bias.csv"), [])
            return EXIT_OK
        table = metrics.bias_study(pairs, fusers, truths if all(t is not None for t in truths) else None)
        metrics.write_csv(os.path.join(opts.out, "bias.csv"), table.rows)
        for m, hits in sorted(table.flagged.items()):
            print(f"{m}: a dummy beats average on {len(hits)} pair(s)")
        return EXIT_OK

    rows = []
    for i, rec in enumerate(records):
        rep = metrics.metric_report(img(rec, "source_a"), img(rec, "source_b"), img(rec, "fused"), img(rec, "reference"))
        rows.append({"pair_id": rec.get("id", i), "fuser": rec.get("fuser", ""), **rep})
    metrics.write_csv(os.path.join(opts.out, "metrics.csv"), rows)
    with open(os.path.join(opts.out, "summary.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["metric", "mean", "std"])
        for m, mean, std in _summary(rows):
            w.writerow([m, repr(mean), repr(std)])
            print(f"{m:8s} {mean:.4f} ± {std:.4f}")
    return EXIT_OK


# -- bench -------------------------------------------------------------------


def bench(fuser, sizes, repeat, seed=0):
    """Mean wall-clock seconds of :func:`fuse_pair` per square size, excluding data creation."""
    rng = np.random.default_rng(seed)
    rows = []
    for size in sizes:
        pair = (rng.random((size, size, 3)), rng.random((size, size, 3)))
        times = []
        for _ in range(repeat):
            t0 = time.perf_counter()
            fuse_pair(fuser, pair)
            times.append(time.perf_counter() - t0)
        rows.append((size, float(np.mean(times))))
    return rows


def cmd_bench(opts):
    try:
        sizes = [int(s) for s in opts.sizes.split(",") if s.strip()]
    except ValueError as exc:
        raise CLIError(f"bad --sizes: {exc}") from exc
    if not sizes or opts.repeat < 1:
        raise CLIError("need at least one size and --repeat >= 1")
    if opts.checkpoint or opts.strategy != "model":
        fuser = _load_fuser(opts)
    else:
        try:
            config = HourglassConfig(depth=opts.depth, base_channels=opts.channels, head=opts.head)
        except ValueError as exc:
            raise CLIError(str(exc)) from exc
        model = Model.create(config, seed=opts.seed)
        fuser = Fuser.hf_seg(model) if config.head == "seg" else Fuser.hf_reg(model, opts.near)
    rows = bench(fuser, sizes, opts.repeat, opts.seed)
    _mkdir(opts.out)
    with open(os.path.join(opts.out, "bench.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["size", "mean_seconds"])
        for size, t in rows:
            w.writerow([size, repr(t)])
            print(f"{size}x{size}: {t * 1000:.1f} ms")
    return EXIT_OK


COMMANDS = {"synth": cmd_synth, "train": cmd_train, "fuse": cmd_fuse, "eval": cmd_eval, "bench": cmd_bench}


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH")
    for key, (typ, _) in OPTIONS.items():
        flag = "--" + key.replace("_", "-")
        if typ is bool:
            common.add_argument(flag, action="store_true", default=None)
        else:
            common.add_argument(flag, type=typ, default=None)
    parser = argparse.ArgumentParser(prog="hgfusion", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, parents=[common])
        if name == "fuse":
            p.add_argument("inputs", nargs="*")
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(message)s",
        stream=sys.stderr,
    )
    try:
        opts = resolve(args)
        return COMMANDS[args.command](opts)
    except CLIError as exc:
        print(f"hgfusion {args.command}: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
