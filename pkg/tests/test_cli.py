import csv
import json
import os
import subprocess
import sys

import numpy as np
import pytest

from hgfusion import fileio
from hgfusion.cli import main
from hgfusion.network import HourglassConfig, Model

SMALL = ["--depth", "2", "--channels", "4"]


def _files(d):
    return {p: (d / p).read_bytes() for p in sorted(os.listdir(d))}


@pytest.fixture(scope="module")
def synth_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("synth")
    assert main(["synth", "--count", "5", "--width", "24", "--height", "24", "--seed", "4", "--out", str(out)]) == 0
    return out


class TestSynth:
    def test_file_count(self, synth_dir):
        names = os.listdir(synth_dir)
        assert len([n for n in names if n.endswith(".png")]) == 20
        recs = [json.loads(line) for line in (synth_dir / "manifest.jsonl").read_text().splitlines()]
        assert len(recs) == 5
        for r in recs:
            for k in ("source_a", "source_b", "truth", "target"):
                assert (synth_dir / r[k]).exists()

    def test_empty(self, tmp_path):
        assert main(["synth", "--count", "0", "--out", str(tmp_path)]) == 0
        assert (tmp_path / "manifest.jsonl").read_text() == ""

    def test_deterministic(self, synth_dir, tmp_path):
        main(["synth", "--count", "5", "--width", "24", "--height", "24", "--seed", "4", "--out", str(tmp_path)])
        assert _files(tmp_path) == _files(synth_dir)

    def test_invalid_config(self, tmp_path):
        assert main(["synth", "--count", "1", "--sigma-low", "0", "--out", str(tmp_path)]) == 1

    def test_unwritable_output(self, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("x")
        assert main(["synth", "--count", "1", "--out", str(blocker / "sub")]) == 2

    def test_from_image_dirs(self, tmp_path):
        from PIL import Image

        img, mask = tmp_path / "img", tmp_path / "mask"
        img.mkdir()
        mask.mkdir()
        Image.fromarray(np.full((8, 8, 3), 100, np.uint8)).save(img / "a.png")
        m = np.zeros((8, 8), np.uint8)
        m[2:5, 2:5] = 1
        Image.fromarray(m).save(mask / "a.png")
        out = tmp_path / "out"
        assert main(["synth", "--images", str(img), "--masks", str(mask), "--out", str(out)]) == 0
        assert len((out / "manifest.jsonl").read_text().splitlines()) == 1


class TestConfigFile:
    def test_unknown_key(self, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("count = 1\nfoo = 2\n")
        assert main(["synth", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 1

    def test_flags_override_file(self, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("# comment\ncount = 3\nwidth = 16\nheight = 16\n")
        assert main(["synth", "--config", str(cfg), "--count", "2", "--out", str(tmp_path / "o")]) == 0
        assert len((tmp_path / "o" / "manifest.jsonl").read_text().splitlines()) == 2
        assert fileio.load_png(tmp_path / "o" / "00000_truth.png").shape == (16, 16, 3)

    def test_bad_value(self, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("count = many\n")
        assert main(["synth", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 1

    def test_missing_file(self, tmp_path):
        assert main(["synth", "--config", str(tmp_path / "none.cfg")]) == 2


class TestTrain:
    def test_zero_epochs(self, tmp_path):
        assert main(["train", "--epochs", "0", *SMALL, "--out", str(tmp_path)]) == 0
        assert os.listdir(tmp_path) == ["model.ckpt"]
        m = Model.load(tmp_path / "model.ckpt")
        ref = Model.create(HourglassConfig(depth=2, base_channels=4), seed=0)
        np.testing.assert_array_equal(m.params["head.w"], ref.params["head.w"])

    def test_seg_with_nps(self, tmp_path):
        assert main(["train", "--head", "seg", "--loss", "nps", "--out", str(tmp_path)]) == 1

    def test_reg_trace(self, tmp_path):
        argv = ["train", "--head", "reg", "--loss", "nps", "--alpha", "6", *SMALL, "--epochs", "3",
                "--count", "4", "--width", "16", "--height", "16", "--crop", "16", "--lr", "1e-3",
                "--checkpoint-every", "2", "--out", str(tmp_path)]
        assert main(argv) == 0
        rows = list(csv.reader(open(tmp_path / "loss_trace.csv")))
        assert rows[0] == ["epoch", "mean_loss"]
        assert [r[0] for r in rows[1:]] == ["1", "2", "3"]
        assert all(np.isfinite(float(r[1])) for r in rows[1:])
        assert (tmp_path / "epoch_0002.ckpt").exists()
        assert Model.load(tmp_path / "model.ckpt").config.head == "reg"

    def test_from_synth_manifest(self, synth_dir, tmp_path):
        argv = ["train", "--manifest", str(synth_dir / "manifest.jsonl"), *SMALL, "--epochs", "1",
                "--crop", "24", "--out", str(tmp_path)]
        assert main(argv) == 0

    def test_empty_dataset(self, tmp_path):
        assert main(["train", "--count", "0", "--epochs", "1", *SMALL, "--out", str(tmp_path)]) == 1

    def test_nan_abort(self, tmp_path):
        assert main(["train", "--lr", "nan", "--epochs", "2", "--count", "3", "--width", "16",
                     "--height", "16", *SMALL, "--out", str(tmp_path)]) == 3


class TestFuse:
    def test_dummy_a(self, synth_dir, tmp_path):
        a, b = synth_dir / "00000_source_a.png", synth_dir / "00000_source_b.png"
        assert main(["fuse", str(a), str(b), "--strategy", "dummy-a", "--out", str(tmp_path)]) == 0
        np.testing.assert_array_equal(fileio.load_png(tmp_path / "fused.png"), fileio.load_png(a))

    def test_burst_of_three(self, synth_dir, tmp_path):
        frames = [str(synth_dir / f"0000{i}_source_a.png") for i in range(3)]
        assert main(["fuse", *frames, "--strategy", "average", "--out", str(tmp_path)]) == 0
        assert os.listdir(tmp_path) == ["fused.png"]

    def test_seg_focus_map(self, synth_dir, tmp_path):
        ckpt = tmp_path / "m.ckpt"
        Model.create(HourglassConfig(depth=2, base_channels=4), seed=0).save(ckpt)
        a, b = synth_dir / "00000_source_a.png", synth_dir / "00000_source_b.png"
        out = tmp_path / "o"
        assert main(["fuse", str(a), str(b), "--checkpoint", str(ckpt), "--out", str(out)]) == 0
        assert sorted(os.listdir(out)) == ["focus_map.png", "fused.png"]

    def test_near_reg(self, synth_dir, tmp_path):
        ckpt = tmp_path / "m.ckpt"
        Model.create(HourglassConfig(depth=2, base_channels=4, head="reg"), seed=0).save(ckpt)
        a, b = synth_dir / "00001_source_a.png", synth_dir / "00001_source_b.png"
        assert main(["fuse", str(a), str(b), "--checkpoint", str(ckpt), "--near", "--out", str(tmp_path)]) == 0
        out = fileio.load_png(tmp_path / "fused.png")
        xa, xb = fileio.load_png(a), fileio.load_png(b)
        assert np.all(np.all(out == xa, -1) | np.all(out == xb, -1))

    def test_dim_mismatch(self, synth_dir, tmp_path):
        small = tmp_path / "small.png"
        fileio.save_png(small, np.zeros((8, 8, 3)))
        assert main(["fuse", str(synth_dir / "00000_source_a.png"), str(small), "--strategy", "average",
                     "--out", str(tmp_path / "o")]) == 1

    def test_bad_checkpoint(self, synth_dir, tmp_path):
        bad = tmp_path / "bad.ckpt"
        bad.write_bytes(b"MFHG1\x02\x00")
        a, b = synth_dir / "00000_source_a.png", synth_dir / "00000_source_b.png"
        assert main(["fuse", str(a), str(b), "--checkpoint", str(bad), "--out", str(tmp_path)]) == 2

    def test_inputs_untouched(self, synth_dir, tmp_path):
        a, b = synth_dir / "00002_source_a.png", synth_dir / "00002_source_b.png"
        before = a.read_bytes(), b.read_bytes()
        main(["fuse", str(a), str(b), "--strategy", "average", "--out", str(tmp_path)])
        assert (a.read_bytes(), b.read_bytes()) == before

    def test_one_input(self, synth_dir, tmp_path):
        assert main(["fuse", str(synth_dir / "00000_source_a.png"), "--strategy", "average",
                     "--out", str(tmp_path)]) == 1


def _eval_manifest(path, synth_dir, n, fused="truth", reference=True):
    with open(path, "w") as fh:
        for i in range(n):
            rec = {"id": i, "source_a": str(synth_dir / f"{i:05d}_source_a.png"),
                   "source_b": str(synth_dir / f"{i:05d}_source_b.png"),
                   "fused": str(synth_dir / f"{i:05d}_{fused}.png")}
            if reference:
                rec["reference"] = str(synth_dir / f"{i:05d}_truth.png")
            fh.write(json.dumps(rec) + "\n")


class TestEval:
    def test_reference_equals_fused(self, synth_dir, tmp_path):
        man = tmp_path / "m.jsonl"
        _eval_manifest(man, synth_dir, 3)
        assert main(["eval", "--manifest", str(man), "--out", str(tmp_path / "o")]) == 0
        rows = list(csv.DictReader(open(tmp_path / "o" / "metrics.csv")))
        assert len(rows) == 3
        assert all(abs(float(r["ssim"]) - 1.0) <= 1e-9 for r in rows)
        summary = list(csv.DictReader(open(tmp_path / "o" / "summary.csv")))
        assert [r["metric"] for r in summary][0] == "ssim"

    def test_no_reference_leaves_ssim_empty(self, synth_dir, tmp_path):
        man = tmp_path / "m.jsonl"
        _eval_manifest(man, synth_dir, 2, reference=False)
        assert main(["eval", "--manifest", str(man), "--out", str(tmp_path / "o")]) == 0
        rows = list(csv.DictReader(open(tmp_path / "o" / "metrics.csv")))
        assert all(r["ssim"] == "" for r in rows)

    def test_empty_manifest(self, tmp_path):
        man = tmp_path / "m.jsonl"
        man.write_text("")
        assert main(["eval", "--manifest", str(man), "--out", str(tmp_path / "o")]) == 0
        assert (tmp_path / "o" / "metrics.csv").read_text().strip() == "pair_id,fuser,ssim,q_mi,q_te,q_ncie,q_g,q_s"

    def test_missing_files(self, synth_dir, tmp_path, capsys):
        man = tmp_path / "m.jsonl"
        _eval_manifest(man, synth_dir, 1, fused="nothing")
        assert main(["eval", "--manifest", str(man), "--out", str(tmp_path / "o")]) == 1
        assert "00000_nothing.png" in capsys.readouterr().err

    def test_bias_study(self, synth_dir, tmp_path):
        man = tmp_path / "m.jsonl"
        _eval_manifest(man, synth_dir, 3)
        assert main(["eval", "--manifest", str(man), "--bias-study", "--out", str(tmp_path / "o")]) == 0
        rows = list(csv.DictReader(open(tmp_path / "o" / "bias.csv")))
        assert len(rows) == 9
        assert {r["fuser"] for r in rows} == {"dummy_a", "dummy_b", "average"}


class TestBench:
    def test_one_row(self, tmp_path):
        assert main(["bench", *SMALL, "--sizes", "16", "--repeat", "1", "--out", str(tmp_path)]) == 0
        rows = list(csv.reader(open(tmp_path / "bench.csv")))
        assert len(rows) == 2 and rows[1][0] == "16"
        assert float(rows[1][1]) > 0

    def test_larger_is_slower(self, tmp_path):
        assert main(["bench", *SMALL, "--sizes", "130,520", "--repeat", "2", "--out", str(tmp_path)]) == 0
        rows = list(csv.DictReader(open(tmp_path / "bench.csv")))
        t = {int(r["size"]): float(r["mean_seconds"]) for r in rows}
        assert t[520] >= t[130] > 0

    def test_checkpoint(self, tmp_path):
        ckpt = tmp_path / "m.ckpt"
        Model.create(HourglassConfig(depth=2, base_channels=4, head="reg")).save(ckpt)
        assert main(["bench", "--checkpoint", str(ckpt), "--near", "--sizes", "8", "--repeat", "1",
                     "--out", str(tmp_path / "o")]) == 0

    def test_bad_sizes(self, tmp_path):
        assert main(["bench", "--sizes", "a,b", "--out", str(tmp_path)]) == 1


def test_module_entry_point(tmp_path):
    res = subprocess.run(
        [sys.executable, "-m", "hgfusion", "synth", "--count", "0", "--out", str(tmp_path)],
        capture_output=True,
    )
    assert res.returncode == 0
