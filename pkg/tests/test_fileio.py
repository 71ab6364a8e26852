import numpy as np
import pytest

from hgfusion.fileio import (
    ImageFormatError,
    load_image,
    load_label_png,
    load_png,
    load_raw,
    save_image,
    save_png,
    save_raw,
)


def test_raw_round_trip_is_float32_exact(tmp_path, rng):
    img = rng.random((5, 7, 3))
    path = tmp_path / "x.raw"
    save_raw(path, img)
    back = load_raw(path)
    np.testing.assert_array_equal(back, img.astype(np.float32).astype(np.float64))
    assert path.read_bytes().startswith(b"MFIMG 5 7 3\n")


def test_raw_truncated(tmp_path, rng):
    path = tmp_path / "x.raw"
    save_raw(path, rng.random((4, 4, 1)))
    path.write_bytes(path.read_bytes()[:-3])
    with pytest.raises(ImageFormatError):
        load_raw(path)


def test_raw_bad_header(tmp_path):
    path = tmp_path / "x.raw"
    path.write_bytes(b"NOPE 1 1 1\n\0\0\0\0")
    with pytest.raises(ImageFormatError):
        load_raw(path)


def test_png_round_trip_8bit(tmp_path, rng):
    img = np.round(rng.random((6, 5, 3)) * 255) / 255
    save_png(tmp_path / "a.png", img)
    np.testing.assert_allclose(load_png(tmp_path / "a.png"), img, atol=1e-12)


def test_png_gray(tmp_path):
    img = np.linspace(0, 1, 12).reshape(3, 4, 1)
    save_image(tmp_path / "g.png", img)
    back = load_image(tmp_path / "g.png")
    assert back.shape == (3, 4, 1)
    np.testing.assert_allclose(back, img, atol=0.5 / 255)


def test_label_png(tmp_path):
    from PIL import Image

    labels = np.array([[0, 1], [4, 2]], dtype=np.uint8)
    Image.fromarray(labels).save(tmp_path / "m.png")
    np.testing.assert_array_equal(load_label_png(tmp_path / "m.png"), labels)


def test_unreadable_png(tmp_path):
    (tmp_path / "bad.png").write_bytes(b"not a png")
    with pytest.raises(ImageFormatError):
        load_png(tmp_path / "bad.png")
