"""Image files: 8-bit PNG and the lossless ``MFIMG`` raw format.

The raw format is an ASCII header ``"MFIMG h w c\\n"`` followed by
``h*w*c`` little-endian float32 values, row-major, channel-last.
"""

import os

import numpy as np
from PIL import Image as PILImage

from .imaging import as_image

RAW_MAGIC = b"MFIMG"


class ImageFormatError(ValueError):
    pass


def load_png(path):
    try:
        with PILImage.open(path) as im:
            im.load()
            if im.mode in ("L", "I;16", "I", "1"):
                arr = np.asarray(im.convert("L"))
            else:
                arr = np.asarray(im.convert("RGB"))
    except (OSError, SyntaxError) as exc:
        raise ImageFormatError(f"{path}: unreadable PNG ({exc})") from exc
    return as_image(arr.astype(np.float64) / 255.0)


def load_label_png(path):
    """Integer label map from an 8-bit single-channel PNG."""
    try:
        with PILImage.open(path) as im:
            im.load()
            if im.mode not in ("L", "P"):
                im = im.convert("L")
            arr = np.asarray(im)
    except (OSError, SyntaxError) as exc:
        raise ImageFormatError(f"{path}: unreadable PNG ({exc})") from exc
    return arr.astype(np.int64)


def to_uint8(image):
    img = np.asarray(image, dtype=np.float64)
    return np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)


def save_png(path, image):
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 3 and img.shape[2] == 1:
        img = img[:, :, 0]
    PILImage.fromarray(to_uint8(img)).save(path, format="PNG")


def save_raw(path, image):
    img = as_image(image)
    h, w, c = img.shape
    with open(path, "wb") as fh:
        fh.write(b"%s %d %d %d\n" % (RAW_MAGIC, h, w, c))
        fh.write(img.astype("<f4").tobytes(order="C"))


def load_raw(path):
    with open(path, "rb") as fh:
        header = fh.readline()
        payload = fh.read()
    parts = header.split()
    if len(parts) != 4 or parts[0] != RAW_MAGIC:
        raise ImageFormatError(f"{path}: bad raw header {header[:32]!r}")
    try:
        h, w, c = (int(p) for p in parts[1:])
    except ValueError as exc:
        raise ImageFormatError(f"{path}: bad raw header {header[:32]!r}") from exc
    if len(payload) != h * w * c * 4:
        raise ImageFormatError(
            f"{path}: expected {h * w * c * 4} payload bytes, found {len(payload)}"
        )
    arr = np.frombuffer(payload, dtype="<f4").reshape(h, w, c)
    return arr.astype(np.float64)


def load_image(path):
    """Dispatch on extension: ``.png`` or the raw format otherwise."""
    if os.path.splitext(str(path))[1].lower() == ".png":
        return load_png(path)
    return load_raw(path)


def save_image(path, image):
    if os.path.splitext(str(path))[1].lower() == ".png":
        save_png(path, image)
    else:
        save_raw(path, image)
