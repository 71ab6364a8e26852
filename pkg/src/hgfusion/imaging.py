"""Pixel-level primitives.

Images are plain ``float64`` numpy arrays of shape ``(H, W, C)`` holding
intensities in ``[0, 1]``. Focus maps are ``(H, W)`` arrays. A source pair
is a 2-tuple of images.
"""

import math

import numpy as np
from scipy import ndimage

LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])


def as_image(data, copy=False):
    """Return ``data`` as an ``(H, W, C)`` float64 image.

    2D input is promoted to a single channel. Values are not clamped; use
    :func:`clamp` for that.
    """
    img = np.array(data, dtype=np.float64, copy=copy)
    if img.ndim == 2:
        img = img[:, :, None]
    if img.ndim != 3 or img.shape[2] not in (1, 3):
        raise ValueError(f"expected an (H, W, 1|3) image, got shape {img.shape}")
    if img.shape[0] == 0 or img.shape[1] == 0:
        raise ValueError("image is empty")
    return img


def clamp(image):
    return np.clip(image, 0.0, 1.0)


def gaussian_kernel(sigma):
    """Truncated, renormalized 2D Gaussian of side ``2*ceil(3*sigma) + 1``."""
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    radius = int(math.ceil(3.0 * sigma))
    r = np.arange(-radius, radius + 1, dtype=np.float64)
    g = np.exp(-(r * r) / (2.0 * sigma * sigma))
    k = np.outer(g, g)
    return k / k.sum()


def _check_kernel(kernel):
    kernel = np.asarray(kernel, dtype=np.float64)
    if kernel.ndim != 2 or kernel.shape[0] % 2 == 0 or kernel.shape[1] % 2 == 0:
        raise ValueError(f"kernel must be 2D with odd sides, got shape {kernel.shape}")
    return kernel


def blur(image, kernel):
    """Convolve every channel with ``kernel`` using reflect boundaries.

    Reflection does not repeat the edge pixel (``d c b | a b c d | c b a``),
    the same rule as ``numpy.pad(mode="reflect")``.
    """
    img = as_image(image)
    kernel = _check_kernel(kernel)
    out = np.empty_like(img)
    for c in range(img.shape[2]):
        out[:, :, c] = ndimage.convolve(img[:, :, c], kernel, mode="mirror")
    return out


def _reflect_index(i, n):
    if n == 1:
        return 0
    period = 2 * (n - 1)
    i = i % period
    return i if i < n else period - i


def convolve_naive(image, kernel):
    """Brute-force reference for :func:`blur`, one multiply-add at a time."""
    img = as_image(image)
    kernel = _check_kernel(kernel)
    h, w, ch = img.shape
    kh, kw = kernel.shape
    ry, rx = kh // 2, kw // 2
    out = np.zeros_like(img)
    for c in range(ch):
        for y in range(h):
            for x in range(w):
                acc = 0.0
                for dy in range(-ry, ry + 1):
                    yy = _reflect_index(y - dy, h)
                    for dx in range(-rx, rx + 1):
                        xx = _reflect_index(x - dx, w)
                        acc += kernel[dy + ry, dx + rx] * img[yy, xx, c]
                out[y, x, c] = acc
    return out


def composite_pair(sharp, blurred, g):
    """Build the source pair from a sharp frame, its blurred copy and a binary map.

    Where ``g`` is 1 source A is blurred and source B sharp; where ``g`` is 0
    it is the other way around.
    """
    sharp = as_image(sharp)
    blurred = as_image(blurred)
    g = np.asarray(g, dtype=np.float64)
    if sharp.shape != blurred.shape or g.shape != sharp.shape[:2]:
        raise ValueError(
            f"dimension mismatch: sharp {sharp.shape}, blurred {blurred.shape}, map {g.shape}"
        )
    if not np.all((g == 0.0) | (g == 1.0)):
        raise ValueError("focus map must be binary")
    g3 = g[:, :, None]
    x_a = blurred * g3 + sharp * (1.0 - g3)
    x_b = blurred * (1.0 - g3) + sharp * g3
    return x_a, x_b


def to_grayscale(image):
    img = as_image(image)
    if img.shape[2] != 3:
        raise ValueError(f"expected 3 channels, got {img.shape[2]}")
    return (img @ LUMA_WEIGHTS)[:, :, None]


def gray2d(image):
    """2D luma plane; single-channel images pass through."""
    img = as_image(image)
    if img.shape[2] == 1:
        return img[:, :, 0]
    return to_grayscale(img)[:, :, 0]
