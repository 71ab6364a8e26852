"""Synthetic multi-focus training data.

A training example is built from a sharp image and its segmentation mask:
a random subset of the segmented objects is chosen, the whole frame is
blurred once with a random Gaussian, and the two sources are composited so
that each object is sharp in exactly one of them.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from . import fileio
from .imaging import as_image, blur, clamp, composite_pair, gaussian_kernel


class DatasetError(ValueError):
    pass


@dataclass
class SegmentedSample:
    image: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        self.image = as_image(self.image)
        self.mask = np.asarray(self.mask, dtype=np.int64)
        if self.mask.shape != self.image.shape[:2]:
            raise DatasetError(
                f"mask shape {self.mask.shape} does not match image {self.image.shape[:2]}"
            )
        if self.mask.min() < 0:
            raise DatasetError("mask labels must be non-negative")

    @property
    def n_objects(self):
        """gamma, the largest label; label 0 is background."""
        return int(self.mask.max())


@dataclass
class TrainingExample:
    pair: tuple
    truth: np.ndarray
    target: np.ndarray  # 1 where source A is the sharp one
    sigma: float


@dataclass
class SynthesisConfig:
    sigma_low: float = 1.0
    sigma_high: float = 5.0
    noise_std_high: float = 0.0
    crop: int = 400
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.sigma_low <= self.sigma_high:
            raise ValueError(
                f"need 0 < sigma_low <= sigma_high, got {self.sigma_low}, {self.sigma_high}"
            )
        if self.noise_std_high < 0:
            raise ValueError("noise_std_high must be >= 0")
        if self.crop < 1:
            raise ValueError("crop must be positive")


@dataclass
class Batch:
    """Stacked entries ready for the network; entry ``2i+1`` is entry ``2i`` reversed."""

    x_a: np.ndarray  # (N, H, W, C)
    x_b: np.ndarray
    truth: np.ndarray
    target: np.ndarray  # (N, H, W)
    sigmas: list = field(default_factory=list)

    def __len__(self):
        return self.x_a.shape[0]


def example_rng(seed, *stream):
    """Independent generator for one (seed, epoch, index, ...) stream."""
    return np.random.default_rng([int(seed), *(int(s) for s in stream)])


def select_focus_subset(sample, rng, subset=None):
    """Binary map of the pixels whose label falls in a random object subset.

    The subset is uniform over the nonempty proper subsets of the labels
    present in the mask. Pass ``subset`` to force a choice.
    """
    labels = np.unique(sample.mask)
    if subset is None:
        if sample.n_objects < 1 or labels.size < 2:
            raise DatasetError("mask needs at least two distinct labels")
        while True:
            keep = rng.integers(0, 2, size=labels.size).astype(bool)
            if keep.any() and not keep.all():
                break
        subset = labels[keep]
    return np.isin(sample.mask, np.asarray(list(subset))).astype(np.float64)


def synthesize_example(sample, cfg, rng, subset=None):
    g = select_focus_subset(sample, rng, subset)
    sigma = float(rng.uniform(cfg.sigma_low, cfg.sigma_high))
    y = sample.image
    y_blur = blur(y, gaussian_kernel(sigma))
    x_a, x_b = composite_pair(y, y_blur, g)
    if cfg.noise_std_high > 0:
        std = rng.uniform(0.0, cfg.noise_std_high)
        x_a = clamp(x_a + rng.normal(0.0, std, size=x_a.shape))
        x_b = clamp(x_b + rng.normal(0.0, std, size=x_b.shape))
    return TrainingExample(pair=(x_a, x_b), truth=y, target=1.0 - g, sigma=sigma)


def mirror(example):
    x_a, x_b = example.pair
    return TrainingExample(
        pair=(x_a[:, ::-1].copy(), x_b[:, ::-1].copy()),
        truth=example.truth[:, ::-1].copy(),
        target=example.target[:, ::-1].copy(),
        sigma=example.sigma,
    )


def crop(example, top, left, size):
    x_a, x_b = example.pair
    win = (slice(top, top + size), slice(left, left + size))
    return TrainingExample(
        pair=(x_a[win].copy(), x_b[win].copy()),
        truth=example.truth[win].copy(),
        target=example.target[win].copy(),
        sigma=example.sigma,
    )


def augment(example, cfg, rng):
    """Random square crop (skipped when the image is smaller) and random mirroring."""
    h, w = example.truth.shape[:2]
    if h >= cfg.crop and w >= cfg.crop:
        top = int(rng.integers(0, h - cfg.crop + 1))
        left = int(rng.integers(0, w - cfg.crop + 1))
        example = crop(example, top, left, cfg.crop)
    if rng.random() < 0.5:
        example = mirror(example)
    return example


def make_commutative_batch(examples, commutative=True):
    """Stack examples, each followed by its reversed pair with inverted target.

    With ``commutative=False`` only the given orientation is kept, which is
    useful as an ablation.
    """
    if not examples:
        raise ValueError("cannot build a batch from no examples")
    xa, xb, ys, ts, sig = [], [], [], [], []
    for ex in examples:
        a, b = ex.pair
        xa.append(a)
        xb.append(b)
        ys.append(ex.truth)
        ts.append(ex.target)
        sig.append(ex.sigma)
        if commutative:
            xa.append(b)
            xb.append(a)
            ys.append(ex.truth)
            ts.append(1.0 - ex.target)
            sig.append(ex.sigma)
    return Batch(np.stack(xa), np.stack(xb), np.stack(ys), np.stack(ts), sig)


# -- procedural scenes -------------------------------------------------------


def _grating(h, w, rng, period_range, amplitude):
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    theta = rng.uniform(0, np.pi)
    period = rng.uniform(*period_range)
    phase = rng.uniform(0, 2 * np.pi)
    wave = np.sin(2 * np.pi * (xx * np.cos(theta) + yy * np.sin(theta)) / period + phase)
    tint = rng.uniform(0.5, 1.0, size=3)
    return amplitude * wave[:, :, None] * tint


def _texture(h, w, rng, period_range):
    base = rng.uniform(0.25, 0.75, size=3)
    tex = np.broadcast_to(base, (h, w, 3)).copy()
    for _ in range(2):
        tex += _grating(h, w, rng, period_range, rng.uniform(0.1, 0.22))
    tex += rng.normal(0.0, 0.03, size=(h, w, 3))
    return tex


def _shape_mask(h, w, rng):
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    cy, cx = rng.uniform(0.15, 0.85) * h, rng.uniform(0.15, 0.85) * w
    radius = rng.uniform(0.15, 0.35) * min(h, w)
    if rng.random() < 0.5:
        return (yy - cy) ** 2 + (xx - cx) ** 2 <= radius**2
    # convex polygon: sorted angles on a circle, inside = left of every edge
    k = int(rng.integers(3, 7))
    ang = np.sort(rng.uniform(0, 2 * np.pi, size=k))
    vy, vx = cy + radius * np.sin(ang), cx + radius * np.cos(ang)
    inside = np.ones((h, w), dtype=bool)
    for i in range(k):
        j = (i + 1) % k
        cross = (vx[j] - vx[i]) * (yy - vy[i]) - (vy[j] - vy[i]) * (xx - vx[i])
        inside &= cross >= 0
    return inside


def generate_procedural_sample(width, height, n_objects, rng, max_tries=1000):
    """Textured background with ``n_objects`` textured discs/polygons.

    Shapes are redrawn until every label covers at least one pixel.
    """
    if n_objects < 1:
        raise ValueError("n_objects must be >= 1")
    for _ in range(max_tries):
        image = _texture(height, width, rng, (4.0, 10.0))
        yy, xx = np.mgrid[0:height, 0:width]
        ramp = rng.uniform(-0.15, 0.15, size=(2, 3))
        image += (yy / max(height, 1))[:, :, None] * ramp[0] + (xx / max(width, 1))[:, :, None] * ramp[1]
        mask = np.zeros((height, width), dtype=np.int64)
        for label in range(1, n_objects + 1):
            region = _shape_mask(height, width, rng)
            mask[region] = label
            image[region] = _texture(height, width, rng, (2.5, 7.0))[region]
        if np.unique(mask).size == n_objects + 1:
            return SegmentedSample(clamp(image), mask)
    raise DatasetError(f"could not place {n_objects} visible objects in {max_tries} tries")


def procedural_samples(seed, count, width, height, n_objects):
    return [
        generate_procedural_sample(width, height, n_objects, example_rng(seed, i))
        for i in range(count)
    ]


# -- files -------------------------------------------------------------------


def load_segmented_samples(image_dir, mask_dir):
    """Pair ``image_dir/NAME.png`` with ``mask_dir/NAME.png``, sorted by name."""
    images = {os.path.splitext(f)[0]: f for f in os.listdir(image_dir) if f.lower().endswith(".png")}
    masks = {os.path.splitext(f)[0]: f for f in os.listdir(mask_dir) if f.lower().endswith(".png")}
    missing = sorted(set(images) ^ set(masks))
    if missing:
        name = missing[0]
        where = mask_dir if name in images else image_dir
        raise DatasetError(f"{name}.png has no counterpart in {where}")
    samples = []
    for name in sorted(images):
        img_path = os.path.join(image_dir, images[name])
        mask_path = os.path.join(mask_dir, masks[name])
        samples.append(_load_pair(img_path, mask_path))
    return samples


def _load_pair(img_path, mask_path):
    image = fileio.load_png(img_path)
    mask = fileio.load_label_png(mask_path)
    if mask.shape != image.shape[:2]:
        raise DatasetError(
            f"{mask_path}: mask is {mask.shape[1]}x{mask.shape[0]}, "
            f"image is {image.shape[1]}x{image.shape[0]}"
        )
    if image.shape[2] == 1:
        image = np.repeat(image, 3, axis=2)
    return SegmentedSample(image, mask)


def load_manifest(path):
    """Read a JSON-lines manifest of sample records.

    Each line is either ``{"image_path", "mask_path"}`` (relative paths are
    resolved against the manifest's directory) or a procedural description
    ``{"seed", "count", "width", "height", "n_objects"}``.
    """
    base = os.path.dirname(os.path.abspath(path))
    samples = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetError(f"{path}:{lineno}: {exc}") from exc
            if "image_path" in rec:
                samples.append(
                    _load_pair(
                        os.path.join(base, rec["image_path"]),
                        os.path.join(base, rec["mask_path"]),
                    )
                )
            elif "count" in rec:
                samples.extend(
                    procedural_samples(
                        rec.get("seed", 0), rec["count"], rec["width"], rec["height"], rec["n_objects"]
                    )
                )
            else:
                raise DatasetError(f"{path}:{lineno}: unrecognized record {sorted(rec)}")
    return samples


def write_manifest(path, records):
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
