"""Inference-side fusion rules, burst folding and baseline fusers."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .imaging import as_image, clamp
from .network import Model, forward

KINDS = ("hf_seg", "hf_reg", "dummy_a", "dummy_b", "average")


def _pair(pair):
    x_a, x_b = (as_image(s) for s in pair)
    if x_a.shape != x_b.shape:
        raise ValueError(f"source shapes differ: {x_a.shape} vs {x_b.shape}")
    return x_a, x_b


def weighted_fuse(pair, z):
    """``z0 * x_A + z1 * x_B`` per pixel and channel."""
    x_a, x_b = _pair(pair)
    z = np.asarray(z, dtype=np.float64)
    if z.shape != x_a.shape[:2] + (2,):
        raise ValueError(f"focus pair shape {z.shape} does not match sources {x_a.shape}")
    return z[..., :1] * x_a + z[..., 1:] * x_b


def nearest_source(fused, pair):
    """Snap each pixel to whichever source is closer in RGB; ties go to B."""
    x_a, x_b = _pair(pair)
    fused = np.asarray(fused, dtype=np.float64)
    if fused.shape != x_a.shape:
        raise ValueError(f"fused shape {fused.shape} does not match sources {x_a.shape}")
    d_a = ((fused - x_a) ** 2).sum(axis=-1)
    d_b = ((fused - x_b) ** 2).sum(axis=-1)
    return np.where((d_a < d_b)[..., None], x_a, x_b)


@dataclass(frozen=True)
class Fuser:
    kind: str
    model: Model | None = None
    near: bool = False

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown fuser kind {self.kind!r}")
        if self.kind.startswith("hf_"):
            head = self.kind[3:]
            if self.model is None:
                raise ValueError(f"{self.kind} needs a model")
            if self.model.config.head != head:
                raise ValueError(f"{self.kind} needs a {head} model, got {self.model.config.head}")

    @property
    def name(self):
        return self.kind + ("+near" if self.near else "")

    @classmethod
    def hf_seg(cls, model):
        return cls("hf_seg", model)

    @classmethod
    def hf_reg(cls, model, near=False):
        return cls("hf_reg", model, near)


DUMMY_A = Fuser("dummy_a")
DUMMY_B = Fuser("dummy_b")
AVERAGE = Fuser("average")


def focus_map(fuser, pair):
    """Per-pixel probability of taking source A (seg fusers only)."""
    if fuser.kind != "hf_seg":
        raise ValueError("only hf_seg fusers produce a focus map")
    z, _ = forward(fuser.model.params, _pair(pair), fuser.model.config)
    return z[..., 0]


def fuse_pair(fuser, pair):
    x_a, x_b = _pair(pair)
    if fuser.kind == "dummy_a":
        return x_a.copy()
    if fuser.kind == "dummy_b":
        return x_b.copy()
    if fuser.kind == "average":
        return 0.5 * (x_a + x_b)
    out, _ = forward(fuser.model.params, (x_a, x_b), fuser.model.config)
    if fuser.kind == "hf_seg":
        return weighted_fuse((x_a, x_b), out)
    if fuser.near:
        return nearest_source(out, (x_a, x_b))
    return clamp(out)


def fuse_burst(fuser, burst):
    """Left fold: ``f(...f(f(x0, x1), x2)..., xn)``."""
    frames = list(burst)
    if len(frames) < 2:
        raise ValueError("a burst needs at least two frames")
    shape = as_image(frames[0]).shape
    for i, fr in enumerate(frames[1:], 1):
        if as_image(fr).shape != shape:
            raise ValueError(f"frame {i} has shape {as_image(fr).shape}, expected {shape}")
    acc = frames[0]
    for fr in frames[1:]:
        acc = fuse_pair(fuser, (acc, fr))
    return acc


def commutativity_gap(fuser, pair):
    """MSE between the fusion of a pair and of the reversed pair."""
    x_a, x_b = _pair(pair)
    d = fuse_pair(fuser, (x_a, x_b)) - fuse_pair(fuser, (x_b, x_a))
    return float((d * d).mean())
