"""Minibatch training with the commutative pair protocol."""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field

import numpy as np

from .dataset import (
    SynthesisConfig,
    TrainingExample,
    augment,
    example_rng,
    make_commutative_batch,
    synthesize_example,
)
from .losses import REG_LOSSES, SEG_LOSSES, get_loss
from .network import AdamState, adam_step, backward_batch, forward_batch, save_checkpoint

log = logging.getLogger(__name__)

_EXAMPLE_STREAM = 0
_ORDER_STREAM = 1


class TrainingAborted(RuntimeError):
    """Raised when the loss stops being finite."""

    def __init__(self, epoch, batch, value):
        super().__init__(f"non-finite loss {value} at epoch {epoch}, batch {batch}")
        self.epoch = epoch
        self.batch = batch


@dataclass
class Schedule:
    epochs: int = 1000
    batch_size: int = 3
    lr: float = 1e-5
    seed: int = 0
    commutative: bool = True
    max_iterations: int | None = None
    checkpoint_every: int = 0
    checkpoint_dir: str | None = None
    synthesis: SynthesisConfig = field(default_factory=SynthesisConfig)


@dataclass
class TrainingReport:
    params: dict
    iteration_losses: list
    epoch_losses: list
    checkpoints: list
    state: AdamState

    @property
    def iterations(self):
        return len(self.iteration_losses)


def check_loss_for_head(head, loss):
    allowed = SEG_LOSSES if head == "seg" else REG_LOSSES
    if loss not in allowed:
        raise ValueError(f"loss {loss!r} does not fit the {head} head (use one of {', '.join(allowed)})")


def batch_loss(model_config, params, batch, loss_fn, x=None):
    """Mean per-entry loss and its gradient w.r.t. the batched network output."""
    if x is None:
        x = np.concatenate([batch.x_a, batch.x_b], axis=-1)
    out, cache = forward_batch(params, x, model_config)
    targets = (
        np.stack([batch.target, 1.0 - batch.target], axis=-1)
        if model_config.head == "seg"
        else batch.truth
    )
    n = out.shape[0]
    total = 0.0
    grad = np.empty(out.shape, dtype=np.float64)
    for e in range(n):
        if model_config.head == "seg":
            lv = loss_fn(out[e], targets[e][..., 0])
        else:
            lv = loss_fn(out[e], targets[e])
        total += lv.value
        grad[e] = lv.gradient
    return total / n, grad / n, cache


def _group_by_shape(examples):
    groups = {}
    for ex in examples:
        groups.setdefault(ex.truth.shape, []).append(ex)
    return list(groups.values())


def train(model, samples, schedule, loss="bce", alpha=6.0, state=None):
    """Train ``model`` in place on examples synthesized from ``samples``.

    Each epoch visits the samples once in a seeded random order. Every
    sample's example is drawn from its own generator keyed by
    ``(seed, epoch, sample index)``, so results do not depend on batch
    composition. ``samples`` may also hold ready-made
    :class:`TrainingExample` objects, which are only augmented.
    """
    config = model.config
    check_loss_for_head(config.head, loss)
    if not samples:
        raise ValueError("training needs at least one sample")
    loss_fn = get_loss(loss, alpha)
    params = model.params
    if state is None:
        state = AdamState.zeros_like(params, lr=schedule.lr)
    iteration_losses, epoch_losses, checkpoints = [], [], []
    cfg = schedule.synthesis
    done = False
    for epoch in range(schedule.epochs):
        order = example_rng(schedule.seed, _ORDER_STREAM, epoch).permutation(len(samples))
        batch_values = []
        for b, start in enumerate(range(0, len(order), schedule.batch_size)):
            idx = order[start : start + schedule.batch_size]
            examples = []
            for j in idx:
                rng = example_rng(schedule.seed, _EXAMPLE_STREAM, epoch, int(j))
                item = samples[int(j)]
                if not isinstance(item, TrainingExample):
                    item = synthesize_example(item, cfg, rng)
                examples.append(augment(item, cfg, rng))
            groups = _group_by_shape(examples)
            n_entries = sum(len(g) for g in groups) * (2 if schedule.commutative else 1)
            grads = None
            value = 0.0
            for group in groups:
                batch = make_commutative_batch(group, schedule.commutative)
                v, g, cache = batch_loss(config, params, batch, loss_fn)
                w = len(batch) / n_entries
                gp = backward_batch(params, cache, g * w)
                value += v * w
                grads = gp if grads is None else {k: grads[k] + gp[k] for k in grads}
            if not np.isfinite(value):
                raise TrainingAborted(epoch, b, value)
            params, state = adam_step(params, grads, state)
            iteration_losses.append(value)
            batch_values.append(value)
            if schedule.max_iterations is not None and len(iteration_losses) >= schedule.max_iterations:
                done = True
                break
        epoch_losses.append(float(np.mean(batch_values)))
        log.info("epoch %d loss %.6f", epoch, epoch_losses[-1])
        if schedule.checkpoint_every and schedule.checkpoint_dir and (epoch + 1) % schedule.checkpoint_every == 0:
            path = os.path.join(schedule.checkpoint_dir, f"epoch_{epoch + 1:04d}.ckpt")
            save_checkpoint(params, config, path)
            checkpoints.append(path)
        if done:
            break
    model.params = params
    return TrainingReport(params, iteration_losses, epoch_losses, checkpoints, state)


def smooth(trace, window=20):
    """Means of consecutive non-overlapping windows (a trailing partial window is dropped)."""
    trace = np.asarray(trace, dtype=np.float64)
    n = len(trace) // window
    return trace[: n * window].reshape(n, window).mean(axis=1)
