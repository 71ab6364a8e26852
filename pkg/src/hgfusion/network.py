"""Two-source hourglass network in plain numpy, with exact backpropagation.

The input is the two RGB sources stacked into six channels. The encoder
runs ``depth`` levels of (conv-ReLU, conv-ReLU, 2x2 max-pool), a bottleneck
of two conv-ReLU layers follows, and the decoder mirrors the encoder with
nearest-neighbour upsampling, a conv-ReLU, concatenation of the matching
encoder features and two more conv-ReLU layers. A final 3x3 conv produces
either two logits passed through a per-pixel softmax (``"seg"`` head) or a
linear RGB estimate (``"reg"`` head). All convolutions are 3x3 with zero
"same" padding, so outputs are pixel-aligned with the inputs.

Parameters are a ``dict`` mapping layer names such as ``"enc0.conv1.w"`` to
arrays; the insertion order is the canonical layer order. Computation runs in
the parameters' dtype.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

HEADS = {"seg": 0, "reg": 1}
IN_CHANNELS = 6


@dataclass(frozen=True)
class HourglassConfig:
    depth: int = 3
    base_channels: int = 16
    head: str = "seg"
    in_channels: int = IN_CHANNELS

    def __post_init__(self):
        if self.depth < 1:
            raise ValueError("depth must be >= 1")
        if self.base_channels < 1:
            raise ValueError("base_channels must be >= 1")
        if self.head not in HEADS:
            raise ValueError(f"head must be one of {sorted(HEADS)}, got {self.head!r}")
        if self.in_channels != IN_CHANNELS:
            raise ValueError("the network takes exactly 6 input channels (two RGB sources)")

    @property
    def out_channels(self):
        return 2 if self.head == "seg" else 3

    @property
    def multiple(self):
        return 2**self.depth


def layer_shapes(config):
    """Ordered ``(name, cin, cout)`` for every conv layer."""
    d, b = config.depth, config.base_channels
    width = [b * 2**i for i in range(d + 1)]
    layers = []
    cin = config.in_channels
    for i in range(d):
        layers += [(f"enc{i}.conv0", cin, width[i]), (f"enc{i}.conv1", width[i], width[i])]
        cin = width[i]
    layers += [("mid.conv0", width[d - 1], width[d]), ("mid.conv1", width[d], width[d])]
    for i in reversed(range(d)):
        layers += [
            (f"dec{i}.up", width[i + 1], width[i]),
            (f"dec{i}.conv0", 2 * width[i], width[i]),
            (f"dec{i}.conv1", width[i], width[i]),
        ]
    layers.append(("head", width[0], config.out_channels))
    return layers


def parameter_shapes(config):
    shapes = {}
    for name, cin, cout in layer_shapes(config):
        shapes[f"{name}.w"] = (cout, cin, 3, 3)
        shapes[f"{name}.b"] = (cout,)
    return shapes


def init_parameters(config, rng, dtype=np.float32):
    """Xavier-normal conv weights, ``std = sqrt(2 / (fan_in + fan_out))``; zero biases."""
    params = {}
    for name, cin, cout in layer_shapes(config):
        std = np.sqrt(2.0 / (9 * cin + 9 * cout))
        params[f"{name}.w"] = rng.normal(0.0, std, size=(cout, cin, 3, 3)).astype(dtype)
        params[f"{name}.b"] = np.zeros(cout, dtype=dtype)
    return params


def _check_params(params, config):
    expected = parameter_shapes(config)
    if list(expected) != list(params):
        raise ValueError("parameter names do not match the configuration")
    for k, shape in expected.items():
        if params[k].shape != shape:
            raise ValueError(f"{k}: expected shape {shape}, got {params[k].shape}")


# -- layers (NHWC) -----------------------------------------------------------


def _im2col(xp, h, w):
    """``(N, H+2, W+2, C)`` -> ``(N*H*W, 9*C)``, tap-major then channel."""
    cols = np.concatenate(
        [xp[:, i : i + h, j : j + w, :] for i in range(3) for j in range(3)], axis=-1
    )
    return cols.reshape(-1, cols.shape[-1])


def _wmat(w):
    o, c = w.shape[:2]
    return w.transpose(2, 3, 1, 0).reshape(9 * c, o)


def _conv_forward(x, w, b):
    n, h, wd, _ = x.shape
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    out = _im2col(xp, h, wd) @ _wmat(w)
    out += b
    return out.reshape(n, h, wd, -1), xp


def _conv_backward(dout, xp, w):
    n, h, wd, o = dout.shape
    c = w.shape[1]
    d2 = dout.reshape(-1, o)
    dw = (_im2col(xp, h, wd).T @ d2).reshape(3, 3, c, o).transpose(3, 2, 0, 1)
    db = d2.sum(axis=0)
    dcols = (d2 @ _wmat(w).T).reshape(n, h, wd, 9 * c)
    dxp = np.zeros((n, h + 2, wd + 2, c), dtype=dout.dtype)
    for k in range(9):
        i, j = divmod(k, 3)
        dxp[:, i : i + h, j : j + wd, :] += dcols[..., k * c : (k + 1) * c]
    return dxp[:, 1:-1, 1:-1, :], dw, db


def _pool_forward(x):
    n, h, w, c = x.shape
    blocks = x.reshape(n, h // 2, 2, w // 2, 2, c).transpose(0, 1, 3, 5, 2, 4).reshape(n, h // 2, w // 2, c, 4)
    idx = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, idx[..., None], axis=-1)[..., 0]
    return out, idx


def _pool_backward(dout, idx):
    n, h2, w2, c = dout.shape
    blocks = np.zeros((n, h2, w2, c, 4), dtype=dout.dtype)
    np.put_along_axis(blocks, idx[..., None], dout[..., None], axis=-1)
    return blocks.reshape(n, h2, w2, c, 2, 2).transpose(0, 1, 4, 2, 5, 3).reshape(n, 2 * h2, 2 * w2, c)


def _upsample(x):
    return x.repeat(2, axis=1).repeat(2, axis=2)


def _upsample_backward(dout):
    n, h, w, c = dout.shape
    return dout.reshape(n, h // 2, 2, w // 2, 2, c).sum(axis=(2, 4))


def _softmax2(logits):
    m = logits.max(axis=-1, keepdims=True)
    e = np.exp(logits - m)
    return e / e.sum(axis=-1, keepdims=True)


# -- network ----------------------------------------------------------------


@dataclass
class ActivationCache:
    config: HourglassConfig
    shapes: dict
    orig_hw: tuple
    records: dict = field(default_factory=dict)
    output: np.ndarray | None = None


def _pad_to_multiple(x, m):
    h, w = x.shape[1:3]
    ph, pw = (-h) % m, (-w) % m
    if ph or pw:
        x = np.pad(x, ((0, 0), (0, ph), (0, pw), (0, 0)), mode="reflect")
    return x


def pair_to_input(pair):
    """Stack a source pair into a ``(1, H, W, 6)`` network input."""
    x_a, x_b = (np.asarray(s, dtype=np.float64) for s in pair)
    if x_a.shape != x_b.shape:
        raise ValueError(f"source shapes differ: {x_a.shape} vs {x_b.shape}")
    if x_a.ndim != 3 or x_a.shape[2] != 3:
        raise ValueError(f"sources must be (H, W, 3), got {x_a.shape}")
    return np.concatenate([x_a, x_b], axis=2)[None]


def forward_batch(params, x, config, offsets=None):
    """Run the network on an ``(N, H, W, 6)`` batch; returns ``(N, H, W, C_out)``.

    ``offsets`` optionally maps layer names to arrays added to that layer's
    pre-activation (after the bias). Finite-difference checking uses it to
    evaluate many weight perturbations in one batched pass: with a
    single-entry ``x`` and ``(B, ...)`` offsets, layers before the first offset
    run once and the batch fans out to ``B`` from there. A cache built that
    way is only good for inspection, not for :func:`backward_batch`.
    """
    _check_params(params, config)
    dtype = params["head.w"].dtype
    x = np.asarray(x)
    if x.ndim != 4 or x.shape[3] != config.in_channels:
        raise ValueError(f"expected (N, H, W, 6) input, got {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError("input contains non-finite values")
    h, w = x.shape[1:3]
    if min(h, w) < config.multiple:
        raise ValueError(f"input {h}x{w} smaller than 2**depth = {config.multiple}")
    cache = ActivationCache(config, {k: v.shape for k, v in params.items()}, (h, w))
    rec = cache.records
    offsets = offsets or {}
    a = _pad_to_multiple(x.astype(dtype, copy=False), config.multiple)

    def conv(name, inp):
        z, xp = _conv_forward(inp, params[f"{name}.w"], params[f"{name}.b"])
        if name in offsets:
            z = z + offsets[name]
        return z, xp

    def conv_relu(name, inp):
        z, xp = conv(name, inp)
        rec[name] = (xp, z > 0)
        return np.maximum(z, 0)

    skips = []
    for i in range(config.depth):
        a = conv_relu(f"enc{i}.conv0", a)
        a = conv_relu(f"enc{i}.conv1", a)
        skips.append(a)
        a, rec[f"pool{i}"] = _pool_forward(a)
    a = conv_relu("mid.conv0", a)
    a = conv_relu("mid.conv1", a)
    for i in reversed(range(config.depth)):
        a = conv_relu(f"dec{i}.up", _upsample(a))
        skip = skips[i]
        if skip.shape[0] != a.shape[0]:
            skip = np.broadcast_to(skip, a.shape[:3] + skip.shape[3:])
        a = np.concatenate([a, skip], axis=-1)
        a = conv_relu(f"dec{i}.conv0", a)
        a = conv_relu(f"dec{i}.conv1", a)
    out, xp = conv("head", a)
    rec["head"] = (xp, None)
    if config.head == "seg":
        out = _softmax2(out)
    out = out[:, :h, :w, :]
    cache.output = out
    return out, cache


def backward_batch(params, cache, dout):
    """Parameter gradients for an upstream gradient ``dout`` on the batch output."""
    config = cache.config
    if {k: v.shape for k, v in params.items()} != cache.shapes:
        raise ValueError("cache was produced with differently shaped parameters")
    dtype = params["head.w"].dtype
    dout = np.asarray(dout, dtype=dtype)
    if dout.shape != cache.output.shape:
        raise ValueError(f"gradient shape {dout.shape} != output shape {cache.output.shape}")
    rec = cache.records
    grads = {}
    if config.head == "seg":
        z = cache.output
        dout = z * (dout - (z * dout).sum(axis=-1, keepdims=True))
    xp_head = rec["head"][0]
    hp, wp = xp_head.shape[1] - 2, xp_head.shape[2] - 2
    h, w = cache.orig_hw
    if (hp, wp) != (h, w):
        full = np.zeros((dout.shape[0], hp, wp, dout.shape[3]), dtype=dtype)
        full[:, :h, :w, :] = dout
        dout = full

    def conv_back(name, d, relu=True):
        xp, mask = rec[name]
        if relu:
            d = d * mask
        dx, grads[f"{name}.w"], grads[f"{name}.b"] = _conv_backward(d, xp, params[f"{name}.w"])
        return dx

    d = conv_back("head", dout, relu=False)
    dskips = [None] * config.depth
    for i in range(config.depth):
        d = conv_back(f"dec{i}.conv1", d)
        d = conv_back(f"dec{i}.conv0", d)
        c = params[f"dec{i}.up.w"].shape[0]
        d, dskips[i] = d[..., :c], d[..., c:]
        d = _upsample_backward(conv_back(f"dec{i}.up", d))
    d = conv_back("mid.conv1", d)
    d = conv_back("mid.conv0", d)
    for i in reversed(range(config.depth)):
        d = _pool_backward(d, rec[f"pool{i}"]) + dskips[i]
        d = conv_back(f"enc{i}.conv1", d)
        d = conv_back(f"enc{i}.conv0", d)
    return {k: grads[k] for k in params}


def forward(params, pair, config):
    """Run one source pair; returns an ``(H, W, C_out)`` map and the cache.

    For the ``"seg"`` head channel 0 is the probability of taking source A.
    """
    out, cache = forward_batch(params, pair_to_input(pair), config)
    return out[0].astype(np.float64), cache


def backward(params, cache, output_gradient):
    """Gradients for a single ``(H, W, C)`` or batched ``(N, H, W, C)`` output gradient."""
    g = np.asarray(output_gradient)
    if g.ndim == 3:
        g = g[None]
    return backward_batch(params, cache, g)


# -- optimizer ---------------------------------------------------------------


@dataclass
class AdamState:
    m: dict
    v: dict
    step: int = 0
    lr: float = 1e-5
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def zeros_like(cls, params, **kwargs):
        return cls(
            {k: np.zeros_like(p) for k, p in params.items()},
            {k: np.zeros_like(p) for k, p in params.items()},
            **kwargs,
        )


def adam_step(params, grads, state):
    """One bias-corrected Adam update; inputs are not modified."""
    if set(grads) != set(params):
        raise ValueError("gradient names do not match parameters")
    t = state.step + 1
    bc1 = 1.0 - state.beta1**t
    bc2 = 1.0 - state.beta2**t
    new_params, new_m, new_v = {}, {}, {}
    for k, p in params.items():
        g = np.asarray(grads[k])
        if g.shape != p.shape or state.m[k].shape != p.shape:
            raise ValueError(f"{k}: shape mismatch {g.shape} vs {p.shape}")
        m = state.beta1 * state.m[k] + (1.0 - state.beta1) * g
        v = state.beta2 * state.v[k] + (1.0 - state.beta2) * g * g
        step = state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.epsilon)
        new_params[k] = (p - step).astype(p.dtype, copy=False)
        new_m[k] = m.astype(p.dtype, copy=False)
        new_v[k] = v.astype(p.dtype, copy=False)
    new_state = AdamState(
        new_m, new_v, t, state.lr, state.beta1, state.beta2, state.epsilon
    )
    return new_params, new_state


# -- checkpoints -------------------------------------------------------------

CHECKPOINT_MAGIC = b"MFHG1"
_HEAD_NAMES = {v: k for k, v in HEADS.items()}


class CheckpointError(ValueError):
    pass


class CheckpointShapeError(CheckpointError):
    pass


def save_checkpoint(params, config, path):
    """Write parameters as little-endian float32 in canonical layer order."""
    _check_params(params, config)
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<3I", config.depth, config.base_channels, HEADS[config.head]))
        for k in parameter_shapes(config):
            fh.write(np.ascontiguousarray(params[k], dtype="<f4").tobytes())


def load_checkpoint(path, expected=None):
    """Read a checkpoint; ``expected`` (a config) makes architecture drift an error."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[: len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: bad magic")
    off = len(CHECKPOINT_MAGIC)
    if len(blob) < off + 12:
        raise CheckpointError(f"{path}: truncated header")
    depth, base, head_id = struct.unpack_from("<3I", blob, off)
    off += 12
    if head_id not in _HEAD_NAMES:
        raise CheckpointError(f"{path}: unknown head id {head_id}")
    try:
        config = HourglassConfig(depth=depth, base_channels=base, head=_HEAD_NAMES[head_id])
    except ValueError as exc:
        raise CheckpointError(f"{path}: invalid config ({exc})") from exc
    if expected is not None and (
        (expected.depth, expected.base_channels, expected.head)
        != (config.depth, config.base_channels, config.head)
    ):
        raise CheckpointShapeError(
            f"{path}: checkpoint holds depth={depth} base={base} head={config.head}, "
            f"expected depth={expected.depth} base={expected.base_channels} head={expected.head}"
        )
    params = {}
    for k, shape in parameter_shapes(config).items():
        nbytes = 4 * int(np.prod(shape))
        if off + nbytes > len(blob):
            raise CheckpointError(f"{path}: truncated at tensor {k}")
        params[k] = np.frombuffer(blob, dtype="<f4", count=nbytes // 4, offset=off).reshape(shape).astype(np.float32)
        off += nbytes
    if off != len(blob):
        raise CheckpointError(f"{path}: {len(blob) - off} trailing bytes")
    return params, config


@dataclass
class Model:
    """A configuration together with its parameters."""

    config: HourglassConfig
    params: dict

    @classmethod
    def create(cls, config, seed=0, dtype=np.float32):
        return cls(config, init_parameters(config, np.random.default_rng(seed), dtype))

    @classmethod
    def load(cls, path, expected=None):
        params, config = load_checkpoint(path, expected)
        return cls(config, params)

    def save(self, path):
        save_checkpoint(self.params, self.config, path)

    def predict(self, pair):
        return forward(self.params, pair, self.config)[0]
