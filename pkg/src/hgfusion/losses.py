"""Training objectives with analytic gradients w.r.t. the network output.

Every loss takes a single ``(H, W, C)`` prediction and returns a
:class:`LossValue` whose gradient has the prediction's shape.
"""

from typing import NamedTuple

import numpy as np

PROB_EPS = 1e-7


class LossValue(NamedTuple):
    value: float
    gradient: np.ndarray


def _check_same(a, b, what):
    if a.shape != b.shape:
        raise ValueError(f"{what}: shape mismatch {a.shape} vs {b.shape}")


def bce_loss(z, target):
    """Pixel-averaged binary cross entropy of a two-channel softmax map.

    ``z[..., 0]`` is the probability that source A is the sharp one and is
    pushed toward ``target``; ``z[..., 1]`` toward ``1 - target``.
    """
    z = np.asarray(z, dtype=np.float64)
    t = np.asarray(target, dtype=np.float64)
    if z.ndim != 3 or z.shape[2] != 2:
        raise ValueError(f"expected an (H, W, 2) probability map, got {z.shape}")
    _check_same(z[..., 0], t, "bce_loss")
    n = t.size
    zc = np.clip(z, PROB_EPS, 1.0 - PROB_EPS)
    value = -(t * np.log(zc[..., 0]) + (1.0 - t) * np.log(zc[..., 1])).sum() / n
    inside = (z > PROB_EPS) & (z < 1.0 - PROB_EPS)
    grad = np.empty_like(z)
    grad[..., 0] = -t / zc[..., 0] / n
    grad[..., 1] = -(1.0 - t) / zc[..., 1] / n
    grad *= inside
    return LossValue(float(value), grad)


def nps(a, b, alpha=6.0):
    """Normalized positive sigmoid dissimilarity, in ``[0, 1)``.

    ``(exp(alpha*d) - 1) / (exp(alpha*d) + 1)`` with ``d = |a - b|``, which is
    ``tanh(alpha*d/2)`` and never overflows.
    """
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    d = np.abs(np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64))
    return np.tanh(0.5 * alpha * d)


def regression_loss(yhat, y, alpha=6.0):
    """Per-channel NPS distance plus min/max range penalties.

    The NPS term is the per-channel pixel mean, summed over the three
    channels. Each range penalty routes its subgradient to the first
    (row-major) argmin/argmax pixel of the prediction channel.
    """
    yhat = np.asarray(yhat, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    _check_same(yhat, y, "regression_loss")
    if yhat.ndim != 3 or yhat.shape[2] != 3:
        raise ValueError(f"expected (H, W, 3) images, got {yhat.shape}")
    h, w, _ = y.shape
    n = h * w
    d = yhat - y
    t = np.tanh(0.5 * alpha * np.abs(d))
    value = t.sum() / n
    grad = 0.5 * alpha * (1.0 - t * t) * np.sign(d) / n
    flat_hat = yhat.reshape(n, 3)
    flat_y = y.reshape(n, 3)
    gflat = grad.reshape(n, 3)
    for c in range(3):
        i_min = int(np.argmin(flat_hat[:, c]))
        i_max = int(np.argmax(flat_hat[:, c]))
        dmin = flat_hat[i_min, c] - flat_y[:, c].min()
        dmax = flat_hat[i_max, c] - flat_y[:, c].max()
        value += abs(dmin) + abs(dmax)
        gflat[i_min, c] += np.sign(dmin)
        gflat[i_max, c] += np.sign(dmax)
    return LossValue(float(value), grad)


def l1_loss(yhat, y):
    yhat = np.asarray(yhat, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    _check_same(yhat, y, "l1_loss")
    d = yhat - y
    return LossValue(float(np.abs(d).mean()), np.sign(d) / d.size)


def mse_loss(yhat, y):
    yhat = np.asarray(yhat, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    _check_same(yhat, y, "mse_loss")
    d = yhat - y
    return LossValue(float((d * d).mean()), 2.0 * d / d.size)


SEG_LOSSES = ("bce",)
REG_LOSSES = ("nps", "l1", "mse")


def get_loss(name, alpha=6.0):
    """Loss callable ``(prediction, target) -> LossValue`` by CLI name."""
    if name == "bce":
        return bce_loss
    if name == "nps":
        return lambda yhat, y: regression_loss(yhat, y, alpha)
    if name == "l1":
        return l1_loss
    if name == "mse":
        return mse_loss
    raise ValueError(f"unknown loss {name!r}")
