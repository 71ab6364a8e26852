"""Central finite differences for every network parameter.

A conv layer is linear in its weights, so nudging ``W[o, c, i, j]`` by ``h``
adds ``h * x_c`` (shifted by ``(i, j)``) to output channel ``o`` of the layer's
pre-activation. Each perturbation is therefore expressed as a pre-activation
offset, and many of them are evaluated in a single batched forward pass.

ReLU, max-pool and min/max terms are piecewise linear. When the ``+h`` and
``-h`` evaluations land on different pieces, the central difference is not
an estimate of the derivative; those parameters are re-measured with a step
shrunk tenfold until both sides agree.
"""

import numpy as np

from .network import forward_batch


def _kink_signature(cache, entry):
    parts = []
    for name, rec in cache.records.items():
        arr = rec if name.startswith("pool") else rec[1]
        if arr is not None:
            parts.append(arr[min(entry, arr.shape[0] - 1)])
    return parts


def _same_signature(a, b):
    return all(np.array_equal(x, y) for x, y in zip(a, b))


def _offset(xp, name, key, index, shape, h):
    """Pre-activation change caused by adding ``h`` to one parameter entry."""
    _, ph, pw, o_ch = shape
    delta = np.zeros((ph, pw, o_ch))
    if key.endswith(".b"):
        delta[..., index[0]] = h
    else:
        o, c, i, j = index
        delta[..., o] = h * xp[0, i : i + ph, j : j + pw, c]
    return delta


def finite_difference(params, config, x, loss_fn, h=1e-4, batch=64, signature_fn=None, min_h=1e-6):
    """Numerical gradient of ``loss_fn(output)`` for a single-entry input ``x``.

    ``loss_fn`` maps an ``(H, W, C)`` output to a float. ``signature_fn`` may
    return extra piecewise-state arrays of the output (e.g. extremum indices).
    Returns ``(numeric, steps)``: dicts of arrays co-shaped with ``params``,
    ``steps`` holding the step actually used for each entry.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape[0] != 1:
        raise ValueError("finite_difference expects a single-entry batch")
    base_out, base = forward_batch(params, x, config)
    base_sig = _kink_signature(base, 0)
    if signature_fn is not None:
        base_sig += list(signature_fn(base_out[0]))
    head_pre = base.records["head"][0]

    def layer_of(key):
        return key.rsplit(".", 1)[0]

    def pre_shape(name):
        xp = base.records[name][0]
        o = params[f"{name}.w"].shape[0]
        return (1, xp.shape[1] - 2, xp.shape[2] - 2, o)

    def evaluate(key, indices, step):
        name = layer_of(key)
        xp = base.records[name][0] if name != "head" else head_pre
        shape = pre_shape(name)
        deltas = [_offset(xp, name, key, idx, shape, step) for idx in indices]
        stack = np.stack(deltas + [-d for d in deltas])
        out, cache = forward_batch(params, x, config, offsets={name: stack})
        vals, stable = [], []
        m = len(indices)
        for e in range(2 * m):
            img = out[e]
            vals.append(loss_fn(img))
            sig = _kink_signature(cache, e)
            if signature_fn is not None:
                sig += list(signature_fn(img))
            stable.append(_same_signature(sig, base_sig))
        vals = np.array(vals)
        num = (vals[:m] - vals[m:]) / (2 * step)
        ok = np.array(stable[:m]) & np.array(stable[m:])
        return num, ok

    numeric, steps = {}, {}
    for key, p in params.items():
        num = np.zeros(p.shape)
        used = np.full(p.shape, float(h))
        all_idx = list(np.ndindex(p.shape))
        for start in range(0, len(all_idx), batch):
            chunk = all_idx[start : start + batch]
            vals, ok = evaluate(key, chunk, h)
            for idx, v, good in zip(chunk, vals, ok):
                num[idx] = v
                step = h
                while not good and step / 10 >= min_h:
                    step /= 10
                    (v,), (good,) = evaluate(key, [idx], step)
                    num[idx] = v
                    used[idx] = step
        numeric[key] = num
        steps[key] = used
    return numeric, steps


def relative_error(analytic, numeric, floor=1e-8):
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
