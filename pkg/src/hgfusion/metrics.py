"""Fusion quality metrics.

All metrics work on luma planes. Histograms use 256 uniform bins on
``[0, 1]``, entropies use the natural logarithm, and empty bins contribute
nothing (``0 log 0 = 0``). Windowed metrics use every 8x8 window (stride 1)
that fits inside the image.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import ndimage

from .imaging import gray2d

BINS = 256
WINDOW = 8
C1 = 0.01**2
C2 = 0.03**2
TSALLIS_Q = 1.85
FLAT_VARIANCE = 1e-12

# edge-preservation sigmoid constants
GAMMA_G, KAPPA_G, SIGMA_G = 0.9994, -15.0, 0.5
GAMMA_A, KAPPA_A, SIGMA_A = 0.9879, -22.0, 0.8

METRICS = ("ssim", "q_mi", "q_te", "q_ncie", "q_g", "q_s")


def _planes(*images):
    planes = [gray2d(im) for im in images]
    for p in planes[1:]:
        if p.shape != planes[0].shape:
            raise ValueError(f"image shapes differ: {planes[0].shape} vs {p.shape}")
    return planes


# -- windowed ---------------------------------------------------------------


def _box_mean(x):
    if x.shape[0] < WINDOW or x.shape[1] < WINDOW:
        raise ValueError(f"image smaller than the {WINDOW}x{WINDOW} window")
    return sliding_window_view(x, (WINDOW, WINDOW)).mean(axis=(-2, -1))


def _local_stats(a, b):
    mu_a, mu_b = _box_mean(a), _box_mean(b)
    var_a = _box_mean(a * a) - mu_a * mu_a
    var_b = _box_mean(b * b) - mu_b * mu_b
    cov = _box_mean(a * b) - mu_a * mu_b
    return mu_a, mu_b, var_a, var_b, cov


def _ssim_map(a, b):
    mu_a, mu_b, var_a, var_b, cov = _local_stats(a, b)
    num = (2 * mu_a * mu_b + C1) * (2 * cov + C2)
    den = (mu_a * mu_a + mu_b * mu_b + C1) * (var_a + var_b + C2)
    return num / den


def ssim(a, b):
    """Mean SSIM over all 8x8 windows, for intensities on ``[0, 1]``."""
    pa, pb = _planes(a, b)
    return float(_ssim_map(pa, pb).mean())


def q_s(a, b, f):
    """Piella-Heijmans index: saliency-weighted SSIM of the fused image to each source.

    Saliency is the local variance; where both sources are flat the weights
    are one half each. Variances below ``FLAT_VARIANCE`` are rounding noise
    from the moment formula and count as flat.
    """
    pa, pb, pf = _planes(a, b, f)
    s_a = _box_mean(pa * pa) - _box_mean(pa) ** 2
    s_b = _box_mean(pb * pb) - _box_mean(pb) ** 2
    s_a = np.where(s_a < FLAT_VARIANCE, 0.0, s_a)
    s_b = np.where(s_b < FLAT_VARIANCE, 0.0, s_b)
    tot = s_a + s_b
    lam = np.where(tot > 0, s_a / np.where(tot > 0, tot, 1.0), 0.5)
    return float((lam * _ssim_map(pa, pf) + (1 - lam) * _ssim_map(pb, pf)).mean())


# -- histograms ---------------------------------------------------------------


def bin_index(plane):
    v = np.clip(np.asarray(plane, dtype=np.float64), 0.0, 1.0)
    return np.minimum((v * BINS).astype(np.int64), BINS - 1).ravel()


def _probs(idx):
    return np.bincount(idx, minlength=BINS) / idx.size


def _joint(ia, ib):
    return np.bincount(ia * BINS + ib, minlength=BINS * BINS).reshape(BINS, BINS) / ia.size


def _entropy(p):
    p = p[p > 0]
    return float(-(p * np.log(p)).sum())


def _mutual_information(ia, ib):
    return _entropy(_probs(ia)) + _entropy(_probs(ib)) - _entropy(_joint(ia, ib))


def q_mi(a, b, f):
    """Normalized mutual information (Hossny form)."""
    ia, ib, jf = (bin_index(p) for p in _planes(a, b, f))
    h_a, h_b, h_f = (_entropy(_probs(i)) for i in (ia, ib, jf))
    total = 0.0
    for i_src, h_src in ((ia, h_a), (ib, h_b)):
        den = h_src + h_f
        if den > 0:
            total += _mutual_information(i_src, jf) / den
    return 2.0 * total


def tsallis_entropy(p, q=TSALLIS_Q):
    p = p[p > 0]
    return float((1.0 - (p**q).sum()) / (q - 1.0))


def tsallis_mutual_information(ia, ib, q=TSALLIS_Q):
    """Tsallis divergence of the joint histogram from the product of marginals."""
    pj = _joint(ia, ib)
    pa, pb = _probs(ia), _probs(ib)
    r, c = np.nonzero(pj)
    p = pj[r, c]
    prod = pa[r] * pb[c]
    return float(((p**q * prod ** (1.0 - q)).sum() - 1.0) / (q - 1.0))


def q_te(a, b, f, q=TSALLIS_Q):
    """``(I_q(A;F) + I_q(B;F)) / (H_q(A) + H_q(B))``."""
    if q == 1:
        raise ValueError("q must differ from 1")
    ia, ib, jf = (bin_index(p) for p in _planes(a, b, f))
    den = tsallis_entropy(_probs(ia), q) + tsallis_entropy(_probs(ib), q)
    if den == 0:
        return 0.0
    return (tsallis_mutual_information(ia, jf, q) + tsallis_mutual_information(ib, jf, q)) / den


def nonlinear_correlation(ia, ib):
    return _mutual_information(ia, ib) / math.log(BINS)


def ncie_matrix(a, b, f):
    idx = [bin_index(p) for p in _planes(a, b, f)]
    r = np.eye(3)
    for i in range(3):
        for j in range(i + 1, 3):
            r[i, j] = r[j, i] = nonlinear_correlation(idx[i], idx[j])
    return r


def q_ncie(a, b, f):
    """Nonlinear correlation information entropy of (A, B, F).

    Negative eigenvalues from an indefinite estimate are clipped to zero.
    """
    lam = np.clip(np.linalg.eigvalsh(ncie_matrix(a, b, f)), 0.0, None) / 3.0
    lam = lam[lam > 0]
    return float(1.0 + (lam * np.log(lam)).sum() / math.log(BINS))


# -- gradients ---------------------------------------------------------------


def _sobel(plane):
    gx = ndimage.sobel(plane, axis=1, mode="reflect")
    gy = ndimage.sobel(plane, axis=0, mode="reflect")
    g = np.hypot(gx, gy)
    safe = np.where(gx == 0, 1.0, gx)
    alpha = np.where(gx == 0, np.where(gy == 0, 0.0, np.pi / 2), np.arctan(gy / safe))
    return g, alpha


def _preservation(g_s, a_s, g_f, a_f):
    hi = np.maximum(g_s, g_f)
    ratio = np.where(hi > 0, np.minimum(g_s, g_f) / np.where(hi > 0, hi, 1.0), 1.0)
    orient = 1.0 - np.abs(a_s - a_f) / (np.pi / 2)
    q_g = GAMMA_G / (1.0 + np.exp(KAPPA_G * (ratio - SIGMA_G)))
    q_a = GAMMA_A / (1.0 + np.exp(KAPPA_A * (orient - SIGMA_A)))
    return q_g * q_a


def q_g(a, b, f):
    """Xydeas-Petrovic edge preservation weighted by source edge strength."""
    pa, pb, pf = _planes(a, b, f)
    ga, aa = _sobel(pa)
    gb, ab = _sobel(pb)
    gf, af = _sobel(pf)
    den = (ga + gb).sum()
    if den == 0:
        return 0.0
    num = (_preservation(ga, aa, gf, af) * ga + _preservation(gb, ab, gf, af) * gb).sum()
    return float(num / den)


# -- reports -----------------------------------------------------------------


def metric_report(a, b, f, reference=None):
    """All no-reference metrics for (A, B, F), plus SSIM when a reference is given."""
    rep = {
        "q_mi": q_mi(a, b, f),
        "q_te": q_te(a, b, f),
        "q_ncie": q_ncie(a, b, f),
        "q_g": q_g(a, b, f),
        "q_s": q_s(a, b, f),
    }
    rep["ssim"] = ssim(f, reference) if reference is not None else None
    return rep


@dataclass
class BiasTable:
    rows: list
    flagged: dict = field(default_factory=dict)  # metric -> [(pair_id, fuser name)]


def bias_study(pairs, fusers, truths=None):
    """Score every fuser on every pair and flag metrics where a dummy beats averaging."""
    from .fusion import fuse_pair

    if not pairs or not fusers:
        raise ValueError("bias_study needs pairs and fusers")
    rows = []
    for pid, pair in enumerate(pairs):
        ref = truths[pid] if truths is not None else None
        for fuser in fusers:
            fused = fuse_pair(fuser, pair)
            rep = metric_report(pair[0], pair[1], fused, ref)
            rows.append({"pair_id": pid, "fuser": fuser.name, **rep})
    flagged = {}
    by_pair = {}
    for row in rows:
        by_pair.setdefault(row["pair_id"], {})[row["fuser"]] = row
    for pid, scores in by_pair.items():
        if "average" not in scores:
            continue
        for m in METRICS:
            base = scores["average"][m]
            if base is None:
                continue
            for dummy in ("dummy_a", "dummy_b"):
                if dummy in scores and scores[dummy][m] > base:
                    flagged.setdefault(m, []).append((pid, dummy))
    return BiasTable(rows, flagged)


CSV_COLUMNS = ("pair_id", "fuser") + METRICS


def write_csv(path_or_file, rows):
    own = isinstance(path_or_file, str)
    fh = open(path_or_file, "w", newline="") if own else path_or_file
    try:
        w = csv.writer(fh)
        w.writerow(CSV_COLUMNS)
        for row in rows:
            w.writerow(["" if row.get(c) is None else row[c] for c in CSV_COLUMNS])
    finally:
        if own:
            fh.close()
