"""Slow scalar-loop references used as independent oracles by the check suite and tests."""
from __future__ import annotations

import math

import numpy as np


def attention_loop(q, k, v, bias, heads: int, window: int) -> np.ndarray:
    """Windowed multi-head attention evaluated one query pixel at a time.

    ``bias`` is [heads, window**2, window**2] or None.  Keys outside the image
    (from padding) are simply not visited.
    """
    q, k, v = (np.asarray(a, dtype=np.float64) for a in (q, k, v))
    h, w, d = q.shape
    hd = d // heads
    out = np.zeros_like(q)
    for y in range(h):
        for x in range(w):
            wy, wx = y // window, x // window
            qi = (y % window) * window + (x % window)
            keys = [
                (ky, kx)
                for ky in range(wy * window, min((wy + 1) * window, h))
                for kx in range(wx * window, min((wx + 1) * window, w))
            ]
            for head in range(heads):
                sl = slice(head * hd, (head + 1) * hd)
                scores = []
                for ky, kx in keys:
                    kj = (ky % window) * window + (kx % window)
                    s = float(np.dot(q[y, x, sl], k[ky, kx, sl])) / math.sqrt(hd)
                    if bias is not None:
                        s += float(bias[head, qi, kj])
                    scores.append(s)
                top = max(scores)
                weights = [math.exp(s - top) for s in scores]
                total = sum(weights)
                for wgt, (ky, kx) in zip(weights, keys):
                    out[y, x, sl] += (wgt / total) * v[ky, kx, sl]
    return out


def metrics_loop(pred, gt, mask, d_min: float, d_max: float) -> dict:
    """Per-pixel accumulation of the evaluation metrics."""
    n = 0
    abs_rel = sq_rel = sq = log10 = g_sum = g_sq = 0.0
    hits = [0, 0, 0]
    for d, t, m in zip(np.ravel(pred), np.ravel(gt), np.ravel(mask)):
        if not m:
            continue
        d = min(max(float(d), d_min), d_max)
        t = float(t)
        n += 1
        abs_rel += abs(d - t) / t
        sq_rel += (d - t) ** 2 / t
        sq += (d - t) ** 2
        log10 += abs(math.log10(d) - math.log10(t))
        g = math.log(d) - math.log(t)
        g_sum += g
        g_sq += g * g
        ratio = max(d / t, t / d)
        for i in range(3):
            if ratio < 1.25 ** (i + 1):
                hits[i] += 1
    return {
        "abs_rel": abs_rel / n,
        "sq_rel": sq_rel / n,
        "rmse": math.sqrt(sq / n),
        "log10": log10 / n,
        "silog": 100.0 * math.sqrt(max(g_sq / n - (g_sum / n) ** 2, 0.0)),
        "delta1": hits[0] / n,
        "delta2": hits[1] / n,
        "delta3": hits[2] / n,
        "n_valid": n,
    }


def silog_scalar(pred, gt, mask, lam: float = 0.85, alpha: float = 10.0) -> float:
    g = [math.log(float(d)) - math.log(float(t)) for d, t, m in zip(np.ravel(pred), np.ravel(gt), np.ravel(mask)) if m]
    n = len(g)
    radicand = sum(x * x for x in g) / n - lam * (sum(g) / n) ** 2
    return alpha * math.sqrt(max(radicand, 0.0))
