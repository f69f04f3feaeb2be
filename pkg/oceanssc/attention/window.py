"""
Non-shifted window attention over a BEV grid.

The x and y axes are cut into non-overlapping ``w x w`` windows; within each
window, queries come from ``query_bev`` and keys/values from ``kv_bev``.
Attention is single-head scaled dot product without position bias.
"""

from __future__ import annotations

from typing import Tuple

import numpy as np

from ..errors import ShapeError
from ..utils.nn import softmax, softmax_vjp


def window_partition(bev: np.ndarray, w: int) -> np.ndarray:
    """``(X, Y, C)`` to ``(num_windows, w*w, C)``, windows in raster order."""
    x, y, c = bev.shape
    if w < 1 or x % w or y % w:
        raise ShapeError(f"BEV {x}x{y} is not divisible by window {w}")
    return bev.reshape(x // w, w, y // w, w, c).transpose(0, 2, 1, 3, 4).reshape(-1, w * w, c)


def window_reverse(windows: np.ndarray, w: int, x: int, y: int) -> np.ndarray:
    c = windows.shape[-1]
    return windows.reshape(x // w, y // w, w, w, c).transpose(0, 2, 1, 3, 4).reshape(x, y, c)


def _check(query_bev, kv_bev):
    q = np.asarray(query_bev, dtype=np.float64)
    kv = np.asarray(kv_bev, dtype=np.float64)
    if q.ndim != 3 or q.shape != kv.shape:
        raise ShapeError(f"query BEV {q.shape} and key/value BEV {kv.shape} must match")
    return q, kv


def window_attention(query_bev, kv_bev, w: int) -> np.ndarray:
    q, kv = _check(query_bev, kv_bev)
    x, y, c = q.shape
    qw, kw = window_partition(q, w), window_partition(kv, w)
    P = softmax(qw @ kw.transpose(0, 2, 1) / np.sqrt(c), axis=-1)
    return window_reverse(P @ kw, w, x, y)


def window_attention_vjp(g_out, query_bev, kv_bev, w: int) -> Tuple[np.ndarray, np.ndarray]:
    """Return ``(g_query_bev, g_kv_bev)``."""
    q, kv = _check(query_bev, kv_bev)
    x, y, c = q.shape
    scale = 1.0 / np.sqrt(c)
    qw, kw = window_partition(q, w), window_partition(kv, w)
    P = softmax(qw @ kw.transpose(0, 2, 1) * scale, axis=-1)
    g = window_partition(np.asarray(g_out, dtype=np.float64), w)

    g_P = g @ kw.transpose(0, 2, 1)
    g_S = softmax_vjp(g_P, P, axis=-1) * scale
    g_q = g_S @ kw
    # keys and values are the same tensor
    g_kv = P.transpose(0, 2, 1) @ g + g_S.transpose(0, 2, 1) @ qw
    return window_reverse(g_q, w, x, y), window_reverse(g_kv, w, x, y)
