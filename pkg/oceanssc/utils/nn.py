"""
Dense building blocks shared by the attention, ild and pipeline modules.

Every forward function has a matching ``*_vjp`` taking the upstream gradient
first. Linear maps are row-vector: ``y = x @ W + b`` with ``W`` of shape
``(in, out)``; leading axes of ``x`` are treated as batch.
"""

from __future__ import annotations

from typing import Optional, Tuple

import numpy as np
from scipy.special import expit, softmax as _softmax

RMS_EPSILON = 1e-6


def linear(x: np.ndarray, W: np.ndarray, b: Optional[np.ndarray] = None) -> np.ndarray:
    y = x @ W
    if b is not None:
        y = y + b
    return y


def linear_vjp(g: np.ndarray, x: np.ndarray, W: np.ndarray
               ) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Return ``(g_x, g_W, g_b)``."""
    g2 = g.reshape(-1, g.shape[-1])
    x2 = x.reshape(-1, x.shape[-1])
    return g @ W.T, x2.T @ g2, g2.sum(axis=0)


def sigmoid(x):
    return expit(x)


def silu(x: np.ndarray) -> np.ndarray:
    return x * expit(x)


def silu_vjp(g: np.ndarray, x: np.ndarray) -> np.ndarray:
    s = expit(x)
    return g * s * (1.0 + x * (1.0 - s))


def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    return _softmax(x, axis=axis)


def softmax_vjp(g: np.ndarray, p: np.ndarray, axis: int = -1) -> np.ndarray:
    return p * (g - np.sum(g * p, axis=axis, keepdims=True))


def rms_norm(x: np.ndarray, gain: np.ndarray, eps: float = RMS_EPSILON) -> np.ndarray:
    r = np.sqrt(np.mean(x * x, axis=-1, keepdims=True) + eps)
    return x / r * gain


def rms_norm_vjp(g: np.ndarray, x: np.ndarray, gain: np.ndarray,
                 eps: float = RMS_EPSILON) -> Tuple[np.ndarray, np.ndarray]:
    """Return ``(g_x, g_gain)``."""
    r = np.sqrt(np.mean(x * x, axis=-1, keepdims=True) + eps)
    xh = x / r
    gxh = g * gain
    gx = (gxh - xh * np.mean(gxh * xh, axis=-1, keepdims=True)) / r
    ggain = np.sum((g * xh).reshape(-1, x.shape[-1]), axis=0)
    return gx, ggain
