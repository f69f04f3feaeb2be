"""
Reconstruction loss and local attention refinement of the scene.

The scene volume is flattened to a BEV with ``z*C`` channels and projected to
C; it queries the fused instance BEV inside non-overlapping windows, and the
refined BEV is expanded back to ``z*C`` and added to the volume.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict

import numpy as np

from ..attention.window import window_attention, window_attention_vjp
from ..errors import ShapeError
from ..utils.nn import linear, linear_vjp


def reconstruction_loss(p_hat, f_bev) -> float:
    """Plain sum of squared differences."""
    p_hat = np.asarray(p_hat, dtype=np.float64)
    f_bev = np.asarray(f_bev, dtype=np.float64)
    if p_hat.shape != f_bev.shape:
        raise ShapeError(f"fused BEV {p_hat.shape} and scene BEV {f_bev.shape} differ")
    return float(np.sum((p_hat - f_bev) ** 2))


def reconstruction_loss_vjp(g, p_hat, f_bev):
    """Return ``(g_p_hat, g_f_bev)`` for upstream scalar ``g``."""
    diff = 2.0 * g * (np.asarray(p_hat, dtype=np.float64) - np.asarray(f_bev, dtype=np.float64))
    return diff, -diff


@dataclass
class RefineParams:
    w_in: np.ndarray
    b_in: np.ndarray
    w_kv: np.ndarray
    b_kv: np.ndarray
    w_out: np.ndarray
    b_out: np.ndarray

    @classmethod
    def init(cls, rng: np.random.Generator, channels: int, depth: int,
             zero_output: bool = True) -> "RefineParams":
        flat = depth * channels
        w_out = (np.zeros((channels, flat)) if zero_output
                 else rng.standard_normal((channels, flat)) / np.sqrt(channels))
        return cls(rng.standard_normal((flat, channels)) / np.sqrt(flat), np.zeros(channels),
                   rng.standard_normal((channels, channels)) / np.sqrt(channels), np.zeros(channels),
                   w_out, np.zeros(flat))

    def arrays(self) -> Dict[str, np.ndarray]:
        return dict(w_in=self.w_in, b_in=self.b_in, w_kv=self.w_kv, b_kv=self.b_kv,
                    w_out=self.w_out, b_out=self.b_out)


def _refine_terms(volume, p_hat, params: RefineParams, window: int):
    vol = np.asarray(volume, dtype=np.float64)
    x, y, z, c = vol.shape
    if np.shape(p_hat)[:2] != (x, y):
        raise ShapeError(f"fused BEV {np.shape(p_hat)} does not cover the {x}x{y} scene")
    flat = vol.reshape(x, y, z * c)
    q = linear(flat, params.w_in, params.b_in)
    kv = linear(np.asarray(p_hat, dtype=np.float64), params.w_kv, params.b_kv)
    att = window_attention(q, kv, window)
    return vol, flat, q, kv, att


def refine_scene(volume, p_hat, params: RefineParams, window: int) -> np.ndarray:
    """Refined ``x x y x z x C`` volume (same shape as the input)."""
    vol, _, _, _, att = _refine_terms(volume, p_hat, params, window)
    return vol + linear(att, params.w_out, params.b_out).reshape(vol.shape)


def refine_scene_vjp(g_out, volume, p_hat, params: RefineParams, window: int):
    """Return ``(g_volume, g_p_hat, g_params)``."""
    vol, flat, q, kv, att = _refine_terms(volume, p_hat, params, window)
    x, y, z, c = vol.shape
    g_out = np.asarray(g_out, dtype=np.float64)
    g_att, g_w_out, g_b_out = linear_vjp(g_out.reshape(x, y, z * c), att, params.w_out)
    g_q, g_kv = window_attention_vjp(g_att, q, kv, window)
    g_flat, g_w_in, g_b_in = linear_vjp(g_q, flat, params.w_in)
    g_p_hat, g_w_kv, g_b_kv = linear_vjp(g_kv, np.asarray(p_hat, dtype=np.float64), params.w_kv)
    grads = dict(w_in=g_w_in, b_in=g_b_in, w_kv=g_w_kv, b_kv=g_b_kv, w_out=g_w_out, b_out=g_b_out)
    return g_out + g_flat.reshape(vol.shape), g_p_hat, grads
