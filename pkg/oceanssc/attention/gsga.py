"""
Similarity-gated deformable attention.

Each query predicts ``K`` sampling offsets around its image position and a
softmax over the ``K`` samples. Every sample is projected by ``W`` and gated
by the sigmoid of a scaled dot product between the query and the projected
segmentation feature at the same location:

    Q_hat = sum_k G_k * A_k * (F(p + dp_k) @ W)

Points are ``(x, y)`` = (column, row) in feature-map pixels and are clamped
to the map border before bilinear sampling.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from logging import getLogger
from typing import Dict, Tuple

import numpy as np

from ..errors import ShapeError
from ..utils.nn import sigmoid, softmax, softmax_vjp

log = getLogger(__name__)

DEFAULT_GATE_BIAS = 2.0


# ---------------------------------------------------------------------------
# bilinear sampling
# ---------------------------------------------------------------------------

def _corners(shape, points):
    h, w = shape
    pts = np.asarray(points, dtype=np.float64)
    x = np.clip(pts[..., 0], 0.0, w - 1)
    y = np.clip(pts[..., 1], 0.0, h - 1)
    x0 = np.minimum(np.floor(x).astype(np.int64), w - 1)
    y0 = np.minimum(np.floor(y).astype(np.int64), h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    return x, y, x0, y0, x1, y1, x - x0, y - y0


def bilinear_sample(feature_map, points) -> np.ndarray:
    """Sample an H x W x C map at ``(..., 2)`` points; returns ``(..., C)``."""
    fmap = np.asarray(feature_map, dtype=np.float64)
    _, _, x0, y0, x1, y1, fx, fy = _corners(fmap.shape[:2], points)
    fx, fy = fx[..., None], fy[..., None]
    return ((1 - fx) * (1 - fy) * fmap[y0, x0] + fx * (1 - fy) * fmap[y0, x1]
            + (1 - fx) * fy * fmap[y1, x0] + fx * fy * fmap[y1, x1])


def bilinear_sample_vjp(g, feature_map, points) -> Tuple[np.ndarray, np.ndarray]:
    """Return ``(g_feature_map, g_points)``; points clamped on an axis get zero on it."""
    fmap = np.asarray(feature_map, dtype=np.float64)
    h, w, c = fmap.shape
    pts = np.asarray(points, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    _, _, x0, y0, x1, y1, fx, fy = _corners((h, w), pts)

    g_map = np.zeros_like(fmap)
    flat_g = g.reshape(-1, c)
    for yy, xx, wgt in ((y0, x0, (1 - fx) * (1 - fy)), (y0, x1, fx * (1 - fy)),
                        (y1, x0, (1 - fx) * fy), (y1, x1, fx * fy)):
        np.add.at(g_map, (yy.reshape(-1), xx.reshape(-1)), wgt.reshape(-1, 1) * flat_g)

    f00, f01, f10, f11 = fmap[y0, x0], fmap[y0, x1], fmap[y1, x0], fmap[y1, x1]
    fxe, fye = fx[..., None], fy[..., None]
    d_dx = (1 - fye) * (f01 - f00) + fye * (f11 - f10)
    d_dy = (1 - fxe) * (f10 - f00) + fxe * (f11 - f01)
    inside_x = (pts[..., 0] > 0) & (pts[..., 0] < w - 1)
    inside_y = (pts[..., 1] > 0) & (pts[..., 1] < h - 1)
    g_pts = np.stack([np.where(inside_x, np.sum(g * d_dx, axis=-1), 0.0),
                      np.where(inside_y, np.sum(g * d_dy, axis=-1), 0.0)], axis=-1)
    return g_map, g_pts


# ---------------------------------------------------------------------------
# parameters
# ---------------------------------------------------------------------------

@dataclass
class GsgaParams:
    """
    ``w``: image channels x C; offset head C -> 2K; weight head C -> K;
    gate projection segmentation channels -> C plus a scalar gate bias.
    """

    w: np.ndarray
    offset_w: np.ndarray
    offset_b: np.ndarray
    weight_w: np.ndarray
    weight_b: np.ndarray
    gate_w: np.ndarray
    gate_b: np.ndarray
    gate_bias: np.ndarray = field(default_factory=lambda: np.array([DEFAULT_GATE_BIAS]))
    bypass_gate: bool = False

    @property
    def points(self) -> int:
        return self.weight_w.shape[1]

    @classmethod
    def init(cls, rng: np.random.Generator, channels: int, image_channels: int,
             sam_channels: int, points: int, gate_bias: float = DEFAULT_GATE_BIAS,
             zero_output: bool = False) -> "GsgaParams":
        """Zero offsets; ``zero_output`` zero-initialises ``w``."""
        scale = 1.0 / np.sqrt(channels)
        w = (np.zeros((image_channels, channels)) if zero_output
             else rng.standard_normal((image_channels, channels)) / np.sqrt(image_channels))
        return cls(
            w=w,
            offset_w=np.zeros((channels, 2 * points)),
            offset_b=np.zeros(2 * points),
            weight_w=rng.standard_normal((channels, points)) * scale,
            weight_b=np.zeros(points),
            gate_w=rng.standard_normal((sam_channels, channels)) / np.sqrt(sam_channels),
            gate_b=np.zeros(channels),
            gate_bias=np.array([gate_bias], dtype=np.float64),
        )

    def arrays(self) -> Dict[str, np.ndarray]:
        return {f.name: getattr(self, f.name) for f in fields(self) if f.name != "bypass_gate"}


# ---------------------------------------------------------------------------
# forward / backward
# ---------------------------------------------------------------------------

def _forward(queries, positions, image_features, sam_features, params: GsgaParams):
    q = np.asarray(queries, dtype=np.float64)
    pos = np.asarray(positions, dtype=np.float64)
    img = np.asarray(image_features, dtype=np.float64)
    sam = np.asarray(sam_features, dtype=np.float64)
    if img.shape[:2] != sam.shape[:2]:
        raise ShapeError(f"image map {img.shape[:2]} and segmentation map {sam.shape[:2]} differ")
    n, c = q.shape
    k = params.points
    off = (q @ params.offset_w + params.offset_b).reshape(n, k, 2)
    pts = pos[:, None, :] + off
    A = softmax(q @ params.weight_w + params.weight_b, axis=1)
    Fk = bilinear_sample(img, pts)
    Pk = Fk @ params.w
    if params.bypass_gate:
        Sk = Hk = None
        G = np.ones((n, k))
    else:
        Sk = bilinear_sample(sam, pts)
        Hk = Sk @ params.gate_w + params.gate_b
        logits = np.einsum("nc,nkc->nk", q, Hk) / np.sqrt(c) + params.gate_bias[0]
        G = sigmoid(logits)
    out = np.einsum("nk,nkc->nc", G * A, Pk)
    return out, dict(q=q, pts=pts, A=A, Fk=Fk, Pk=Pk, Sk=Sk, Hk=Hk, G=G, img=img, sam=sam)


def gsga(queries, positions, image_features, sam_features, params: GsgaParams) -> np.ndarray:
    """Aggregated ``Q_hat`` (N x C); the caller adds it to the queries as a residual."""
    if len(queries) == 0:
        return np.zeros((0, params.w.shape[1]))
    return _forward(queries, positions, image_features, sam_features, params)[0]


def gsga_vjp(g_out, queries, positions, image_features, sam_features,
             params: GsgaParams) -> Dict[str, np.ndarray]:
    """
    Gradients of :func:`gsga` keyed ``queries``, ``positions``, ``image_features``,
    ``sam_features`` and every array of :class:`GsgaParams`.
    """
    if len(queries) == 0:
        grads = {name: np.zeros_like(a) for name, a in params.arrays().items()}
        grads.update(queries=np.zeros((0, params.offset_w.shape[0])),
                     positions=np.zeros((0, 2)),
                     image_features=np.zeros_like(np.asarray(image_features, dtype=np.float64)),
                     sam_features=np.zeros_like(np.asarray(sam_features, dtype=np.float64)))
        return grads

    _, t = _forward(queries, positions, image_features, sam_features, params)
    q, pts, A, G = t["q"], t["pts"], t["A"], t["G"]
    n, c = q.shape
    k = params.points
    g_out = np.asarray(g_out, dtype=np.float64)

    g_Pk = (G * A)[:, :, None] * g_out[:, None, :]
    g_GA = np.einsum("nkc,nc->nk", t["Pk"], g_out)
    g_A = g_GA * G
    cimg = t["Fk"].shape[-1]
    g_w = t["Fk"].reshape(-1, cimg).T @ g_Pk.reshape(-1, params.w.shape[1])
    g_Fk = g_Pk @ params.w.T

    g_q = np.zeros_like(q)
    g_gate_w = np.zeros_like(params.gate_w)
    g_gate_b = np.zeros_like(params.gate_b)
    g_gate_bias = np.zeros_like(params.gate_bias)
    g_sam = np.zeros_like(t["sam"])
    g_pts = np.zeros_like(pts)
    if not params.bypass_gate:
        g_logits = g_GA * A * G * (1.0 - G)
        g_q += np.einsum("nk,nkc->nc", g_logits, t["Hk"]) / np.sqrt(c)
        g_Hk = g_logits[:, :, None] * q[:, None, :] / np.sqrt(c)
        g_gate_w = t["Sk"].reshape(-1, t["Sk"].shape[-1]).T @ g_Hk.reshape(-1, c)
        g_gate_b = g_Hk.sum(axis=(0, 1))
        g_gate_bias = np.array([g_logits.sum()])
        g_sam, g_pts_s = bilinear_sample_vjp(g_Hk @ params.gate_w.T, t["sam"], pts)
        g_pts += g_pts_s

    g_img, g_pts_f = bilinear_sample_vjp(g_Fk, t["img"], pts)
    g_pts += g_pts_f

    g_wl = softmax_vjp(g_A, A, axis=1)
    g_q += g_wl @ params.weight_w.T
    g_off = g_pts.reshape(n, 2 * k)
    g_q += g_off @ params.offset_w.T

    return {
        "queries": g_q,
        "positions": g_pts.sum(axis=1),
        "image_features": g_img,
        "sam_features": g_sam,
        "w": g_w,
        "offset_w": q.T @ g_off,
        "offset_b": g_off.sum(axis=0),
        "weight_w": q.T @ g_wl,
        "weight_b": g_wl.sum(axis=0),
        "gate_w": g_gate_w,
        "gate_b": g_gate_b,
        "gate_bias": g_gate_bias,
    }
