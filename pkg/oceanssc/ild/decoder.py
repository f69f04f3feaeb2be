"""
Dynamic instance decoder.

A linear seed produces a ``4 x y/2^n`` map that ``n = log2(x/4)`` stride-2
transposed convolutions (kernel 2) double up to the ``x x y`` BEV, with SiLU
between layers. The last layer emits ``C + 1`` channels: the first ``C`` are
the instance BEV ``P_l``, the mean of the extra channel is the fusion logit
``alpha_l``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Tuple

import numpy as np

from ..config import DECODER_SEED, decoder_depth
from ..errors import ShapeError
from ..utils.nn import silu, silu_vjp


@dataclass
class DecoderParams:
    seed_w: np.ndarray
    seed_b: np.ndarray
    layer_w: List[np.ndarray] = field(default_factory=list)
    layer_b: List[np.ndarray] = field(default_factory=list)

    @property
    def depth(self) -> int:
        return len(self.layer_w)

    @classmethod
    def init(cls, rng: np.random.Generator, channels: int, bev_dims: Tuple[int, int],
             zero: bool = False) -> "DecoderParams":
        x, y = bev_dims
        n = layer_schedule(x, y)
        seed_width = channels + 1 if n == 0 else channels
        seed_cells = DECODER_SEED * (y // 2 ** n)

        def draw(shape, fan_in):
            return np.zeros(shape) if zero else rng.standard_normal(shape) / np.sqrt(fan_in)

        seed_w = draw((channels, seed_cells * seed_width), channels)
        layer_w, layer_b = [], []
        for i in range(n):
            out = channels + 1 if i == n - 1 else channels
            layer_w.append(draw((2, 2, channels, out), channels))
            layer_b.append(np.zeros(out))
        return cls(seed_w, np.zeros(seed_cells * seed_width), layer_w, layer_b)

    def arrays(self) -> Dict[str, np.ndarray]:
        out = {"seed_w": self.seed_w, "seed_b": self.seed_b}
        for i, (w, b) in enumerate(zip(self.layer_w, self.layer_b)):
            out[f"layer{i}_w"] = w
            out[f"layer{i}_b"] = b
        return out


def layer_schedule(x: int, y: int) -> int:
    """Doubling layers needed for an ``x x y`` BEV."""
    n = decoder_depth(x)
    if n is None or y % (2 ** n):
        raise ShapeError(f"BEV {x}x{y} is not a power-of-two multiple of the {DECODER_SEED}-row seed")
    return n


@dataclass
class DecodedInstanceBev:
    maps: np.ndarray
    alpha: np.ndarray

    @property
    def count(self) -> int:
        return self.maps.shape[0]


def _upsample(a: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    l, h, wd, _ = a.shape
    out = np.einsum("lhwc,abcd->lhawbd", a, w).reshape(l, 2 * h, 2 * wd, w.shape[3])
    return out + b


def _upsample_vjp(g: np.ndarray, a: np.ndarray, w: np.ndarray):
    l, h, wd, _ = a.shape
    g6 = g.reshape(l, h, 2, wd, 2, w.shape[3])
    return (np.einsum("lhawbd,abcd->lhwc", g6, w),
            np.einsum("lhwc,lhawbd->abcd", a, g6),
            g.sum(axis=(0, 1, 2)))


def _run(features: np.ndarray, params: DecoderParams, bev_dims):
    x, y = bev_dims
    n = params.depth
    l = features.shape[0]
    rows, cols = DECODER_SEED, y // 2 ** n
    pre = [(features @ params.seed_w + params.seed_b).reshape(l, rows, cols, -1)]
    for w, b in zip(params.layer_w, params.layer_b):
        pre.append(_upsample(silu(pre[-1]), w, b))
    out = pre[-1]
    if out.shape[1:3] != (x, y):
        raise ShapeError(f"decoder produced {out.shape[1:3]}, expected {(x, y)}")
    return out, pre


def decode_instance_bev(features, params: DecoderParams, bev_dims) -> DecodedInstanceBev:
    """Decode ``L x C`` (or a single ``C``) features to ``L x x x y x C`` maps and ``L`` logits."""
    feats = np.atleast_2d(np.asarray(features, dtype=np.float64))
    if feats.shape[0] == 0:
        c = params.seed_w.shape[0]
        return DecodedInstanceBev(np.zeros((0,) + tuple(bev_dims) + (c,)), np.zeros(0))
    out, _ = _run(feats, params, bev_dims)
    return DecodedInstanceBev(out[..., :-1], out[..., -1].mean(axis=(1, 2)))


def decode_instance_bev_vjp(g_maps, g_alpha, features, params: DecoderParams, bev_dims):
    """Return ``(g_features, g_params)`` with ``g_params`` keyed as :meth:`DecoderParams.arrays`."""
    feats = np.atleast_2d(np.asarray(features, dtype=np.float64))
    x, y = bev_dims
    out, pre = _run(feats, params, bev_dims)
    g = np.concatenate([np.asarray(g_maps, dtype=np.float64),
                        np.broadcast_to(np.asarray(g_alpha, dtype=np.float64)[:, None, None, None] / (x * y),
                                        out.shape[:3] + (1,))], axis=-1)
    grads = {}
    for i in reversed(range(params.depth)):
        a = silu(pre[i])
        g_a, grads[f"layer{i}_w"], grads[f"layer{i}_b"] = _upsample_vjp(g, a, params.layer_w[i])
        g = silu_vjp(g_a, pre[i])
    g_seed = g.reshape(feats.shape[0], -1)
    grads["seed_w"] = feats.T @ g_seed
    grads["seed_b"] = g_seed.sum(axis=0)
    return g_seed @ params.seed_w.T, grads
