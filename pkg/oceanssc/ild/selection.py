"""
Dynamic instance selection and BEV fusion.

    logits = decision_logits(pooled.features, head)
    decision = gumbel_decision(logits, tau=1.0, rng=rng)
    p_hat, weights = combine_bev(decoded, decision.Z, eps=1e-6)

Decision index 0 is "select", index 1 is "drop"; an exact tie selects.
The forward value is the hard one-hot, gradients flow through the tempered
softmax (straight-through).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Optional, Tuple

import numpy as np

from ..utils.nn import linear, linear_vjp, sigmoid, silu, silu_vjp, softmax, softmax_vjp
from .decoder import DecodedInstanceBev

FUSION_MODES = ("dynamic", "softmax", "sigmoid", "sum")


# ---------------------------------------------------------------------------
# decision head
# ---------------------------------------------------------------------------

@dataclass
class DecisionParams:
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray

    @classmethod
    def init(cls, rng: np.random.Generator, channels: int, zero: bool = False) -> "DecisionParams":
        """Hidden width C; the output bias starts at (1, 0), leaning to select."""
        scale = 0.0 if zero else 1.0
        return cls(rng.standard_normal((channels, channels)) * scale / np.sqrt(channels),
                   np.zeros(channels),
                   rng.standard_normal((channels, 2)) * scale / np.sqrt(channels),
                   np.array([1.0, 0.0]))

    def arrays(self) -> Dict[str, np.ndarray]:
        return {"w1": self.w1, "b1": self.b1, "w2": self.w2, "b2": self.b2}


def decision_logits(features, params: DecisionParams) -> np.ndarray:
    return linear(silu(linear(np.asarray(features, dtype=np.float64), params.w1, params.b1)),
                  params.w2, params.b2)


def decision_logits_vjp(g_logits, features, params: DecisionParams):
    """Return ``(g_features, g_params)``."""
    features = np.asarray(features, dtype=np.float64)
    h = linear(features, params.w1, params.b1)
    a = silu(h)
    g_a, g_w2, g_b2 = linear_vjp(g_logits, a, params.w2)
    g_x, g_w1, g_b1 = linear_vjp(silu_vjp(g_a, h), features, params.w1)
    return g_x, {"w1": g_w1, "b1": g_b1, "w2": g_w2, "b2": g_b2}


# ---------------------------------------------------------------------------
# straight-through Gumbel-Softmax
# ---------------------------------------------------------------------------

@dataclass
class DecisionVector:
    hard: np.ndarray
    soft: np.ndarray
    tau: float

    @property
    def Z(self) -> np.ndarray:
        return self.hard[:, 0]


def gumbel_decision(logits, tau: float, rng: Optional[np.random.Generator] = None,
                    noise: Optional[np.ndarray] = None) -> DecisionVector:
    """
    ``noise`` overrides the Gumbel draw (pass zeros for a deterministic
    argmax); otherwise ``rng`` supplies it.
    """
    if not tau > 0:
        raise ValueError(f"temperature must be positive, got {tau}")
    logits = np.asarray(logits, dtype=np.float64).reshape(-1, 2)
    if noise is None:
        if rng is None:
            raise ValueError("either rng or noise is required")
        noise = rng.gumbel(size=logits.shape)
    y = (logits + noise) / tau
    hard = np.zeros_like(y)
    hard[np.arange(len(y)), np.argmax(y, axis=1)] = 1.0
    return DecisionVector(hard, softmax(y, axis=1), tau)


def gumbel_decision_vjp(g_Z, decision: DecisionVector) -> np.ndarray:
    """Gradient with respect to the logits through the soft relaxation."""
    g_hard = np.zeros_like(decision.soft)
    g_hard[:, 0] = g_Z
    return softmax_vjp(g_hard, decision.soft, axis=1) / decision.tau


# ---------------------------------------------------------------------------
# fusion
# ---------------------------------------------------------------------------

def fusion_weights(alpha, Z, eps: float, fusion: str = "dynamic") -> np.ndarray:
    """Per-instance weights applied to the decoded maps."""
    alpha = np.asarray(alpha, dtype=np.float64)
    if fusion == "dynamic":
        zw = np.asarray(Z, dtype=np.float64) * softmax(alpha)
        return zw / (zw.sum() + eps)
    if fusion == "softmax":
        return softmax(alpha)
    if fusion == "sigmoid":
        return sigmoid(alpha)
    if fusion == "sum":
        return np.ones_like(alpha)
    raise ValueError(f"unknown fusion mode {fusion!r}")


def combine_bev(decoded: DecodedInstanceBev, Z, eps: float = 1e-6,
                fusion: str = "dynamic") -> Tuple[np.ndarray, np.ndarray]:
    """Return ``(P_hat, weights)``; ``P_hat = sum_l weights_l * P_l``."""
    weights = fusion_weights(decoded.alpha, Z, eps, fusion)
    return np.einsum("l,lxyc->xyc", weights, decoded.maps), weights


def combine_bev_vjp(g_p_hat, decoded: DecodedInstanceBev, Z, eps: float = 1e-6,
                    fusion: str = "dynamic"):
    """Return ``(g_maps, g_alpha, g_Z)``."""
    alpha = np.asarray(decoded.alpha, dtype=np.float64)
    Z = np.asarray(Z, dtype=np.float64)
    weights = fusion_weights(alpha, Z, eps, fusion)
    g_p_hat = np.asarray(g_p_hat, dtype=np.float64)
    g_maps = weights[:, None, None, None] * g_p_hat[None]
    g_weights = np.einsum("lxyc,xyc->l", decoded.maps, g_p_hat)
    g_Z = np.zeros_like(Z)
    if fusion == "dynamic":
        w = softmax(alpha)
        denom = np.sum(Z * w) + eps
        g_zw = (g_weights - np.sum(g_weights * weights)) / denom
        g_alpha = softmax_vjp(g_zw * Z, w)
        g_Z = g_zw * w
    elif fusion == "softmax":
        g_alpha = softmax_vjp(g_weights, weights)
    elif fusion == "sigmoid":
        g_alpha = g_weights * weights * (1.0 - weights)
    else:
        g_alpha = np.zeros_like(alpha)
    return g_maps, g_alpha, g_Z
