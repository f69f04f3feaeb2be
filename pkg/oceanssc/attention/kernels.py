"""
Scattered linear attention within a single instance cluster.

    out = sga_cluster(Q, K, V)
    A = depth_similarity(proposal_depths, pixel_dists, binning)
    out = sga3d_cluster(Q, K, V, A)

The kernel feature map is ``phi(x) = elu(x) + 1``, strictly positive, so every
denominator is positive. With ``A`` all ones the depth-weighted kernel returns
the unweighted result bit for bit.

Set the ``oceanssc.attention`` logger to DEBUG to dump per-cluster
denominator statistics.
"""

from __future__ import annotations

import logging
from logging import getLogger
from typing import Optional, Tuple

import numpy as np

from ..errors import ShapeError
from ..geometry.camera import DepthBinning, depth_to_bin

log = getLogger(__name__)


def kernel_phi(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return np.where(x > 0, x + 1.0, np.exp(np.minimum(x, 0.0)))


def kernel_phi_grad(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return np.where(x > 0, 1.0, np.exp(np.minimum(x, 0.0)))


def _dump_denominators(kind: str, den: np.ndarray) -> None:
    if den.size and log.isEnabledFor(logging.DEBUG):
        log.debug(f"{kind} denominators m={den.size} min={den.min():.6g} "
                  f"max={den.max():.6g} mean={den.mean():.6g}")


def _check_qkv(Q, K, V):
    if Q.ndim != 2 or K.ndim != 2 or V.ndim != 2:
        raise ShapeError("Q, K and V must be 2D")
    if K.shape[0] != V.shape[0]:
        raise ShapeError(f"{K.shape[0]} keys but {V.shape[0]} values")
    if Q.shape[1] != K.shape[1]:
        raise ShapeError(f"query width {Q.shape[1]} differs from key width {K.shape[1]}")


# ---------------------------------------------------------------------------
# unweighted
# ---------------------------------------------------------------------------

def sga_cluster(Q, K, V) -> np.ndarray:
    """
    ``out_i = phi(Q_i) S / phi(Q_i) z`` with ``S = sum_p phi(K_p)^T V_p`` and
    ``z = sum_p phi(K_p)``; cost O((m + n) C^2). No keys returns ``Q``.
    """
    Q, K, V = (np.asarray(a, dtype=np.float64) for a in (Q, K, V))
    _check_qkv(Q, K, V)
    if K.shape[0] == 0:
        return Q.copy()
    fq, fk = kernel_phi(Q), kernel_phi(K)
    S = fk.T @ V
    z = fk.sum(axis=0)
    den = fq @ z
    _dump_denominators("sga", den)
    return (fq @ S) / den[:, None]


def sga_cluster_vjp(G, Q, K, V) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Return ``(g_Q, g_K, g_V)`` for upstream ``G`` (m x C_v)."""
    Q, K, V, G = (np.asarray(a, dtype=np.float64) for a in (Q, K, V, G))
    if K.shape[0] == 0:
        return G.copy(), np.zeros_like(K), np.zeros_like(V)
    fq, fk = kernel_phi(Q), kernel_phi(K)
    S = fk.T @ V
    z = fk.sum(axis=0)
    den = fq @ z
    out = (fq @ S) / den[:, None]

    g_num = G / den[:, None]
    g_den = -np.sum(G * out, axis=1) / den
    g_fq = g_num @ S.T + g_den[:, None] * z[None, :]
    g_S = fq.T @ g_num
    g_z = fq.T @ g_den
    g_fk = V @ g_S.T + g_z[None, :]
    g_V = fk @ g_S
    return g_fq * kernel_phi_grad(Q), g_fk * kernel_phi_grad(K), g_V


# ---------------------------------------------------------------------------
# depth weighted
# ---------------------------------------------------------------------------

def depth_similarity(proposal_depths, pixel_dists, binning: DepthBinning) -> np.ndarray:
    """``A[i, p] = pixel_dists[p, bin(depth_i)]``, an m x n matrix."""
    dists = np.asarray(pixel_dists, dtype=np.float64)
    bins = depth_to_bin(np.asarray(proposal_depths, dtype=np.float64).reshape(-1), binning)
    if dists.ndim != 2 or dists.shape[1] != binning.num_bins:
        raise ShapeError(f"pixel_dists must be n x {binning.num_bins}, got {dists.shape}")
    return dists[:, bins].T


def depth_similarity_vjp(g_A, proposal_depths, num_pixels: int, binning: DepthBinning) -> np.ndarray:
    """Gradient with respect to ``pixel_dists`` (n x D)."""
    bins = depth_to_bin(np.asarray(proposal_depths, dtype=np.float64).reshape(-1), binning)
    g = np.zeros((binning.num_bins, num_pixels))
    np.add.at(g, bins, np.asarray(g_A, dtype=np.float64))
    return g.T


def sga3d_cluster(Q, K, V, A: Optional[np.ndarray] = None,
                  weighted_denominator: bool = False) -> np.ndarray:
    """
    ``out_i = sum_p A_ip <phi(Q_i), phi(K_p)> V_p / sum_p <phi(Q_i), phi(K_p)>``.

    ``weighted_denominator`` also weights the denominator by ``A``; rows whose
    weighted denominator vanishes return zero.
    """
    Q, K, V = (np.asarray(a, dtype=np.float64) for a in (Q, K, V))
    _check_qkv(Q, K, V)
    if A is not None:
        A = np.asarray(A, dtype=np.float64)
        if A.shape != (Q.shape[0], K.shape[0]):
            raise ShapeError(f"similarity is {A.shape}, expected {(Q.shape[0], K.shape[0])}")
    if K.shape[0] == 0:
        return Q.copy()
    if A is None or (not weighted_denominator and np.all(A == 1.0)):
        return sga_cluster(Q, K, V)

    W = kernel_phi(Q) @ kernel_phi(K).T
    B = A * W
    den = (B if weighted_denominator else W).sum(axis=1)
    _dump_denominators("sga3d", den)
    safe = np.where(den > 0, den, 1.0)
    return (B @ V) / safe[:, None]


def sga3d_cluster_vjp(G, Q, K, V, A: Optional[np.ndarray] = None,
                      weighted_denominator: bool = False):
    """Return ``(g_Q, g_K, g_V, g_A)``; ``g_A`` is None when ``A`` is None."""
    Q, K, V, G = (np.asarray(a, dtype=np.float64) for a in (Q, K, V, G))
    if A is None:
        return sga_cluster_vjp(G, Q, K, V) + (None,)
    A = np.asarray(A, dtype=np.float64)
    if K.shape[0] == 0:
        return G.copy(), np.zeros_like(K), np.zeros_like(V), np.zeros_like(A)

    fq, fk = kernel_phi(Q), kernel_phi(K)
    W = fq @ fk.T
    B = A * W
    den = (B if weighted_denominator else W).sum(axis=1)
    live = den > 0
    safe = np.where(live, den, 1.0)
    out = (B @ V) / safe[:, None]

    g_num = G / safe[:, None]
    g_den = np.where(live, -np.sum(G * out, axis=1) / safe, 0.0)
    g_B = g_num @ V.T
    g_V = B.T @ g_num
    if weighted_denominator:
        g_B = g_B + g_den[:, None]
        g_W = g_B * A
    else:
        g_W = g_B * A + g_den[:, None]
    g_A = g_B * W
    g_fq = g_W @ fk
    g_fk = g_W.T @ fq
    return g_fq * kernel_phi_grad(Q), g_fk * kernel_phi_grad(K), g_V, g_A
