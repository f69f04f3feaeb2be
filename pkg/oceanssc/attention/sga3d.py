"""
Multi-scale SGA3D over all instance clusters.

For each cluster and each scale, the cluster's proposals attend to the
cluster's pixels at that scale (keys and values from the same pixel
features). Per-scale outputs are summed into a residual; background
proposals and clusters without pixels receive a zero residual.
"""

from __future__ import annotations

from dataclasses import dataclass
from logging import getLogger
from typing import Dict, Mapping, Optional

import numpy as np

from ..geometry.camera import DepthBinning
from ..grouping.clusters import InstanceClustering
from .kernels import (depth_similarity, depth_similarity_vjp, sga3d_cluster,
                      sga3d_cluster_vjp)

log = getLogger(__name__)


@dataclass
class Sga3dParams:
    """Query, key, value and output projections; ``None`` means identity."""

    wq: Optional[np.ndarray] = None
    wk: Optional[np.ndarray] = None
    wv: Optional[np.ndarray] = None
    wo: Optional[np.ndarray] = None


def _proj(x: np.ndarray, w: Optional[np.ndarray]) -> np.ndarray:
    return x if w is None else x @ w


def _cluster_terms(features, clusters, pixel_features, depth_dists, proposal_depths,
                   binning, params, use_depth_similarity):
    """Yield ``(instance, scale, idx, pix, q, k, v, A)`` in ascending instance then scale order."""
    for inst in clusters.clusters:
        idx = clusters.proposals[inst]
        for s in clusters.scales:
            pix = clusters.pixels[s][inst]
            if pix.size == 0:
                continue
            src = pixel_features[s][pix]
            q = _proj(features[idx], params.wq)
            k = _proj(src, params.wk)
            v = _proj(src, params.wv)
            A = None
            if use_depth_similarity:
                A = depth_similarity(proposal_depths[idx], depth_dists[s][pix], binning)
            yield inst, s, idx, pix, q, k, v, A


def sga3d_residual(features: np.ndarray, clusters: InstanceClustering,
                   pixel_features: Mapping[int, np.ndarray], depth_dists: Mapping[int, np.ndarray],
                   proposal_depths: np.ndarray, binning: DepthBinning,
                   params: Optional[Sga3dParams] = None, use_depth_similarity: bool = True,
                   weighted_denominator: bool = False) -> np.ndarray:
    """
    Residual (N x C) of the multi-scale SGA3D update.

    ``pixel_features[s]`` and ``depth_dists[s]`` are row-major flattened
    scale-``s`` maps.
    """
    params = params or Sga3dParams()
    features = np.asarray(features, dtype=np.float64)
    width = features.shape[1] if params.wo is None else params.wo.shape[1]
    acc = {}
    for inst, s, idx, pix, q, k, v, A in _cluster_terms(
            features, clusters, pixel_features, depth_dists, proposal_depths,
            binning, params, use_depth_similarity):
        out = sga3d_cluster(q, k, v, A, weighted_denominator)
        acc[inst] = acc[inst] + out if inst in acc else out
    residual = np.zeros((features.shape[0], width))
    for inst, total in acc.items():
        residual[clusters.proposals[inst]] = _proj(total, params.wo)
    return residual


def run_sga3d(features, clusters, pixel_features, depth_dists, proposal_depths, binning,
              params: Optional[Sga3dParams] = None, use_depth_similarity: bool = True,
              weighted_denominator: bool = False) -> np.ndarray:
    """Proposal features plus their SGA3D residual."""
    if len(features) == 0:
        return np.array(features, dtype=np.float64)
    return np.asarray(features, dtype=np.float64) + sga3d_residual(
        features, clusters, pixel_features, depth_dists, proposal_depths, binning,
        params, use_depth_similarity, weighted_denominator)


def sga3d_residual_vjp(g_residual, features, clusters, pixel_features, depth_dists,
                       proposal_depths, binning, params: Optional[Sga3dParams] = None,
                       use_depth_similarity: bool = True,
                       weighted_denominator: bool = False) -> Dict[str, object]:
    """
    Gradients of :func:`sga3d_residual`.

    Returns a dict with ``features``, ``pixel_features`` and ``depth_dists``
    (dicts keyed by scale) and ``wq``/``wk``/``wv``/``wo`` (None for identity).
    """
    params = params or Sga3dParams()
    features = np.asarray(features, dtype=np.float64)
    g_residual = np.asarray(g_residual, dtype=np.float64)
    g_features = np.zeros_like(features)
    g_pix = {s: np.zeros_like(np.asarray(pixel_features[s], dtype=np.float64)) for s in clusters.scales}
    g_dd = {s: np.zeros_like(np.asarray(depth_dists[s], dtype=np.float64)) for s in clusters.scales}
    g_w = {name: (None if getattr(params, name) is None else np.zeros_like(getattr(params, name)))
           for name in ("wq", "wk", "wv", "wo")}

    terms = list(_cluster_terms(features, clusters, pixel_features, depth_dists,
                                proposal_depths, binning, params, use_depth_similarity))
    totals = {}
    for inst, s, idx, pix, q, k, v, A in terms:
        out = sga3d_cluster(q, k, v, A, weighted_denominator)
        totals[inst] = totals[inst] + out if inst in totals else out

    g_total = {}
    for inst, total in totals.items():
        g_out = g_residual[clusters.proposals[inst]]
        if params.wo is not None:
            g_w["wo"] += total.T @ g_out
            g_out = g_out @ params.wo.T
        g_total[inst] = g_out

    for inst, s, idx, pix, q, k, v, A in terms:
        gq, gk, gv, gA = sga3d_cluster_vjp(g_total[inst], q, k, v, A, weighted_denominator)
        src = pixel_features[s][pix]
        if params.wq is not None:
            g_w["wq"] += features[idx].T @ gq
            gq = gq @ params.wq.T
        if params.wk is not None:
            g_w["wk"] += src.T @ gk
            gk = gk @ params.wk.T
        if params.wv is not None:
            g_w["wv"] += src.T @ gv
            gv = gv @ params.wv.T
        g_features[idx] += gq
        g_pix[s][pix] += gk + gv
        if gA is not None:
            g_dd[s][pix] += depth_similarity_vjp(gA, proposal_depths[idx], pix.size, binning)

    return {"features": g_features, "pixel_features": g_pix, "depth_dists": g_dd, **g_w}
