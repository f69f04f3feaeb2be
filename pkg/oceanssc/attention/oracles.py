"""
Brute-force references for the attention kernels.

Each oracle loops over individual query/key pairs (or evaluates dense masked
attention) so that it shares no factorisation with the fast kernels.

    report = oracle_report("sga3d", trials=100, seed=0)
    report.max_deviation
"""

from __future__ import annotations

import math
import time
from logging import getLogger
from typing import Dict, List

import numpy as np
from pydantic import BaseModel

from ..errors import NumericalCheckError
from .gsga import GsgaParams, gsga
from .kernels import sga3d_cluster, sga_cluster
from .window import window_attention

log = getLogger(__name__)

ORACLE_TOLERANCE = 1e-6


def _phi_scalar(x: float) -> float:
    return x + 1.0 if x > 0 else math.exp(x)


def _kernel(a, b) -> float:
    return math.fsum(_phi_scalar(float(x)) * _phi_scalar(float(y)) for x, y in zip(a, b))


def sga_pairwise(Q, K, V) -> np.ndarray:
    return sga3d_pairwise(Q, K, V, np.ones((len(Q), len(K))))


def sga3d_pairwise(Q, K, V, A, weighted_denominator: bool = False) -> np.ndarray:
    Q, K, V = (np.asarray(a, dtype=np.float64) for a in (Q, K, V))
    if len(K) == 0:
        return Q.copy()
    out = np.zeros((len(Q), V.shape[1]))
    for i in range(len(Q)):
        num = np.zeros(V.shape[1])
        den = 0.0
        for p in range(len(K)):
            kern = _kernel(Q[i], K[p])
            num += A[i][p] * kern * V[p]
            den += A[i][p] * kern if weighted_denominator else kern
        out[i] = num / den if den > 0 else 0.0
    return out


def _bilinear_scalar(fmap: np.ndarray, x: float, y: float) -> np.ndarray:
    h, w = fmap.shape[:2]
    x = min(max(x, 0.0), w - 1.0)
    y = min(max(y, 0.0), h - 1.0)
    x0, y0 = min(int(math.floor(x)), w - 1), min(int(math.floor(y)), h - 1)
    acc = np.zeros(fmap.shape[2])
    for dy in (0, 1):
        for dx in (0, 1):
            wx = (x - x0) if dx else (1.0 - (x - x0))
            wy = (y - y0) if dy else (1.0 - (y - y0))
            acc += wx * wy * fmap[min(y0 + dy, h - 1), min(x0 + dx, w - 1)]
    return acc


def gsga_loop(queries, positions, image_features, sam_features, params: GsgaParams) -> np.ndarray:
    q = np.asarray(queries, dtype=np.float64)
    n, c = q.shape
    k = params.points
    out = np.zeros((n, params.w.shape[1]))
    for i in range(n):
        offsets = (q[i] @ params.offset_w + params.offset_b).reshape(k, 2)
        logits = q[i] @ params.weight_w + params.weight_b
        weights = np.exp(logits - logits.max())
        weights /= weights.sum()
        for j in range(k):
            x = positions[i][0] + offsets[j][0]
            y = positions[i][1] + offsets[j][1]
            if params.bypass_gate:
                gate = 1.0
            else:
                sam = _bilinear_scalar(sam_features, x, y) @ params.gate_w + params.gate_b
                z = float(q[i] @ sam) / math.sqrt(c) + float(params.gate_bias[0])
                gate = 1.0 / (1.0 + math.exp(-z))
            out[i] += gate * weights[j] * (_bilinear_scalar(image_features, x, y) @ params.w)
    return out


def window_dense(query_bev, kv_bev, w: int) -> np.ndarray:
    """Dense attention over all cells with a block-diagonal window mask."""
    q = np.asarray(query_bev, dtype=np.float64)
    kv = np.asarray(kv_bev, dtype=np.float64)
    x, y, c = q.shape
    qf, kf = q.reshape(-1, c), kv.reshape(-1, c)
    xs, ys = np.meshgrid(np.arange(x), np.arange(y), indexing="ij")
    window_id = ((xs // w) * (y // w) + ys // w).reshape(-1)
    scores = qf @ kf.T / math.sqrt(c)
    scores = np.where(window_id[:, None] == window_id[None, :], scores, -np.inf)
    scores = np.exp(scores - scores.max(axis=1, keepdims=True))
    return (scores / scores.sum(axis=1, keepdims=True) @ kf).reshape(x, y, c)


# ---------------------------------------------------------------------------
# randomized comparison
# ---------------------------------------------------------------------------

class OracleReport(BaseModel):
    op: str
    trials: int
    max_deviation: float
    seconds: float

    @property
    def passed(self) -> bool:
        return self.max_deviation <= ORACLE_TOLERANCE


def _trial_sga(rng):
    m, n, c = rng.integers(1, 33), rng.integers(1, 33), rng.integers(1, 17)
    Q, K, V = (rng.standard_normal((s, c)) for s in (m, n, n))
    return np.abs(sga_cluster(Q, K, V) - sga_pairwise(Q, K, V)).max()


def _trial_sga3d(rng):
    m, n, c = rng.integers(1, 33), rng.integers(1, 33), rng.integers(1, 17)
    Q, K, V = (rng.standard_normal((s, c)) for s in (m, n, n))
    A = rng.uniform(0.0, 1.0, (m, n))
    weighted = bool(rng.integers(0, 2))
    return np.abs(sga3d_cluster(Q, K, V, A, weighted) - sga3d_pairwise(Q, K, V, A, weighted)).max()


def _trial_gsga(rng):
    n, c, k = rng.integers(1, 9), rng.integers(2, 9), rng.integers(1, 5)
    h, w, cs = rng.integers(2, 9), rng.integers(2, 9), rng.integers(1, 6)
    params = GsgaParams.init(rng, c, c, cs, k)
    params.offset_w = rng.standard_normal(params.offset_w.shape)
    params.offset_b = rng.standard_normal(params.offset_b.shape)
    params.bypass_gate = bool(rng.integers(0, 2))
    q = rng.standard_normal((n, c))
    pos = rng.uniform(-1.0, max(h, w), (n, 2))
    img, sam = rng.standard_normal((h, w, c)), rng.standard_normal((h, w, cs))
    return np.abs(gsga(q, pos, img, sam, params) - gsga_loop(q, pos, img, sam, params)).max()


def _trial_window(rng):
    w = int(rng.choice([1, 2, 4]))
    x, y, c = w * rng.integers(1, 5), w * rng.integers(1, 5), rng.integers(1, 17)
    q, kv = rng.standard_normal((x, y, c)), rng.standard_normal((x, y, c))
    return np.abs(window_attention(q, kv, w) - window_dense(q, kv, w)).max()


ORACLES = {
    "sga": _trial_sga,
    "sga3d": _trial_sga3d,
    "gsga": _trial_gsga,
    "window": _trial_window,
}


def oracle_report(op: str, trials: int = 100, seed: int = 0) -> OracleReport:
    """Max absolute deviation between a kernel and its oracle over random trials."""
    if op not in ORACLES:
        raise KeyError(f"unknown oracle {op!r} (known: {', '.join(ORACLES)})")
    rng = np.random.default_rng(seed)
    start = time.perf_counter()
    worst = 0.0
    for _ in range(trials):
        worst = max(worst, float(ORACLES[op](rng)))
    report = OracleReport(op=op, trials=trials, max_deviation=worst,
                          seconds=time.perf_counter() - start)
    log.info(f"oracle {op}: {trials} trials, max deviation {worst:.3e}")
    return report


def check_oracles(ops: List[str], trials: int = 100, seed: int = 0) -> Dict[str, OracleReport]:
    """Run several oracles; raise NumericalCheckError if any exceeds the tolerance."""
    reports = {op: oracle_report(op, trials, seed) for op in ops}
    failed = [r for r in reports.values() if not r.passed]
    if failed:
        raise NumericalCheckError(", ".join(f"{r.op} deviates by {r.max_deviation:.3e}" for r in failed))
    return reports
