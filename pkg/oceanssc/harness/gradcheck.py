"""
Finite-difference checks of every hand-written vector-Jacobian product.

Each registered op draws small random inputs, evaluates ``L = sum(G * f(x))``
for a random upstream ``G`` and compares the analytic ``dL/dx`` against
central differences (``h = 1e-5``) at a few sampled coordinates of every
input. Relative error is ``|a - n| / max(|a|, |n|, 1e-8)``.

    report = gradcheck("sga_cluster", trials=100)
    report.max_error < 1e-4

``probe_pipeline`` does the same for the full model's total loss at sampled
parameter entries.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from logging import getLogger
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
from p_tqdm import p_map
from pydantic import BaseModel

from ..attention.gsga import GsgaParams, bilinear_sample, bilinear_sample_vjp, gsga, gsga_vjp
from ..attention.kernels import (depth_similarity, depth_similarity_vjp, sga3d_cluster,
                                 sga3d_cluster_vjp, sga_cluster, sga_cluster_vjp)
from ..attention.sga3d import Sga3dParams, sga3d_residual, sga3d_residual_vjp
from ..attention.window import window_attention, window_attention_vjp
from ..config import HarnessConfig, threads
from ..errors import NumericalCheckError
from ..geometry.camera import CameraModel, DepthBinning, GridSpec
from ..geometry.lifting import (QueryProposalSet, VoxelVolume, lift_features, lift_features_vjp,
                                lift_plan, scatter_proposals, scatter_proposals_vjp)
from ..grouping.clusters import build_clusters
from ..grouping.masks import InstanceMask
from ..ild.decoder import DecoderParams, decode_instance_bev, decode_instance_bev_vjp
from ..ild.pooling import pool_instance_features, pool_instance_features_vjp
from ..ild.refine import RefineParams, reconstruction_loss, reconstruction_loss_vjp, refine_scene, refine_scene_vjp
from ..ild.selection import (DecisionParams, DecodedInstanceBev, combine_bev, combine_bev_vjp,
                             decision_logits, decision_logits_vjp, gumbel_decision,
                             gumbel_decision_vjp)
from ..losses.losses import (SemanticOccupancy, cross_entropy_loss, cross_entropy_loss_vjp,
                             depth_loss, depth_loss_vjp, scal_losses, scal_losses_vjp)
from ..pipeline.model import backward, forward, predict_head, predict_head_vjp
from ..pipeline.params import ModelParams, init_params
from ..utils.nn import (linear, linear_vjp, rms_norm, rms_norm_vjp, silu, silu_vjp, softmax,
                        softmax_vjp)
from .fixtures import generate_scene

log = getLogger(__name__)

STEP = 1e-5
DENOMINATOR_FLOOR = 1e-8
GRADCHECK_TOLERANCE = 1e-4
PROBE_TOLERANCE = 1e-3
PROBE_FLOOR = 1e-6
PROBES_PER_INPUT = 4


# =============================================================================
# CASES
# =============================================================================

@dataclass
class GradCase:
    """Differentiable ``inputs``, the forward map and its VJP over those inputs."""

    inputs: Dict[str, np.ndarray]
    fn: Callable[[Dict[str, np.ndarray]], np.ndarray]
    vjp: Callable[[Dict[str, np.ndarray], np.ndarray], Dict[str, np.ndarray]]


def _normal(rng, *shape):
    return rng.standard_normal(shape)


def _case_linear(rng):
    m, i, o = rng.integers(1, 6, size=3)
    return GradCase(
        dict(x=_normal(rng, m, i), W=_normal(rng, i, o), b=_normal(rng, o)),
        lambda a: linear(a["x"], a["W"], a["b"]),
        lambda a, G: dict(zip(("x", "W", "b"), linear_vjp(G, a["x"], a["W"]))))


def _case_silu(rng):
    return GradCase(dict(x=_normal(rng, 4, 5) * 2), lambda a: silu(a["x"]),
                    lambda a, G: dict(x=silu_vjp(G, a["x"])))


def _case_softmax(rng):
    return GradCase(dict(x=_normal(rng, 3, 5)), lambda a: softmax(a["x"], axis=-1),
                    lambda a, G: dict(x=softmax_vjp(G, softmax(a["x"], axis=-1), axis=-1)))


def _case_rms_norm(rng):
    return GradCase(dict(x=_normal(rng, 3, 6), gain=_normal(rng, 6)),
                    lambda a: rms_norm(a["x"], a["gain"]),
                    lambda a, G: dict(zip(("x", "gain"), rms_norm_vjp(G, a["x"], a["gain"]))))


def _small_scene():
    camera = CameraModel.looking_forward(2.0, 2.0, 2.0, 2.0, height=0.2)
    grid = GridSpec(dims=(8, 8, 2), origin=(0.0, -1.6, -0.4), resolution=0.4)
    binning = DepthBinning(d_min=0.5, d_max=3.5, num_bins=6)
    return camera, grid, binning


def _case_lift_features(rng):
    camera, grid, binning = _small_scene()
    plan = lift_plan((4, 4), camera, binning, grid, stride=1)

    def fn(a):
        return lift_features(a["context"], a["depth_dist"], camera, binning, grid, 1, plan).data

    def vjp(a, G):
        return dict(zip(("context", "depth_dist"), lift_features_vjp(G, a["context"], a["depth_dist"], plan)))

    return GradCase(dict(context=_normal(rng, 4, 4, 3),
                         depth_dist=rng.uniform(0.1, 1.0, (4, 4, binning.num_bins))), fn, vjp)


def _case_scatter_proposals(rng):
    grid = GridSpec(dims=(3, 3, 2), origin=(0.0, 0.0, 0.0), resolution=1.0)
    cells = np.array([[0, 0, 0], [1, 2, 1], [2, 1, 0]])
    props = QueryProposalSet(np.zeros((3, 4)), cells, np.zeros((3, 2)), np.zeros(3), np.zeros(3, bool))

    def fn(a):
        return scatter_proposals(VoxelVolume(grid, a["volume"]), props, a["features"]).data

    def vjp(a, G):
        return dict(zip(("volume", "features"), scatter_proposals_vjp(G, props)))

    return GradCase(dict(volume=_normal(rng, 3, 3, 2, 4), features=_normal(rng, 3, 4)), fn, vjp)


def _qkv(rng):
    m, n, c = rng.integers(1, 7), rng.integers(1, 9), rng.integers(1, 6)
    return dict(Q=_normal(rng, m, c), K=_normal(rng, n, c), V=_normal(rng, n, int(rng.integers(1, 5))))


def _case_sga_cluster(rng):
    return GradCase(_qkv(rng), lambda a: sga_cluster(a["Q"], a["K"], a["V"]),
                    lambda a, G: dict(zip("QKV", sga_cluster_vjp(G, a["Q"], a["K"], a["V"]))))


def _case_depth_similarity(rng):
    binning = DepthBinning(d_min=1.0, d_max=13.0, num_bins=12)
    depths = rng.uniform(1.0, 13.0, int(rng.integers(1, 6)))
    n = int(rng.integers(1, 7))
    return GradCase(dict(pixel_dists=rng.uniform(0.0, 1.0, (n, binning.num_bins))),
                    lambda a: depth_similarity(depths, a["pixel_dists"], binning),
                    lambda a, G: dict(pixel_dists=depth_similarity_vjp(G, depths, n, binning)))


def _sga3d_case(rng, weighted: bool):
    inputs = _qkv(rng)
    inputs["A"] = rng.uniform(0.1, 1.0, (len(inputs["Q"]), len(inputs["K"])))

    def fn(a):
        return sga3d_cluster(a["Q"], a["K"], a["V"], a["A"], weighted)

    def vjp(a, G):
        return dict(zip("QKVA", sga3d_cluster_vjp(G, a["Q"], a["K"], a["V"], a["A"], weighted)))

    return GradCase(inputs, fn, vjp)


def _case_sga3d_cluster(rng):
    return _sga3d_case(rng, weighted=False)


def _case_sga3d_cluster_weighted(rng):
    return _sga3d_case(rng, weighted=True)


def _clusters(rng, num_proposals: int):
    masks = {4: InstanceMask(rng.integers(0, 3, (4, 4)), count=2),
             8: InstanceMask(rng.integers(0, 3, (2, 2)), count=2)}
    return build_clusters(rng.integers(0, 3, num_proposals), masks), masks


def _case_sga3d_residual(rng):
    c, n, binning = 3, 6, DepthBinning(d_min=1.0, d_max=7.0, num_bins=6)
    clusters, masks = _clusters(rng, n)
    depths = rng.uniform(1.0, 7.0, n)
    inputs = dict(features=_normal(rng, n, c), wq=_normal(rng, c, c), wk=_normal(rng, c, c),
                  wv=_normal(rng, c, c), wo=_normal(rng, c, c))
    for s, m in masks.items():
        inputs[f"pix{s}"] = _normal(rng, m.ids.size, c)
        inputs[f"dist{s}"] = rng.uniform(0.05, 1.0, (m.ids.size, binning.num_bins))

    def unpack(a):
        return (a["features"], clusters, {s: a[f"pix{s}"] for s in masks},
                {s: a[f"dist{s}"] for s in masks}, depths, binning,
                Sga3dParams(a["wq"], a["wk"], a["wv"], a["wo"]))

    def vjp(a, G):
        out = sga3d_residual_vjp(G, *unpack(a))
        grads = {k: out[k] for k in ("features", "wq", "wk", "wv", "wo")}
        for s in masks:
            grads[f"pix{s}"] = out["pixel_features"][s]
            grads[f"dist{s}"] = out["depth_dists"][s]
        return grads

    return GradCase(inputs, lambda a: sga3d_residual(*unpack(a)), vjp)


def _case_bilinear_sample(rng):
    h, w = int(rng.integers(3, 7)), int(rng.integers(3, 7))
    pts = np.stack([rng.uniform(-0.5, w - 0.5, 6), rng.uniform(-0.5, h - 0.5, 6)], axis=1)
    return GradCase(dict(feature_map=_normal(rng, h, w, 3), points=pts),
                    lambda a: bilinear_sample(a["feature_map"], a["points"]),
                    lambda a, G: dict(zip(("feature_map", "points"),
                                          bilinear_sample_vjp(G, a["feature_map"], a["points"]))))


_GSGA_ARRAYS = ("w", "offset_w", "offset_b", "weight_w", "weight_b", "gate_w", "gate_b", "gate_bias")


def _gsga_case(rng, bypass: bool):
    n, c, k, cs = int(rng.integers(1, 6)), int(rng.integers(2, 6)), int(rng.integers(1, 4)), 3
    h, w = 6, 7
    params = GsgaParams.init(rng, c, c, cs, k)
    params.offset_w = rng.standard_normal(params.offset_w.shape) * 0.1
    params.offset_b = rng.uniform(-0.3, 0.3, params.offset_b.shape)
    inputs = dict(queries=_normal(rng, n, c),
                  positions=np.stack([rng.uniform(1.5, w - 2.5, n), rng.uniform(1.5, h - 2.5, n)], axis=1),
                  image_features=_normal(rng, h, w, c), sam_features=_normal(rng, h, w, cs))
    inputs.update({name: getattr(params, name) for name in _GSGA_ARRAYS})

    def unpack(a):
        p = GsgaParams(**{name: a[name] for name in _GSGA_ARRAYS}, bypass_gate=bypass)
        return a["queries"], a["positions"], a["image_features"], a["sam_features"], p

    return GradCase(inputs, lambda a: gsga(*unpack(a)), lambda a, G: gsga_vjp(G, *unpack(a)))


def _case_gsga(rng):
    return _gsga_case(rng, bypass=False)


def _case_gsga_bypass(rng):
    return _gsga_case(rng, bypass=True)


def _case_window_attention(rng):
    c = int(rng.integers(1, 5))
    return GradCase(dict(query_bev=_normal(rng, 4, 4, c), kv_bev=_normal(rng, 4, 4, c)),
                    lambda a: window_attention(a["query_bev"], a["kv_bev"], 2),
                    lambda a, G: dict(zip(("query_bev", "kv_bev"),
                                          window_attention_vjp(G, a["query_bev"], a["kv_bev"], 2))))


def _case_pool_instance_features(rng):
    clusters, masks = _clusters(rng, 5)
    inputs = {f"pix{s}": _normal(rng, m.ids.size, 3) for s, m in masks.items()}

    def pix(a):
        return {s: a[f"pix{s}"] for s in masks}

    def vjp(a, G):
        ids = pool_instance_features(clusters, pix(a)).instance_ids
        grads = pool_instance_features_vjp(G, clusters, ids, pix(a))
        return {f"pix{s}": g for s, g in grads.items()}

    return GradCase(inputs, lambda a: pool_instance_features(clusters, pix(a)).features, vjp)


def _case_decode_instance_bev(rng):
    c, dims = 3, (8, 4)
    params = DecoderParams.init(rng, c, dims)
    inputs = dict(features=_normal(rng, 2, c), **params.arrays())

    def unpack(a):
        n = params.depth
        return DecoderParams(a["seed_w"], a["seed_b"], [a[f"layer{i}_w"] for i in range(n)],
                             [a[f"layer{i}_b"] for i in range(n)])

    def fn(a):
        out = decode_instance_bev(a["features"], unpack(a), dims)
        return np.concatenate([out.maps.ravel(), out.alpha])

    def vjp(a, G):
        size = 2 * dims[0] * dims[1] * c
        g_maps = G[:size].reshape(2, dims[0], dims[1], c)
        g_feat, grads = decode_instance_bev_vjp(g_maps, G[size:], a["features"], unpack(a), dims)
        return dict(features=g_feat, **grads)

    return GradCase(inputs, fn, vjp)


def _case_decision_logits(rng):
    params = DecisionParams.init(rng, 4)
    params.b2 = _normal(rng, 2)
    inputs = dict(features=_normal(rng, 3, 4), **params.arrays())

    def unpack(a):
        return DecisionParams(a["w1"], a["b1"], a["w2"], a["b2"])

    def vjp(a, G):
        g_x, grads = decision_logits_vjp(G, a["features"], unpack(a))
        return dict(features=g_x, **grads)

    return GradCase(inputs, lambda a: decision_logits(a["features"], unpack(a)), vjp)


def _case_gumbel_decision(rng):
    """Soft path only: the hard value is piecewise constant."""
    n, tau = int(rng.integers(1, 5)), float(rng.uniform(0.5, 2.0))
    noise = rng.gumbel(size=(n, 2))

    def decide(a):
        return gumbel_decision(a["logits"], tau, noise=noise)

    return GradCase(dict(logits=_normal(rng, n, 2)), lambda a: decide(a).soft[:, 0],
                    lambda a, G: dict(logits=gumbel_decision_vjp(G, decide(a))))


def _combine_case(rng, fusion: str):
    l = int(rng.integers(2, 5))
    Z = rng.integers(0, 2, l).astype(np.float64)
    Z[0] = 1.0
    inputs = dict(maps=_normal(rng, l, 2, 3, 2), alpha=_normal(rng, l), Z=Z)

    def fn(a):
        return combine_bev(DecodedInstanceBev(a["maps"], a["alpha"]), a["Z"], 1e-6, fusion)[0]

    def vjp(a, G):
        return dict(zip(("maps", "alpha", "Z"),
                        combine_bev_vjp(G, DecodedInstanceBev(a["maps"], a["alpha"]), a["Z"], 1e-6, fusion)))

    return GradCase(inputs, fn, vjp)


def _case_combine_bev(rng):
    return _combine_case(rng, "dynamic")


def _case_combine_bev_softmax(rng):
    return _combine_case(rng, "softmax")


def _case_combine_bev_sigmoid(rng):
    return _combine_case(rng, "sigmoid")


def _case_reconstruction_loss(rng):
    return GradCase(dict(p_hat=_normal(rng, 3, 4, 2), f_bev=_normal(rng, 3, 4, 2)),
                    lambda a: reconstruction_loss(a["p_hat"], a["f_bev"]),
                    lambda a, G: dict(zip(("p_hat", "f_bev"), reconstruction_loss_vjp(G, a["p_hat"], a["f_bev"]))))


def _case_refine_scene(rng):
    c, z = 3, 2
    params = RefineParams.init(rng, c, z, zero_output=False)
    inputs = dict(volume=_normal(rng, 4, 4, z, c), p_hat=_normal(rng, 4, 4, c), **params.arrays())

    def unpack(a):
        return RefineParams(**{k: a[k] for k in params.arrays()})

    def vjp(a, G):
        g_vol, g_p, grads = refine_scene_vjp(G, a["volume"], a["p_hat"], unpack(a), 2)
        return dict(volume=g_vol, p_hat=g_p, **grads)

    return GradCase(inputs, lambda a: refine_scene(a["volume"], a["p_hat"], unpack(a), 2), vjp)


def _labels(rng, shape, classes: int, ignore: bool = True):
    labels = rng.integers(0, classes, shape)
    if ignore:
        labels[rng.uniform(size=shape) < 0.15] = 255
    labels.flat[0] = 0
    return labels


def _case_cross_entropy_loss(rng):
    labels = _labels(rng, (3, 3, 2), 4)
    return GradCase(dict(logits=_normal(rng, 3, 3, 2, 4)),
                    lambda a: cross_entropy_loss(SemanticOccupancy(a["logits"], labels)),
                    lambda a, G: dict(logits=cross_entropy_loss_vjp(G, SemanticOccupancy(a["logits"], labels))))


def _case_scal_losses(rng):
    labels = _labels(rng, (3, 3, 2), 4)

    def fn(a):
        return np.array(scal_losses(SemanticOccupancy(a["logits"], labels)))

    def vjp(a, G):
        return dict(logits=scal_losses_vjp(G[0], G[1], SemanticOccupancy(a["logits"], labels)))

    return GradCase(dict(logits=_normal(rng, 3, 3, 2, 4)), fn, vjp)


def _case_depth_loss(rng):
    binning = DepthBinning(d_min=1.0, d_max=7.0, num_bins=6)
    gt = rng.uniform(0.5, 8.0, (3, 4))
    gt[rng.uniform(size=gt.shape) < 0.3] = 0.0
    gt[0, 0] = 3.0
    return GradCase(dict(pred_dist=rng.uniform(0.05, 1.0, (3, 4, binning.num_bins))),
                    lambda a: depth_loss(a["pred_dist"], gt, binning),
                    lambda a, G: dict(pred_dist=depth_loss_vjp(G, a["pred_dist"], gt, binning)))


def _case_predict_head(rng):
    c, z, ch, k = 3, 2, 4, 3
    inputs = dict(volume=_normal(rng, 2, 2, z, c), w1=_normal(rng, c, z * ch), b1=_normal(rng, z * ch),
                  w2=_normal(rng, ch, k), b2=_normal(rng, k))

    def params(a):
        return ModelParams({f"head.{n}": a[n] for n in ("w1", "b1", "w2", "b2")})

    def vjp(a, G):
        g_vol, grads = predict_head_vjp(G, a["volume"], params(a))
        return dict(volume=g_vol, **grads)

    return GradCase(inputs, lambda a: predict_head(a["volume"], params(a)), vjp)


# name -> (case builder, forward functions it covers)
REGISTRY: Dict[str, Tuple[Callable[[np.random.Generator], GradCase], Tuple[str, ...]]] = {
    "linear": (_case_linear, ("linear",)),
    "silu": (_case_silu, ("silu",)),
    "softmax": (_case_softmax, ("softmax",)),
    "rms_norm": (_case_rms_norm, ("rms_norm",)),
    "lift_features": (_case_lift_features, ("lift_features",)),
    "scatter_proposals": (_case_scatter_proposals, ("scatter_proposals",)),
    "sga_cluster": (_case_sga_cluster, ("sga_cluster",)),
    "depth_similarity": (_case_depth_similarity, ("depth_similarity",)),
    "sga3d_cluster": (_case_sga3d_cluster, ("sga3d_cluster",)),
    "sga3d_cluster_weighted": (_case_sga3d_cluster_weighted, ("sga3d_cluster",)),
    "sga3d_residual": (_case_sga3d_residual, ("sga3d_residual",)),
    "bilinear_sample": (_case_bilinear_sample, ("bilinear_sample",)),
    "gsga": (_case_gsga, ("gsga",)),
    "gsga_bypass": (_case_gsga_bypass, ("gsga",)),
    "window_attention": (_case_window_attention, ("window_attention",)),
    "pool_instance_features": (_case_pool_instance_features, ("pool_instance_features",)),
    "decode_instance_bev": (_case_decode_instance_bev, ("decode_instance_bev",)),
    "decision_logits": (_case_decision_logits, ("decision_logits",)),
    "gumbel_decision": (_case_gumbel_decision, ("gumbel_decision",)),
    "combine_bev": (_case_combine_bev, ("combine_bev",)),
    "combine_bev_softmax": (_case_combine_bev_softmax, ("combine_bev",)),
    "combine_bev_sigmoid": (_case_combine_bev_sigmoid, ("combine_bev",)),
    "reconstruction_loss": (_case_reconstruction_loss, ("reconstruction_loss",)),
    "refine_scene": (_case_refine_scene, ("refine_scene",)),
    "cross_entropy_loss": (_case_cross_entropy_loss, ("cross_entropy_loss",)),
    "scal_losses": (_case_scal_losses, ("scal_losses",)),
    "depth_loss": (_case_depth_loss, ("depth_loss",)),
    "predict_head": (_case_predict_head, ("predict_head",)),
}


def covered_ops() -> List[str]:
    return sorted({name for _, covers in REGISTRY.values() for name in covers})


# =============================================================================
# CHECKING
# =============================================================================

def _scalar(case: GradCase, inputs: Dict[str, np.ndarray], G: np.ndarray) -> float:
    return float(np.sum(G * np.asarray(case.fn(inputs), dtype=np.float64)))


def _relative(a: float, n: float, floor: float) -> float:
    return abs(a - n) / max(abs(a), abs(n), floor)


def _run_trial(op: str, trial_seed: int, probes: int = PROBES_PER_INPUT) -> Dict[str, float]:
    rng = np.random.default_rng(trial_seed)
    case = REGISTRY[op][0](rng)
    inputs = {k: np.array(v, dtype=np.float64) for k, v in case.inputs.items()}
    G = rng.standard_normal(np.shape(case.fn(inputs)))
    analytic = case.vjp(inputs, G)

    errors: Dict[str, float] = {}
    for name, value in inputs.items():
        if value.size == 0:
            continue
        worst = 0.0
        grad = np.asarray(analytic[name], dtype=np.float64).reshape(value.shape)
        for flat in rng.choice(value.size, size=min(probes, value.size), replace=False):
            idx = np.unravel_index(flat, value.shape)
            orig = value[idx]
            value[idx] = orig + STEP
            up = _scalar(case, inputs, G)
            value[idx] = orig - STEP
            down = _scalar(case, inputs, G)
            value[idx] = orig
            worst = max(worst, _relative(grad[idx], (up - down) / (2 * STEP), DENOMINATOR_FLOOR))
        errors[name] = worst
    return errors


def _run_trial_args(args):
    return _run_trial(*args)


class GradcheckReport(BaseModel):
    op: str
    trials: int
    errors: Dict[str, float] = {}
    tolerance: float = GRADCHECK_TOLERANCE
    seconds: float = 0.0

    @property
    def max_error(self) -> float:
        return max(self.errors.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_error < self.tolerance

    @property
    def data(self) -> dict:
        return {"op": self.op, "trials": self.trials, "max_error": self.max_error,
                "passed": self.passed, "errors": dict(self.errors)}

    @property
    def md(self) -> str:
        rows = "\n".join(f"| {k} | {v:.3e} |" for k, v in self.errors.items())
        return f"### {self.op} ({self.trials} trials)\n\n| input | max rel. error |\n|---|---|\n{rows}"


def gradcheck(op: str, trials: int = 100, seed: int = 0) -> GradcheckReport:
    """
    Compare ``op``'s VJP with central differences over ``trials`` random draws.

    Trials fan out over ``OCEAN_THREADS`` workers when that exceeds 1.

    Raises
    ------
    KeyError
        If ``op`` is not registered.
    """
    if op not in REGISTRY:
        raise KeyError(f"unknown differentiable op {op!r} (known: {', '.join(REGISTRY)})")
    start = time.perf_counter()
    if trials <= 0:
        return GradcheckReport(op=op, trials=0)
    seeds = [int(s) for s in np.random.SeedSequence(seed).generate_state(trials)]
    workers = threads()
    if workers > 1 and trials > 1:
        results = p_map(_run_trial_args, [(op, s) for s in seeds], num_cpus=workers, disable=True)
    else:
        results = [_run_trial(op, s) for s in seeds]

    errors: Dict[str, float] = {}
    for trial in results:
        for name, err in trial.items():
            errors[name] = max(errors.get(name, 0.0), err)
    report = GradcheckReport(op=op, trials=trials, errors=errors,
                             seconds=time.perf_counter() - start)
    log.info(f"gradcheck {op}: {trials} trials, max relative error {report.max_error:.3e}")
    return report


def check_gradients(ops: Optional[List[str]] = None, trials: int = 100,
                    seed: int = 0) -> Dict[str, GradcheckReport]:
    """Run several ops (all by default); raise NumericalCheckError on any failure."""
    reports = {op: gradcheck(op, trials, seed) for op in (ops or list(REGISTRY))}
    failed = [r for r in reports.values() if not r.passed]
    if failed:
        raise NumericalCheckError(", ".join(f"{r.op} gradient error {r.max_error:.3e}" for r in failed))
    return reports


# =============================================================================
# END-TO-END PROBE
# =============================================================================

class ProbeReport(BaseModel):
    samples: int
    errors: Dict[str, float] = {}
    tolerance: float = PROBE_TOLERANCE

    @property
    def max_error(self) -> float:
        return max(self.errors.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_error < self.tolerance


def probe_pipeline(config: HarnessConfig, seed: int = 0, samples: int = 20,
                   fixture=None, params=None) -> ProbeReport:
    """
    Finite differences of the total loss at ``samples`` random parameter
    entries against the analytic gradient (selection vector held fixed).
    """
    fixture = fixture if fixture is not None else generate_scene(config, seed)
    params = params if params is not None else init_params(config, seed=seed, identity=False)
    params = params.copy()
    grads = backward(forward(fixture, params, config, seed=seed), straight_through=False)

    rng = np.random.default_rng(seed)
    names = list(params)
    sizes = np.array([params[n].size for n in names], dtype=np.float64)
    errors: Dict[str, float] = {}
    for _ in range(samples):
        name = names[int(rng.choice(len(names), p=sizes / sizes.sum()))]
        value = params[name]
        idx = np.unravel_index(int(rng.integers(value.size)), value.shape)
        orig = value[idx]
        value[idx] = orig + STEP
        up = forward(fixture, params, config, seed=seed).report.total
        value[idx] = orig - STEP
        down = forward(fixture, params, config, seed=seed).report.total
        value[idx] = orig
        key = f"{name}[{','.join(str(int(i)) for i in idx)}]"
        errors[key] = _relative(float(grads[name][idx]), (up - down) / (2 * STEP), PROBE_FLOOR)
    report = ProbeReport(samples=samples, errors=errors)
    log.info(f"pipeline probe: {samples} entries, max relative error {report.max_error:.3e}")
    return report
