"""
End-to-end forward pass and its hand-chained backward pass.

    params = init_params(config)
    result = forward(fixture, params, config, seed=7)
    result.report.total
    grads = backward(result)

Order of operations: per-scale projections and depth distributions, lifting
at stride 8, proposal selection from the external depth map, grouping,
``config.layers`` SGDA layers (SGA3D, GSGA, feed-forward; each a pre-norm
residual), scatter-back, instance pooling and decoding, selection and
fusion, reconstruction loss, window refinement and the prediction head.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from logging import getLogger
from typing import Dict, List, Optional, Tuple

import numpy as np

from ..attention.gsga import gsga, gsga_vjp
from ..attention.sga3d import sga3d_residual, sga3d_residual_vjp
from ..config import LIFT_SCALE, HarnessConfig
from ..errors import OceanError
from ..geometry.lifting import (LiftPlan, QueryProposalSet, lift_features, lift_features_vjp,
                                lift_plan, occupancy_mask_from_depth, scatter_proposals,
                                scatter_proposals_vjp, select_proposals)
from ..grouping.clusters import InstanceClustering, build_clusters
from ..grouping.masks import assign_instance_ids, downsample_mask
from ..harness.fixtures import SceneFixture
from ..ild.decoder import DecodedInstanceBev, decode_instance_bev, decode_instance_bev_vjp
from ..ild.pooling import InstanceFeatureSet, pool_instance_features, pool_instance_features_vjp
from ..ild.refine import (reconstruction_loss, reconstruction_loss_vjp, refine_scene,
                          refine_scene_vjp)
from ..ild.selection import (DecisionVector, combine_bev, combine_bev_vjp, decision_logits,
                             decision_logits_vjp, gumbel_decision, gumbel_decision_vjp)
from ..losses.losses import (LossReport, SemanticOccupancy, cross_entropy_loss,
                             cross_entropy_loss_vjp, depth_loss, depth_loss_vjp, scal_losses,
                             scal_losses_vjp, total_loss)
from ..utils.nn import linear, linear_vjp, rms_norm, rms_norm_vjp, silu, silu_vjp, softmax, softmax_vjp
from .ledger import SymbolLedger
from .params import ModelParams

log = getLogger(__name__)

PRIOR_FLOOR = 1e-6
GUMBEL_STREAM = 1

SYMBOLS = ("F", "D", "X", "V", "M", "Q", "S", "Q_sgda", "V_sgda", "F_inst", "P", "alpha",
           "Z", "P_hat", "F_bev", "L_recon", "V_refined", "O")


# ---------------------------------------------------------------------------
# prediction head
# ---------------------------------------------------------------------------

def _head_terms(volume: np.ndarray, params: ModelParams):
    x, y, z, c = volume.shape
    w1 = params["head.w1"].reshape(c, z, -1)
    h = np.einsum("xyzc,czd->xyzd", volume, w1) + params["head.b1"].reshape(z, -1)
    a = silu(h)
    return linear(a, params["head.w2"], params["head.b2"]), h, a


def predict_head(volume, params: ModelParams) -> np.ndarray:
    """
    Per-voxel logits ``x x y x z x (Mc+1)``: a layer-specific ``C -> C'`` map
    (one slice of the ``C -> z*C'`` expansion per height) with SiLU, then a
    shared ``C' -> Mc+1`` map.
    """
    return _head_terms(np.asarray(volume, dtype=np.float64), params)[0]


def predict_head_vjp(g_logits, volume, params: ModelParams) -> Tuple[np.ndarray, Dict[str, np.ndarray]]:
    volume = np.asarray(volume, dtype=np.float64)
    x, y, z, c = volume.shape
    _, h, a = _head_terms(volume, params)
    g_a, g_w2, g_b2 = linear_vjp(np.asarray(g_logits, dtype=np.float64), a, params["head.w2"])
    g_h = silu_vjp(g_a, h)
    w1 = params["head.w1"].reshape(c, z, -1)
    grads = {
        "w1": np.einsum("xyzc,xyzd->czd", volume, g_h).reshape(c, -1),
        "b1": g_h.sum(axis=(0, 1)).reshape(-1),
        "w2": g_w2,
        "b2": g_b2,
    }
    return np.einsum("xyzd,czd->xyzc", g_h, w1), grads


# ---------------------------------------------------------------------------
# cached intermediates
# ---------------------------------------------------------------------------

@dataclass
class LayerCache:
    index: int
    x0: np.ndarray
    n1: np.ndarray
    x1: np.ndarray
    n2: Optional[np.ndarray]
    x2: np.ndarray
    n3: np.ndarray
    h: np.ndarray


@dataclass
class IldCache:
    pooled: InstanceFeatureSet
    normalized: np.ndarray
    decoded: DecodedInstanceBev
    decision: Optional[DecisionVector]
    Z: np.ndarray
    p_hat: np.ndarray
    weights: np.ndarray
    sumz: np.ndarray
    f_bev: np.ndarray


@dataclass
class ForwardCache:
    config: HarnessConfig
    fixture: SceneFixture
    params: ModelParams
    feats: Dict[int, np.ndarray]
    fp: Dict[int, np.ndarray]
    dists: Dict[int, np.ndarray]
    ctx: np.ndarray
    X8: np.ndarray
    plan: LiftPlan
    V0: np.ndarray
    proposals: QueryProposalSet
    clusters: InstanceClustering
    positions: np.ndarray
    active: np.ndarray
    layers: List[LayerCache]
    V1: np.ndarray
    ild: Optional[IldCache]
    V2: np.ndarray
    occupancy: SemanticOccupancy
    depth_target: Optional[np.ndarray]


@dataclass
class ForwardResult:
    logits: np.ndarray
    occupancy: SemanticOccupancy
    report: LossReport
    cache: ForwardCache = field(repr=False)
    ledger: SymbolLedger = field(repr=False)

    @property
    def lifted(self) -> np.ndarray:
        return self.cache.V0

    @property
    def refined(self) -> np.ndarray:
        return self.cache.V2

    @property
    def proposals(self) -> QueryProposalSet:
        return self.cache.proposals

    @property
    def p_hat(self) -> Optional[np.ndarray]:
        return None if self.cache.ild is None else self.cache.ild.p_hat

    @property
    def instance_weights(self) -> Optional[np.ndarray]:
        return None if self.cache.ild is None else self.cache.ild.weights

    @property
    def decision(self) -> Optional[np.ndarray]:
        return None if self.cache.ild is None else self.cache.ild.Z

    @property
    def predicted_labels(self) -> np.ndarray:
        return np.argmax(self.logits, axis=-1)


# ---------------------------------------------------------------------------
# forward
# ---------------------------------------------------------------------------

def _sgda_layer(i: int, x0, params: ModelParams, config: HarnessConfig, clusters, fp, dflat,
                depths, binning, img8, sam, positions, active) -> Tuple[np.ndarray, LayerCache]:
    n1 = rms_norm(x0, params[f"sgda{i}.norm1"])
    x1 = x0 + sga3d_residual(n1, clusters, fp, dflat, depths, binning, params.sga(i),
                             config.use_depth_similarity, config.weighted_denominator)
    n2 = None
    x2 = x1
    if config.use_gsga:
        n2 = rms_norm(x1, params[f"sgda{i}.norm2"])
        r2 = np.zeros_like(x1)
        if active.size:
            r2[active] = gsga(n2[active], positions, img8, sam, params.gsga(i, config.gate_bypass))
        x2 = x1 + r2
    n3 = rms_norm(x2, params[f"sgda{i}.norm3"])
    h = linear(n3, params[f"sgda{i}.ffn.w1"], params[f"sgda{i}.ffn.b1"])
    x3 = x2 + linear(silu(h), params[f"sgda{i}.ffn.w2"], params[f"sgda{i}.ffn.b2"])
    return x3, LayerCache(i, x0, n1, x1, n2, x2, n3, h)


def forward(fixture: SceneFixture, params: ModelParams, config: HarnessConfig,
            seed: Optional[int] = None) -> ForwardResult:
    """
    Run the model on ``fixture``. Deterministic in ``(fixture, params, seed)``;
    ``seed`` (default ``config.seed``) drives the Gumbel noise only.
    """
    seed = config.seed if seed is None else seed
    rng = np.random.default_rng((seed, GUMBEL_STREAM))
    ledger = SymbolLedger()
    camera, grid, binning = fixture.camera, fixture.grid, fixture.binning
    scales = fixture.scales
    gx, gy, _ = grid.dims

    # per-scale projections and depth distributions
    feats = {s: fixture.features[s].reshape(-1, fixture.features[s].shape[-1]) for s in scales}
    fp = {s: linear(feats[s], params[f"proj.s{s}.w"], params[f"proj.s{s}.b"]) for s in scales}
    dists = {}
    for s in scales:
        h, w = fixture.scale_shape(s)
        logits = (np.log(fixture.depth_prior[s].reshape(h * w, -1) + PRIOR_FLOOR)
                  + linear(feats[s], params[f"depth.s{s}.w"], params[f"depth.s{s}.b"]))
        dists[s] = softmax(logits, axis=-1).reshape(h, w, -1)
    ledger.produce("F", fp)
    ledger.produce("D", dists)

    h8, w8 = fixture.scale_shape(LIFT_SCALE)
    ctx = fixture.context.reshape(h8 * w8, -1)
    X8 = (ctx @ params["context.w"]).reshape(h8, w8, -1)
    ledger.produce("X", X8)

    # lifting and proposals
    plan = lift_plan((h8, w8), camera, binning, grid, stride=LIFT_SCALE)
    V0 = ledger.produce("V", lift_features(ledger.consume("X"), ledger.consume("D")[LIFT_SCALE],
                                           camera, binning, grid, LIFT_SCALE, plan))
    ledger.produce("M", occupancy_mask_from_depth(fixture.depth, camera, grid))
    proposals = ledger.produce("Q", select_proposals(ledger.consume("V"), ledger.consume("M"), camera,
                                                     image_shape=fixture.image_shape, binning=binning))

    ids = assign_instance_ids(ledger.consume("Q").pixel_coords, fixture.mask, proposals.valid)
    clusters = ledger.produce("S", build_clusters(ids, {s: downsample_mask(fixture.mask, s)
                                                          for s in scales}))

    # SGDA block
    active = np.flatnonzero(proposals.valid)
    positions = proposals.pixel_coords[active] / LIFT_SCALE
    img8 = fp[LIFT_SCALE].reshape(h8, w8, -1)
    dflat = {s: d.reshape(-1, d.shape[-1]) for s, d in dists.items()}
    x = proposals.features
    layers: List[LayerCache] = []
    if proposals.count:
        block_clusters = ledger.consume("S")
        block_fp = ledger.consume("F")
        for i in range(config.layers):
            x, layer = _sgda_layer(i, x, params, config, block_clusters, block_fp, dflat,
                                   proposals.depths, binning, img8, fixture.sam, positions, active)
            layers.append(layer)
    else:
        log.info("no query proposals; SGDA block skipped")
    ledger.produce("Q_sgda", x)
    V1 = ledger.produce("V_sgda", scatter_proposals(V0, proposals, ledger.consume("Q_sgda")))

    # ILD
    ild = None
    pooled = pool_instance_features(ledger.consume("S"), ledger.consume("F")) if config.use_ild else None
    if pooled is not None and pooled.count:
        ledger.produce("F_inst", pooled)
        normalized = rms_norm(ledger.consume("F_inst").features, params["ild.norm"])
        decoded = decode_instance_bev(normalized, params.decoder(), (gx, gy))
        ledger.produce("P", decoded.maps)
        ledger.produce("alpha", decoded.alpha)
        decision = None
        if config.fusion == "dynamic":
            decision = gumbel_decision(decision_logits(normalized, params.decision()),
                                       config.tau, rng=rng)
            Z = decision.Z
        else:
            Z = np.ones(pooled.count)
        ledger.produce("Z", Z)
        fused = DecodedInstanceBev(ledger.consume("P"), ledger.consume("alpha"))
        p_hat, weights = combine_bev(fused, ledger.consume("Z"), config.epsilon, config.fusion)
        ledger.produce("P_hat", p_hat)
        sumz = ledger.consume("V_sgda").data.sum(axis=2)
        ledger.produce("F_bev", linear(sumz, params["bev.w"], params["bev.b"]))
        ledger.produce("L_recon", reconstruction_loss(ledger.consume("P_hat"), ledger.consume("F_bev")))
        V2 = refine_scene(V1.data, ledger.consume("P_hat"), params.refine(), config.window)
        ild = IldCache(pooled, normalized, decoded, decision, Z, p_hat, weights, sumz,
                       ledger.consume("F_bev"))
    else:
        ledger.produce("L_recon", 0.0)
        V2 = ledger.consume("V_sgda").data
    ledger.produce("V_refined", V2)

    # head and losses
    logits = ledger.produce("O", predict_head(ledger.consume("V_refined"), params))
    occupancy = SemanticOccupancy(ledger.consume("O"), fixture.labels)
    l_ce = cross_entropy_loss(occupancy)
    l_sem, l_geo = scal_losses(occupancy)
    target = fixture.depth[::LIFT_SCALE, ::LIFT_SCALE]
    depth_target = target if np.any(target > 0) else None
    l_d = 0.0 if depth_target is None else depth_loss(ledger.consume("D")[LIFT_SCALE], target, binning)
    report = total_loss(l_ce, l_sem, l_geo, l_d, ledger.consume("L_recon"),
                        config.lambda_depth, config.lambda_recon)
    log.debug(f"forward seed={seed}: {proposals.count} proposals, "
              f"{0 if pooled is None else pooled.count} instances, total={report.total:.6g}")

    cache = ForwardCache(config, fixture, params, feats, fp, dists, ctx, X8, plan, V0.data,
                         proposals, clusters, positions, active, layers, V1.data, ild, V2,
                         occupancy, depth_target)
    return ForwardResult(logits, occupancy, report, cache, ledger)


# ---------------------------------------------------------------------------
# backward
# ---------------------------------------------------------------------------

def _accumulate(grads, prefix: str, values: Dict[str, np.ndarray]) -> None:
    for name, g in values.items():
        if g is not None:
            grads[f"{prefix}.{name}"] += g


def _sgda_layer_vjp(g_x3, layer: LayerCache, cache: ForwardCache, grads, g_fp, g_dflat):
    i = layer.index
    p, config = cache.params, cache.config
    binning = cache.fixture.binning

    g_a, g_w2, g_b2 = linear_vjp(g_x3, silu(layer.h), p[f"sgda{i}.ffn.w2"])
    g_h = silu_vjp(g_a, layer.h)
    g_n3, g_w1, g_b1 = linear_vjp(g_h, layer.n3, p[f"sgda{i}.ffn.w1"])
    _accumulate(grads, f"sgda{i}.ffn", dict(w1=g_w1, b1=g_b1, w2=g_w2, b2=g_b2))
    g_x2_norm, g_gain3 = rms_norm_vjp(g_n3, layer.x2, p[f"sgda{i}.norm3"])
    grads[f"sgda{i}.norm3"] += g_gain3
    g_x2 = g_x3 + g_x2_norm

    g_x1 = g_x2
    if config.use_gsga:
        g_n2 = np.zeros_like(layer.x1)
        if cache.active.size:
            h8, w8 = cache.fixture.scale_shape(LIFT_SCALE)
            img8 = cache.fp[LIFT_SCALE].reshape(h8, w8, -1)
            gg = gsga_vjp(g_x2[cache.active], layer.n2[cache.active], cache.positions, img8,
                          cache.fixture.sam, p.gsga(i, config.gate_bypass))
            g_n2[cache.active] = gg.pop("queries")
            g_fp[LIFT_SCALE] += gg.pop("image_features").reshape(h8 * w8, -1)
            for key in ("positions", "sam_features"):
                gg.pop(key)
            _accumulate(grads, f"sgda{i}.gsga", gg)
        g_x1_norm, g_gain2 = rms_norm_vjp(g_n2, layer.x1, p[f"sgda{i}.norm2"])
        grads[f"sgda{i}.norm2"] += g_gain2
        g_x1 = g_x2 + g_x1_norm

    dflat = {s: d.reshape(-1, d.shape[-1]) for s, d in cache.dists.items()}
    gs = sga3d_residual_vjp(g_x1, layer.n1, cache.clusters, cache.fp, dflat,
                            cache.proposals.depths, binning, p.sga(i),
                            config.use_depth_similarity, config.weighted_denominator)
    for s in cache.clusters.scales:
        g_fp[s] += gs["pixel_features"][s]
        g_dflat[s] += gs["depth_dists"][s]
    _accumulate(grads, f"sgda{i}.sga", {k: gs[k] for k in ("wq", "wk", "wv", "wo")})
    g_x0_norm, g_gain1 = rms_norm_vjp(gs["features"], layer.x0, p[f"sgda{i}.norm1"])
    grads[f"sgda{i}.norm1"] += g_gain1
    return g_x1 + g_x0_norm


def backward(result, upstream: float = 1.0, straight_through: bool = True):
    """
    Gradient of ``upstream * total`` for every entry of the parameters.

    With ``straight_through=False`` the selection vector ``Z`` is a constant,
    which matches finite differences of the forward map.
    """
    cache = result.cache if isinstance(result, ForwardResult) else result
    if not isinstance(cache, ForwardCache):
        raise OceanError("backward needs the intermediates retained by forward()")
    p, config, fixture = cache.params, cache.config, cache.fixture
    binning = fixture.binning
    gx, gy, _ = fixture.grid.dims
    g = float(upstream)
    grads = p.zeros_like()

    occ = cache.occupancy
    g_logits = cross_entropy_loss_vjp(g, occ) + scal_losses_vjp(g, g, occ)
    g_V2, head = predict_head_vjp(g_logits, cache.V2, p)
    _accumulate(grads, "head", head)

    g_fp = {s: np.zeros_like(f) for s, f in cache.fp.items()}
    g_dflat = {s: np.zeros((d.shape[0] * d.shape[1], d.shape[2])) for s, d in cache.dists.items()}

    ild = cache.ild
    if ild is not None:
        g_V1, g_p_hat, refine = refine_scene_vjp(g_V2, cache.V1, ild.p_hat, p.refine(), config.window)
        _accumulate(grads, "refine", refine)
        g_p_rec, g_f_bev = reconstruction_loss_vjp(g * config.lambda_recon, ild.p_hat, ild.f_bev)
        g_p_hat = g_p_hat + g_p_rec
        g_sumz, g_bw, g_bb = linear_vjp(g_f_bev, ild.sumz, p["bev.w"])
        grads["bev.w"] += g_bw
        grads["bev.b"] += g_bb
        g_V1 = g_V1 + g_sumz[:, :, None, :]

        g_maps, g_alpha, g_Z = combine_bev_vjp(g_p_hat, ild.decoded, ild.Z, config.epsilon, config.fusion)
        g_norm, decoder = decode_instance_bev_vjp(g_maps, g_alpha, ild.normalized, p.decoder(), (gx, gy))
        _accumulate(grads, "decoder", decoder)
        if ild.decision is not None and straight_through:
            g_dl = gumbel_decision_vjp(g_Z, ild.decision)
            g_norm_d, decision = decision_logits_vjp(g_dl, ild.normalized, p.decision())
            g_norm = g_norm + g_norm_d
            _accumulate(grads, "decision", decision)
        g_pooled, g_gain = rms_norm_vjp(g_norm, ild.pooled.features, p["ild.norm"])
        grads["ild.norm"] += g_gain
        for s, gp in pool_instance_features_vjp(g_pooled, cache.clusters, ild.pooled.instance_ids,
                                                cache.fp).items():
            g_fp[s] += gp
    else:
        g_V1 = g_V2

    g_V0, g_x = scatter_proposals_vjp(g_V1, cache.proposals)
    for layer in reversed(cache.layers):
        g_x = _sgda_layer_vjp(g_x, layer, cache, grads, g_fp, g_dflat)
    if cache.proposals.count:
        g_V0[tuple(cache.proposals.voxel_indices.T)] += g_x

    g_X8, g_D8 = lift_features_vjp(g_V0, cache.X8, cache.dists[LIFT_SCALE], cache.plan)
    g_dists = {s: g_dflat[s].reshape(d.shape) for s, d in cache.dists.items()}
    g_dists[LIFT_SCALE] = g_dists[LIFT_SCALE] + g_D8
    if cache.depth_target is not None:
        g_dists[LIFT_SCALE] += depth_loss_vjp(g * config.lambda_depth, cache.dists[LIFT_SCALE],
                                              cache.depth_target, binning)
    _, g_cw, _ = linear_vjp(g_X8.reshape(cache.ctx.shape[0], -1), cache.ctx, p["context.w"])
    grads["context.w"] += g_cw

    for s, d in cache.dists.items():
        g_dl = softmax_vjp(g_dists[s], d, axis=-1).reshape(-1, d.shape[-1])
        _, g_w, g_b = linear_vjp(g_dl, cache.feats[s], p[f"depth.s{s}.w"])
        grads[f"depth.s{s}.w"] += g_w
        grads[f"depth.s{s}.b"] += g_b
        _, g_w, g_b = linear_vjp(g_fp[s], cache.feats[s], p[f"proj.s{s}.w"])
        grads[f"proj.s{s}.w"] += g_w
        grads[f"proj.s{s}.b"] += g_b
    return grads
