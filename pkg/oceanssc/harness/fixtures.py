"""
Synthetic desk-scale scenes.

A forward-looking camera sees a flat ground plane (voxel layer 0, class 1)
and up to ``instances.max`` axis-aligned boxes standing on it (layers 1-2,
classes 2..Mc). Depth, labels and the instance mask are rendered
analytically; image features are per-class and per-instance random
directions on top of a smooth field plus noise.

    fixture = generate_scene(default_config(), seed=7)
    save_fixture(fixture, "ocean_out/scene")
"""

from __future__ import annotations

from dataclasses import dataclass, field
from logging import getLogger
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from ..config import LIFT_SCALE, HarnessConfig
from ..errors import ShapeError
from ..geometry.camera import CameraModel, DepthBinning, GridSpec
from ..grouping.masks import InstanceMask
from ..utils.io import read_json, read_pgm, read_volume, write_json, write_pgm, write_volume

log = getLogger(__name__)

GROUND_CLASS = 1
BOX_LAYERS = (1, 2)
INSTANCE_WEIGHT = 0.5
SMOOTH_WEIGHT = 0.3
SMOOTH_WAVES = 4
SAM_NOISE = 0.1
MAX_PLACEMENT_TRIES = 64


@dataclass
class SceneFixture:
    """
    One synthetic scene. Maps at scale ``s`` are ``H/s x W/s``; ``depth`` and
    ``mask`` are full resolution; ``labels`` is ``x x y x z``.
    """

    camera: CameraModel
    grid: GridSpec
    binning: DepthBinning
    features: Dict[int, np.ndarray]
    depth_prior: Dict[int, np.ndarray]
    context: np.ndarray
    sam: np.ndarray
    depth: np.ndarray
    mask: InstanceMask
    labels: np.ndarray
    boxes: List[dict] = field(default_factory=list)
    seed: int = 0

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.depth = np.asarray(self.depth, dtype=np.float64)
        self.validate()

    @property
    def image_shape(self):
        return self.depth.shape

    @property
    def scales(self) -> List[int]:
        return sorted(self.features)

    def scale_shape(self, s: int):
        h, w = self.image_shape
        return h // s, w // s

    def validate(self) -> None:
        h, w = self.image_shape
        if (self.mask.height, self.mask.width) != (h, w):
            raise ShapeError(f"mask {self.mask.height}x{self.mask.width} does not match depth {h}x{w}")
        if tuple(self.labels.shape) != tuple(self.grid.dims):
            raise ShapeError(f"labels {self.labels.shape} do not match grid {self.grid.dims}")
        if LIFT_SCALE not in self.features:
            raise ShapeError(f"features at scale {LIFT_SCALE} are required")
        for s in self.scales:
            if h % s or w % s:
                raise ShapeError(f"image {h}x{w} is not divisible by scale {s}")
            expect = self.scale_shape(s)
            if self.features[s].shape[:2] != expect:
                raise ShapeError(f"scale-{s} features {self.features[s].shape[:2]}, expected {expect}")
            prior = self.depth_prior.get(s)
            if prior is None or prior.shape != expect + (self.binning.num_bins,):
                raise ShapeError(f"scale-{s} depth prior must be {expect + (self.binning.num_bins,)}")
        lift = self.scale_shape(LIFT_SCALE)
        for name in ("context", "sam"):
            if getattr(self, name).shape[:2] != lift:
                raise ShapeError(f"{name} map {getattr(self, name).shape[:2]}, expected {lift}")


# ---------------------------------------------------------------------------
# scene layout
# ---------------------------------------------------------------------------

def _place_boxes(rng: np.random.Generator, config: HarnessConfig, count: int) -> List[dict]:
    gx, gy, gz = config.grid.dims
    top = min(BOX_LAYERS[1], gz - 1)
    if top < BOX_LAYERS[0]:
        return []
    classes = list(range(2, config.num_classes + 1)) or [GROUND_CLASS]
    taken = np.zeros((gx, gy), dtype=bool)
    boxes: List[dict] = []
    for _ in range(count):
        for _ in range(MAX_PLACEMENT_TRIES):
            lx = int(rng.integers(3, 7))
            ly = int(rng.integers(2, 5))
            x0 = int(rng.integers(gx // 6, max(gx // 6 + 1, gx - lx - 1)))
            y0 = int(rng.integers(2, max(3, gy - ly - 2)))
            if x0 + lx > gx or y0 + ly > gy or taken[x0:x0 + lx, y0:y0 + ly].any():
                continue
            taken[max(x0 - 1, 0):x0 + lx + 1, max(y0 - 1, 0):y0 + ly + 1] = True
            boxes.append(dict(cells=[[x0, x0 + lx], [y0, y0 + ly], [BOX_LAYERS[0], top + 1]],
                              label=int(rng.choice(classes))))
            break
    return boxes


def _cells_to_metric(grid: GridSpec, cells) -> np.ndarray:
    """Box bounds in metres, inset by half a voxel so hits stay inside labelled cells."""
    origin = np.asarray(grid.origin, dtype=np.float64)
    lo = origin + np.array([c[0] for c in cells]) * grid.resolution + grid.resolution / 2
    hi = origin + np.array([c[1] for c in cells]) * grid.resolution - grid.resolution / 2
    return np.stack([lo, hi])


def _render(camera: CameraModel, grid: GridSpec, boxes: List[dict], shape):
    """Per-pixel depth (0 where undefined) and hit index (-1 none, 0 ground, k+1 box k)."""
    h, w = shape
    rows, cols = np.mgrid[0:h, 0:w]
    rays_cam = np.stack([(cols.ravel() - camera.cx) / camera.fx,
                         (rows.ravel() - camera.cy) / camera.fy,
                         np.ones(h * w)], axis=1)
    rays = rays_cam @ camera.R
    centre = -camera.R.T @ camera.t

    best = np.full(h * w, np.inf)
    hit = np.full(h * w, -1, dtype=np.int64)

    ground_z = grid.origin[2] + grid.resolution / 2
    with np.errstate(divide="ignore", invalid="ignore"):
        lam = np.where(rays[:, 2] < 0, (ground_z - centre[2]) / rays[:, 2], np.inf)
    take = (lam > 0) & (lam < best)
    best[take], hit[take] = lam[take], 0

    for k, box in enumerate(boxes):
        lo, hi = _cells_to_metric(grid, box["cells"])
        with np.errstate(divide="ignore", invalid="ignore"):
            t0 = (lo - centre) / rays
            t1 = (hi - centre) / rays
        near = np.nanmax(np.minimum(t0, t1), axis=1)
        far = np.nanmin(np.maximum(t0, t1), axis=1)
        take = (near > 0) & (near <= far) & (near < best)
        best[take], hit[take] = near[take], k + 1

    defined = np.isfinite(best)
    points = centre + rays * np.where(defined, best, 0.0)[:, None]
    _, inside = grid.voxel_index(points)
    defined &= inside
    depth = np.where(defined, best, 0.0).reshape(h, w)
    hit = np.where(defined, hit, -1).reshape(h, w)
    return depth, hit


def _labels(config: HarnessConfig, boxes: List[dict]) -> np.ndarray:
    labels = np.zeros(tuple(config.grid.dims), dtype=np.int64)
    labels[:, :, 0] = GROUND_CLASS
    for box in boxes:
        (x0, x1), (y0, y1), (z0, z1) = box["cells"]
        labels[x0:x1, y0:y1, z0:z1] = box["label"]
    return labels


def _instance_ids(hit: np.ndarray, boxes: List[dict]):
    """Visible boxes get contiguous IDs in raster order of first appearance."""
    ids = np.zeros(hit.shape, dtype=np.int64)
    flat = hit.ravel()
    seen = [int(k) for k in flat[flat > 0]]
    order = list(dict.fromkeys(seen))
    for new_id, k in enumerate(order, start=1):
        ids[hit == k] = new_id
        boxes[k - 1]["instance_id"] = new_id
    return ids, len(order)


# ---------------------------------------------------------------------------
# features
# ---------------------------------------------------------------------------

def _unit_rows(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    v = rng.standard_normal((rows, cols))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def _smooth_field(rng: np.random.Generator, shape, channels: int) -> np.ndarray:
    h, w = shape
    yy, xx = np.mgrid[0:h, 0:w]
    coords = np.stack([yy / h, xx / w], axis=-1)
    freq = rng.uniform(0.5, 2.0, (SMOOTH_WAVES, 2))
    phase = rng.uniform(0.0, 2 * np.pi, SMOOTH_WAVES)
    waves = np.sin(2 * np.pi * coords @ freq.T + phase)
    return SMOOTH_WEIGHT * waves @ rng.standard_normal((SMOOTH_WAVES, channels)) / np.sqrt(SMOOTH_WAVES)


def _anchor(full: np.ndarray, s: int) -> np.ndarray:
    return full[::s, ::s]


def _synth_features(rng, classes, ids, channels: int, noise: float, num_classes: int,
                    max_ids: int) -> np.ndarray:
    class_dir = _unit_rows(rng, num_classes + 1, channels)
    inst_dir = _unit_rows(rng, max_ids + 1, channels)
    inst_dir[0] = 0.0
    out = class_dir[classes] + INSTANCE_WEIGHT * inst_dir[ids]
    out += _smooth_field(rng, classes.shape, channels)
    out += noise * rng.standard_normal(out.shape)
    return out


def _depth_prior(depth: np.ndarray, binning: DepthBinning) -> np.ndarray:
    """Gaussian around the true bin with one-bin width; uniform where depth is undefined."""
    centers = binning.centers()
    d = depth[..., None]
    logits = -0.5 * ((centers - d) / binning.width) ** 2
    prior = np.exp(logits - logits.max(axis=-1, keepdims=True))
    prior /= prior.sum(axis=-1, keepdims=True)
    uniform = np.full(binning.num_bins, 1.0 / binning.num_bins)
    return np.where((depth > 0)[..., None], prior, uniform)


# ---------------------------------------------------------------------------
# public
# ---------------------------------------------------------------------------

def generate_scene(config: HarnessConfig, seed: Optional[int] = None,
                   instances: Optional[int] = None) -> SceneFixture:
    """
    Build a deterministic scene for ``(config, seed)``.

    ``instances`` overrides the number of boxes drawn from ``config.instances``.
    """
    seed = config.seed if seed is None else seed
    rng = np.random.default_rng(seed)
    if instances is None:
        instances = int(rng.integers(config.instances.min, config.instances.max + 1))
    camera = config.scene_camera
    grid, binning = config.grid, config.binning
    shape = (config.image_height, config.image_width)

    boxes = _place_boxes(rng, config, instances)
    depth, hit = _render(camera, grid, boxes, shape)
    labels = _labels(config, boxes)
    ids, visible = _instance_ids(hit, boxes)
    mask = InstanceMask(ids, count=visible)

    pixel_class = np.zeros(shape, dtype=np.int64)
    pixel_class[hit == 0] = GROUND_CLASS
    for k, box in enumerate(boxes):
        pixel_class[hit == k + 1] = box["label"]

    max_ids = max(config.instances.max, visible)
    features, priors = {}, {}
    for s in config.sorted_scales:
        features[s] = _synth_features(rng, _anchor(pixel_class, s), _anchor(ids, s),
                                      config.feature_channels[s], config.feature_noise,
                                      config.num_classes, max_ids)
        priors[s] = _depth_prior(_anchor(depth, s), binning)
    context = _synth_features(rng, _anchor(pixel_class, LIFT_SCALE), _anchor(ids, LIFT_SCALE),
                              config.context_channels, config.feature_noise,
                              config.num_classes, max_ids)
    sam_dir = _unit_rows(rng, max_ids + 1, config.sam_channels)
    sam_ids = _anchor(ids, LIFT_SCALE)
    sam = sam_dir[sam_ids] + SAM_NOISE * rng.standard_normal(sam_ids.shape + (config.sam_channels,))

    log.debug(f"scene seed={seed}: {len(boxes)} boxes placed, {visible} visible, "
              f"{int((depth > 0).sum())} pixels with depth")
    return SceneFixture(camera=camera, grid=grid, binning=binning, features=features,
                        depth_prior=priors, context=context, sam=sam, depth=depth,
                        mask=mask, labels=labels, boxes=boxes, seed=seed)


def save_fixture(fixture: SceneFixture, out_dir) -> Path:
    """Arrays as OCNV volumes, the instance mask as PGM, metadata as ``scene.json``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for s in fixture.scales:
        write_volume(out / f"features_s{s}.ocnv", fixture.features[s])
        write_volume(out / f"depth_prior_s{s}.ocnv", fixture.depth_prior[s])
    write_volume(out / "context.ocnv", fixture.context)
    write_volume(out / "sam.ocnv", fixture.sam)
    write_volume(out / "depth.ocnv", fixture.depth)
    write_volume(out / "labels.ocnv", fixture.labels[..., None], integer=True)
    write_pgm(out / "mask.pgm", fixture.mask.ids, maxval=max(fixture.mask.count, 1))
    write_json(out / "scene.json", {
        "seed": fixture.seed,
        "scales": fixture.scales,
        "instances": fixture.mask.count,
        "camera": fixture.camera.model_dump(),
        "grid": fixture.grid.model_dump(),
        "binning": fixture.binning.model_dump(),
        "boxes": fixture.boxes,
    })
    log.info(f"fixture written to {out}")
    return out


def load_fixture(in_dir) -> SceneFixture:
    """Inverse of :func:`save_fixture` (float maps come back at float32 precision)."""
    src = Path(in_dir)
    meta = read_json(src / "scene.json")
    scales = [int(s) for s in meta["scales"]]

    def plane(name):
        return read_volume(src / name)[:, :, 0, :]

    ids, _ = read_pgm(src / "mask.pgm")
    return SceneFixture(
        camera=CameraModel.model_validate(meta["camera"]),
        grid=GridSpec.model_validate(meta["grid"]),
        binning=DepthBinning.model_validate(meta["binning"]),
        features={s: plane(f"features_s{s}.ocnv") for s in scales},
        depth_prior={s: plane(f"depth_prior_s{s}.ocnv") for s in scales},
        context=plane("context.ocnv"),
        sam=plane("sam.ocnv"),
        depth=read_volume(src / "depth.ocnv")[:, :, 0, 0],
        mask=InstanceMask(ids.astype(np.int64), count=int(meta["instances"])),
        labels=read_volume(src / "labels.ocnv")[..., 0],
        boxes=list(meta["boxes"]),
        seed=int(meta["seed"]),
    )
