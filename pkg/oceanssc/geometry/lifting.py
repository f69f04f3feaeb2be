"""
Lift image features into the voxel grid and pick the occupied voxels as
query proposals.

    volume = lift_features(context, depth_dist, camera, binning, grid)
    mask = occupancy_mask_from_depth(depth_map, camera, grid)
    proposals = select_proposals(volume, mask, camera, image_shape=(64, 64))

A pixel ``(row i, col j)`` of a stride-``s`` map sits at full-resolution
``(u, v) = (j*s, i*s)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from logging import getLogger
from typing import Optional, Tuple

import numpy as np

from ..errors import ShapeError
from .camera import (CameraModel, DepthBinning, GridSpec, back_project,
                     pixel_coordinates, project_points)

log = getLogger(__name__)


# ---------------------------------------------------------------------------
# value types
# ---------------------------------------------------------------------------

@dataclass
class VoxelVolume:
    grid: GridSpec
    data: np.ndarray

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 4 or tuple(self.data.shape[:3]) != tuple(self.grid.dims):
            raise ShapeError(f"volume data {self.data.shape} does not match grid {self.grid.dims}")
        if not np.all(np.isfinite(self.data)):
            raise ValueError("volume contains non-finite values")

    @property
    def channels(self) -> int:
        return self.data.shape[3]

    @classmethod
    def zeros(cls, grid: GridSpec, channels: int) -> "VoxelVolume":
        return cls(grid, np.zeros(tuple(grid.dims) + (channels,)))

    def flat(self) -> np.ndarray:
        return self.data.reshape(-1, self.channels)


@dataclass
class QueryProposalSet:
    """Occupied voxels in raster order with their projections into the image."""

    features: np.ndarray
    voxel_indices: np.ndarray
    pixel_coords: np.ndarray
    depths: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        n = len(self.voxel_indices)
        self.voxel_indices = np.asarray(self.voxel_indices, dtype=np.int64).reshape(n, 3)
        self.pixel_coords = np.asarray(self.pixel_coords, dtype=np.float64).reshape(n, 2)
        self.depths = np.asarray(self.depths, dtype=np.float64).reshape(n)
        self.valid = np.asarray(self.valid, dtype=bool).reshape(n)
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.shape[0] != n:
            raise ShapeError(f"{self.features.shape[0]} feature rows for {n} proposals")
        if n and len(np.unique(self.voxel_indices, axis=0)) != n:
            raise ValueError("proposal voxel indices are not unique")

    @property
    def count(self) -> int:
        return len(self.voxel_indices)

    def __len__(self) -> int:
        return self.count


# ---------------------------------------------------------------------------
# lifting
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LiftPlan:
    """In-grid (pixel, bin) pairs in pixel-raster then bin order."""

    shape: Tuple[int, int]
    num_bins: int
    pixel: np.ndarray = field(repr=False)
    bin: np.ndarray = field(repr=False)
    voxel: np.ndarray = field(repr=False)


def lift_plan(shape, camera: CameraModel, binning: DepthBinning, grid: GridSpec,
              stride: int = 8) -> LiftPlan:
    h, w = shape
    u, v = pixel_coordinates(h, w, stride)
    centers = binning.centers()
    uu = np.repeat(u, binning.num_bins)
    vv = np.repeat(v, binning.num_bins)
    dd = np.tile(centers, h * w)
    idx, inside = grid.voxel_index(back_project(uu, vv, dd, camera))
    pairs = np.flatnonzero(inside)
    voxel = grid.flat_index(idx[pairs]) if pairs.size else np.zeros(0, dtype=np.int64)
    return LiftPlan((h, w), binning.num_bins,
                    pixel=pairs // binning.num_bins, bin=pairs % binning.num_bins,
                    voxel=np.asarray(voxel, dtype=np.int64))


def _check_pair(context: np.ndarray, depth_dist: np.ndarray, binning: DepthBinning):
    if context.ndim != 3 or depth_dist.ndim != 3:
        raise ShapeError("context and depth_dist must be H'xW'xC and H'xW'xD maps")
    if context.shape[:2] != depth_dist.shape[:2]:
        raise ShapeError(f"context {context.shape[:2]} and depth_dist {depth_dist.shape[:2]} disagree")
    if depth_dist.shape[2] != binning.num_bins:
        raise ShapeError(f"depth_dist has {depth_dist.shape[2]} bins, binning has {binning.num_bins}")


def lift_features(context, depth_dist, camera: CameraModel, binning: DepthBinning,
                  grid: GridSpec, stride: int = 8, plan: Optional[LiftPlan] = None) -> VoxelVolume:
    """
    Scatter-add ``depth_dist[p, b] * context[p]`` into the voxel containing the
    bin-``b`` center of pixel ``p``; out-of-grid points are dropped.

    Accumulation runs in pixel-raster then bin order, so results are
    reproducible bit for bit.
    """
    context = np.asarray(context, dtype=np.float64)
    depth_dist = np.asarray(depth_dist, dtype=np.float64)
    _check_pair(context, depth_dist, binning)
    if plan is None:
        plan = lift_plan(context.shape[:2], camera, binning, grid, stride)
    c = context.shape[2]
    ctx = context.reshape(-1, c)
    weights = depth_dist.reshape(-1, binning.num_bins)[plan.pixel, plan.bin]
    out = np.zeros((grid.num_voxels, c))
    np.add.at(out, plan.voxel, weights[:, None] * ctx[plan.pixel])
    log.debug(f"lifted {plan.pixel.size} in-grid pixel/bin pairs into {grid.dims}")
    return VoxelVolume(grid, out.reshape(tuple(grid.dims) + (c,)))


def lift_features_vjp(g_volume: np.ndarray, context, depth_dist, plan: LiftPlan):
    """Return ``(g_context, g_depth_dist)``."""
    context = np.asarray(context, dtype=np.float64)
    depth_dist = np.asarray(depth_dist, dtype=np.float64)
    h, w, c = context.shape
    ctx = context.reshape(-1, c)
    gv = np.asarray(g_volume).reshape(-1, c)[plan.voxel]
    weights = depth_dist.reshape(-1, plan.num_bins)[plan.pixel, plan.bin]
    g_ctx = np.zeros((h * w, c))
    np.add.at(g_ctx, plan.pixel, weights[:, None] * gv)
    # every (pixel, bin) pair occurs at most once
    g_dist = np.zeros((h * w, plan.num_bins))
    g_dist[plan.pixel, plan.bin] = np.sum(ctx[plan.pixel] * gv, axis=1)
    return g_ctx.reshape(h, w, c), g_dist.reshape(h, w, plan.num_bins)


# ---------------------------------------------------------------------------
# proposals
# ---------------------------------------------------------------------------

def occupancy_mask_from_depth(depth_map, camera: CameraModel, grid: GridSpec) -> np.ndarray:
    """Mark the voxel holding each back-projected pixel; non-positive depth is undefined."""
    depth = np.asarray(depth_map, dtype=np.float64)
    mask = np.zeros(tuple(grid.dims), dtype=bool)
    defined = np.isfinite(depth) & (depth > 0)
    if not defined.any():
        return mask
    rows, cols = np.nonzero(defined)
    points = back_project(cols.astype(np.float64), rows.astype(np.float64), depth[rows, cols], camera)
    idx, inside = grid.voxel_index(points)
    mask[tuple(idx[inside].T)] = True
    return mask


def select_proposals(volume: VoxelVolume, mask, camera: CameraModel,
                     image_shape: Optional[Tuple[int, int]] = None,
                     binning: Optional[DepthBinning] = None) -> QueryProposalSet:
    """
    Copy the features of every masked voxel, in raster order.

    Proposals project their voxel centers into the image. Those behind the
    camera, or outside ``image_shape`` when given, are kept but flagged
    invalid. With ``binning`` the depths of valid entries are clamped into
    ``[d_min, d_max]``.
    """
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != tuple(volume.grid.dims):
        raise ShapeError(f"mask {mask.shape} does not match grid {volume.grid.dims}")
    indices = np.argwhere(mask)
    if len(indices) == 0:
        return QueryProposalSet(np.zeros((0, volume.channels)), indices,
                                np.zeros((0, 2)), np.zeros(0), np.zeros(0, dtype=bool))
    u, v, d, valid = project_points(volume.grid.centers(indices), camera)
    if image_shape is not None:
        h, w = image_shape
        valid = valid & (u >= 0) & (u <= w - 1) & (v >= 0) & (v <= h - 1)
    if binning is not None:
        d = np.where(valid, np.clip(d, binning.d_min, binning.d_max), d)
    features = volume.data[tuple(indices.T)].copy()
    return QueryProposalSet(features, indices, np.stack([u, v], axis=1), d, valid)


def scatter_proposals(volume: VoxelVolume, proposals: QueryProposalSet,
                      features: Optional[np.ndarray] = None) -> VoxelVolume:
    """Copy of ``volume`` with proposal cells overwritten by ``features``."""
    features = proposals.features if features is None else np.asarray(features)
    out = volume.data.copy()
    if proposals.count:
        out[tuple(proposals.voxel_indices.T)] = features
    return VoxelVolume(volume.grid, out)


def scatter_proposals_vjp(g_out: np.ndarray, proposals: QueryProposalSet):
    """Return ``(g_volume, g_features)``."""
    g_volume = np.array(g_out, dtype=np.float64)
    cells = tuple(proposals.voxel_indices.T)
    if not proposals.count:
        return g_volume, np.zeros((0, g_volume.shape[3]))
    g_features = g_volume[cells].copy()
    g_volume[cells] = 0.0
    return g_volume, g_features
