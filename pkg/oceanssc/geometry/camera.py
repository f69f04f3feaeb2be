"""
Pinhole camera, metric depth binning and voxel grid geometry.

    camera = CameraModel.looking_forward(fx=32, fy=32, cx=32, cy=32, height=1.0)
    u, v, d, valid = project_points(points, camera)
    xyz = back_project(u, v, d, camera)
    bins = depth_to_bin(d, DepthBinning(d_min=1, d_max=13, num_bins=12))

Conventions
-----------
- Points are rows of an (N, 3) array in the ego frame.
- ``rotation``/``translation`` map ego to camera: ``X_cam = R @ X + t``.
- Image coordinates: ``u`` runs along columns, ``v`` along rows.
- Voxel containment is half-open: ``[origin + i*res, origin + (i+1)*res)``.
"""

from __future__ import annotations

from typing import List, NamedTuple, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator, model_validator

# Points at or behind this camera-space depth are flagged invalid.
DEPTH_EPSILON = 1e-6
ORTHONORMAL_TOLERANCE = 1e-9


# ---------------------------------------------------------------------------
# value types
# ---------------------------------------------------------------------------

class CameraModel(BaseModel):
    """Intrinsics ``K`` and extrinsics ``[R|t]`` of a single pinhole camera."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    fx: float
    fy: float
    cx: float
    cy: float
    rotation: Tuple[Tuple[float, float, float], ...] = (
        (1.0, 0.0, 0.0), (0.0, 1.0, 0.0), (0.0, 0.0, 1.0))
    translation: Tuple[float, float, float] = (0.0, 0.0, 0.0)

    @field_validator("fx", "fy")
    @classmethod
    def _positive_focal(cls, value):
        if not value > 0:
            raise ValueError(f"focal length must be positive, got {value}")
        return value

    @field_validator("rotation")
    @classmethod
    def _orthonormal(cls, value):
        r = np.asarray(value, dtype=np.float64)
        if r.shape != (3, 3):
            raise ValueError(f"rotation must be 3x3, got shape {r.shape}")
        err = np.abs(r.T @ r - np.eye(3)).max()
        if err > ORTHONORMAL_TOLERANCE:
            raise ValueError(f"rotation is not orthonormal (max |RᵀR - I| = {err:.3e})")
        return value

    @property
    def R(self) -> np.ndarray:
        return np.asarray(self.rotation, dtype=np.float64)

    @property
    def t(self) -> np.ndarray:
        return np.asarray(self.translation, dtype=np.float64)

    @property
    def K(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx],
                         [0.0, self.fy, self.cy],
                         [0.0, 0.0, 1.0]])

    @classmethod
    def from_matrices(cls, fx, fy, cx, cy, rotation, translation) -> "CameraModel":
        return cls(
            fx=float(fx), fy=float(fy), cx=float(cx), cy=float(cy),
            rotation=tuple(tuple(float(x) for x in row) for row in np.asarray(rotation)),
            translation=tuple(float(x) for x in np.asarray(translation)),
        )

    @classmethod
    def looking_forward(cls, fx: float, fy: float, cx: float, cy: float,
                        height: float, position_x: float = 0.0) -> "CameraModel":
        """
        Camera mounted ``height`` metres above the ego origin looking along +x.

        Ego axes are x forward, y left, z up; camera axes are x right,
        y down, z forward.
        """
        rotation = np.array([[0.0, -1.0, 0.0],
                             [0.0, 0.0, -1.0],
                             [1.0, 0.0, 0.0]])
        position = np.array([position_x, 0.0, height])
        return cls.from_matrices(fx, fy, cx, cy, rotation, -rotation @ position)


class DepthBinning(BaseModel):
    """Uniform metric depth bins over ``[d_min, d_max)``."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    d_min: float
    d_max: float
    num_bins: int

    @model_validator(mode="after")
    def _check_range(self):
        if not self.d_min < self.d_max:
            raise ValueError(f"d_min ({self.d_min}) must be below d_max ({self.d_max})")
        if self.num_bins < 1:
            raise ValueError(f"num_bins must be >= 1, got {self.num_bins}")
        return self

    @property
    def width(self) -> float:
        return (self.d_max - self.d_min) / self.num_bins

    def centers(self) -> np.ndarray:
        return self.d_min + (np.arange(self.num_bins) + 0.5) * self.width


class GridSpec(BaseModel):
    """Voxel counts, metric origin of voxel (0, 0, 0) and voxel edge length."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    dims: Tuple[int, int, int]
    origin: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    resolution: float

    @field_validator("dims")
    @classmethod
    def _positive_dims(cls, value):
        if any(d < 1 for d in value):
            raise ValueError(f"grid dims must all be >= 1, got {value}")
        return value

    @field_validator("resolution")
    @classmethod
    def _positive_resolution(cls, value):
        if not value > 0:
            raise ValueError(f"resolution must be positive, got {value}")
        return value

    @property
    def num_voxels(self) -> int:
        x, y, z = self.dims
        return x * y * z

    def voxel_index(self, points: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Return integer ``(N, 3)`` indices and an in-grid mask for ``(N, 3)`` points."""
        pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        idx = np.floor((pts - np.asarray(self.origin)) / self.resolution)
        inside = np.all(np.isfinite(idx), axis=1)
        inside &= np.all((idx >= 0) & (idx < np.asarray(self.dims)), axis=1)
        idx = np.where(inside[:, None], idx, 0).astype(np.int64)
        return idx, inside

    def flat_index(self, indices: np.ndarray) -> np.ndarray:
        """Raster (x-major, then y, then z) position of ``(N, 3)`` voxel indices."""
        return np.ravel_multi_index(tuple(np.asarray(indices).T), self.dims)

    def centers(self, indices: np.ndarray) -> np.ndarray:
        return np.asarray(self.origin) + (np.asarray(indices, dtype=np.float64) + 0.5) * self.resolution


# ---------------------------------------------------------------------------
# projection
# ---------------------------------------------------------------------------

class Projection(NamedTuple):
    u: np.ndarray
    v: np.ndarray
    d: np.ndarray
    valid: np.ndarray


def project_points(points, camera: CameraModel) -> Projection:
    """
    Apply ``[R|t]`` then the pinhole division to every point.

    Points with camera depth ``<= DEPTH_EPSILON`` come back with
    ``valid=False`` and ``u = v = 0``.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    cam = pts @ camera.R.T + camera.t
    depth = cam[:, 2]
    valid = depth > DEPTH_EPSILON
    safe = np.where(valid, depth, 1.0)
    u = np.where(valid, camera.fx * cam[:, 0] / safe + camera.cx, 0.0)
    v = np.where(valid, camera.fy * cam[:, 1] / safe + camera.cy, 0.0)
    return Projection(u, v, depth, valid)


def back_project(u, v, d, camera: CameraModel) -> np.ndarray:
    """Inverse of :func:`project_points` for positive depth; returns ``(..., 3)``."""
    u, v, d = np.broadcast_arrays(np.asarray(u, dtype=np.float64),
                                  np.asarray(v, dtype=np.float64),
                                  np.asarray(d, dtype=np.float64))
    if np.any(~(d > 0)):
        raise ValueError("back_project requires strictly positive depth")
    cam = np.stack([(u - camera.cx) / camera.fx * d,
                    (v - camera.cy) / camera.fy * d,
                    d], axis=-1)
    return (cam - camera.t) @ camera.R


def depth_to_bin(d, binning: DepthBinning) -> np.ndarray:
    """``floor((d - d_min) / width)`` clamped into ``[0, D-1]``."""
    raw = np.floor((np.asarray(d, dtype=np.float64) - binning.d_min) / binning.width)
    return np.clip(raw, 0, binning.num_bins - 1).astype(np.int64)


def pixel_coordinates(height: int, width: int, stride: int = 1) -> Tuple[np.ndarray, np.ndarray]:
    """Full-resolution ``(u, v)`` of every pixel of a ``stride``-downsampled map, row-major."""
    rows, cols = np.meshgrid(np.arange(height), np.arange(width), indexing="ij")
    return (cols.reshape(-1) * stride).astype(np.float64), (rows.reshape(-1) * stride).astype(np.float64)


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Uniformly distributed proper rotation via QR of a Gaussian matrix."""
    q, r = np.linalg.qr(rng.standard_normal((3, 3)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


__all__: List[str] = [
    "DEPTH_EPSILON", "CameraModel", "DepthBinning", "GridSpec", "Projection",
    "project_points", "back_project", "depth_to_bin", "pixel_coordinates",
    "random_rotation",
]
