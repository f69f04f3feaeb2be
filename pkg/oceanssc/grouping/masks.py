"""
Instance masks: hard per-pixel instance IDs, 0 for background.

    mask = InstanceMask(ids)
    coarse = downsample_mask(mask, 8)
    proposal_ids = assign_instance_ids(proposals.pixel_coords, mask, proposals.valid)
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..errors import ShapeError

BACKGROUND = 0


@dataclass
class InstanceMask:
    """
    ``ids`` is an HxW array of nonnegative integers.

    ``count`` defaults to the number of distinct nonzero IDs, which must then be
    exactly ``1..count``. Downsampled masks inherit the source count, so an ID
    dropped by downsampling leaves a gap below ``count``.
    """

    ids: np.ndarray
    count: Optional[int] = None

    def __post_init__(self):
        self.ids = np.asarray(self.ids)
        if self.ids.ndim != 2:
            raise ShapeError(f"instance mask must be 2D, got shape {self.ids.shape}")
        if not np.issubdtype(self.ids.dtype, np.integer):
            raise ValueError(f"instance IDs must be integers, got dtype {self.ids.dtype}")
        self.ids = self.ids.astype(np.int64)
        if self.ids.size and self.ids.min() < 0:
            raise ValueError("instance IDs must be nonnegative")
        present = self.present_ids()
        if self.count is None:
            self.count = len(present)
            if present.size and present[-1] != self.count:
                raise ValueError(f"instance IDs {present.tolist()} are not contiguous from 1")
        elif present.size and present[-1] > self.count:
            raise ValueError(f"instance ID {present[-1]} exceeds instance count {self.count}")

    @property
    def height(self) -> int:
        return self.ids.shape[0]

    @property
    def width(self) -> int:
        return self.ids.shape[1]

    def present_ids(self) -> np.ndarray:
        uniq = np.unique(self.ids)
        return uniq[uniq != BACKGROUND]


def downsample_mask(mask: InstanceMask, s: int) -> InstanceMask:
    """Nearest-neighbour, top-left anchored: ``out[i, j] = mask[i*s, j*s]``."""
    if s < 1 or mask.height % s or mask.width % s:
        raise ShapeError(f"mask {mask.height}x{mask.width} is not divisible by {s}")
    return InstanceMask(mask.ids[::s, ::s].copy(), count=mask.count)


def nearest_pixel(coord, size: int) -> np.ndarray:
    """Round half up, then clamp into ``[0, size-1]``."""
    return np.clip(np.floor(np.asarray(coord, dtype=np.float64) + 0.5), 0, size - 1).astype(np.int64)


def assign_instance_ids(pixel_coords, mask: InstanceMask, valid=None) -> np.ndarray:
    """ID of the nearest pixel to each ``(u, v)``; invalid or non-finite coordinates get 0."""
    coords = np.asarray(pixel_coords, dtype=np.float64).reshape(-1, 2)
    ok = np.all(np.isfinite(coords), axis=1)
    if valid is not None:
        ok &= np.asarray(valid, dtype=bool).reshape(-1)
    safe = np.where(ok[:, None], coords, 0.0)
    cols = nearest_pixel(safe[:, 0], mask.width)
    rows = nearest_pixel(safe[:, 1], mask.height)
    return np.where(ok, mask.ids[rows, cols], BACKGROUND)
