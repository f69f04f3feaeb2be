"""
Semantic grouping: join proposals and image pixels that share an instance ID.

Proposal IDs are assigned once at full mask resolution and reused for every
scale; pixel groups are built per scale from the downsampled masks.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from logging import getLogger
from typing import Dict, List, Mapping

import numpy as np

from .masks import BACKGROUND, InstanceMask

log = getLogger(__name__)


def group_indices(ids: np.ndarray) -> Dict[int, np.ndarray]:
    """Map each distinct value to the ascending positions holding it."""
    ids = np.asarray(ids).reshape(-1)
    if ids.size == 0:
        return {}
    order = np.argsort(ids, kind="stable")
    keys, starts = np.unique(ids[order], return_index=True)
    return {int(k): g for k, g in zip(keys, np.split(order, starts[1:]))}


@dataclass
class InstanceClustering:
    """
    ``pixels[s][id]`` holds flat (row-major) pixel indices of the scale-``s`` map;
    ``proposals[id]`` holds proposal indices; ``excluded`` the background proposals.
    Every instance ID appears in every map, possibly with an empty array.
    """

    pixels: Dict[int, Dict[int, np.ndarray]]
    proposals: Dict[int, np.ndarray]
    excluded: np.ndarray
    num_proposals: int
    pixel_counts: Dict[int, int] = field(default_factory=dict)

    @property
    def scales(self) -> List[int]:
        return sorted(self.pixels)

    @property
    def instance_ids(self) -> List[int]:
        return sorted(self.proposals)

    @property
    def clusters(self) -> List[int]:
        """Instance IDs owning at least one proposal."""
        return [i for i in self.instance_ids if self.proposals[i].size]

    def pixel_total(self, instance_id: int) -> int:
        return sum(self.pixels[s][instance_id].size for s in self.scales)


def build_clusters(proposal_ids, pixel_masks: Mapping[int, InstanceMask]) -> InstanceClustering:
    proposal_ids = np.asarray(proposal_ids, dtype=np.int64).reshape(-1)
    by_proposal = group_indices(proposal_ids)
    excluded = by_proposal.pop(BACKGROUND, np.zeros(0, dtype=np.int64))

    per_scale = {}
    ids = set(by_proposal)
    for s, mask in pixel_masks.items():
        groups = group_indices(mask.ids)
        groups.pop(BACKGROUND, None)
        per_scale[int(s)] = groups
        ids.update(groups)

    empty = np.zeros(0, dtype=np.int64)
    pixels = {s: {i: groups.get(i, empty) for i in sorted(ids)} for s, groups in per_scale.items()}
    proposals = {i: by_proposal.get(i, empty) for i in sorted(ids)}
    counts = {int(s): m.ids.size for s, m in pixel_masks.items()}
    log.debug(f"built {len(ids)} instance groups, {excluded.size} background proposals excluded")
    return InstanceClustering(pixels, proposals, excluded, proposal_ids.size, counts)
