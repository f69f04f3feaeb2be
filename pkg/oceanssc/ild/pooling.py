"""Instance pooling: sum each instance's pixel features over all scales."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Mapping

import numpy as np

from ..grouping.clusters import InstanceClustering


@dataclass
class InstanceFeatureSet:
    features: np.ndarray
    instance_ids: List[int]

    @property
    def count(self) -> int:
        return len(self.instance_ids)


def pool_instance_features(clusters: InstanceClustering,
                           pixel_features: Mapping[int, np.ndarray]) -> InstanceFeatureSet:
    """
    ``pixel_features[s]`` is the row-major flattened scale-``s`` map at the
    common width C. Instances without pixels at any scale are dropped.
    """
    width = next(iter(pixel_features.values())).shape[1] if pixel_features else 0
    ids = [i for i in clusters.instance_ids if clusters.pixel_total(i) > 0]
    pooled = np.zeros((len(ids), width))
    for row, inst in enumerate(ids):
        for s in clusters.scales:
            pix = clusters.pixels[s][inst]
            if pix.size:
                pooled[row] += np.asarray(pixel_features[s])[pix].sum(axis=0)
    return InstanceFeatureSet(pooled, ids)


def pool_instance_features_vjp(g_pooled, clusters: InstanceClustering, instance_ids: List[int],
                               pixel_features: Mapping[int, np.ndarray]) -> Dict[int, np.ndarray]:
    grads = {s: np.zeros_like(np.asarray(f, dtype=np.float64)) for s, f in pixel_features.items()}
    for row, inst in enumerate(instance_ids):
        for s in clusters.scales:
            pix = clusters.pixels[s][inst]
            grads[s][pix] += g_pooled[row]
    return grads
