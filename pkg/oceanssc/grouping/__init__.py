"""Instance masks and per-instance pixel/proposal clusters."""

from .clusters import InstanceClustering, build_clusters, group_indices
from .masks import BACKGROUND, InstanceMask, assign_instance_ids, downsample_mask
