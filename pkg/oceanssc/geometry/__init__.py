"""Camera projection, depth binning, voxel lifting and proposal selection."""

from .camera import (CameraModel, DepthBinning, GridSpec, Projection, back_project,
                     depth_to_bin, project_points)
from .lifting import (LiftPlan, QueryProposalSet, VoxelVolume, lift_features,
                      lift_features_vjp, lift_plan, occupancy_mask_from_depth,
                      scatter_proposals, scatter_proposals_vjp, select_proposals)
