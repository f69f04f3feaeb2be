"""Cluster linear attention, SGA3D, gated deformable attention and window attention."""

from .gsga import GsgaParams, bilinear_sample, bilinear_sample_vjp, gsga, gsga_vjp
from .kernels import (depth_similarity, depth_similarity_vjp, kernel_phi, sga3d_cluster,
                      sga3d_cluster_vjp, sga_cluster, sga_cluster_vjp)
from .sga3d import Sga3dParams, run_sga3d, sga3d_residual, sga3d_residual_vjp
from .window import window_attention, window_attention_vjp
