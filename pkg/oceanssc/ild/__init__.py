"""Instance-aware local diffusion: pooling, decoding, selection, fusion and refinement."""

from .decoder import DecodedInstanceBev, DecoderParams, decode_instance_bev, decode_instance_bev_vjp
from .pooling import InstanceFeatureSet, pool_instance_features, pool_instance_features_vjp
from .refine import (RefineParams, reconstruction_loss, reconstruction_loss_vjp, refine_scene,
                     refine_scene_vjp)
from .selection import (DecisionParams, DecisionVector, combine_bev, combine_bev_vjp,
                        decision_logits, decision_logits_vjp, gumbel_decision, gumbel_decision_vjp)
