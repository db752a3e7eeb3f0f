"""Brightness-constancy flow decomposition toolkit."""

__version__ = "0.1.0"

from .core import flow_to_color, fuse_flows, warp_image
from .decompose import (Decomposition, DecompositionConfig, bc_candidate_set, brute_force_decompose,
                        compute_alpha_star, decompose_flow)
from .metrics import epe, fl_all, occlusion_pr, weighted_epe
from .objective import (Fields, GroundTruth, LossWeights, loss_gradients, refine_fields, scheduled_sampling_p,
                        total_loss, weight_profile)
from .photometric import (PhotometricKind, SigmoidParams, bc_divergence, uncertainty_from_divergence,
                          weighted_photometric_loss)
from .synth import Mover, SceneSpec, generate_scene
from .variational import HornSchunckConfig, estimate_flow_hs
