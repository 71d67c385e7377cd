"""Patch-based refinement of 3D human pose estimates.

Crops per-limb patches from an RGB image and a color-coded part
segmentation, regresses a residual limb-orientation vector with a small
trainable network, reconstructs the residual pose along the skeleton tree
and adds it to the initial estimate. Ships with a synthetic scene generator
and an MPJPE evaluation harness so the full train/refine/eval loop runs at
desk scale.
"""

from .skeleton import (SkeletonTopology, BoneStats, validate_topology,
                       compute_bone_stats, root_relative, limb_lengths,
                       default_topology)
from .orientation import (encode, unnormalize, reconstruct, apply_residual,
                          residual_target, flatten, unflatten)
from .patching import (PatchBox, SegPalette, limb_box, crop_resize,
                       build_volume, colorize_segmentation)
from .updater import (RegressorConfig, RegressorParams, TrainingConfig,
                      ResidualOrientationRegressor, init_params, zero_params,
                      forward, backward, loss, adam_step, train)
from .synth import (CameraModel, PerturbConfig, sample_pose, project,
                    render_scene, perturb_initial, rarity_score,
                    default_palette, default_mannequin)
from .evaluation import (mpjpe, orientation_error_deg, evaluate, EvalReport)
from .pipeline import (generate_corpus, train_from_corpus, refine_corpus,
                       build_volumes, build_targets, mask_modality)
from .errors import (PoseRefineError, TopologyError, SchemaError, DataError,
                     NumericalError)

__version__ = "0.1.0"
