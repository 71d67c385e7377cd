"""Normalized limb-orientation encoding and tree reconstruction.

An orientation set is an (N-1, 3) array: each row is the displacement from a
limb's parent joint to its child joint divided by that limb's mean length.
Flattened residuals are row-major (limb-major, xyz innermost), so the default
17-joint skeleton gives a 48-vector.
"""

import numpy as np

from .errors import DataError
from .validation import check_pose, as_float_array


def encode(pose, stats, topo):
    """Pose -> normalized per-limb orientation vectors, (N-1, 3)."""
    pose = check_pose(pose, topo)
    disp = pose[topo.limbs[:, 1]] - pose[topo.limbs[:, 0]]
    return disp / stats.mean_length[:, None]


def unnormalize(orient, stats):
    """Orientation vectors -> per-limb displacements in mm. Inverse of the
    normalization applied by encode()."""
    orient = as_float_array(orient, "orient", shape=(len(stats.mean_length), 3))
    return orient * stats.mean_length[:, None]


def reconstruct(displacements, root_position, topo):
    """Assemble a pose from per-limb displacements, walking the tree from
    the root in parent-before-child order."""
    displacements = as_float_array(
        displacements, "displacements", shape=(topo.n_limbs, 3))
    pose = np.zeros((topo.n_joints, 3))
    pose[topo.root] = np.asarray(root_position, dtype=np.float64)
    for idx in topo.topological_limb_order():
        a, b = topo.limbs[idx]
        pose[b] = pose[a] + displacements[idx]
    return pose


def flatten(orient):
    """(N-1, 3) orientation set -> 3(N-1) flat residual (row-major)."""
    return np.asarray(orient, dtype=np.float64).reshape(-1)


def unflatten(flat, topo):
    """3(N-1) flat residual -> (N-1, 3) orientation set."""
    flat = np.asarray(flat, dtype=np.float64)
    want = 3 * topo.n_limbs
    if flat.shape != (want,):
        raise DataError(f"residual: expected length {want}, got {flat.shape}")
    return flat.reshape(topo.n_limbs, 3)


def apply_residual(initial, delta, stats, topo):
    """Add a flat residual orientation to an initial pose.

    The residual pose is reconstructed with a zero root displacement, so the
    refined root equals the initial root exactly; a zero delta is a bit-exact
    no-op.
    """
    initial = check_pose(initial, topo)
    delta_set = unflatten(delta, topo)
    residual_pose = reconstruct(unnormalize(delta_set, stats),
                                np.zeros(3), topo)
    return initial + residual_pose


def residual_target(gt, initial, stats, topo):
    """Training target: flat difference of ground-truth and initial
    orientation sets."""
    return flatten(encode(gt, stats, topo) - encode(initial, stats, topo))
