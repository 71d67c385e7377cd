"""Input validation helpers shared by the public API surface."""

import numpy as np

from .errors import DataError


def as_float_array(x, name, shape=None):
    """Coerce to a float64 array, checking finiteness and (optionally) shape.

    `shape` entries of -1 are wildcards, mirroring numpy reshape convention.
    """
    arr = np.asarray(x, dtype=np.float64)
    if shape is not None:
        if arr.ndim != len(shape):
            raise DataError(f"{name}: expected {len(shape)} dims, got {arr.ndim}")
        for want, got in zip(shape, arr.shape):
            if want != -1 and want != got:
                raise DataError(f"{name}: expected shape {shape}, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise DataError(f"{name}: contains non-finite values")
    return arr


def check_pose(pose, topo, name="pose"):
    """Validate an (N, 3) mm joint-position array against a topology."""
    return as_float_array(pose, name, shape=(topo.n_joints, 3))


def check_keypoints(kps, topo, name="keypoints"):
    """Validate an (N, 2) pixel keypoint array against a topology."""
    return as_float_array(kps, name, shape=(topo.n_joints, 2))


def check_image(img, name="image"):
    """Validate an (H, W, 3) image with values in [0, 1]."""
    arr = as_float_array(img, name, shape=(-1, -1, 3))
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise DataError(f"{name}: empty image")
    if arr.min() < 0.0 or arr.max() > 1.0:
        raise DataError(f"{name}: values outside [0, 1]")
    return arr
