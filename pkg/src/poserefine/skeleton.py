"""Joint-tree topology, poses and bone-length statistics.

Conventions used throughout the package:
  * 3D joint positions are (N, 3) float64 arrays in millimeters.
  * 2D keypoints are (N, 2) float64 arrays in pixels.
  * Limbs are (parent_joint, child_joint) pairs in a fixed canonical order;
    every per-limb quantity (orientations, patches, palette colors, bone
    stats) is indexed by that order.
"""

import json
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from .errors import TopologyError, DataError
from .validation import check_pose

ROOT_SENTINEL = -1


@dataclass(frozen=True)
class SkeletonTopology:
    """Single-rooted joint tree plus the canonical limb ordering."""

    joint_names: tuple
    parent: np.ndarray          # (N,) int, ROOT_SENTINEL at the root
    limbs: np.ndarray           # (N-1, 2) int, (parent, child) per limb

    def __post_init__(self):
        object.__setattr__(self, "parent", np.asarray(self.parent, dtype=np.int64))
        object.__setattr__(self, "limbs", np.asarray(self.limbs, dtype=np.int64))
        validate_topology(self)

    @property
    def n_joints(self):
        return len(self.parent)

    @property
    def n_limbs(self):
        return self.n_joints - 1

    @property
    def root(self):
        return int(np.nonzero(self.parent == ROOT_SENTINEL)[0][0])

    def limb_order(self):
        """Limbs sorted parent-before-child; the canonical order already is."""
        return [tuple(l) for l in self.limbs]

    def topological_limb_order(self):
        """Indices into `limbs` such that each parent joint is placed before
        its children when limbs are visited in the returned order."""
        placed = {self.root}
        order = []
        remaining = list(range(self.n_limbs))
        while remaining:
            progressed = False
            for idx in list(remaining):
                a, b = self.limbs[idx]
                if a in placed:
                    placed.add(int(b))
                    order.append(idx)
                    remaining.remove(idx)
                    progressed = True
            if not progressed:
                raise TopologyError("limbs do not form a connected tree")
        return order


@dataclass(frozen=True)
class BoneStats:
    """Per-limb mean length (mm) over a training corpus."""

    mean_length: np.ndarray     # (N-1,) float64, strictly positive

    def __post_init__(self):
        arr = np.asarray(self.mean_length, dtype=np.float64)
        if arr.ndim != 1:
            raise DataError("mean_length must be a 1-D array")
        if not np.all(np.isfinite(arr)) or np.any(arr <= 0.0):
            raise DataError("mean_length entries must be finite and > 0")
        object.__setattr__(self, "mean_length", arr)


def validate_topology(topo):
    """Check tree invariants; returns the canonical limb ordering on success.

    Raises TopologyError on: multiple/zero roots, cycles, out-of-range
    parents, or a limb list that does not match the parent array.
    """
    parent = np.asarray(topo.parent, dtype=np.int64)
    n = len(parent)
    if n < 1:
        raise TopologyError("empty topology")
    roots = np.nonzero(parent == ROOT_SENTINEL)[0]
    if len(roots) == 0:
        raise TopologyError("no root (expected one sentinel parent entry)")
    if len(roots) > 1:
        raise TopologyError(f"multiple roots at joints {roots.tolist()}")
    root = int(roots[0])
    for j in range(n):
        if j == root:
            continue
        p = int(parent[j])
        if p < 0 or p >= n:
            raise TopologyError(f"joint {j}: parent index {p} out of range")
        if p == j:
            raise TopologyError(f"cycle: joint {j} is its own parent")
    # walking to the root from every joint must terminate (no cycles)
    for j in range(n):
        seen = set()
        cur = j
        while cur != root:
            if cur in seen:
                raise TopologyError(f"cycle detected through joint {j}")
            seen.add(cur)
            cur = int(parent[cur])
    limbs = np.asarray(topo.limbs, dtype=np.int64)
    if limbs.shape != (n - 1, 2):
        raise TopologyError(f"expected {n - 1} limbs, got shape {limbs.shape}")
    children = limbs[:, 1]
    if len(set(children.tolist())) != n - 1:
        raise TopologyError("duplicate child joint in limb list")
    for a, b in limbs:
        if int(b) == root:
            raise TopologyError("root listed as a limb child")
        if int(parent[b]) != int(a):
            raise TopologyError(f"limb ({a},{b}) contradicts parent array")
    return [tuple(l) for l in limbs]


def limb_lengths(pose, topo):
    """Euclidean length (mm) of every limb of a pose, in canonical order."""
    pose = check_pose(pose, topo)
    diff = pose[topo.limbs[:, 1]] - pose[topo.limbs[:, 0]]
    return np.linalg.norm(diff, axis=1)


def compute_bone_stats(poses, topo):
    """Arithmetic mean of per-limb length over a list of poses."""
    if len(poses) == 0:
        raise DataError("compute_bone_stats: empty pose list")
    lengths = np.stack([limb_lengths(p, topo) for p in poses])
    mean = lengths.mean(axis=0)
    if np.any(mean <= 0.0):
        bad = np.nonzero(mean <= 0.0)[0].tolist()
        raise DataError(f"compute_bone_stats: zero mean length for limbs {bad}")
    return BoneStats(mean_length=mean)


def root_relative(pose, topo):
    """Translate a pose so its root joint sits at the origin."""
    pose = check_pose(pose, topo)
    return pose - pose[topo.root]


def default_topology():
    """The bundled 17-joint topology (pelvis root, 16 limbs)."""
    text = resources.files("poserefine.data").joinpath("topology17.json").read_text()
    spec = json.loads(text)
    return SkeletonTopology(
        joint_names=tuple(spec["joint_names"]),
        parent=spec["parent"],
        limbs=spec["limbs"],
    )
