"""Desk-scale synthetic scenes: random kinematic poses, pinhole projection,
occlusion-aware rendering, and perturbed initial estimates.

The initial-estimate perturbation stands in for an upstream 3D estimator.
Its orientation error has two parts: a systematic per-limb rotation drawn
once from the perturbation seed (upstream estimators make reproducible,
pose-dependent mistakes, which is what a refiner can actually learn to fix)
and i.i.d. per-sample jitter (the irreducible part).
"""

import json
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from .errors import DataError
from .skeleton import root_relative
from .orientation import reconstruct
from .patching import SegPalette, colorize_segmentation
from .validation import check_pose, as_float_array


@dataclass(frozen=True)
class CameraModel:
    """Pinhole camera: focal length px, principal point px, image size px."""

    focal: float = 1100.0
    principal: tuple = (128.0, 128.0)
    image_size: tuple = (256, 256)   # (width, height)

    def __post_init__(self):
        if self.focal <= 0:
            raise DataError("focal must be positive")
        if self.image_size[0] < 1 or self.image_size[1] < 1:
            raise DataError("image_size must be >= 1")


@dataclass(frozen=True)
class PerturbConfig:
    """Noise model for the synthetic initial estimate.

    orient_noise_deg is the total per-limb rotation scale; systematic_frac
    of its variance goes to the corpus-fixed per-limb rotation, the rest to
    per-sample jitter. length_noise_frac is relative limb-length noise and
    root_noise_mm translates the whole figure.
    """

    orient_noise_deg: float = 8.0
    length_noise_frac: float = 0.02
    root_noise_mm: float = 10.0
    systematic_frac: float = 0.85
    seed: int = 0

    def __post_init__(self):
        for name in ("orient_noise_deg", "length_noise_frac", "root_noise_mm"):
            if getattr(self, name) < 0:
                raise DataError(f"{name} must be non-negative")
        if not 0.0 <= self.systematic_frac <= 1.0:
            raise DataError("systematic_frac must be in [0, 1]")


@dataclass(frozen=True)
class MannequinModel:
    """Rest direction, sampling-cone half angle and length per limb."""

    rest_direction: np.ndarray   # (N-1, 3) unit vectors
    cone_deg: np.ndarray         # (N-1,)
    limb_length_mm: np.ndarray   # (N-1,)

    def __post_init__(self):
        rd = as_float_array(self.rest_direction, "rest_direction", shape=(-1, 3))
        rd = rd / np.linalg.norm(rd, axis=1, keepdims=True)
        object.__setattr__(self, "rest_direction", rd)
        object.__setattr__(self, "cone_deg",
                           as_float_array(self.cone_deg, "cone_deg", shape=(-1,)))
        object.__setattr__(self, "limb_length_mm",
                           as_float_array(self.limb_length_mm,
                                          "limb_length_mm", shape=(-1,)))


def default_mannequin():
    text = resources.files("poserefine.data").joinpath("mannequin.json").read_text()
    spec = json.loads(text)
    return MannequinModel(rest_direction=spec["rest_direction"],
                          cone_deg=spec["cone_deg"],
                          limb_length_mm=spec["limb_length_mm"])


def default_palette(n_limbs=16):
    text = resources.files("poserefine.data").joinpath("palette16.json").read_text()
    spec = json.loads(text)
    if n_limbs != len(spec["limb_color"]):
        raise DataError(f"bundled palette has {len(spec['limb_color'])} colors")
    return SegPalette(limb_color=spec["limb_color"],
                      background_color=spec["background_color"])


def _orthonormal_frame(axis):
    """Two unit vectors orthogonal to `axis` (itself unit)."""
    helper = np.array([1.0, 0.0, 0.0])
    if abs(axis[0]) > 0.9:
        helper = np.array([0.0, 1.0, 0.0])
    u = np.cross(axis, helper)
    u /= np.linalg.norm(u)
    v = np.cross(axis, u)
    return u, v


def _rotation_matrix(rotvec):
    """Rodrigues formula for an axis-angle rotation vector."""
    angle = np.linalg.norm(rotvec)
    if angle < 1e-15:
        return np.eye(3)
    k = rotvec / angle
    kx = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
    return np.eye(3) + np.sin(angle) * kx + (1 - np.cos(angle)) * (kx @ kx)


def sample_pose(rng, limb_lengths_mm, topo, rest_directions, cone_deg,
                root_position=(0.0, 0.0, 4000.0)):
    """Random kinematic pose: each limb direction is drawn inside a cone
    around its rest direction; limb lengths are exact by construction."""
    limb_lengths_mm = as_float_array(limb_lengths_mm, "limb_lengths_mm",
                                     shape=(topo.n_limbs,))
    rest = as_float_array(rest_directions, "rest_directions",
                          shape=(topo.n_limbs, 3))
    cone = np.deg2rad(as_float_array(cone_deg, "cone_deg",
                                     shape=(topo.n_limbs,)))
    disp = np.zeros((topo.n_limbs, 3))
    for k in range(topo.n_limbs):
        axis = rest[k] / np.linalg.norm(rest[k])
        # area-uniform polar angle inside the cone, uniform azimuth
        theta = cone[k] * np.sqrt(rng.uniform())
        phi = rng.uniform(0.0, 2.0 * np.pi)
        u, v = _orthonormal_frame(axis)
        direction = (np.cos(theta) * axis
                     + np.sin(theta) * (np.cos(phi) * u + np.sin(phi) * v))
        disp[k] = limb_lengths_mm[k] * direction
    return reconstruct(disp, np.asarray(root_position, dtype=np.float64), topo)


def project(pose, cam):
    """Pinhole projection of joints to pixel coordinates."""
    pose = np.asarray(pose, dtype=np.float64)
    z = pose[:, 2]
    if np.any(z <= 0):
        raise DataError("project: joint at non-positive depth")
    u = cam.focal * pose[:, 0] / z + cam.principal[0]
    v = cam.focal * pose[:, 1] / z + cam.principal[1]
    return np.stack([u, v], axis=1)


def _segment_masks(kps, topo, image_size, thickness):
    """Per-limb boolean masks: pixels whose center lies within `thickness`
    of the projected limb segment. Work is confined to each segment's
    padded bounding window."""
    w, h = image_size
    masks = np.zeros((topo.n_limbs, h, w), dtype=bool)
    for k, (a, b) in enumerate(topo.limbs):
        p0, p1 = kps[a], kps[b]
        x_lo = int(np.floor(min(p0[0], p1[0]) - thickness - 1))
        x_hi = int(np.ceil(max(p0[0], p1[0]) + thickness + 1))
        y_lo = int(np.floor(min(p0[1], p1[1]) - thickness - 1))
        y_hi = int(np.ceil(max(p0[1], p1[1]) + thickness + 1))
        x_lo, x_hi = max(0, x_lo), min(w, x_hi)
        y_lo, y_hi = max(0, y_lo), min(h, y_hi)
        if x_lo >= x_hi or y_lo >= y_hi:
            continue
        xs = np.arange(x_lo, x_hi) + 0.5
        ys = np.arange(y_lo, y_hi) + 0.5
        px, py = np.meshgrid(xs, ys)
        d = p1 - p0
        denom = float(d @ d)
        if denom < 1e-12:
            dist = np.hypot(px - p0[0], py - p0[1])
        else:
            t = ((px - p0[0]) * d[0] + (py - p0[1]) * d[1]) / denom
            t = np.clip(t, 0.0, 1.0)
            dist = np.hypot(px - (p0[0] + t * d[0]), py - (p0[1] + t * d[1]))
        masks[k, y_lo:y_hi, x_lo:x_hi] = dist <= thickness
    return masks


def depth_order_far_first(pose, topo):
    """Limb indices sorted by mean endpoint depth, farthest first."""
    depths = (pose[topo.limbs[:, 0], 2] + pose[topo.limbs[:, 1], 2]) / 2.0
    return list(np.argsort(-depths, kind="stable"))


def _background_texture(rng, image_size):
    """Smooth low-frequency RGB texture from an upsampled random grid."""
    w, h = image_size
    coarse = rng.uniform(0.15, 0.55, size=(5, 5, 3))
    ys = np.linspace(0, 4, h)
    xs = np.linspace(0, 4, w)
    y0 = np.floor(ys).astype(int).clip(0, 3)
    x0 = np.floor(xs).astype(int).clip(0, 3)
    fy = (ys - y0)[:, None, None]
    fx = (xs - x0)[None, :, None]
    c00 = coarse[y0][:, x0]
    c01 = coarse[y0][:, x0 + 1]
    c10 = coarse[y0 + 1][:, x0]
    c11 = coarse[y0 + 1][:, x0 + 1]
    return (c00 * (1 - fy) * (1 - fx) + c01 * (1 - fy) * fx
            + c10 * fy * (1 - fx) + c11 * fy * fx)


def render_scene(pose, cam, palette, topo, limb_thickness_px=6.0, rng=None):
    """Render (rgb, seg) for a pose.

    seg: clean painter's-algorithm color coding (far limbs first).
    rgb: the same geometry blended over a procedural background with
    per-limb shading and pixel noise, deliberately noisier than seg.
    """
    kps = project(pose, cam)
    masks = _segment_masks(kps, topo, cam.image_size, limb_thickness_px)
    order = depth_order_far_first(pose, topo)
    seg = colorize_segmentation(masks, palette, order)

    if rng is None:
        rng = np.random.default_rng(0)
    rgb = _background_texture(rng, cam.image_size)
    for k in order:
        mask = masks[k]
        if not mask.any():
            continue
        shade = rng.uniform(0.55, 0.95)
        color = palette.limb_color[k] * shade
        rgb[mask] = 0.35 * rgb[mask] + 0.65 * color
    rgb = rgb + rng.normal(0.0, 0.04, size=rgb.shape)
    return np.clip(rgb, 0.0, 1.0), seg


def _systematic_rotations(cfg, n_limbs):
    """Corpus-fixed per-limb rotation matrices, drawn from cfg.seed."""
    sigma = np.deg2rad(cfg.orient_noise_deg) * np.sqrt(cfg.systematic_frac)
    rng = np.random.default_rng(cfg.seed)
    rotvecs = rng.normal(0.0, sigma / np.sqrt(3.0), size=(n_limbs, 3))
    return [_rotation_matrix(rv) for rv in rotvecs]


def perturb_initial(gt, cfg, stats, topo, rng):
    """Synthetic initial estimate: rotate each limb displacement (systematic
    + jitter), scale its length, reconstruct along the tree, add root noise.
    Deterministic given (cfg.seed, rng state); the zero config is exact
    identity."""
    gt = check_pose(gt, topo)
    if (cfg.orient_noise_deg == 0.0 and cfg.length_noise_frac == 0.0
            and cfg.root_noise_mm == 0.0):
        return gt.copy()
    sys_rots = _systematic_rotations(cfg, topo.n_limbs)
    sigma_iid = (np.deg2rad(cfg.orient_noise_deg)
                 * np.sqrt(1.0 - cfg.systematic_frac))
    disp = gt[topo.limbs[:, 1]] - gt[topo.limbs[:, 0]]
    new_disp = np.zeros_like(disp)
    for k in range(topo.n_limbs):
        jitter = _rotation_matrix(
            rng.normal(0.0, sigma_iid / np.sqrt(3.0), size=3))
        scale = 1.0 + rng.normal(0.0, cfg.length_noise_frac)
        new_disp[k] = scale * (jitter @ (sys_rots[k] @ disp[k]))
    root = gt[topo.root] + rng.normal(0.0, cfg.root_noise_mm, size=3)
    return reconstruct(new_disp, root, topo)


def rarity_score(pose, reference_poses, topo):
    """Root-aligned MPJPE to the nearest reference pose."""
    if len(reference_poses) == 0:
        raise DataError("rarity_score: empty reference set")
    q = root_relative(pose, topo)
    refs = np.stack([root_relative(p, topo) for p in reference_poses])
    dists = np.linalg.norm(refs - q[None], axis=2).mean(axis=1)
    return float(dists.min())
