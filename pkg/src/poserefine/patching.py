"""Per-limb patch cropping and the stacked patch volume.

Images are (H, W, 3) float64 arrays with values in [0, 1]; pixel (r, c)
covers the unit square [c, c+1) x [r, r+1) with its center at (c+.5, r+.5).
The patch volume stacks, for each limb in canonical order, 3 RGB channels
followed by 3 segmentation channels: 6(N-1) channels total.
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import DataError
from .validation import check_image, check_keypoints, as_float_array

DEFAULT_MIN_SIDE = 28
DEFAULT_BOX_SCALE = 2.3


@dataclass(frozen=True)
class PatchBox:
    """Square crop window: real-valued center (x, y) px and side px."""

    center: tuple
    side: float

    def __post_init__(self):
        if not (math.isfinite(self.side) and self.side > 0):
            raise DataError(f"PatchBox side must be positive, got {self.side}")


@dataclass(frozen=True)
class SegPalette:
    """Per-limb segmentation colors plus a background color, RGB in [0,1]."""

    limb_color: np.ndarray       # (N-1, 3)
    background_color: np.ndarray  # (3,)

    def __post_init__(self):
        lc = as_float_array(self.limb_color, "limb_color", shape=(-1, 3))
        bg = as_float_array(self.background_color, "background_color", shape=(3,))
        colors = np.vstack([lc, bg[None, :]])
        if len(np.unique(colors.round(9), axis=0)) != len(colors):
            raise DataError("palette colors must be pairwise distinct")
        object.__setattr__(self, "limb_color", lc)
        object.__setattr__(self, "background_color", bg)

    @property
    def n_limbs(self):
        return len(self.limb_color)


def limb_box(kp_a, kp_b, min_side=DEFAULT_MIN_SIDE, scale=DEFAULT_BOX_SCALE):
    """Crop window for one limb from its two endpoint keypoints.

    Tight box -> pad each side up to min_side -> square (max of the padded
    dims) -> multiply by scale and round half up to an integer pixel count.
    The center (the keypoint midpoint) never moves.
    """
    kp_a = as_float_array(kp_a, "kp_a", shape=(2,))
    kp_b = as_float_array(kp_b, "kp_b", shape=(2,))
    if scale <= 0:
        raise DataError("limb_box: scale must be positive")
    w = abs(kp_a[0] - kp_b[0])
    h = abs(kp_a[1] - kp_b[1])
    padded = max(float(min_side), h, w)
    side = math.floor(scale * padded + 0.5)
    center = ((kp_a[0] + kp_b[0]) / 2.0, (kp_a[1] + kp_b[1]) / 2.0)
    return PatchBox(center=center, side=float(side))


def _sample_coords(box, out_res):
    """Continuous source coordinates of the out_res x out_res sample grid."""
    cx, cy = box.center
    step = box.side / out_res
    offs = (np.arange(out_res) + 0.5) * step
    xs = cx - box.side / 2.0 + offs
    ys = cy - box.side / 2.0 + offs
    return xs, ys


def crop_resize(img, box, out_res, mode="bilinear"):
    """Crop the square box from an image and resample to out_res x out_res.

    Source pixels outside the image contribute exact zeros (zero padding).
    `mode` is "bilinear" (RGB) or "nearest" (label/segmentation images,
    where interpolation must not invent colors).
    """
    img = check_image(img)
    if out_res < 1:
        raise DataError("crop_resize: out_res must be >= 1")
    h, w = img.shape[:2]
    xs, ys = _sample_coords(box, out_res)

    if mode == "nearest":
        cols = np.floor(xs).astype(np.int64)
        rows = np.floor(ys).astype(np.int64)
        valid_c = (cols >= 0) & (cols < w)
        valid_r = (rows >= 0) & (rows < h)
        out = np.zeros((out_res, out_res, 3))
        rr, cc = np.meshgrid(rows.clip(0, h - 1), cols.clip(0, w - 1),
                             indexing="ij")
        vals = img[rr, cc]
        mask = valid_r[:, None] & valid_c[None, :]
        out[mask] = vals[mask]
        return out
    if mode != "bilinear":
        raise DataError(f"crop_resize: unknown mode {mode!r}")

    # bilinear between pixel centers; out-of-range taps read as zero
    gx = xs - 0.5
    gy = ys - 0.5
    x0 = np.floor(gx).astype(np.int64)
    y0 = np.floor(gy).astype(np.int64)
    fx = gx - x0
    fy = gy - y0

    def tap(rows, cols):
        rv = (rows >= 0) & (rows < h)
        cv = (cols >= 0) & (cols < w)
        vals = img[rows.clip(0, h - 1)[:, None], cols.clip(0, w - 1)[None, :]]
        return vals * (rv[:, None] & cv[None, :])[..., None]

    wy0 = (1.0 - fy)[:, None, None]
    wy1 = fy[:, None, None]
    wx0 = (1.0 - fx)[None, :, None]
    wx1 = fx[None, :, None]
    return (tap(y0, x0) * wy0 * wx0 + tap(y0, x0 + 1) * wy0 * wx1
            + tap(y0 + 1, x0) * wy1 * wx0 + tap(y0 + 1, x0 + 1) * wy1 * wx1)


def limb_boxes(kps, topo, min_side=DEFAULT_MIN_SIDE, scale=DEFAULT_BOX_SCALE):
    """Crop window for every limb, canonical order."""
    kps = check_keypoints(kps, topo)
    return [limb_box(kps[a], kps[b], min_side=min_side, scale=scale)
            for a, b in topo.limbs]


def build_volume(rgb, seg, kps, topo, min_side=DEFAULT_MIN_SIDE,
                 scale=DEFAULT_BOX_SCALE, out_res=32):
    """Stack per-limb RGB and segmentation crops into a (6(N-1), H, W) volume.

    The same box is used for both modalities: RGB resampled bilinearly,
    segmentation with nearest neighbor.
    """
    rgb = check_image(rgb, "rgb")
    seg = check_image(seg, "seg")
    if rgb.shape != seg.shape:
        raise DataError(f"rgb {rgb.shape} and seg {seg.shape} differ in size")
    boxes = limb_boxes(kps, topo, min_side=min_side, scale=scale)
    vol = np.zeros((6 * topo.n_limbs, out_res, out_res))
    for k, box in enumerate(boxes):
        rgb_patch = crop_resize(rgb, box, out_res, mode="bilinear")
        seg_patch = crop_resize(seg, box, out_res, mode="nearest")
        vol[6 * k:6 * k + 3] = rgb_patch.transpose(2, 0, 1)
        vol[6 * k + 3:6 * k + 6] = seg_patch.transpose(2, 0, 1)
    return vol


def colorize_segmentation(part_masks, palette, depth_order):
    """Paint per-limb masks into a color-coded segmentation image.

    Painter's algorithm: background first, then limbs in `depth_order`
    (farthest first), so nearer limbs overwrite farther ones and the
    occlusion relationship survives in the image.
    """
    masks = np.asarray(part_masks, dtype=bool)
    if masks.ndim != 3 or masks.shape[0] != palette.n_limbs:
        raise DataError(
            f"expected {palette.n_limbs} masks, got shape {masks.shape}")
    order = list(depth_order)
    if sorted(order) != list(range(palette.n_limbs)):
        raise DataError("depth_order must be a permutation of limb indices")
    h, w = masks.shape[1:]
    img = np.tile(palette.background_color, (h, w, 1))
    for k in order:
        img[masks[k]] = palette.limb_color[k]
    return img
