import numpy as np
import pytest

from poserefine import (PatchBox, SegPalette, limb_box, crop_resize,
                        build_volume, colorize_segmentation, default_palette,
                        default_topology, DataError)


def test_limb_box_golden_small():
    box = limb_box((100.0, 100.0), (110.0, 120.0))
    # tight 10x20 -> padded 28x28 -> square 28 -> round(2.3 * 28) = 64
    assert box.side == 64
    assert box.center == (105.0, 110.0)


def test_limb_box_coincident_keypoints():
    box = limb_box((50.0, 50.0), (50.0, 50.0))
    assert box.side == 64
    assert box.center == (50.0, 50.0)


def test_limb_box_golden_large():
    box = limb_box((0.0, 0.0), (100.0, 40.0))
    # padded 100x40 -> square 100 -> 2.3 * 100 = 230
    assert box.side == 230


def test_limb_box_symmetric():
    a, b = (12.5, 77.0), (91.0, 14.25)
    assert limb_box(a, b) == limb_box(b, a)


def test_limb_box_rejects_nonfinite():
    with pytest.raises(DataError):
        limb_box((np.nan, 0.0), (1.0, 1.0))


def test_crop_outside_image_is_zero():
    img = np.random.default_rng(0).uniform(0, 1, (16, 16, 3))
    box = PatchBox(center=(100.0, 100.0), side=8.0)
    np.testing.assert_array_equal(crop_resize(img, box, 4, "bilinear"),
                                  np.zeros((4, 4, 3)))
    np.testing.assert_array_equal(crop_resize(img, box, 4, "nearest"),
                                  np.zeros((4, 4, 3)))


def test_crop_full_image_nearest_identity():
    img = np.random.default_rng(1).uniform(0, 1, (8, 8, 3))
    box = PatchBox(center=(4.0, 4.0), side=8.0)
    np.testing.assert_array_equal(crop_resize(img, box, 8, "nearest"), img)


def test_checkerboard_nearest_upsample():
    img = np.zeros((2, 2, 3))
    img[0, 0] = img[1, 1] = 1.0
    box = PatchBox(center=(1.0, 1.0), side=2.0)
    out = crop_resize(img, box, 4, "nearest")
    expected = np.kron(img.transpose(2, 0, 1), np.ones((2, 2)))
    np.testing.assert_array_equal(out, expected.transpose(1, 2, 0))


def test_bilinear_constant_region():
    img = np.full((10, 10, 3), 0.6)
    box = PatchBox(center=(5.0, 5.0), side=4.0)
    np.testing.assert_allclose(crop_resize(img, box, 7, "bilinear"), 0.6)


def test_translation_equivariance():
    rng = np.random.default_rng(2)
    img = np.zeros((40, 40, 3))
    img[10:20, 12:22] = rng.uniform(0, 1, (10, 10, 3))
    dx, dy = 5, 7
    shifted = np.zeros_like(img)
    shifted[10 + dy:20 + dy, 12 + dx:22 + dx] = img[10:20, 12:22]
    a, b = np.array([14.0, 13.0]), np.array([20.0, 18.0])
    for mode in ("bilinear", "nearest"):
        p0 = crop_resize(img, limb_box(a, b, min_side=4, scale=1.5), 16, mode)
        p1 = crop_resize(shifted, limb_box(a + (dx, dy), b + (dx, dy),
                                           min_side=4, scale=1.5), 16, mode)
        np.testing.assert_array_equal(p0, p1)


def test_build_volume_channel_count(topo, palette, camera, mannequin):
    rng = np.random.default_rng(0)
    rgb = rng.uniform(0, 1, (64, 64, 3))
    seg = np.zeros((64, 64, 3))
    kps = rng.uniform(0, 64, (17, 2))
    vol = build_volume(rgb, seg, kps, topo, out_res=16)
    assert vol.shape == (96, 16, 16)


def test_build_volume_black_inputs(topo):
    kps = np.random.default_rng(1).uniform(0, 32, (17, 2))
    vol = build_volume(np.zeros((32, 32, 3)), np.zeros((32, 32, 3)), kps,
                       topo, out_res=8)
    np.testing.assert_array_equal(vol, 0.0)


def test_build_volume_matches_per_limb_crop(topo):
    rng = np.random.default_rng(3)
    rgb = rng.uniform(0, 1, (64, 64, 3))
    seg = (rng.uniform(0, 1, (64, 64, 3)) > 0.5).astype(float)
    kps = rng.uniform(5, 59, (17, 2))
    vol = build_volume(rgb, seg, kps, topo, out_res=12)
    for k, (a, b) in enumerate(topo.limbs):
        box = limb_box(kps[a], kps[b])
        np.testing.assert_array_equal(
            vol[6 * k:6 * k + 3],
            crop_resize(rgb, box, 12, "bilinear").transpose(2, 0, 1))
        np.testing.assert_array_equal(
            vol[6 * k + 3:6 * k + 6],
            crop_resize(seg, box, 12, "nearest").transpose(2, 0, 1))


def test_build_volume_rejects_size_mismatch(topo):
    kps = np.zeros((17, 2))
    with pytest.raises(DataError):
        build_volume(np.zeros((32, 32, 3)), np.zeros((16, 16, 3)), kps, topo)


def test_seg_patches_only_palette_colors(topo, palette):
    # nearest resampling must never invent colors
    rng = np.random.default_rng(4)
    seg = np.zeros((64, 64, 3))
    for k in range(palette.n_limbs):
        r, c = rng.integers(0, 56, 2)
        seg[r:r + 8, c:c + 8] = palette.limb_color[k]
    kps = rng.uniform(-10, 74, (17, 2))
    vol = build_volume(rng.uniform(0, 1, (64, 64, 3)), seg, kps, topo,
                       out_res=16)
    allowed = np.vstack([palette.limb_color, palette.background_color[None]])
    for k in range(topo.n_limbs):
        patch = vol[6 * k + 3:6 * k + 6].transpose(1, 2, 0).reshape(-1, 3)
        dists = np.abs(patch[:, None, :] - allowed[None]).max(axis=2)
        assert dists.min(axis=1).max() == 0.0


def test_colorize_single_mask(palette):
    masks = np.zeros((16, 10, 10), dtype=bool)
    masks[3, 2:5, 2:5] = True
    img = colorize_segmentation(masks, palette, list(range(16)))
    np.testing.assert_array_equal(img[3, 3], palette.limb_color[3])
    np.testing.assert_array_equal(img[0, 0], palette.background_color)


def test_colorize_painter_order(palette):
    masks = np.zeros((16, 6, 6), dtype=bool)
    masks[0, 1:5, 1:5] = True
    masks[1, 2:4, 2:4] = True
    # limb 1 painted last (nearest) wins the overlap
    img = colorize_segmentation(masks, palette, list(range(16)))
    np.testing.assert_array_equal(img[3, 3], palette.limb_color[1])
    img2 = colorize_segmentation(masks, palette, [1] + [0] + list(range(2, 16)))
    np.testing.assert_array_equal(img2[3, 3], palette.limb_color[0])


def test_colorize_disjoint_depth_invariant(palette):
    rng = np.random.default_rng(5)
    masks = np.zeros((16, 8, 32), dtype=bool)
    for k in range(16):
        masks[k, :, 2 * k:2 * k + 2] = True
    order = list(range(16))
    img_a = colorize_segmentation(masks, palette, order)
    perm = list(rng.permutation(16))
    img_b = colorize_segmentation(masks, palette, perm)
    np.testing.assert_array_equal(img_a, img_b)


def test_colorize_rejects_bad_permutation(palette):
    masks = np.zeros((16, 4, 4), dtype=bool)
    with pytest.raises(DataError):
        colorize_segmentation(masks, palette, [0] * 16)


def test_palette_distinct_colors():
    with pytest.raises(DataError):
        SegPalette(limb_color=[[1, 0, 0], [1, 0, 0]],
                   background_color=[0, 0, 0])
