import json
import os

import numpy as np
import pytest

from poserefine import (RegressorConfig, SchemaError, init_params,
                        default_palette, BoneStats)
from poserefine import store


def test_pose_round_trip_exact(tmp_path, random_poses):
    for i, pose in enumerate(random_poses):
        path = str(tmp_path / f"p{i}.json")
        store.save_pose(path, pose)
        loaded = store.load_pose(path)
        np.testing.assert_array_equal(loaded, pose)


def test_pose_rejects_wrong_unit(tmp_path):
    path = str(tmp_path / "pose.json")
    path2 = str(tmp_path / "pose2.json")
    store.write_json(path, {"version": 1, "unit": "m", "positions": [[0, 0, 0]]})
    with pytest.raises(SchemaError):
        store.load_pose(path)
    store.write_json(path2, {"version": 1, "unit": "mm", "positions": [[0, 0]]})
    with pytest.raises(SchemaError):
        store.load_pose(path2)


def test_keypoints_round_trip(tmp_path):
    kps = np.random.default_rng(0).uniform(-50, 300, (17, 2))
    path = str(tmp_path / "kp.json")
    store.save_keypoints(path, kps)
    np.testing.assert_array_equal(store.load_keypoints(path), kps)


def test_bone_stats_round_trip(tmp_path, bone_stats):
    path = str(tmp_path / "stats.json")
    store.save_bone_stats(path, bone_stats)
    loaded = store.load_bone_stats(path)
    np.testing.assert_array_equal(loaded.mean_length, bone_stats.mean_length)


def test_topology_round_trip(tmp_path, topo):
    path = str(tmp_path / "topo.json")
    store.save_topology(path, topo)
    loaded = store.load_topology(path)
    assert loaded.joint_names == topo.joint_names
    np.testing.assert_array_equal(loaded.parent, topo.parent)
    np.testing.assert_array_equal(loaded.limbs, topo.limbs)


def test_palette_round_trip(tmp_path, palette):
    path = str(tmp_path / "pal.json")
    store.save_palette(path, palette)
    loaded = store.load_palette(path)
    np.testing.assert_array_equal(loaded.limb_color, palette.limb_color)


def test_image_round_trip_quantized(tmp_path):
    # 8-bit-representable values survive the PNG round trip exactly
    img = np.round(np.random.default_rng(1).uniform(0, 1, (16, 16, 3))
                   * 255.0) / 255.0
    path = str(tmp_path / "img.png")
    store.save_image(path, img)
    np.testing.assert_array_equal(store.load_image(path), img)


def test_checkpoint_round_trip_bit_exact(tmp_path):
    cfg = RegressorConfig(input_channels=12, patch_res=8, output_dim=6,
                          seed=9)
    params = init_params(cfg)
    path = str(tmp_path / "model.ckpt")
    store.save_checkpoint(path, params, cfg)
    loaded_params, loaded_cfg = store.load_checkpoint(path)
    assert loaded_cfg == cfg
    np.testing.assert_array_equal(loaded_params.values, params.values)
    # saving the loaded state reproduces the file byte for byte
    path2 = str(tmp_path / "model2.ckpt")
    store.save_checkpoint(path2, loaded_params, loaded_cfg)
    assert open(path, "rb").read() == open(path2, "rb").read()


def test_checkpoint_bad_magic(tmp_path):
    path = str(tmp_path / "bad.ckpt")
    with open(path, "wb") as f:
        f.write(b"NOPE" + b"\0" * 32)
    with pytest.raises(SchemaError, match="magic"):
        store.load_checkpoint(path)


def test_checkpoint_truncated_params(tmp_path):
    cfg = RegressorConfig(input_channels=12, patch_res=8, output_dim=6)
    params = init_params(cfg)
    path = str(tmp_path / "model.ckpt")
    store.save_checkpoint(path, params, cfg)
    data = open(path, "rb").read()
    with open(path, "wb") as f:
        f.write(data[:-16])
    with pytest.raises(SchemaError, match="length"):
        store.load_checkpoint(path)


def test_manifest_missing_file_names_path(tiny_corpus, tmp_path):
    manifest_path = os.path.join(tiny_corpus.root, "manifest.json")
    manifest = json.load(open(manifest_path))
    target = os.path.join(tiny_corpus.root, "manifest_broken.json")
    broken = dict(manifest)
    broken["samples"] = manifest["samples"] + [
        {"id": "sXXXXX", "dir": "samples/sXXXXX", "split": "train"}]
    store.save_manifest(target, broken)
    with pytest.raises(SchemaError, match="sXXXXX"):
        store.load_manifest(target)


def test_manifest_hash_mismatch(tiny_corpus, tmp_path):
    manifest = json.load(open(os.path.join(tiny_corpus.root,
                                           "manifest.json")))
    manifest["config"]["n"] = 999
    target = str(tmp_path / "manifest.json")
    store.save_manifest(target, manifest)
    with pytest.raises(SchemaError, match="hash"):
        store.load_manifest(target)


def test_corpus_accessors(tiny_corpus):
    entry = tiny_corpus.samples("train")[0]
    assert tiny_corpus.load_gt(entry).shape == (17, 3)
    assert tiny_corpus.load_init(entry).shape == (17, 3)
    assert tiny_corpus.load_keypoints(entry).shape == (17, 2)
    assert tiny_corpus.load_rgb(entry).shape == (256, 256, 3)
    assert tiny_corpus.load_seg(entry).shape == (256, 256, 3)
    assert tiny_corpus.bone_stats.mean_length.shape == (16,)
