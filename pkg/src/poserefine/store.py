"""Persistence: JSON schemas for poses/keypoints/stats/topology/palette,
PNG image codec, the binary checkpoint format, and corpus manifests.

All writes go through a temp file + atomic rename. JSON floats use Python's
shortest round-trip repr, so doubles survive save/load value-exactly.
Checkpoints are little-endian: magic "PRFK", u32 version, u32 JSON config
length, config JSON, then the float64 parameter vector.
"""

import hashlib
import json
import os
import struct
import tempfile

import numpy as np
from PIL import Image as PILImage

from .errors import SchemaError
from .skeleton import SkeletonTopology, BoneStats
from .patching import SegPalette
from .synth import CameraModel, PerturbConfig
from .updater import (RegressorConfig, RegressorParams, init_params,
                      param_count, CHECKPOINT_VERSION)

CHECKPOINT_MAGIC = b"PRFK"
MANIFEST_VERSION = 1


def atomic_write_bytes(path, data):
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_json(path, obj):
    atomic_write_bytes(path, (json.dumps(obj, indent=2, sort_keys=True)
                              + "\n").encode())


def read_json(path, required_keys=()):
    try:
        with open(path) as f:
            obj = json.load(f)
    except FileNotFoundError:
        raise SchemaError(f"missing file: {path}")
    except json.JSONDecodeError as e:
        raise SchemaError(f"{path}: invalid JSON ({e})")
    for key in required_keys:
        if key not in obj:
            raise SchemaError(f"{path}: missing key {key!r}")
    return obj


def canonical_json(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def config_hash(obj):
    return hashlib.sha256(canonical_json(obj).encode()).hexdigest()


# ---------------------------------------------------------------- JSON types

def save_pose(path, pose):
    write_json(path, {"version": 1, "unit": "mm",
                      "positions": np.asarray(pose, dtype=np.float64).tolist()})


def load_pose(path):
    obj = read_json(path, required_keys=("unit", "positions"))
    if obj["unit"] != "mm":
        raise SchemaError(f"{path}: expected unit 'mm', got {obj['unit']!r}")
    pose = np.asarray(obj["positions"], dtype=np.float64)
    if pose.ndim != 2 or pose.shape[1] != 3 or not np.all(np.isfinite(pose)):
        raise SchemaError(f"{path}: positions must be a finite (N, 3) array")
    return pose


def save_keypoints(path, kps):
    write_json(path, {"version": 1, "unit": "px",
                      "points": np.asarray(kps, dtype=np.float64).tolist()})


def load_keypoints(path):
    obj = read_json(path, required_keys=("unit", "points"))
    if obj["unit"] != "px":
        raise SchemaError(f"{path}: expected unit 'px', got {obj['unit']!r}")
    kps = np.asarray(obj["points"], dtype=np.float64)
    if kps.ndim != 2 or kps.shape[1] != 2 or not np.all(np.isfinite(kps)):
        raise SchemaError(f"{path}: points must be a finite (N, 2) array")
    return kps


def save_bone_stats(path, stats):
    write_json(path, {"version": 1,
                      "mean_length_mm": stats.mean_length.tolist()})


def load_bone_stats(path):
    obj = read_json(path, required_keys=("mean_length_mm",))
    try:
        return BoneStats(mean_length=np.asarray(obj["mean_length_mm"],
                                                dtype=np.float64))
    except Exception as e:
        raise SchemaError(f"{path}: {e}")


def save_topology(path, topo):
    write_json(path, {"version": 1,
                      "joint_names": list(topo.joint_names),
                      "parent": topo.parent.tolist(),
                      "limbs": topo.limbs.tolist()})


def load_topology(path):
    obj = read_json(path, required_keys=("joint_names", "parent", "limbs"))
    try:
        return SkeletonTopology(joint_names=tuple(obj["joint_names"]),
                                parent=obj["parent"], limbs=obj["limbs"])
    except Exception as e:
        raise SchemaError(f"{path}: {e}")


def save_palette(path, palette):
    write_json(path, {"version": 1,
                      "limb_color": palette.limb_color.tolist(),
                      "background_color": palette.background_color.tolist()})


def load_palette(path):
    obj = read_json(path, required_keys=("limb_color", "background_color"))
    try:
        return SegPalette(limb_color=obj["limb_color"],
                          background_color=obj["background_color"])
    except Exception as e:
        raise SchemaError(f"{path}: {e}")


# -------------------------------------------------------------------- images

def save_image(path, img):
    """Write an (H, W, 3) [0,1] image as 8-bit RGB PNG."""
    arr = np.asarray(img, dtype=np.float64)
    data = np.round(np.clip(arr, 0.0, 1.0) * 255.0).astype(np.uint8)
    buf = PILImage.fromarray(data, mode="RGB")
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(os.path.abspath(path)),
                               prefix=".tmp-", suffix=".png")
    os.close(fd)
    try:
        buf.save(tmp, format="PNG")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_image(path):
    try:
        with PILImage.open(path) as im:
            arr = np.asarray(im.convert("RGB"), dtype=np.float64)
    except FileNotFoundError:
        raise SchemaError(f"missing file: {path}")
    return arr / 255.0


# --------------------------------------------------------------- checkpoints

def save_checkpoint(path, params, cfg):
    blob = canonical_json(cfg.to_dict()).encode()
    header = CHECKPOINT_MAGIC + struct.pack("<II", CHECKPOINT_VERSION,
                                            len(blob))
    body = np.ascontiguousarray(params.values,
                                dtype="<f8").tobytes()
    atomic_write_bytes(path, header + blob + body)


def load_checkpoint(path):
    try:
        with open(path, "rb") as f:
            data = f.read()
    except FileNotFoundError:
        raise SchemaError(f"missing file: {path}")
    if data[:4] != CHECKPOINT_MAGIC:
        raise SchemaError(f"{path}: bad magic bytes")
    version, blob_len = struct.unpack("<II", data[4:12])
    if version != CHECKPOINT_VERSION:
        raise SchemaError(f"{path}: unsupported checkpoint version {version}")
    try:
        cfg = RegressorConfig.from_dict(json.loads(data[12:12 + blob_len]))
    except Exception as e:
        raise SchemaError(f"{path}: bad config blob ({e})")
    values = np.frombuffer(data[12 + blob_len:], dtype="<f8").astype(np.float64)
    if len(values) != param_count(cfg):
        raise SchemaError(
            f"{path}: parameter vector length {len(values)} does not match "
            f"config ({param_count(cfg)} expected)")
    template = init_params(cfg)
    return RegressorParams(values=values,
                           shape_table=template.shape_table), cfg


# ------------------------------------------------------------------- corpora

SAMPLE_FILES = ("gt.json", "init.json", "kp2d.json", "rgb.png", "seg.png")


def save_manifest(path, manifest):
    write_json(path, manifest)


def load_manifest(path):
    obj = read_json(path, required_keys=(
        "version", "generator_seed", "config", "config_hash", "samples",
        "topology", "bone_stats", "palette"))
    if obj["version"] != MANIFEST_VERSION:
        raise SchemaError(f"{path}: unsupported manifest version")
    if config_hash(obj["config"]) != obj["config_hash"]:
        raise SchemaError(f"{path}: config hash mismatch")
    root = os.path.dirname(os.path.abspath(path))
    for rel in (obj["topology"], obj["bone_stats"], obj["palette"]):
        if not os.path.exists(os.path.join(root, rel)):
            raise SchemaError(f"{path}: missing referenced file {rel}")
    for entry in obj["samples"]:
        for name in SAMPLE_FILES:
            p = os.path.join(root, entry["dir"], name)
            if not os.path.exists(p):
                raise SchemaError(f"{path}: missing referenced file "
                                  f"{os.path.join(entry['dir'], name)}")
    return obj


class Corpus:
    """Read-side view of a generated corpus directory."""

    def __init__(self, root):
        self.root = os.path.abspath(root)
        self.manifest = load_manifest(os.path.join(self.root, "manifest.json"))
        self.topology = load_topology(
            os.path.join(self.root, self.manifest["topology"]))
        self.bone_stats = load_bone_stats(
            os.path.join(self.root, self.manifest["bone_stats"]))
        self.palette = load_palette(
            os.path.join(self.root, self.manifest["palette"]))
        cam = self.manifest["config"]["camera"]
        self.camera = CameraModel(focal=cam["focal"],
                                  principal=tuple(cam["principal"]),
                                  image_size=tuple(cam["image_size"]))
        pc = self.manifest["config"]["perturb"]
        self.perturb = PerturbConfig(**pc)

    def samples(self, split=None):
        entries = self.manifest["samples"]
        if split is None:
            return list(entries)
        return [e for e in entries if e["split"] == split]

    def _path(self, entry, name):
        return os.path.join(self.root, entry["dir"], name)

    def load_gt(self, entry):
        return load_pose(self._path(entry, "gt.json"))

    def load_init(self, entry):
        return load_pose(self._path(entry, "init.json"))

    def load_keypoints(self, entry):
        return load_keypoints(self._path(entry, "kp2d.json"))

    def load_rgb(self, entry):
        return load_image(self._path(entry, "rgb.png"))

    def load_seg(self, entry):
        return load_image(self._path(entry, "seg.png"))
