"""End-to-end orchestration: corpus generation, volume/target assembly,
corpus-level training and refinement.

Per-sample random streams are derived from (corpus seed, sample index), so
serial and parallel generation agree bit for bit. POSEREFINE_THREADS caps
the worker pool (default 1).
"""

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict

import numpy as np

from . import store
from .errors import DataError
from .orientation import residual_target, apply_residual
from .patching import (build_volume, DEFAULT_MIN_SIDE, DEFAULT_BOX_SCALE)
from .skeleton import default_topology, compute_bone_stats
from .synth import (CameraModel, PerturbConfig, default_mannequin,
                    default_palette, sample_pose, project, render_scene,
                    perturb_initial)
from .updater import RegressorConfig, train

MODALITIES = ("fused", "rgb", "seg")


def worker_count():
    return max(1, int(os.environ.get("POSEREFINE_THREADS", "1")))


def _parallel_map(fn, items):
    workers = worker_count()
    if workers == 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def split_counts(n, fractions):
    """Floor allocation for (train, val, test); the remainder goes to train."""
    f_train, f_val, f_test = fractions
    if abs(f_train + f_val + f_test - 1.0) > 1e-9:
        raise DataError("split fractions must sum to 1")
    n_val = int(n * f_val)
    n_test = int(n * f_test)
    return n - n_val - n_test, n_val, n_test


def generate_corpus(out_dir, n, seed, topo=None, mannequin=None, camera=None,
                    perturb=None, palette=None,
                    split_fractions=(0.7, 0.15, 0.15), limb_thickness_px=6.0,
                    root_position=(0.0, 0.0, 4000.0)):
    """Write `n` synthetic scene samples plus manifest under out_dir.

    Deterministic given `seed`; re-running with the same arguments produces
    byte-identical files.
    """
    if n < 1:
        raise DataError("generate_corpus: n must be >= 1")
    topo = topo or default_topology()
    mannequin = mannequin or default_mannequin()
    camera = camera or CameraModel()
    perturb = perturb if perturb is not None else PerturbConfig(seed=seed)
    palette = palette or default_palette(topo.n_limbs)

    gt_poses = [
        sample_pose(np.random.default_rng([seed, i, 0]),
                    mannequin.limb_length_mm, topo, mannequin.rest_direction,
                    mannequin.cone_deg, root_position=root_position)
        for i in range(n)
    ]
    n_train, n_val, n_test = split_counts(n, split_fractions)
    splits = (["train"] * n_train + ["val"] * n_val + ["test"] * n_test)
    stats = compute_bone_stats(gt_poses[:n_train], topo)

    os.makedirs(out_dir, exist_ok=True)
    store.save_topology(os.path.join(out_dir, "topology.json"), topo)
    store.save_bone_stats(os.path.join(out_dir, "bone_stats.json"), stats)
    store.save_palette(os.path.join(out_dir, "palette.json"), palette)

    def emit(i):
        sid = f"s{i:05d}"
        sdir = os.path.join(out_dir, "samples", sid)
        os.makedirs(sdir, exist_ok=True)
        gt = gt_poses[i]
        init = perturb_initial(gt, perturb, stats, topo,
                               np.random.default_rng([seed, i, 1]))
        kps = project(gt, camera)
        rgb, seg = render_scene(gt, camera, palette, topo,
                                limb_thickness_px=limb_thickness_px,
                                rng=np.random.default_rng([seed, i, 2]))
        store.save_pose(os.path.join(sdir, "gt.json"), gt)
        store.save_pose(os.path.join(sdir, "init.json"), init)
        store.save_keypoints(os.path.join(sdir, "kp2d.json"), kps)
        store.save_image(os.path.join(sdir, "rgb.png"), rgb)
        store.save_image(os.path.join(sdir, "seg.png"), seg)
        return {"id": sid, "dir": os.path.join("samples", sid),
                "split": splits[i]}

    entries = _parallel_map(emit, range(n))

    config = {
        "n": n, "seed": seed,
        "camera": {"focal": camera.focal,
                   "principal": list(camera.principal),
                   "image_size": list(camera.image_size)},
        "perturb": asdict(perturb),
        "split_fractions": list(split_fractions),
        "limb_thickness_px": limb_thickness_px,
        "root_position": list(root_position),
        "mannequin": {"rest_direction": mannequin.rest_direction.tolist(),
                      "cone_deg": mannequin.cone_deg.tolist(),
                      "limb_length_mm": mannequin.limb_length_mm.tolist()},
    }
    manifest = {"version": store.MANIFEST_VERSION, "generator_seed": seed,
                "config": config, "config_hash": store.config_hash(config),
                "topology": "topology.json", "bone_stats": "bone_stats.json",
                "palette": "palette.json", "samples": entries}
    store.save_manifest(os.path.join(out_dir, "manifest.json"), manifest)
    return store.Corpus(out_dir)


def mask_modality(volumes, modality):
    """Zero the excluded 3 channels per limb for ablation runs.

    fused: untouched; rgb: segmentation channels zeroed; seg: RGB channels
    zeroed. Channel layout per limb is 3 RGB then 3 segmentation.
    """
    if modality not in MODALITIES:
        raise DataError(f"unknown modality {modality!r}")
    if modality == "fused":
        return volumes
    out = volumes.copy()
    ch = np.arange(volumes.shape[-3])
    if modality == "rgb":
        out[..., ch % 6 >= 3, :, :] = 0.0
    else:
        out[..., ch % 6 < 3, :, :] = 0.0
    return out


def build_volumes(corpus, entries, out_res=32, min_side=DEFAULT_MIN_SIDE,
                  scale=DEFAULT_BOX_SCALE, modality="fused"):
    """Patch volumes for a list of manifest entries, float32 (n, C, H, W)."""
    topo = corpus.topology
    shape = (len(entries), 6 * topo.n_limbs, out_res, out_res)
    vols = np.empty(shape, dtype=np.float32)

    def one(i):
        e = entries[i]
        vol = build_volume(corpus.load_rgb(e), corpus.load_seg(e),
                           corpus.load_keypoints(e), topo,
                           min_side=min_side, scale=scale, out_res=out_res)
        vols[i] = mask_modality(vol, modality)

    _parallel_map(one, range(len(entries)))
    return vols


def build_targets(corpus, entries):
    """Residual-orientation training targets, (n, 3(N-1))."""
    topo = corpus.topology
    return np.stack([
        residual_target(corpus.load_gt(e), corpus.load_init(e),
                        corpus.bone_stats, topo)
        for e in entries
    ])


def train_from_corpus(corpus, train_cfg, out_res=32, conv_specs=None,
                      fc_widths=None, modality="fused"):
    """Train the regressor on a corpus's train split, validating on val.

    Returns (params, regressor config, loss history).
    """
    topo = corpus.topology
    train_entries = corpus.samples("train")
    val_entries = corpus.samples("val")
    if not train_entries or not val_entries:
        raise DataError("corpus is missing a train or val split")
    reg_cfg = RegressorConfig(
        input_channels=6 * topo.n_limbs, patch_res=out_res,
        output_dim=3 * topo.n_limbs,
        **({"conv_specs": tuple(conv_specs)} if conv_specs else {}),
        **({"fc_widths": tuple(fc_widths)} if fc_widths else {}),
        seed=train_cfg.seed)
    train_x = build_volumes(corpus, train_entries, out_res=out_res,
                            modality=modality)
    val_x = build_volumes(corpus, val_entries, out_res=out_res,
                          modality=modality)
    train_y = build_targets(corpus, train_entries)
    val_y = build_targets(corpus, val_entries)
    params, history = train(train_x, train_y, val_x, val_y, reg_cfg, train_cfg)
    return params, reg_cfg, history


def refine_entry(corpus, entry, params, reg_cfg, modality="fused"):
    """Run the full update for one sample: build volume, predict the
    residual, add it to the initial estimate."""
    from .updater import forward
    vol = build_volume(corpus.load_rgb(entry), corpus.load_seg(entry),
                       corpus.load_keypoints(entry), corpus.topology,
                       out_res=reg_cfg.patch_res)
    vol = mask_modality(vol, modality)
    delta = forward(params, reg_cfg, vol)
    return apply_residual(corpus.load_init(entry), delta, corpus.bone_stats,
                          corpus.topology)


def refine_corpus(corpus, params, reg_cfg, split, out_dir, modality="fused"):
    """Write a refined pose file per sample of a split; returns the paths."""
    entries = corpus.samples(split)
    if not entries:
        raise DataError(f"no samples in split {split!r}")
    os.makedirs(out_dir, exist_ok=True)

    def one(e):
        refined = refine_entry(corpus, e, params, reg_cfg, modality=modality)
        path = os.path.join(out_dir, f"{e['id']}.json")
        store.save_pose(path, refined)
        return path

    return _parallel_map(one, entries)
