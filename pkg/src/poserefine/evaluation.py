"""Metrics and the evaluation harness: root-aligned MPJPE, per-limb
orientation error, rarity-stratified initial-vs-refined reports, and the
overlay/table emitters used by the CLI.

MPJPE convention: both poses are translated so their roots coincide at the
origin before averaging per-joint distances. No rotation or scale
alignment.
"""

import os
from dataclasses import dataclass, field

import numpy as np
from PIL import Image as PILImage, ImageDraw

from . import store
from .errors import DataError
from .pipeline import refine_entry
from .skeleton import root_relative
from .synth import project, rarity_score
from .validation import check_pose


def mpjpe(pred, gt, topo):
    """Root-aligned mean per-joint position error in mm."""
    pred = check_pose(pred, topo, "pred")
    gt = check_pose(gt, topo, "gt")
    diff = root_relative(pred, topo) - root_relative(gt, topo)
    return float(np.linalg.norm(diff, axis=1).mean())


def per_joint_errors(pred, gt, topo):
    """Root-aligned per-joint distances in mm, (N,)."""
    diff = root_relative(pred, topo) - root_relative(gt, topo)
    return np.linalg.norm(diff, axis=1)


def orientation_error_deg(pred, gt, topo):
    """Angle in degrees between corresponding limb displacement vectors."""
    pred = check_pose(pred, topo, "pred")
    gt = check_pose(gt, topo, "gt")
    dp = pred[topo.limbs[:, 1]] - pred[topo.limbs[:, 0]]
    dg = gt[topo.limbs[:, 1]] - gt[topo.limbs[:, 0]]
    np_len = np.linalg.norm(dp, axis=1)
    ng_len = np.linalg.norm(dg, axis=1)
    if np.any(np_len == 0.0) or np.any(ng_len == 0.0):
        raise DataError("orientation_error_deg: zero-length limb")
    cosang = np.sum(dp * dg, axis=1) / (np_len * ng_len)
    return np.degrees(np.arccos(np.clip(cosang, -1.0, 1.0)))


@dataclass
class EvalReport:
    """Aggregate initial-vs-refined metrics over one corpus split."""

    split: str
    n_samples: int
    mpjpe_initial: float
    mpjpe_refined: float
    per_joint_errors: np.ndarray          # (N,) mm, refined vs gt
    per_limb_orient_err_deg: np.ndarray   # (N-1,) deg, refined vs gt
    rarity_buckets: list                  # dicts: threshold/count/mpjpe pair
    per_sample: list                      # dicts: id/mpjpe pair/rarity
    alignment: str = "root-aligned, no Procrustes"
    corpus: str = ""
    checkpoint: str = ""
    modality: str = "fused"

    def to_dict(self):
        return {
            "version": 1,
            "split": self.split,
            "n_samples": self.n_samples,
            "alignment": self.alignment,
            "corpus": self.corpus,
            "checkpoint": self.checkpoint,
            "modality": self.modality,
            "mpjpe_initial": self.mpjpe_initial,
            "mpjpe_refined": self.mpjpe_refined,
            "per_joint_errors": self.per_joint_errors.tolist(),
            "per_limb_orient_err_deg": self.per_limb_orient_err_deg.tolist(),
            "rarity_buckets": self.rarity_buckets,
            "per_sample": self.per_sample,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(split=d["split"], n_samples=d["n_samples"],
                   mpjpe_initial=d["mpjpe_initial"],
                   mpjpe_refined=d["mpjpe_refined"],
                   per_joint_errors=np.asarray(d["per_joint_errors"]),
                   per_limb_orient_err_deg=np.asarray(
                       d["per_limb_orient_err_deg"]),
                   rarity_buckets=d["rarity_buckets"],
                   per_sample=d["per_sample"], alignment=d["alignment"],
                   corpus=d["corpus"], checkpoint=d["checkpoint"],
                   modality=d["modality"])


def _rarity_buckets(samples, n_buckets=4):
    """Partition samples into rarity quantile buckets (upper-edge
    thresholds); every sample lands in exactly one bucket."""
    rarities = np.array([s["rarity"] for s in samples])
    edges = np.quantile(rarities, np.linspace(0, 1, n_buckets + 1)[1:])
    buckets = []
    assigned = np.full(len(samples), -1)
    for bi, edge in enumerate(edges):
        sel = (assigned == -1) & (rarities <= edge + 1e-12)
        assigned[sel] = bi
    assigned[assigned == -1] = len(edges) - 1
    for bi, edge in enumerate(edges):
        members = [s for s, a in zip(samples, assigned) if a == bi]
        buckets.append({
            "threshold": float(edge),
            "count": len(members),
            "mpjpe_initial": (float(np.mean(
                [m["mpjpe_initial"] for m in members])) if members else 0.0),
            "mpjpe_refined": (float(np.mean(
                [m["mpjpe_refined"] for m in members])) if members else 0.0),
        })
    return buckets


def evaluate(corpus, params, reg_cfg, split="test", modality="fused",
             n_buckets=4, checkpoint_path="", corpus_label=None,
             rarity_reference_split="train"):
    """Run build-volume -> predict -> apply-residual per sample of a split
    and aggregate initial/refined metrics with rarity stratification."""
    topo = corpus.topology
    entries = corpus.samples(split)
    if not entries:
        raise DataError(f"no samples in split {split!r}")
    refs = [corpus.load_gt(e)
            for e in corpus.samples(rarity_reference_split)]

    per_sample = []
    joint_acc = np.zeros(topo.n_joints)
    orient_acc = np.zeros(topo.n_limbs)
    for e in entries:
        gt = corpus.load_gt(e)
        init = corpus.load_init(e)
        refined = refine_entry(corpus, e, params, reg_cfg, modality=modality)
        per_sample.append({
            "id": e["id"],
            "mpjpe_initial": mpjpe(init, gt, topo),
            "mpjpe_refined": mpjpe(refined, gt, topo),
            "rarity": rarity_score(gt, refs, topo) if refs else 0.0,
        })
        joint_acc += per_joint_errors(refined, gt, topo)
        orient_acc += orientation_error_deg(refined, gt, topo)

    n = len(entries)
    return EvalReport(
        split=split, n_samples=n,
        mpjpe_initial=float(np.mean([s["mpjpe_initial"]
                                     for s in per_sample])),
        mpjpe_refined=float(np.mean([s["mpjpe_refined"]
                                     for s in per_sample])),
        per_joint_errors=joint_acc / n,
        per_limb_orient_err_deg=orient_acc / n,
        rarity_buckets=_rarity_buckets(per_sample, n_buckets=n_buckets),
        per_sample=per_sample,
        corpus=corpus.root if corpus_label is None else corpus_label,
        checkpoint=checkpoint_path, modality=modality)


def format_report_table(report, topo=None):
    """Aligned-column text rendering of an EvalReport."""
    lines = []
    lines.append(f"split: {report.split}   samples: {report.n_samples}   "
                 f"alignment: {report.alignment}")
    lines.append(f"{'metric':<24}{'initial':>12}{'refined':>12}")
    lines.append(f"{'mpjpe [mm]':<24}{report.mpjpe_initial:>12.3f}"
                 f"{report.mpjpe_refined:>12.3f}")
    lines.append("")
    lines.append(f"{'rarity bucket <=':>18}{'count':>8}{'initial':>12}"
                 f"{'refined':>12}")
    for b in report.rarity_buckets:
        lines.append(f"{b['threshold']:>18.3f}{b['count']:>8}"
                     f"{b['mpjpe_initial']:>12.3f}{b['mpjpe_refined']:>12.3f}")
    lines.append("")
    names = (topo.joint_names if topo is not None
             else [f"joint_{j}" for j in range(len(report.per_joint_errors))])
    lines.append(f"{'joint':<16}{'refined err [mm]':>18}")
    for name, err in zip(names, report.per_joint_errors):
        lines.append(f"{name:<16}{err:>18.3f}")
    return "\n".join(lines) + "\n"


GT_COLOR = (255, 255, 255)
INITIAL_COLOR = (64, 96, 255)
REFINED_COLOR = (255, 64, 64)


def draw_overlay(rgb, poses_2d, topo):
    """Skeleton overlay on an RGB image: gt white, initial blue, refined
    red. `poses_2d` maps label -> (N, 2) pixel keypoints."""
    base = (np.clip(rgb, 0, 1) * 255).astype(np.uint8)
    im = PILImage.fromarray(base, mode="RGB")
    draw = ImageDraw.Draw(im)
    colors = {"gt": GT_COLOR, "initial": INITIAL_COLOR,
              "refined": REFINED_COLOR}
    for label in ("gt", "initial", "refined"):
        if label not in poses_2d:
            continue
        kps = poses_2d[label]
        for a, b in topo.limbs:
            draw.line([tuple(kps[a]), tuple(kps[b])],
                      fill=colors[label], width=1)
    return np.asarray(im, dtype=np.float64) / 255.0


def emit_report(report, out_dir, corpus=None, params=None, reg_cfg=None,
                max_overlays=16):
    """Write report.json, report.txt and (when the corpus and checkpoint
    are available) per-sample overlay renders."""
    os.makedirs(out_dir, exist_ok=True)
    store.write_json(os.path.join(out_dir, "report.json"), report.to_dict())
    topo = corpus.topology if corpus is not None else None
    with open(os.path.join(out_dir, "report.txt"), "w") as f:
        f.write(format_report_table(report, topo))
    if corpus is None or params is None or reg_cfg is None:
        return
    entries = {e["id"]: e for e in corpus.samples(report.split)}
    for s in report.per_sample[:max_overlays]:
        e = entries[s["id"]]
        gt = corpus.load_gt(e)
        init = corpus.load_init(e)
        refined = refine_entry(corpus, e, params, reg_cfg,
                               modality=report.modality)
        overlay = draw_overlay(
            corpus.load_rgb(e),
            {"gt": project(gt, corpus.camera),
             "initial": project(init, corpus.camera),
             "refined": project(refined, corpus.camera)},
            corpus.topology)
        store.save_image(os.path.join(out_dir, f"{s['id']}_overlay.png"),
                         overlay)
