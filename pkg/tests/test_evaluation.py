import os

import numpy as np
import pytest

from poserefine import (mpjpe, orientation_error_deg, DataError, zero_params,
                        RegressorConfig, residual_target)
from poserefine import updater as updater_mod
from poserefine.evaluation import (evaluate, format_report_table, emit_report,
                                   draw_overlay, per_joint_errors)
from poserefine.synth import project


def small_cfg(topo, res=16):
    return RegressorConfig(input_channels=6 * topo.n_limbs, patch_res=res,
                           output_dim=3 * topo.n_limbs)


def test_mpjpe_identical(topo, random_poses):
    assert mpjpe(random_poses[0], random_poses[0], topo) == 0.0


def test_mpjpe_translation_invariant(topo, random_poses):
    gt = random_poses[0]
    assert mpjpe(gt + np.array([3.0, 4.0, 0.0]), gt, topo) == pytest.approx(
        0.0, abs=1e-12)
    assert mpjpe(gt, gt + np.array([-7.0, 2.0, 9.0]), topo) == pytest.approx(
        0.0, abs=1e-12)


def test_mpjpe_single_displaced_joint(topo, random_poses):
    gt = random_poses[1]
    pred = gt.copy()
    pred[5] += np.array([0.0, 17.0, 0.0])
    assert mpjpe(pred, gt, topo) == pytest.approx(1.0)


def test_mpjpe_size_mismatch(topo):
    with pytest.raises(DataError):
        mpjpe(np.zeros((16, 3)), np.zeros((17, 3)), topo)


def test_orientation_error_identical(topo, random_poses):
    np.testing.assert_allclose(
        orientation_error_deg(random_poses[0], random_poses[0], topo), 0.0,
        atol=1e-5)


def test_orientation_error_right_angle_and_antiparallel(topo, random_poses):
    gt = random_poses[2]
    pred = gt.copy()
    a, b = topo.limbs[3]
    disp = gt[b] - gt[a]
    # rotate neck->head limb 90 degrees in the xy plane
    pred[b] = pred[a] + np.array([-disp[1], disp[0], disp[2] * 0])
    gt2 = gt.copy()
    gt2[b] = gt2[a] + np.array([disp[0], disp[1], 0.0])
    errs = orientation_error_deg(pred, gt2, topo)
    assert errs[3] == pytest.approx(90.0)
    pred2 = gt.copy()
    pred2[b] = pred2[a] - disp
    assert orientation_error_deg(pred2, gt, topo)[3] == pytest.approx(180.0)


def test_orientation_error_zero_length_limb(topo, random_poses):
    bad = random_poses[0].copy()
    a, b = topo.limbs[0]
    bad[b] = bad[a]
    with pytest.raises(DataError):
        orientation_error_deg(bad, random_poses[0], topo)


def test_evaluate_zero_residual_reproduces_initial(tiny_corpus):
    topo = tiny_corpus.topology
    cfg = small_cfg(topo)
    report = evaluate(tiny_corpus, zero_params(cfg), cfg, split="test")
    assert report.mpjpe_refined == report.mpjpe_initial
    for s in report.per_sample:
        assert s["mpjpe_refined"] == s["mpjpe_initial"]


def test_evaluate_oracle_targets_reach_zero(tiny_corpus, monkeypatch):
    # predictions replaced by ground-truth residual targets: the refined
    # error collapses to (near) zero
    topo = tiny_corpus.topology
    cfg = small_cfg(topo)
    targets = {}
    for e in tiny_corpus.samples("test"):
        targets[e["id"]] = residual_target(
            tiny_corpus.load_gt(e), tiny_corpus.load_init(e),
            tiny_corpus.bone_stats, topo)
    entries = iter(tiny_corpus.samples("test"))
    order = [e["id"] for e in tiny_corpus.samples("test")]
    calls = {"i": 0}

    def oracle_forward(params, cfg_, volume):
        out = targets[order[calls["i"] % len(order)]]
        calls["i"] += 1
        return out

    monkeypatch.setattr(updater_mod, "forward", oracle_forward)
    report = evaluate(tiny_corpus, zero_params(cfg), cfg, split="test")
    assert report.mpjpe_refined <= 1e-6


def test_evaluate_totals_match_scalar_recomputation(tiny_corpus):
    topo = tiny_corpus.topology
    cfg = small_cfg(topo)
    report = evaluate(tiny_corpus, zero_params(cfg), cfg, split="test")
    init_mean = sum(s["mpjpe_initial"] for s in report.per_sample) / len(
        report.per_sample)
    ref_mean = sum(s["mpjpe_refined"] for s in report.per_sample) / len(
        report.per_sample)
    assert report.mpjpe_initial == pytest.approx(init_mean, rel=1e-12)
    assert report.mpjpe_refined == pytest.approx(ref_mean, rel=1e-12)


def test_rarity_buckets_partition(tiny_corpus):
    topo = tiny_corpus.topology
    cfg = small_cfg(topo)
    report = evaluate(tiny_corpus, zero_params(cfg), cfg, split="test")
    assert sum(b["count"] for b in report.rarity_buckets) == report.n_samples


def test_report_round_trip_and_table(tiny_corpus):
    from poserefine.evaluation import EvalReport
    topo = tiny_corpus.topology
    cfg = small_cfg(topo)
    report = evaluate(tiny_corpus, zero_params(cfg), cfg, split="test")
    again = EvalReport.from_dict(report.to_dict())
    assert again.to_dict() == report.to_dict()
    table = format_report_table(report, topo)
    assert "mpjpe [mm]" in table
    assert "pelvis" in table


def test_emit_report_writes_artifacts(tiny_corpus, tmp_path):
    topo = tiny_corpus.topology
    cfg = small_cfg(topo)
    params = zero_params(cfg)
    report = evaluate(tiny_corpus, params, cfg, split="test")
    out = str(tmp_path / "report")
    emit_report(report, out, corpus=tiny_corpus, params=params, reg_cfg=cfg,
                max_overlays=2)
    assert os.path.exists(os.path.join(out, "report.json"))
    assert os.path.exists(os.path.join(out, "report.txt"))
    overlays = [f for f in os.listdir(out) if f.endswith("_overlay.png")]
    assert len(overlays) == 2


def test_draw_overlay_shapes(tiny_corpus):
    e = tiny_corpus.samples("test")[0]
    rgb = tiny_corpus.load_rgb(e)
    gt = tiny_corpus.load_gt(e)
    kps = project(gt, tiny_corpus.camera)
    out = draw_overlay(rgb, {"gt": kps, "initial": kps, "refined": kps},
                       tiny_corpus.topology)
    assert out.shape == rgb.shape
    assert out.min() >= 0.0 and out.max() <= 1.0
