"""Command-line interface: gen / train / refine / eval / inspect / report.

Exit codes: 0 success, 1 usage error, 2 data or schema error, 3 numerical
failure. Diagnostics go to stderr only.
"""

import json
import os
import sys

import click
import numpy as np

from . import store
from .errors import SchemaError, DataError, NumericalError, TopologyError
from .evaluation import EvalReport, evaluate, emit_report
from .patching import (limb_boxes, crop_resize, DEFAULT_MIN_SIDE,
                       DEFAULT_BOX_SCALE)
from .pipeline import (generate_corpus, train_from_corpus, refine_corpus,
                       MODALITIES)
from .synth import PerturbConfig
from .updater import TrainingConfig


@click.group()
def cli():
    """Patch-based 3D pose refinement pipeline."""


@cli.command()
@click.option("--n", type=int, required=True, help="Number of samples.")
@click.option("--seed", type=int, default=0, show_default=True,
              help="Generator seed; fixes every file byte-for-byte.")
@click.option("--out", type=click.Path(), required=True,
              help="Corpus output directory.")
@click.option("--orient-noise-deg", type=float, default=8.0,
              show_default=True,
              help="Initial-estimate limb rotation noise (std, degrees).")
@click.option("--length-noise-frac", type=float, default=0.02,
              show_default=True, help="Relative limb-length noise.")
@click.option("--root-noise-mm", type=float, default=10.0, show_default=True,
              help="Root translation noise (std, mm).")
@click.option("--systematic-frac", type=float, default=0.85,
              show_default=True,
              help="Fraction of orientation-noise variance that is a "
                   "corpus-fixed per-limb bias.")
@click.option("--limb-thickness-px", type=float, default=6.0,
              show_default=True, help="Rendered limb half-width in pixels.")
def gen(n, seed, out, orient_noise_deg, length_noise_frac, root_noise_mm,
        systematic_frac, limb_thickness_px):
    """Generate a synthetic corpus with manifest and train/val/test split."""
    perturb = PerturbConfig(orient_noise_deg=orient_noise_deg,
                            length_noise_frac=length_noise_frac,
                            root_noise_mm=root_noise_mm,
                            systematic_frac=systematic_frac, seed=seed)
    corpus = generate_corpus(out, n, seed, perturb=perturb,
                             limb_thickness_px=limb_thickness_px)
    click.echo(f"wrote {len(corpus.samples())} samples to {corpus.root}")


@cli.command()
@click.option("--corpus", type=click.Path(exists=True), required=True,
              help="Corpus directory (from gen).")
@click.option("--config", type=click.Path(exists=True), default=None,
              help="JSON file overriding training hyperparameters.")
@click.option("--out-ckpt", type=click.Path(), required=True,
              help="Checkpoint output path.")
@click.option("--patch-res", type=int, default=32, show_default=True,
              help="Patch resolution (paper-faithful value: 256).")
@click.option("--lr", type=float, default=1e-3, show_default=True,
              help="Base learning rate (paper-faithful value: 1e-5, which "
                   "presumes a pretrained backbone).")
@click.option("--batch-size", type=int, default=32, show_default=True)
@click.option("--epochs", type=int, default=20, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--modality", type=click.Choice(MODALITIES), default="fused",
              show_default=True,
              help="Channel ablation: zero RGB or segmentation channels.")
def train(corpus, config, out_ckpt, patch_res, lr, batch_size, epochs, seed,
          modality):
    """Train the residual-orientation regressor on a corpus."""
    overrides = {}
    if config:
        overrides = store.read_json(config)
    train_cfg = TrainingConfig(
        batch_size=overrides.get("batch_size", batch_size),
        base_lr=overrides.get("base_lr", lr),
        lr_decay_factor=overrides.get("lr_decay_factor", 10.0),
        plateau_patience=overrides.get("plateau_patience", 3),
        max_epochs=overrides.get("max_epochs", epochs),
        shuffle=overrides.get("shuffle", True),
        seed=overrides.get("seed", seed))
    c = store.Corpus(corpus)
    params, reg_cfg, history = train_from_corpus(
        c, train_cfg, out_res=overrides.get("patch_res", patch_res),
        conv_specs=overrides.get("conv_specs"),
        fc_widths=overrides.get("fc_widths"), modality=modality)
    store.save_checkpoint(out_ckpt, params, reg_cfg)
    store.write_json(os.path.splitext(out_ckpt)[0] + "_history.json",
                     {"version": 1, **history})
    click.echo(f"saved checkpoint to {out_ckpt} "
               f"(final val loss {history['val_loss'][-1]:.6g})")


@cli.command()
@click.option("--corpus", type=click.Path(exists=True), required=True)
@click.option("--ckpt", type=click.Path(exists=True), required=True)
@click.option("--split", default="test", show_default=True)
@click.option("--out", type=click.Path(), required=True,
              help="Directory for refined pose files (one JSON per sample).")
@click.option("--modality", type=click.Choice(MODALITIES), default="fused",
              show_default=True)
def refine(corpus, ckpt, split, out, modality):
    """Refine every initial pose of a split through the trained updater."""
    c = store.Corpus(corpus)
    params, reg_cfg = store.load_checkpoint(ckpt)
    paths = refine_corpus(c, params, reg_cfg, split, out, modality=modality)
    click.echo(f"wrote {len(paths)} refined poses to {out}")


@cli.command(name="eval")
@click.option("--corpus", type=click.Path(exists=True), required=True)
@click.option("--ckpt", type=click.Path(exists=True), required=True)
@click.option("--split", default="test", show_default=True)
@click.option("--out-report", type=click.Path(), required=True,
              help="Evaluation report JSON output path.")
@click.option("--modality", type=click.Choice(MODALITIES), default="fused",
              show_default=True)
def eval_cmd(corpus, ckpt, split, out_report, modality):
    """Evaluate refinement: initial vs refined MPJPE with rarity buckets."""
    c = store.Corpus(corpus)
    params, reg_cfg = store.load_checkpoint(ckpt)
    report = evaluate(c, params, reg_cfg, split=split, modality=modality,
                      checkpoint_path=ckpt, corpus_label=corpus)
    store.write_json(out_report, report.to_dict())
    click.echo(f"mpjpe initial {report.mpjpe_initial:.3f} mm -> "
               f"refined {report.mpjpe_refined:.3f} mm "
               f"({report.n_samples} samples)")


@cli.command()
@click.option("--corpus", type=click.Path(exists=True), required=True)
@click.option("--sample", required=True, help="Sample id, e.g. s00012.")
@click.option("--out-dir", type=click.Path(), required=True)
@click.option("--patch-res", type=int, default=32, show_default=True)
def inspect(corpus, sample, out_dir, patch_res):
    """Dump every per-limb RGB/seg patch and the crop-box geometry for one
    sample."""
    c = store.Corpus(corpus)
    matches = [e for e in c.samples() if e["id"] == sample]
    if not matches:
        raise DataError(f"no sample {sample!r} in corpus")
    e = matches[0]
    rgb, seg = c.load_rgb(e), c.load_seg(e)
    kps = c.load_keypoints(e)
    boxes = limb_boxes(kps, c.topology)
    os.makedirs(out_dir, exist_ok=True)
    geometry = []
    for k, box in enumerate(boxes):
        store.save_image(os.path.join(out_dir, f"limb{k:02d}_rgb.png"),
                         crop_resize(rgb, box, patch_res, mode="bilinear"))
        store.save_image(os.path.join(out_dir, f"limb{k:02d}_seg.png"),
                         crop_resize(seg, box, patch_res, mode="nearest"))
        geometry.append({"limb": k, "center": list(box.center),
                         "side": box.side})
    store.write_json(os.path.join(out_dir, "boxes.json"),
                     {"version": 1, "sample": sample, "boxes": geometry})
    click.echo(f"wrote {2 * len(boxes)} patches to {out_dir}")


@cli.command()
@click.option("--eval", "eval_path", type=click.Path(exists=True),
              required=True, help="Report JSON produced by the eval command.")
@click.option("--out-dir", type=click.Path(), required=True)
@click.option("--max-overlays", type=int, default=16, show_default=True)
def report(eval_path, out_dir, max_overlays):
    """Emit text/JSON tables and overlay PNGs (initial blue, refined red,
    ground truth white) from an evaluation report."""
    rep = EvalReport.from_dict(store.read_json(eval_path))
    corpus = params = reg_cfg = None
    if rep.corpus and os.path.isdir(rep.corpus):
        corpus = store.Corpus(rep.corpus)
    if rep.checkpoint and os.path.exists(rep.checkpoint):
        params, reg_cfg = store.load_checkpoint(rep.checkpoint)
    emit_report(rep, out_dir, corpus=corpus, params=params, reg_cfg=reg_cfg,
                max_overlays=max_overlays)
    click.echo(f"wrote report artifacts to {out_dir}")


def main(argv=None):
    try:
        cli.main(args=argv, prog_name="poserefine", standalone_mode=False)
    except click.exceptions.Exit as e:
        return e.exit_code
    except click.exceptions.Abort:
        click.echo("aborted", err=True)
        return 1
    except click.UsageError as e:
        click.echo(f"usage error: {e.format_message()}", err=True)
        return 1
    except (SchemaError, TopologyError, DataError, FileNotFoundError) as e:
        click.echo(f"data error: {e}", err=True)
        return 2
    except NumericalError as e:
        click.echo(f"numerical failure: {e}", err=True)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
