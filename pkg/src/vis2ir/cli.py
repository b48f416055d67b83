"""vis2ir: train, run and score a visible-to-infrared image translator.

Exit codes: 0 success, 1 user or config error, 2 runtime abort.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np
import torch
from PIL import Image, UnidentifiedImageError

from . import plotting
from .config import RunConfig, default_config_path, load_config
from .data import (
    DatasetManifest,
    SynthesisRecipe,
    load_paired_dataset,
    read_image,
    synthesize_pair,
    write_dataset,
    write_image,
)
from .errors import ConsistencyError, TrainingAborted, Vis2IRError
from .metrics import MetricsReport, mean_average_precision, psnr, read_detection_dir, ssim
from .pipeline import export_detection_dataset, translate_image
from .superres import load_sr_network, make_sr_pairs, train_sr
from .training import GLOBAL_ONLY, JOINT, load_generator, run_schedule

log = logging.getLogger("vis2ir")

EXIT_OK, EXIT_USER, EXIT_RUNTIME = 0, 1, 2


class UserError(Vis2IRError):
    pass


# ---------------------------------------------------------------------------
# helpers


def _write_json(path, payload):
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _write_csv(path, rows, fields):
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow(row)


def build_dataset(cfg: RunConfig):
    d = cfg.data
    if d.synthetic:
        samples = []
        for i in range(d.synthetic_count):
            recipe = SynthesisRecipe(d.synthetic_seed * 100003 + i, tuple(cfg.train.train_resolution),
                                     d.hotspot_count, d.blur_radius)
            samples.append(synthesize_pair(recipe, sample_id=f"{i:05d}").with_direction(d.direction))
        return samples
    manifest = DatasetManifest.from_root(d.root, d.split, d.direction)
    return load_paired_dataset(manifest, d.visible_channels, d.infrared_channels)


def _read_unit(path):
    """PNG to a ``[0, 1]`` float tensor (1 channel for greyscale, else RGB)."""
    with Image.open(path) as im:
        grey = im.mode in ("L", "I", "I;16", "F", "1")
        arr = np.asarray(im.convert("L" if grey else "RGB"), dtype=np.float64) / 255.0
    return torch.from_numpy(arr[None] if arr.ndim == 2 else arr.transpose(2, 0, 1))


# ---------------------------------------------------------------------------
# commands


def cmd_train(args):
    cfg = load_config(args.config)
    out = Path(args.out or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    dataset = build_dataset(cfg)
    if len(dataset) == 0:
        raise UserError("dataset is empty")
    log_path = out / "train_log.jsonl"
    if args.resume:
        from .checkpoint import read_archive

        resume_step = read_archive(args.resume)[0]["step"]
        kept = [r for r in plotting.read_training_log(log_path) if r["step"] <= resume_step] if log_path.exists() else []
        log_path.write_text("".join(json.dumps(r) + "\n" for r in kept))
    elif log_path.exists():
        log_path.unlink()

    def progress(trainer, report):
        if trainer.step % 100 == 0 or trainer.finished:
            stage = GLOBAL_ONLY if trainer.step <= trainer.config.stage1_steps else JOINT
            log.info("step %d [%s] gan_g=%.4f gan_d=%.4f fm=%.4f", trainer.step, stage,
                     report.gan_g, report.gan_d, report.fm)

    trainer = run_schedule(cfg.train, dataset, cfg.generator, cfg.discriminator, out_dir=out,
                           resume=args.resume, log_path=log_path, callback=progress)
    records = plotting.read_training_log(log_path)
    summary = {
        "steps": trainer.step,
        "stage1_steps": cfg.train.stage1_steps,
        "joint_steps": cfg.train.joint_steps,
        "sample_count": len(dataset),
        "final": {k: records[-1][k] for k in ("gan_g", "gan_d", "fm", "total_g")} if records else None,
        "checkpoint": "final.ckpt",
    }
    _write_json(out / "summary.json", summary)
    if records:
        plotting.plot_training_log(records, out / "losses.png")
    print(f"trained {trainer.step} steps; checkpoint {out / 'final.ckpt'}")
    return EXIT_OK


def cmd_train_sr(args):
    cfg = load_config(args.config)
    out = Path(args.out or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    dataset = build_dataset(cfg)
    pairs = make_sr_pairs([s.target for s in dataset])
    losses = []
    trainer = train_sr(pairs, cfg.superres, cfg.superres_train, out_path=out / "superres.ckpt",
                       callback=lambda t, l: losses.append(l))
    _write_json(out / "superres_summary.json", {"steps": trainer.step, "final": losses[-1] if losses else None})
    print(f"trained SR for {trainer.step} steps; checkpoint {out / 'superres.ckpt'}")
    return EXIT_OK


def cmd_translate(args):
    gen = load_generator(args.checkpoint)
    sr = load_sr_network(args.sr_checkpoint) if args.sr_checkpoint else None
    src_dir, dst_dir = Path(args.input), Path(args.output)
    if not src_dir.is_dir():
        raise UserError(f"input directory {src_dir} does not exist")
    dst_dir.mkdir(parents=True, exist_ok=True)
    translated, skipped = 0, []
    for path in sorted(src_dir.glob("*.png")):
        try:
            img = read_image(path, gen.spec.input_channels)
        except (UnidentifiedImageError, OSError, ValueError) as exc:
            log.warning("skipping unreadable image %s (%s)", path.name, exc)
            skipped.append(path.name)
            continue
        out = translate_image(gen, img, sr=sr, superres=args.superres)
        write_image(dst_dir / path.name, out)
        translated += 1
    print(f"{translated} translated, {len(skipped)} skipped")
    if args.summary:
        _write_json(args.summary, {"translated": translated, "skipped": skipped,
                                   "superres": bool(args.superres or sr is not None)})
    return EXIT_OK


def cmd_evaluate(args):
    gen_dir, ref_dir, out = Path(args.generated), Path(args.reference), Path(args.out)
    for d in (gen_dir, ref_dir):
        if not d.is_dir():
            raise UserError(f"directory {d} does not exist")
    gen_names = {p.name for p in gen_dir.glob("*.png")}
    ref_names = {p.name for p in ref_dir.glob("*.png")}
    common = sorted(gen_names & ref_names)
    if not common:
        raise UserError(f"no matching filenames between {gen_dir} and {ref_dir}")
    report = MetricsReport(unmatched=sorted(gen_names ^ ref_names))
    if report.unmatched:
        report.warnings.append(f"{len(report.unmatched)} unmatched files excluded")
    for name in common:
        a, b = _read_unit(gen_dir / name), _read_unit(ref_dir / name)
        if a.shape != b.shape:
            report.warnings.append(f"{name}: size mismatch {tuple(a.shape)} vs {tuple(b.shape)}; excluded")
            report.unmatched.append(name)
            continue
        report.per_image.append({"file": name, "ssim": ssim(a, b), "psnr": psnr(a, b)})
    if not report.per_image:
        raise UserError("no comparable image pairs")
    report.sample_count = len(report.per_image)
    report.mean_ssim = float(np.mean([r["ssim"] for r in report.per_image]))
    report.mean_psnr = float(np.mean([r["psnr"] for r in report.per_image]))
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "report.json", report.to_dict())
    _write_csv(out / "per_image.csv", report.per_image, ["file", "ssim", "psnr"])
    plotting.plot_quality(report.per_image, out / "quality.png")
    print(f"SSIM {report.mean_ssim:.4f}  PSNR {report.mean_psnr:.3f} dB  over {report.sample_count} images")
    return EXIT_OK


def cmd_eval_detections(args):
    pred_dir, gt_dir, out = Path(args.pred), Path(args.gt), Path(args.out)
    for d in (pred_dir, gt_dir):
        if not d.is_dir():
            raise UserError(f"directory {d} does not exist")
    preds = read_detection_dir(pred_dir)
    if any(p.score is None for p in preds):
        raise UserError("prediction files need a trailing score column")
    gts = read_detection_dir(gt_dir)
    report = mean_average_precision(preds, gts, args.iou)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "report.json", report.to_dict())
    _write_csv(out / "per_class.csv", [{"class_id": k, "ap": v} for k, v in sorted(report.per_class_ap.items())],
               ["class_id", "ap"])
    plotting.plot_pr_curves(report.curves, report.per_class_ap, out / "pr_curves.png")
    print(f"mAP@{args.iou:g}: {100.0 * report.map50:.2f}%")
    return EXIT_OK


def cmd_gen_synthetic(args):
    cfg = load_config(args.config) if args.config else RunConfig()
    h, w = (args.height, args.width) if args.height and args.width else cfg.train.train_resolution
    hotspots = cfg.data.hotspot_count if args.hotspots is None else args.hotspots
    blur = cfg.data.blur_radius if args.blur is None else args.blur
    if args.count < 0:
        raise UserError("count must be >= 0")
    samples = [synthesize_pair(SynthesisRecipe(args.seed * 100003 + i, (h, w), hotspots, blur), sample_id=f"{i:05d}")
               for i in range(args.count)]
    n_test = int(round(args.test_fraction * len(samples)))
    ids = [s.id for s in samples]
    write_dataset(samples, args.out, {"train": ids[: len(ids) - n_test], "test": ids[len(ids) - n_test:]})
    print(f"wrote {len(samples)} pairs to {args.out}")
    return EXIT_OK


def cmd_export_detections(args):
    gen = load_generator(args.checkpoint)
    sr = load_sr_network(args.sr_checkpoint) if args.sr_checkpoint else None
    manifest = DatasetManifest.from_root(args.data, args.split, args.direction)
    dataset = load_paired_dataset(manifest, args.visible_channels, args.infrared_channels)
    result = export_detection_dataset(dataset, gen, args.out, sr=sr, superres=args.superres)
    print(f"exported {result['exported_count']} images, skipped {result['skipped_count']}")
    return EXIT_OK


# ---------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    # bad arguments are user errors, not runtime aborts
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USER, f"{self.prog}: error: {message}\n")


def build_parser():
    p = _Parser(prog="vis2ir", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("train", help="run the two-stage GAN schedule")
    s.add_argument("--config", default=str(default_config_path()))
    s.add_argument("--out", help="output directory (overrides [output] dir)")
    s.add_argument("--resume", help="snapshot to continue from")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("train-sr", help="train the 2x super-resolution stage")
    s.add_argument("--config", default=str(default_config_path()))
    s.add_argument("--out")
    s.set_defaults(func=cmd_train_sr)

    s = sub.add_parser("translate", help="translate every PNG in a directory")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--input", required=True)
    s.add_argument("--output", required=True)
    s.add_argument("--superres", action="store_true", help="upsample outputs 2x (bicubic unless --sr-checkpoint)")
    s.add_argument("--sr-checkpoint")
    s.add_argument("--summary", help="also write a JSON summary to this path")
    s.set_defaults(func=cmd_translate)

    s = sub.add_parser("evaluate", help="SSIM/PSNR between generated and reference images")
    s.add_argument("generated")
    s.add_argument("reference")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("eval-detections", help="mAP of prediction files against ground truth")
    s.add_argument("pred")
    s.add_argument("gt")
    s.add_argument("--iou", type=float, default=0.5)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_eval_detections)

    s = sub.add_parser("gen-synthetic", help="write seeded synthetic pairs in the dataset layout")
    s.add_argument("--count", type=int, required=True)
    s.add_argument("--seed", type=int, default=1)
    s.add_argument("--out", required=True)
    s.add_argument("--config", help="take size/hotspots/blur from this run config")
    s.add_argument("--height", type=int)
    s.add_argument("--width", type=int)
    s.add_argument("--hotspots", type=int)
    s.add_argument("--blur", type=float)
    s.add_argument("--test-fraction", type=float, default=0.0)
    s.set_defaults(func=cmd_gen_synthetic)

    s = sub.add_parser("export-detections", help="translate a labelled dataset for detector training")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--split", default="train")
    s.add_argument("--direction", default="visible_to_infrared")
    s.add_argument("--visible-channels", type=int, default=3)
    s.add_argument("--infrared-channels", type=int, default=1)
    s.add_argument("--out", required=True)
    s.add_argument("--superres", action="store_true")
    s.add_argument("--sr-checkpoint")
    s.set_defaults(func=cmd_export_detections)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except TrainingAborted as exc:
        print(f"error: training aborted: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except ConsistencyError as exc:
        print(f"error: internal inconsistency: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except Vis2IRError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USER
    except Exception as exc:  # noqa: BLE001
        log.exception("unexpected failure")
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
