"""Inference pipeline: pad, translate, optionally super-resolve, crop back.
Also exports a generated-image detection training set."""

from __future__ import annotations

import json
import logging
import shutil
from pathlib import Path

import torch

from .data import crop_back, pad_to_multiple, write_image
from .metrics import write_detections
from .superres import bicubic_upsample

log = logging.getLogger(__name__)


@torch.no_grad()
def translate_image(generator, img, sr=None, superres: bool = False):
    """Translate one ``(C, H, W)`` source image of any size.

    With ``superres`` the output is 2x larger; ``sr`` is a trained
    :class:`~vis2ir.superres.SrNetwork`, or ``None`` for bicubic.
    """
    padded, record = pad_to_multiple(img, generator.spec.multiple)
    out = generator(padded, "full")
    if superres or sr is not None:
        lo, hi = generator.spec.value_range
        out = sr(out) if sr is not None else bicubic_upsample(out, 2).clamp(lo, hi)
        record = record.scaled(2)
    return crop_back(out, record)


def export_detection_dataset(dataset, generator, out_root, sr=None, superres=False) -> dict:
    """Write translated images plus untouched labels to ``out/{images,labels}``.

    Samples without labels are skipped and listed in the manifest.
    """
    out_root = Path(out_root)
    (out_root / "images").mkdir(parents=True, exist_ok=True)
    (out_root / "labels").mkdir(parents=True, exist_ok=True)
    exported, skipped = [], []
    for sample in dataset:
        if sample.labels is None and sample.label_path is None:
            log.warning("sample %s has no labels; skipped", sample.id)
            skipped.append(sample.id)
            continue
        out = translate_image(generator, sample.source, sr=sr, superres=superres)
        write_image(out_root / "images" / f"{sample.id}.png", out)
        dest = out_root / "labels" / f"{sample.id}.txt"
        if sample.label_path is not None:
            shutil.copyfile(sample.label_path, dest)
        else:
            write_detections(dest, sample.labels)
        exported.append(sample.id)
    manifest = {
        "exported_count": len(exported),
        "skipped_count": len(skipped),
        "exported": exported,
        "skipped": skipped,
        "superres": bool(superres or sr is not None),
    }
    (out_root / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    return manifest
