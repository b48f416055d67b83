"""Image quality (SSIM, PSNR) and detection (IoU, VOC-style AP/mAP) metrics."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import torch
import torch.nn.functional as F

from .errors import PreconditionError

PSNR_CAP = 100.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
_BT601 = (0.299, 0.587, 0.114)


# ---------------------------------------------------------------------------
# image quality


def _as_luma64(img):
    x = torch.as_tensor(img, dtype=torch.float64)
    if x.dim() == 2:
        return x
    if x.dim() != 3:
        raise PreconditionError(f"expected (C, H, W) or (H, W) raster, got shape {tuple(x.shape)}")
    if x.shape[0] == 1:
        return x[0]
    if x.shape[0] == 3:
        return _BT601[0] * x[0] + _BT601[1] * x[1] + _BT601[2] * x[2]
    raise PreconditionError(f"expected 1 or 3 channels, got {x.shape[0]}")


def gaussian_window(size=SSIM_WINDOW, sigma=SSIM_SIGMA):
    coords = torch.arange(size, dtype=torch.float64) - (size - 1) / 2
    g = torch.exp(-(coords**2) / (2 * sigma**2))
    g /= g.sum()
    return torch.outer(g, g)


def ssim(a, b, data_range: float = 1.0) -> float:
    """Mean SSIM over all fully-contained 11x11 Gaussian windows.

    Inputs are ``[0, 1]`` rasters of shape ``(C, H, W)`` or ``(H, W)``;
    colour images are reduced to BT.601 luminance.
    """
    x, y = _as_luma64(a), _as_luma64(b)
    if x.shape != y.shape:
        raise PreconditionError(f"ssim: shape mismatch {tuple(x.shape)} vs {tuple(y.shape)}")
    if min(x.shape) < SSIM_WINDOW:
        raise PreconditionError(f"ssim: image {tuple(x.shape)} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")
    c1 = (0.01 * data_range) ** 2
    c2 = (0.03 * data_range) ** 2
    win = gaussian_window()[None, None]
    x, y = x[None, None], y[None, None]

    def filt(t):
        return F.conv2d(t, win)

    mu_x, mu_y = filt(x), filt(y)
    sxx = filt(x * x) - mu_x**2
    syy = filt(y * y) - mu_y**2
    sxy = filt(x * y) - mu_x * mu_y
    num = (2 * mu_x * mu_y + c1) * (2 * sxy + c2)
    den = (mu_x**2 + mu_y**2 + c1) * (sxx + syy + c2)
    return float((num / den).mean())


def psnr(a, b) -> float:
    """PSNR in dB for ``[0, 1]`` rasters, capped at ``PSNR_CAP`` (zero MSE)."""
    x = torch.as_tensor(a, dtype=torch.float64)
    y = torch.as_tensor(b, dtype=torch.float64)
    if x.shape != y.shape:
        raise PreconditionError(f"psnr: shape mismatch {tuple(x.shape)} vs {tuple(y.shape)}")
    mse = float(((x - y) ** 2).mean())
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * math.log10(1.0 / mse))


# ---------------------------------------------------------------------------
# detections


@dataclass(frozen=True)
class DetectionRecord:
    image_id: str
    class_id: int
    box: tuple  # (cx, cy, w, h), normalized
    score: Optional[float] = None

    def __post_init__(self):
        cx, cy, w, h = self.box
        slack = 1e-6
        if w < 0 or h < 0 or cx - w / 2 < -slack or cy - h / 2 < -slack or cx + w / 2 > 1 + slack or cy + h / 2 > 1 + slack:
            raise PreconditionError(f"box {self.box} not inside the unit square")
        if self.score is not None and not 0.0 <= self.score <= 1.0:
            raise PreconditionError(f"score {self.score} outside [0, 1]")

    @property
    def corners(self):
        cx, cy, w, h = self.box
        return cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2


def iou(box_a, box_b) -> float:
    """IoU of two ``(cx, cy, w, h)`` boxes."""
    ax0, ay0, ax1, ay1 = _corners(box_a)
    bx0, by0, bx1, by1 = _corners(box_b)
    iw = max(0.0, min(ax1, bx1) - max(ax0, bx0))
    ih = max(0.0, min(ay1, by1) - max(ay0, by0))
    inter = iw * ih
    union = (ax1 - ax0) * (ay1 - ay0) + (bx1 - bx0) * (by1 - by0) - inter
    return inter / union if union > 0 else 0.0


def _corners(box):
    cx, cy, w, h = box
    return cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2


def read_detections(path, image_id: Optional[str] = None):
    """Parse ``class cx cy w h [score]`` lines."""
    path = Path(path)
    image_id = path.stem if image_id is None else image_id
    records = []
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        parts = line.split()
        if not parts:
            continue
        if len(parts) not in (5, 6):
            raise PreconditionError(f"{path}:{lineno}: expected 5 or 6 columns, got {len(parts)}")
        cls = int(parts[0])
        box = tuple(float(v) for v in parts[1:5])
        score = float(parts[5]) if len(parts) == 6 else None
        records.append(DetectionRecord(image_id, cls, box, score))
    return records


def write_detections(path, records):
    lines = []
    for r in records:
        cols = [str(r.class_id)] + [f"{v:.6f}" for v in r.box]
        if r.score is not None:
            cols.append(f"{r.score:.6f}")
        lines.append(" ".join(cols))
    Path(path).write_text("".join(line + "\n" for line in lines))


def read_detection_dir(directory):
    directory = Path(directory)
    records = []
    for p in sorted(directory.glob("*.txt")):
        records.extend(read_detections(p))
    return records


@dataclass
class MetricsReport:
    mean_ssim: Optional[float] = None
    mean_psnr: Optional[float] = None
    per_class_ap: dict = field(default_factory=dict)
    map50: Optional[float] = None
    iou_threshold: Optional[float] = None
    sample_count: int = 0
    per_image: list = field(default_factory=list)
    unmatched: list = field(default_factory=list)
    warnings: list = field(default_factory=list)
    curves: dict = field(default_factory=dict, repr=False)

    def to_dict(self):
        out = {
            "sample_count": self.sample_count,
            "mean_ssim": self.mean_ssim,
            "mean_psnr": self.mean_psnr,
            "map50": self.map50,
            "map50_percent": None if self.map50 is None else 100.0 * self.map50,
            "iou_threshold": self.iou_threshold,
            "per_class_ap": {str(k): v for k, v in sorted(self.per_class_ap.items())},
            "unmatched": list(self.unmatched),
            "warnings": list(self.warnings),
        }
        return out


def average_precision(tp_flags, n_gt: int) -> float:
    """All-point interpolated AP from TP flags in descending-score order."""
    if n_gt == 0:
        return 0.0
    tp = np.asarray(tp_flags, dtype=np.float64)
    if tp.size == 0:
        return 0.0
    ctp = np.cumsum(tp)
    recall = ctp / n_gt
    precision = ctp / np.arange(1, tp.size + 1)
    mrec = np.concatenate([[0.0], recall, [1.0]])
    mpre = np.concatenate([[0.0], precision, [0.0]])
    for i in range(mpre.size - 2, -1, -1):
        mpre[i] = max(mpre[i], mpre[i + 1])
    idx = np.nonzero(mrec[1:] != mrec[:-1])[0]
    return float(np.sum((mrec[idx + 1] - mrec[idx]) * mpre[idx + 1]))


def rank_predictions(preds):
    """Descending score; ties by image_id, then input order (sort is stable)."""
    return sorted(preds, key=lambda r: (-r.score, r.image_id))


def greedy_match(preds, gts, iou_thresh: float):
    """TP flag per ranked prediction, matching each to the best unmatched GT."""
    by_image = {}
    for g in gts:
        by_image.setdefault(g.image_id, []).append(g)
    used = {k: [False] * len(v) for k, v in by_image.items()}
    flags = []
    for p in preds:
        best, best_j = -1.0, -1
        for j, g in enumerate(by_image.get(p.image_id, ())):
            if used[p.image_id][j]:
                continue
            o = iou(p.box, g.box)
            if o >= iou_thresh and o > best:
                best, best_j = o, j
        if best_j >= 0:
            used[p.image_id][best_j] = True
        flags.append(best_j >= 0)
    return flags


def mean_average_precision(preds, gts, iou_thresh: float = 0.5) -> MetricsReport:
    """VOC-style mAP: all-point AP per ground-truth class, averaged."""
    report = MetricsReport(iou_threshold=iou_thresh)
    gt_classes = sorted({g.class_id for g in gts})
    report.sample_count = len({g.image_id for g in gts} | {p.image_id for p in preds})
    if not gt_classes:
        msg = "no ground-truth boxes; mAP defined as 0"
        warnings.warn(msg)
        report.warnings.append(msg)
        report.map50 = 0.0
        return report
    for cls in gt_classes:
        cls_gts = [g for g in gts if g.class_id == cls]
        cls_preds = rank_predictions([p for p in preds if p.class_id == cls])
        flags = greedy_match(cls_preds, cls_gts, iou_thresh)
        report.per_class_ap[cls] = average_precision(flags, len(cls_gts))
        ctp = np.cumsum(flags) if flags else np.zeros(0)
        report.curves[cls] = (
            ctp / len(cls_gts),
            ctp / np.arange(1, len(flags) + 1) if flags else np.zeros(0),
        )
    report.map50 = float(np.mean(list(report.per_class_ap.values())))
    return report
