"""Paired visible/infrared data: I/O, normalization, padding, pyramids and
a seeded synthetic pair generator.

Images are ``torch.Tensor`` rasters of shape ``(C, H, W)``. Batched helpers
also accept ``(N, C, H, W)``. Samples carry both modalities in the model
range ``[-1, 1]``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image
from scipy.ndimage import gaussian_filter

from .errors import DatasetError, PreconditionError
from .metrics import DetectionRecord, read_detections, write_detections

VISIBLE_TO_INFRARED = "visible_to_infrared"
INFRARED_TO_VISIBLE = "infrared_to_visible"
DIRECTIONS = (VISIBLE_TO_INFRARED, INFRARED_TO_VISIBLE)

MANIFEST_NAME = "manifest.json"

# ITU-R BT.601 luma weights
LUMA_WEIGHTS = (0.299, 0.587, 0.114)


# ---------------------------------------------------------------------------
# value ranges


def normalize(img, in_range=(0.0, 255.0), out_range=(-1.0, 1.0)):
    """Affinely map raw values in ``in_range`` onto ``out_range``."""
    img = torch.as_tensor(img, dtype=torch.float32)
    lo, hi = in_range
    if img.numel() and (img.min() < lo or img.max() > hi):
        raise PreconditionError(
            f"raster values [{float(img.min())}, {float(img.max())}] outside declared range {in_range}"
        )
    a, b = out_range
    return (img - lo) * ((b - a) / (hi - lo)) + a


def denormalize(img, out_range=(0.0, 255.0), in_range=(-1.0, 1.0)):
    """Inverse of :func:`normalize`. Values are clamped to ``in_range`` first."""
    a, b = in_range
    img = torch.as_tensor(img, dtype=torch.float32).clamp(a, b)
    lo, hi = out_range
    return (img - a) * ((hi - lo) / (b - a)) + lo


def to_uint8(img):
    """``[-1, 1]`` tensor ``(C, H, W)`` to an ``(H, W, C)`` uint8 array."""
    arr = denormalize(img).round().to(torch.uint8)
    return arr.permute(1, 2, 0).numpy()


def luminance(img):
    """Luma of a ``(..., C, H, W)`` raster, keeping a singleton channel axis."""
    if img.shape[-3] == 1:
        return img
    if img.shape[-3] != 3:
        raise PreconditionError(f"luminance needs 1 or 3 channels, got {img.shape[-3]}")
    r, g, b = img.unbind(-3)
    w = LUMA_WEIGHTS
    return (w[0] * r + w[1] * g + w[2] * b).unsqueeze(-3)


# ---------------------------------------------------------------------------
# padding and pyramids


@dataclass(frozen=True)
class CropRecord:
    height: int
    width: int

    def scaled(self, factor: int) -> "CropRecord":
        return CropRecord(self.height * factor, self.width * factor)


def _pad_mode(h, w, pad_h, pad_w):
    # reflection needs the pad to be strictly smaller than the padded dim
    if pad_h < h and pad_w < w:
        return "reflect"
    return "replicate"


def pad_to_multiple(img, multiple: int):
    """Pad bottom/right so both spatial dims are divisible by ``multiple``."""
    if multiple < 1:
        raise PreconditionError(f"multiple must be >= 1, got {multiple}")
    h, w = img.shape[-2:]
    pad_h = -h % multiple
    pad_w = -w % multiple
    record = CropRecord(h, w)
    if pad_h == 0 and pad_w == 0:
        return img, record
    batched = img.dim() == 4
    x = img if batched else img.unsqueeze(0)
    x = F.pad(x, (0, pad_w, 0, pad_h), mode=_pad_mode(h, w, pad_h, pad_w))
    return (x if batched else x.squeeze(0)), record


def crop_back(img, record: CropRecord):
    return img[..., : record.height, : record.width]


def downsample(img):
    """Halve resolution (ceil) with a 3x3 stride-2 mean over a reflect-padded border."""
    batched = img.dim() == 4
    x = img if batched else img.unsqueeze(0)
    h, w = x.shape[-2:]
    if h == 0 or w == 0:
        raise PreconditionError("cannot downsample an empty raster")
    mode = "reflect" if min(h, w) >= 2 else "replicate"
    # Pool float32 data in float64: the 9-term sum is then exact, so a
    # constant region comes back bit-identical instead of 1 ulp off.
    dtype = x.dtype
    wide = x.double() if dtype in (torch.float32, torch.float16, torch.bfloat16) else x
    x = F.avg_pool2d(F.pad(wide, (1, 1, 1, 1), mode=mode), kernel_size=3, stride=2).to(dtype)
    return x if batched else x.squeeze(0)


@dataclass
class ImagePyramid:
    levels: list
    factors: list

    def __len__(self):
        return len(self.levels)

    def __getitem__(self, i):
        return self.levels[i]


def pyramid_dims(h: int, w: int, n_scales: int):
    """Level sizes: level j is ``ceil(size / 2**j)``."""
    return [(math.ceil(h / 2**j), math.ceil(w / 2**j)) for j in range(n_scales)]


def make_pyramid(img, n_scales: int) -> ImagePyramid:
    if n_scales < 1:
        raise PreconditionError(f"n_scales must be >= 1, got {n_scales}")
    if min(img.shape[-2:]) == 0:
        raise PreconditionError("cannot build a pyramid from an empty raster")
    levels = [img]
    for _ in range(n_scales - 1):
        levels.append(downsample(levels[-1]))
    return ImagePyramid(levels, [2**j for j in range(n_scales)])


# ---------------------------------------------------------------------------
# samples and datasets


@dataclass
class PairedSample:
    visible: torch.Tensor
    infrared: torch.Tensor
    id: str
    labels: Optional[list] = None
    label_path: Optional[Path] = None
    direction: str = VISIBLE_TO_INFRARED

    def __post_init__(self):
        if self.visible.shape[-2:] != self.infrared.shape[-2:]:
            raise DatasetError(
                f"sample {self.id!r}: visible {tuple(self.visible.shape[-2:])} and "
                f"infrared {tuple(self.infrared.shape[-2:])} are not co-registered"
            )
        if self.direction not in DIRECTIONS:
            raise PreconditionError(f"unknown direction {self.direction!r}")

    @property
    def source(self):
        return self.visible if self.direction == VISIBLE_TO_INFRARED else self.infrared

    @property
    def target(self):
        return self.infrared if self.direction == VISIBLE_TO_INFRARED else self.visible

    def with_direction(self, direction: str) -> "PairedSample":
        return PairedSample(self.visible, self.infrared, self.id, self.labels, self.label_path, direction)


@dataclass
class DatasetManifest:
    root: Path
    direction: str = VISIBLE_TO_INFRARED
    split: str = "train"
    ids: list = field(default_factory=list)

    @classmethod
    def from_root(cls, root, split="train", direction=VISIBLE_TO_INFRARED):
        """Read ``root/manifest.json``; without one, every visible image is used."""
        root = Path(root)
        if not root.is_dir():
            raise DatasetError(f"dataset root {root} does not exist")
        if direction not in DIRECTIONS:
            raise PreconditionError(f"unknown direction {direction!r}")
        path = root / MANIFEST_NAME
        if path.exists():
            splits = json.loads(path.read_text())["splits"]
            if split not in splits:
                raise DatasetError(f"split {split!r} not in {path}")
            ids = list(splits[split])
        else:
            ids = [p.stem for p in (root / "visible").glob("*.png")]
        return cls(root, direction, split, sorted(ids))


def write_manifest(root, splits: dict):
    payload = {"version": 1, "splits": {k: sorted(v) for k, v in sorted(splits.items())}}
    Path(root, MANIFEST_NAME).write_text(json.dumps(payload, indent=2) + "\n")


def read_image(path, channels: int):
    """PNG to a ``(C, H, W)`` tensor in ``[-1, 1]``."""
    with Image.open(path) as im:
        im = im.convert("L" if channels == 1 else "RGB")
        arr = np.asarray(im, dtype=np.float32)
    if arr.ndim == 2:
        arr = arr[None]
    else:
        arr = arr.transpose(2, 0, 1)
    return normalize(torch.from_numpy(np.ascontiguousarray(arr)))


def write_image(path, img):
    arr = to_uint8(img)
    if arr.shape[2] == 1:
        Image.fromarray(arr[:, :, 0], mode="L").save(path)
    else:
        Image.fromarray(arr, mode="RGB").save(path)


def _image_size(path):
    with Image.open(path) as im:
        return im.size


class PairedDataset(Sequence):
    """Lazily loaded pairs, ordered by id."""

    def __init__(self, manifest: DatasetManifest, visible_channels=3, infrared_channels=1):
        self.manifest = manifest
        self.visible_channels = visible_channels
        self.infrared_channels = infrared_channels
        self.ids = sorted(manifest.ids)

    def _paths(self, sample_id):
        root = self.manifest.root
        return root / "visible" / f"{sample_id}.png", root / "infrared" / f"{sample_id}.png"

    def __len__(self):
        return len(self.ids)

    def __getitem__(self, i) -> PairedSample:
        sample_id = self.ids[i]
        vis_path, ir_path = self._paths(sample_id)
        label_path = self.manifest.root / "labels" / f"{sample_id}.txt"
        labels = read_detections(label_path, image_id=sample_id) if label_path.exists() else None
        return PairedSample(
            read_image(vis_path, self.visible_channels),
            read_image(ir_path, self.infrared_channels),
            sample_id,
            labels=labels,
            label_path=label_path if label_path.exists() else None,
            direction=self.manifest.direction,
        )


def load_paired_dataset(manifest: DatasetManifest, visible_channels=3, infrared_channels=1) -> PairedDataset:
    """Validate the layout eagerly (files and co-registration), load pixels lazily."""
    dataset = PairedDataset(manifest, visible_channels, infrared_channels)
    for sample_id in dataset.ids:
        vis_path, ir_path = dataset._paths(sample_id)
        for p in (vis_path, ir_path):
            if not p.exists():
                raise DatasetError(f"sample {sample_id!r}: missing {p.parent.name} file {p}")
        if _image_size(vis_path) != _image_size(ir_path):
            raise DatasetError(
                f"sample {sample_id!r}: size mismatch {_image_size(vis_path)} vs {_image_size(ir_path)}"
            )
    return dataset


class InMemoryDataset(list):
    """A plain list of samples; used for synthetic data."""

    def with_direction(self, direction):
        return InMemoryDataset(s.with_direction(direction) for s in self)


def hflip_pair(source, target):
    return source.flip(-1), target.flip(-1)


# ---------------------------------------------------------------------------
# synthetic pairs


@dataclass(frozen=True)
class SynthesisRecipe:
    seed: int = 0
    size: tuple = (32, 64)  # (H, W)
    hotspot_count: int = 3
    blur_radius: float = 1.0
    rect_count: int = 2


@dataclass(frozen=True)
class Hotspot:
    cy: float
    cx: float
    radius: float


HOTSPOT_COLOR = (0.75, -0.45, -0.55)
HOTSPOT_GAIN = 1.2


def _smooth_field(rng, h, w):
    yy, xx = np.meshgrid(np.linspace(0, 1, h), np.linspace(0, 1, w), indexing="ij")
    out = np.zeros((h, w))
    for _ in range(3):
        fy, fx = rng.uniform(0.3, 1.5, size=2)
        phase = rng.uniform(0, 2 * np.pi)
        out += rng.uniform(0.3, 1.0) * np.sin(2 * np.pi * (fy * yy + fx * xx) + phase)
    out += rng.uniform(-1, 1) * (yy - 0.5) + rng.uniform(-1, 1) * (xx - 0.5)
    out -= out.min()
    peak = out.max()
    return out / peak if peak > 0 else out


def synthesize_pair(recipe: SynthesisRecipe, sample_id: Optional[str] = None) -> PairedSample:
    """Deterministic visible/infrared pair with a closed-form mapping.

    The visible image is a smooth colour field with flat rectangles and
    red disks ("hot objects"). The infrared image is the negated luminance
    (inversion in ``[-1, 1]`` units), Gaussian blurred by ``blur_radius``,
    plus a Gaussian bump centred on every disk, clamped to ``[-1, 1]``.
    Labels: class 0 for disks, class 1 for rectangles.
    """
    rng = np.random.default_rng(recipe.seed)
    h, w = recipe.size
    vis = np.stack([_smooth_field(rng, h, w) for _ in range(3)]) * 1.0 - 0.5  # [-0.5, 0.5]
    yy, xx = np.meshgrid(np.arange(h) + 0.5, np.arange(w) + 0.5, indexing="ij")
    labels = []

    for _ in range(recipe.rect_count):
        rh, rw = rng.uniform(0.2, 0.45) * h, rng.uniform(0.1, 0.3) * w
        y0, x0 = rng.uniform(0, h - rh), rng.uniform(0, w - rw)
        colour = rng.uniform(-0.5, 0.5, size=3)
        mask = (yy >= y0) & (yy < y0 + rh) & (xx >= x0) & (xx < x0 + rw)
        vis[:, mask] = colour[:, None]
        labels.append(DetectionRecord(sample_id or "", 1, ((x0 + rw / 2) / w, (y0 + rh / 2) / h, rw / w, rh / h)))

    hotspots = []
    for _ in range(recipe.hotspot_count):
        r = rng.uniform(0.1, 0.18) * min(h, w) + 1.0
        cy, cx = rng.uniform(r, h - r), rng.uniform(r, w - r)
        hotspots.append(Hotspot(cy, cx, r))
        mask = (yy - cy) ** 2 + (xx - cx) ** 2 <= r**2
        vis[:, mask] = np.asarray(HOTSPOT_COLOR)[:, None]
        labels.append(DetectionRecord(sample_id or "", 0, (cx / w, cy / h, 2 * r / w, 2 * r / h)))

    visible = torch.from_numpy(vis.astype(np.float32))
    ir = -luminance(visible)
    if recipe.blur_radius > 0:
        ir = torch.from_numpy(
            gaussian_filter(ir.numpy().astype(np.float64), sigma=(0, recipe.blur_radius, recipe.blur_radius), mode="reflect").astype(np.float32)
        )
    if hotspots:
        bump = np.zeros((h, w))
        for hs in hotspots:
            d2 = (yy - hs.cy) ** 2 + (xx - hs.cx) ** 2
            bump = np.maximum(bump, HOTSPOT_GAIN * np.exp(-d2 / (2 * (hs.radius / 2) ** 2)))
        ir = (ir + torch.from_numpy(bump.astype(np.float32))).clamp(-1.0, 1.0)

    sample = PairedSample(visible, ir, sample_id or f"synth_{recipe.seed:06d}", labels=labels)
    sample.hotspots = hotspots
    return sample


def synthetic_dataset(count: int, seed: int, size=(32, 64), hotspot_count=3, blur_radius=1.0) -> InMemoryDataset:
    """``count`` pairs; pair ``i`` uses seed ``seed * 100003 + i``."""
    out = InMemoryDataset()
    for i in range(count):
        recipe = SynthesisRecipe(seed * 100003 + i, tuple(size), hotspot_count, blur_radius)
        out.append(synthesize_pair(recipe, sample_id=f"{i:05d}"))
    return out


def write_dataset(samples, root, splits: Optional[dict] = None):
    """Write samples in the on-disk layout ``root/{visible,infrared,labels}``."""
    root = Path(root)
    for sub in ("visible", "infrared", "labels"):
        (root / sub).mkdir(parents=True, exist_ok=True)
    for s in samples:
        write_image(root / "visible" / f"{s.id}.png", s.visible)
        write_image(root / "infrared" / f"{s.id}.png", s.infrared)
        if s.labels is not None:
            write_detections(root / "labels" / f"{s.id}.txt", s.labels)
    if splits is None:
        splits = {"train": [s.id for s in samples]}
    write_manifest(root, splits)
    return root
