"""Optional 2x super-resolution applied to translated images.

The network predicts a residual on top of a bicubic upsample, so an
all-zero residual branch reproduces the bicubic baseline exactly.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Optional

import torch
import torch.nn as nn
import torch.nn.functional as F

from . import checkpoint as ckpt
from .errors import ConfigError, PreconditionError, TrainingAborted
from .losses import LEAST_SQUARES, feature_matching_loss, gan_loss_d
from .model import DiscriminatorSpec, build_discriminator_bank, init_weights

COMPONENT = "superres"


@dataclass(frozen=True)
class SrSpec:
    scale_factor: int = 2
    res_blocks: int = 8
    base_width: int = 32
    train_weight_l1: float = 1.0
    channels: int = 1
    value_range: tuple = (-1.0, 1.0)

    def validate(self):
        if self.scale_factor != 2:
            raise ConfigError("scale_factor", f"only 2 is supported, got {self.scale_factor}")
        if self.res_blocks < 0:
            raise ConfigError("res_blocks", f"must be >= 0, got {self.res_blocks}")
        if self.base_width < 1 or self.channels < 1:
            raise ConfigError("base_width", "base_width and channels must be >= 1")
        if self.train_weight_l1 < 0:
            raise ConfigError("train_weight_l1", f"must be >= 0, got {self.train_weight_l1}")
        return self

    def to_dict(self):
        d = asdict(self)
        d["value_range"] = list(self.value_range)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["value_range"] = tuple(d.get("value_range", (-1.0, 1.0)))
        return cls(**d)


@dataclass(frozen=True)
class SrTrainConfig:
    steps: int = 500
    batch_size: int = 8
    lr: float = 1e-3
    fm_weight: float = 0.0
    seed: int = 0
    disc_conv_layers: int = 3
    disc_base_width: int = 32

    def validate(self):
        if self.steps < 0 or self.batch_size < 1:
            raise ConfigError("steps", "steps must be >= 0 and batch_size >= 1")
        if not self.lr > 0:
            raise ConfigError("lr", f"must be > 0, got {self.lr}")
        if self.fm_weight < 0:
            raise ConfigError("fm_weight", f"must be >= 0, got {self.fm_weight}")
        return self

    def to_dict(self):
        return asdict(self)


def bicubic_upsample(img, factor: int):
    if factor < 1:
        raise PreconditionError(f"factor must be >= 1, got {factor}")
    if factor == 1:
        return img.clone()
    batched = img.dim() == 4
    x = img if batched else img.unsqueeze(0)
    y = F.interpolate(x, scale_factor=factor, mode="bicubic", align_corners=False)
    return y if batched else y.squeeze(0)


class _ResBlock(nn.Module):
    def __init__(self, width):
        super().__init__()
        self.body = nn.Sequential(
            nn.Conv2d(width, width, 3, padding=1, padding_mode="reflect"),
            nn.ReLU(True),
            nn.Conv2d(width, width, 3, padding=1, padding_mode="reflect"),
        )

    def forward(self, x):
        return x + self.body(x)


class SrNetwork(nn.Module):
    def __init__(self, spec: SrSpec):
        super().__init__()
        self.spec = spec.validate()
        w = spec.base_width
        self.ingress = nn.Conv2d(spec.channels, w, 3, padding=1, padding_mode="reflect")
        self.body = nn.Sequential(*[_ResBlock(w) for _ in range(spec.res_blocks)])
        self.upsample = nn.Sequential(nn.Conv2d(w, 4 * w, 3, padding=1, padding_mode="reflect"), nn.PixelShuffle(2), nn.ReLU(True))
        self.egress = nn.Conv2d(w, spec.channels, 3, padding=1, padding_mode="reflect")

    def residual(self, x):
        h = self.ingress(x)
        h = h + self.body(h)
        return self.egress(self.upsample(h))

    def forward(self, x):
        if x.dim() == 3:
            return self.forward(x.unsqueeze(0)).squeeze(0)
        if x.shape[-3] != self.spec.channels:
            raise PreconditionError(f"expected {self.spec.channels} channels, got {x.shape[-3]}")
        if min(x.shape[-2:]) < 2:
            raise PreconditionError(f"input {tuple(x.shape[-2:])} too small for reflect padding")
        lo, hi = self.spec.value_range
        return (bicubic_upsample(x, 2) + self.residual(x)).clamp(lo, hi)


def sr_forward(net: SrNetwork, img):
    return net(img)


def build_sr_network(spec: SrSpec, rng_seed: int, zero_residual: bool = True) -> SrNetwork:
    """Gaussian init; with ``zero_residual`` the egress conv starts at zero."""
    net = SrNetwork(spec)
    init_weights(net, torch.Generator().manual_seed(rng_seed))
    if zero_residual:
        with torch.no_grad():
            net.egress.weight.zero_()
            net.egress.bias.zero_()
    return net


def make_sr_pairs(images):
    """``(low, high)`` pairs where ``low`` is the 2x2 mean of ``high``."""
    pairs = []
    for high in images:
        h, w = high.shape[-2:]
        if h % 2 or w % 2:
            raise PreconditionError(f"high-resolution image {h}x{w} has odd dims")
        pairs.append((F.avg_pool2d(high.unsqueeze(0), 2).squeeze(0), high))
    return pairs


class SrTrainer:
    def __init__(self, spec: SrSpec, config: SrTrainConfig, net: Optional[SrNetwork] = None):
        self.spec = spec.validate()
        self.config = config.validate()
        self.net = net if net is not None else build_sr_network(spec, config.seed)
        self.opt = torch.optim.Adam(self.net.parameters(), lr=config.lr, betas=(0.9, 0.999))
        self.rng = torch.Generator().manual_seed(config.seed + 2)
        self.bank = None
        self.opt_d = None
        if config.fm_weight > 0:
            dspec = DiscriminatorSpec(2 * spec.channels, 1, config.disc_conv_layers, config.disc_base_width)
            self.bank = build_discriminator_bank(dspec, config.seed + 1)
            self.opt_d = torch.optim.Adam(self.bank.parameters(), lr=config.lr, betas=(0.5, 0.999))
        self.step = 0

    def sample_batch(self, pairs):
        n = len(pairs)
        if n == 0:
            raise PreconditionError("no training pairs")
        idx = torch.randperm(n, generator=self.rng)[: self.config.batch_size]
        low = torch.stack([pairs[int(i)][0] for i in idx])
        high = torch.stack([pairs[int(i)][1] for i in idx])
        if tuple(high.shape[-2:]) != (2 * low.shape[-2], 2 * low.shape[-1]):
            raise PreconditionError("pairs are not exact 2x relations")
        return low, high

    def train_step(self, low, high) -> dict:
        cond = bicubic_upsample(low, 2)
        out = {"l1": 0.0, "fm": 0.0, "gan_d": 0.0}
        if self.bank is not None:
            with torch.no_grad():
                fake = self.net(low)
            self.opt_d.zero_grad(set_to_none=True)
            real_s, _ = self.bank.forward_images(cond, high)[0]
            fake_s, _ = self.bank.forward_images(cond, fake)[0]
            loss_d = gan_loss_d([real_s], [fake_s], LEAST_SQUARES)
            if not torch.isfinite(loss_d):
                raise TrainingAborted(f"non-finite SR discriminator loss at step {self.step}")
            loss_d.backward()
            self.opt_d.step()
            out["gan_d"] = float(loss_d.detach())

        self.opt.zero_grad(set_to_none=True)
        pred = self.net(low)
        l1 = (pred - high).abs().mean()
        loss = self.spec.train_weight_l1 * l1
        if self.bank is not None:
            self.bank.requires_grad_(False)
            try:
                fake_feats = [f for _, f in self.bank.forward_images(cond, pred)]
                with torch.no_grad():
                    real_feats = [f for _, f in self.bank.forward_images(cond, high)]
                fm = feature_matching_loss(real_feats, fake_feats)
            finally:
                self.bank.requires_grad_(True)
            loss = loss + self.config.fm_weight * fm
            out["fm"] = float(fm.detach())
        if not torch.isfinite(loss):
            raise TrainingAborted(f"non-finite SR loss at step {self.step}")
        loss.backward()
        self.opt.step()
        self.step += 1
        out["l1"] = float(l1.detach())
        out["total"] = float(loss.detach())
        return out

    def save(self, path):
        tensors = ckpt.module_tensors("net", self.net)
        meta_opt, t_opt = ckpt.optimizer_payload("opt", self.opt)
        tensors.update(t_opt)
        tensors["rng/state"] = self.rng.get_state()
        meta = {"step": self.step, "sr_spec": self.spec.to_dict(), "sr_config": self.config.to_dict(), "opt": meta_opt}
        if self.bank is not None:
            tensors.update(ckpt.module_tensors("bank", self.bank))
            meta_d, t_d = ckpt.optimizer_payload("opt_d", self.opt_d)
            tensors.update(t_d)
            meta["opt_d"] = meta_d
        return ckpt.write_archive(path, COMPONENT, meta, tensors)

    @classmethod
    def load(cls, path) -> "SrTrainer":
        meta, tensors = ckpt.read_archive(path, COMPONENT)
        trainer = cls(SrSpec.from_dict(meta["sr_spec"]), SrTrainConfig(**meta["sr_config"]))
        ckpt.load_module("net", trainer.net, tensors)
        ckpt.load_optimizer("opt", trainer.opt, meta["opt"], tensors)
        if trainer.bank is not None:
            ckpt.load_module("bank", trainer.bank, tensors)
            ckpt.load_optimizer("opt_d", trainer.opt_d, meta["opt_d"], tensors)
        trainer.rng.set_state(tensors["rng/state"])
        trainer.step = meta["step"]
        return trainer


def train_sr(pairs, spec: SrSpec, config: SrTrainConfig, out_path=None, callback=None) -> SrTrainer:
    """Fit the SR network on ``(low, high)`` pairs; returns the trainer."""
    trainer = SrTrainer(spec, config)
    while trainer.step < config.steps:
        low, high = trainer.sample_batch(pairs)
        losses = trainer.train_step(low, high)
        if callback is not None:
            callback(trainer, losses)
    if out_path is not None:
        trainer.save(out_path)
    return trainer


def load_sr_network(path) -> SrNetwork:
    net = SrTrainer.load(path).net
    net.eval()
    return net
