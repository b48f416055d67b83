"""Coarse-to-fine generator and multi-scale patch discriminator bank.

The generator is a global residual network ``G1`` optionally followed by
one or two local enhancers. Each enhancer feeds the element-wise sum of its
own front-end features and the final upsampling features of the stage below
into its residual blocks.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import List

import torch
import torch.nn as nn

from .data import downsample, make_pyramid
from .errors import ConfigError, ConsistencyError, PreconditionError

INIT_STD = 0.02
MAX_DISC_WIDTH = 512


@dataclass(frozen=True)
class GeneratorSpec:
    input_channels: int = 3
    output_channels: int = 1
    base_width: int = 64
    g1_downsamples: int = 4
    g1_res_blocks: int = 9
    g2_res_blocks: int = 3
    enhancer_count: int = 1
    value_range: tuple = (-1.0, 1.0)

    def validate(self):
        for name in ("input_channels", "output_channels", "base_width", "g1_downsamples", "g1_res_blocks"):
            if getattr(self, name) < 1:
                raise ConfigError(name, f"must be >= 1, got {getattr(self, name)}")
        if self.g2_res_blocks < 0:
            raise ConfigError("g2_res_blocks", f"must be >= 0, got {self.g2_res_blocks}")
        if self.enhancer_count not in (0, 1, 2):
            raise ConfigError("enhancer_count", f"must be 0, 1 or 2, got {self.enhancer_count}")
        if self.base_width % (2**self.enhancer_count):
            raise ConfigError(
                "base_width", f"must be divisible by 2**enhancer_count={2**self.enhancer_count}, got {self.base_width}"
            )
        lo, hi = self.value_range
        if not lo < hi:
            raise ConfigError("value_range", f"empty interval {self.value_range}")
        return self

    @property
    def multiple(self) -> int:
        """Input dims must be divisible by this in ``full`` mode."""
        return 2 ** (self.g1_downsamples + self.enhancer_count)

    def to_dict(self):
        d = asdict(self)
        d["value_range"] = list(self.value_range)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "value_range" in d:
            d["value_range"] = tuple(d["value_range"])
        return cls(**d)


@dataclass(frozen=True)
class DiscriminatorSpec:
    input_channels: int = 4
    n_scales: int = 3
    conv_layers: int = 4
    base_width: int = 64

    def validate(self):
        for name in ("input_channels", "n_scales", "conv_layers", "base_width"):
            if getattr(self, name) < 1:
                raise ConfigError(name, f"must be >= 1, got {getattr(self, name)}")
        return self

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass
class ScoreMap:
    logits: torch.Tensor
    scale_index: int = 0

    @property
    def patch_count(self) -> int:
        return self.logits.shape[-2] * self.logits.shape[-1]


@dataclass
class FeatureStack:
    layers: List[torch.Tensor]

    @property
    def element_counts(self):
        return [t.numel() for t in self.layers]

    def __len__(self):
        return len(self.layers)


def init_weights(module: nn.Module, generator: torch.Generator):
    """N(0, 0.02) conv weights, zero biases, in parameter registration order."""
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d)):
            with torch.no_grad():
                m.weight.normal_(0.0, INIT_STD, generator=generator)
                if m.bias is not None:
                    m.bias.zero_()


class ResnetBlock(nn.Module):
    def __init__(self, width):
        super().__init__()
        self.body = nn.Sequential(
            nn.ReflectionPad2d(1),
            nn.Conv2d(width, width, 3),
            nn.InstanceNorm2d(width),
            nn.ReLU(True),
            nn.ReflectionPad2d(1),
            nn.Conv2d(width, width, 3),
            nn.InstanceNorm2d(width),
        )

    def forward(self, x):
        return x + self.body(x)


def _conv_block(cin, cout, **kw):
    return [nn.Conv2d(cin, cout, **kw), nn.InstanceNorm2d(cout), nn.ReLU(True)]


def _up_block(cin, cout):
    return [
        nn.ConvTranspose2d(cin, cout, 3, stride=2, padding=1, output_padding=1),
        nn.InstanceNorm2d(cout),
        nn.ReLU(True),
    ]


def _egress(width, out_channels):
    return nn.Sequential(nn.ReflectionPad2d(3), nn.Conv2d(width, out_channels, 7))


class GeneratorStage(nn.Module):
    """Front-end (downsampling), residual stack, back-end (upsampling)."""

    def __init__(self, in_channels, width, downsamples, res_blocks, out_channels=None):
        super().__init__()
        layers = [nn.ReflectionPad2d(3)] + _conv_block(in_channels, width, kernel_size=7)
        for i in range(downsamples):
            layers += _conv_block(width * 2**i, width * 2 ** (i + 1), kernel_size=3, stride=2, padding=1)
        self.frontend = nn.Sequential(*layers)
        inner = width * 2**downsamples
        self.res_blocks = nn.Sequential(*[ResnetBlock(inner) for _ in range(res_blocks)])
        up = []
        for i in range(downsamples, 0, -1):
            up += _up_block(width * 2**i, width * 2 ** (i - 1))
        self.backend = nn.Sequential(*up)
        self.egress = _egress(width, out_channels) if out_channels else None

    def features(self, x, carry=None):
        h = self.frontend(x)
        if carry is not None:
            if carry.shape != h.shape:
                raise ConsistencyError(
                    f"cannot fuse front-end map {tuple(h.shape)} with carried map {tuple(carry.shape)}"
                )
            h = h + carry
        return self.backend(self.res_blocks(h))


class Generator(nn.Module):
    def __init__(self, spec: GeneratorSpec):
        super().__init__()
        self.spec = spec.validate()
        self.g1 = GeneratorStage(
            spec.input_channels, spec.base_width, spec.g1_downsamples, spec.g1_res_blocks, spec.output_channels
        )
        # enhancers[0] sits directly above G1; the last one is the finest
        self.enhancers = nn.ModuleList()
        for k in range(1, spec.enhancer_count + 1):
            width = spec.base_width // 2**k
            finest = k == spec.enhancer_count
            self.enhancers.append(
                GeneratorStage(
                    spec.input_channels, width, 1, spec.g2_res_blocks, spec.output_channels if finest else None
                )
            )

    def _activate(self, x):
        lo, hi = self.spec.value_range
        if (lo, hi) == (-1.0, 1.0):
            return torch.tanh(x)
        return lo + (torch.tanh(x) + 1.0) * (0.5 * (hi - lo))

    def forward(self, x, mode: str = "full"):
        if x.dim() == 3:
            return self.forward(x.unsqueeze(0), mode).squeeze(0)
        if mode == "g1_only":
            need = 2**self.spec.g1_downsamples
        elif mode == "full":
            need = self.spec.multiple
        else:
            raise PreconditionError(f"unknown mode {mode!r}")
        h, w = x.shape[-2:]
        if h % need or w % need:
            raise PreconditionError(f"input {h}x{w} not divisible by {need}; pad first")
        if mode == "g1_only" or not self.enhancers:
            return self._activate(self.g1.egress(self.g1.features(x)))
        pyramid = make_pyramid(x, len(self.enhancers) + 1).levels
        feat = self.g1.features(pyramid[-1])
        for k, stage in enumerate(self.enhancers):
            feat = stage.features(pyramid[len(self.enhancers) - 1 - k], carry=feat)
        return self._activate(self.enhancers[-1].egress(feat))

    def g1_parameters(self):
        return self.g1.parameters()

    def enhancer_parameters(self):
        return self.enhancers.parameters()


def build_generator(spec: GeneratorSpec, rng_seed: int) -> Generator:
    gen = Generator(spec)
    init_weights(gen, torch.Generator().manual_seed(rng_seed))
    return gen


def parameter_count(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())


class Discriminator(nn.Module):
    """Patch discriminator: strided 4x4 conv blocks, then a 1-channel logit conv."""

    def __init__(self, spec: DiscriminatorSpec):
        super().__init__()
        self.blocks = nn.ModuleList()
        cin, width = spec.input_channels, spec.base_width
        for i in range(spec.conv_layers):
            layers = [nn.Conv2d(cin, width, 4, stride=2, padding=2)]
            if i > 0:
                layers.append(nn.InstanceNorm2d(width))
            layers.append(nn.LeakyReLU(0.2, True))
            self.blocks.append(nn.Sequential(*layers))
            cin, width = width, min(width * 2, MAX_DISC_WIDTH)
        self.head = nn.Conv2d(cin, 1, 4, stride=1, padding=2)

    def forward(self, visible, candidate, scale_index: int = 0):
        if visible.shape[-2:] != candidate.shape[-2:]:
            raise PreconditionError(
                f"visible {tuple(visible.shape[-2:])} and candidate {tuple(candidate.shape[-2:])} differ in size"
            )
        h = torch.cat([visible, candidate], dim=-3)
        feats = []
        for block in self.blocks:
            h = block(h)
            feats.append(h)
        return ScoreMap(self.head(h), scale_index), FeatureStack(feats)


def score_map_size(size: int, conv_layers: int) -> int:
    """Logit grid extent along one axis."""
    for _ in range(conv_layers):
        size = (size + 2 * 2 - 4) // 2 + 1
    return size + 2 * 2 - 4 + 1


class DiscriminatorBank(nn.Module):
    """``n_scales`` identical discriminators; index 0 sees the finest level."""

    def __init__(self, spec: DiscriminatorSpec):
        super().__init__()
        self.spec = spec.validate()
        self.discriminators = nn.ModuleList(Discriminator(spec) for _ in range(spec.n_scales))

    @property
    def n_scales(self):
        return self.spec.n_scales

    def forward(self, visible_pyr, candidate_pyr):
        if len(visible_pyr) != self.n_scales or len(candidate_pyr) != self.n_scales:
            raise PreconditionError(
                f"pyramid levels ({len(visible_pyr)}, {len(candidate_pyr)}) != n_scales {self.n_scales}"
            )
        return [d(v, c, k) for k, (d, v, c) in enumerate(zip(self.discriminators, visible_pyr, candidate_pyr))]

    def forward_images(self, visible, candidate):
        return self(make_pyramid(visible, self.n_scales), make_pyramid(candidate, self.n_scales))


def build_discriminator_bank(spec: DiscriminatorSpec, rng_seed: int) -> DiscriminatorBank:
    bank = DiscriminatorBank(spec)
    init_weights(bank, torch.Generator().manual_seed(rng_seed))
    return bank


__all__ = [
    "GeneratorSpec",
    "DiscriminatorSpec",
    "ScoreMap",
    "FeatureStack",
    "Generator",
    "GeneratorStage",
    "Discriminator",
    "DiscriminatorBank",
    "build_generator",
    "build_discriminator_bank",
    "score_map_size",
    "parameter_count",
    "downsample",
]
