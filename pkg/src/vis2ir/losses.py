"""Adversarial, feature-matching and total generator objectives.

Score and feature inputs may be :class:`~vis2ir.model.ScoreMap` /
:class:`~vis2ir.model.FeatureStack` objects or bare tensors / tensor lists.
Every multi-scale loss is a plain sum over scales.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import torch
import torch.nn.functional as F

from .errors import ConfigError, PreconditionError

LOG_LIKELIHOOD = "log_likelihood"
LEAST_SQUARES = "least_squares"
GAN_MODES = (LOG_LIKELIHOOD, LEAST_SQUARES)


@dataclass(frozen=True)
class LossWeights:
    lambda_fm: float = 10.0
    gan_mode: str = LEAST_SQUARES

    def validate(self):
        if self.lambda_fm < 0:
            raise ConfigError("lambda_fm", f"must be >= 0, got {self.lambda_fm}")
        if self.gan_mode not in GAN_MODES:
            raise ConfigError("gan_mode", f"must be one of {GAN_MODES}, got {self.gan_mode!r}")
        return self


@dataclass
class LossReport:
    gan_g: float
    gan_d: float
    fm: float
    total_g: float
    per_scale: list = field(default_factory=list)

    def to_dict(self):
        return asdict(self)


def _logits(s):
    return s.logits if hasattr(s, "logits") else s


def _layers(s):
    return s.layers if hasattr(s, "layers") else list(s)


def _check_mode(mode):
    if mode not in GAN_MODES:
        raise PreconditionError(f"unknown gan mode {mode!r}")


def _real_term(logits, mode):
    if mode == LEAST_SQUARES:
        return ((logits - 1.0) ** 2).mean()
    return F.binary_cross_entropy_with_logits(logits, torch.ones_like(logits))


def _fake_term(logits, mode):
    if mode == LEAST_SQUARES:
        return (logits**2).mean()
    return F.binary_cross_entropy_with_logits(logits, torch.zeros_like(logits))


def gan_loss_d_per_scale(real_scores, fake_scores, mode=LEAST_SQUARES):
    _check_mode(mode)
    if not real_scores or len(real_scores) != len(fake_scores):
        raise PreconditionError(
            f"need one real and one fake score map per scale, got {len(real_scores)} and {len(fake_scores)}"
        )
    return [_real_term(_logits(r), mode) + _fake_term(_logits(f), mode) for r, f in zip(real_scores, fake_scores)]


def gan_loss_d(real_scores, fake_scores, mode=LEAST_SQUARES):
    """Discriminator loss summed over scales (patch- and batch-mean per scale).

    ``log_likelihood`` is the negated conditional-GAN log-likelihood with
    sigmoid outputs; ``least_squares`` uses squared error to targets 1/0.
    """
    return sum(gan_loss_d_per_scale(real_scores, fake_scores, mode))


def gan_loss_g_per_scale(fake_scores, mode=LEAST_SQUARES):
    _check_mode(mode)
    if not fake_scores:
        raise PreconditionError("need at least one fake score map")
    # non-saturating form for log_likelihood
    return [_real_term(_logits(f), mode) for f in fake_scores]


def gan_loss_g(fake_scores, mode=LEAST_SQUARES):
    return sum(gan_loss_g_per_scale(fake_scores, mode))


def feature_matching_per_scale(real_stacks, fake_stacks):
    if len(real_stacks) != len(fake_stacks):
        raise PreconditionError(f"scale count mismatch: {len(real_stacks)} vs {len(fake_stacks)}")
    out = []
    for k, (real, fake) in enumerate(zip(real_stacks, fake_stacks)):
        real, fake = _layers(real), _layers(fake)
        if len(real) != len(fake):
            raise PreconditionError(f"scale {k}: layer count mismatch {len(real)} vs {len(fake)}")
        term = 0.0
        for i, (r, f) in enumerate(zip(real, fake)):
            if r.shape != f.shape:
                raise PreconditionError(f"scale {k} layer {i}: shape {tuple(r.shape)} vs {tuple(f.shape)}")
            # mean |diff| == per-sample L1 / N_i, averaged over the batch
            term = term + (r.detach() - f).abs().mean()
        out.append(term)
    return out


def feature_matching_loss(real_stacks, fake_stacks):
    """Sum over scales and layers of the per-element mean L1 feature distance.

    Real-branch features are detached, so gradients reach only the fake side.
    """
    terms = feature_matching_per_scale(real_stacks, fake_stacks)
    return sum(terms) if terms else torch.zeros(())


def total_generator_objective(gan_g, fm, w: LossWeights):
    value = float(fm.detach()) if torch.is_tensor(fm) else float(fm)
    if value < 0:
        raise PreconditionError(f"feature matching loss must be >= 0, got {value}")
    return gan_g + w.lambda_fm * fm
