"""Two-stage adversarial training: G1 alone at half resolution, then the full
generator at full resolution, with one discriminator update per generator
update."""

from __future__ import annotations

import hashlib
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional

import torch
import torch.nn.functional as F

from . import checkpoint as ckpt
from .data import downsample
from .errors import ConfigError, PreconditionError, TrainingAborted
from .losses import (
    LossReport,
    LossWeights,
    feature_matching_per_scale,
    gan_loss_d_per_scale,
    gan_loss_g_per_scale,
    total_generator_objective,
)
from .model import (
    DiscriminatorSpec,
    GeneratorSpec,
    build_discriminator_bank,
    build_generator,
)

log = logging.getLogger(__name__)

GLOBAL_ONLY = "global_only"
JOINT = "joint"
COMPONENT = "translator"


@dataclass(frozen=True)
class TrainConfig:
    stage1_steps: int = 0
    joint_steps: int = 100
    batch_size: int = 1
    lr_g: float = 2e-4
    lr_d: float = 2e-4
    betas: tuple = (0.5, 0.999)
    optimizer: str = "adam"
    weights: LossWeights = field(default_factory=LossWeights)
    seed: int = 0
    train_resolution: tuple = (32, 64)  # (H, W)
    snapshot_every: int = 0
    hflip: bool = True

    def validate(self):
        for name in ("stage1_steps", "joint_steps", "snapshot_every"):
            if getattr(self, name) < 0:
                raise ConfigError(name, f"must be >= 0, got {getattr(self, name)}")
        if self.batch_size < 1:
            raise ConfigError("batch_size", f"must be >= 1, got {self.batch_size}")
        for name in ("lr_g", "lr_d"):
            if not getattr(self, name) > 0:
                raise ConfigError(name, f"must be > 0, got {getattr(self, name)}")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError("optimizer", f"must be 'adam' or 'sgd', got {self.optimizer!r}")
        if len(self.train_resolution) != 2 or min(self.train_resolution) < 2:
            raise ConfigError("train_resolution", f"need (H, W) >= 2, got {self.train_resolution}")
        self.weights.validate()
        return self

    @property
    def total_steps(self):
        return self.stage1_steps + self.joint_steps

    def to_dict(self):
        d = asdict(self)
        d["betas"] = list(self.betas)
        d["train_resolution"] = list(self.train_resolution)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["weights"] = LossWeights(**d.get("weights", {}))
        for key in ("betas", "train_resolution"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)


def _make_optimizer(params, lr, config: TrainConfig):
    if config.optimizer == "sgd":
        return torch.optim.SGD(params, lr=lr)
    return torch.optim.Adam(params, lr=lr, betas=tuple(config.betas))


def parameter_hash(params) -> str:
    h = hashlib.sha256()
    for p in params:
        h.update(p.detach().cpu().contiguous().numpy().tobytes())
    return h.hexdigest()


def _stack(samples, attr):
    return torch.stack([getattr(s, attr) for s in samples])


def _fit(img, size):
    if tuple(img.shape[-2:]) == tuple(size):
        return img
    return F.interpolate(img, size=tuple(size), mode="bilinear", align_corners=False, antialias=True)


class Trainer:
    """Owns the generator, the discriminator bank, both optimizers and the RNG.

    Parameters are only mutated by :meth:`train_step`.
    """

    def __init__(self, gen_spec: GeneratorSpec, disc_spec: DiscriminatorSpec, config: TrainConfig):
        self.gen_spec = gen_spec.validate()
        self.disc_spec = disc_spec.validate()
        self.config = config.validate()
        expected = gen_spec.input_channels + gen_spec.output_channels
        if disc_spec.input_channels != expected:
            raise ConfigError(
                "discriminator.input_channels", f"must equal source + target channels = {expected}"
            )
        h, w = config.train_resolution
        for res, mult, what in (
            ((h, w), gen_spec.multiple, "train_resolution"),
            ((math.ceil(h / 2), math.ceil(w / 2)), 2**gen_spec.g1_downsamples, "half train_resolution"),
        ):
            if res[0] % mult or res[1] % mult:
                raise ConfigError("train_resolution", f"{what} {res} not divisible by {mult}")
        self.generator = build_generator(gen_spec, config.seed)
        self.bank = build_discriminator_bank(disc_spec, config.seed + 1)
        self.opt_g = _make_optimizer(self.generator.parameters(), config.lr_g, config)
        self.opt_d = _make_optimizer(self.bank.parameters(), config.lr_d, config)
        self.rng = torch.Generator().manual_seed(config.seed + 2)
        self.step = 0

    @property
    def stage(self):
        return GLOBAL_ONLY if self.step < self.config.stage1_steps else JOINT

    @property
    def finished(self):
        return self.step >= self.config.total_steps

    # -- batches -----------------------------------------------------------

    def sample_batch(self, dataset):
        n = len(dataset)
        if n == 0:
            raise PreconditionError("dataset is empty")
        bs = self.config.batch_size
        if bs <= n:
            idx = torch.randperm(n, generator=self.rng)[:bs]
        else:
            idx = torch.randint(n, (bs,), generator=self.rng)
        return [dataset[int(i)] for i in idx]

    def _prepare(self, batch):
        src = _fit(_stack(batch, "source"), self.config.train_resolution)
        tgt = _fit(_stack(batch, "target"), self.config.train_resolution)
        if self.config.hflip:
            flip = torch.rand(len(batch), generator=self.rng) < 0.5
            src = torch.where(flip[:, None, None, None], src.flip(-1), src)
            tgt = torch.where(flip[:, None, None, None], tgt.flip(-1), tgt)
        if self.stage == GLOBAL_ONLY:
            return downsample(src), downsample(tgt), "g1_only"
        return src, tgt, "full"

    # -- one update --------------------------------------------------------

    def _abort(self, what, value, snapshot_dir):
        snap = None
        if snapshot_dir is not None:
            snap = self.save(Path(snapshot_dir) / f"abort_step{self.step:06d}.ckpt")
        raise TrainingAborted(f"non-finite {what} ({value}) at step {self.step}", snapshot=snap)

    def train_step(self, batch, snapshot_dir=None) -> LossReport:
        if not batch:
            raise PreconditionError("batch is empty")
        mode_gan = self.config.weights.gan_mode
        src, tgt, mode = self._prepare(batch)
        n_scales = self.bank.n_scales

        # discriminator update; generator output is a constant here
        with torch.no_grad():
            fake = self.generator(src, mode)
        self.opt_d.zero_grad(set_to_none=True)
        real_out = self.bank.forward_images(src, tgt)
        fake_out = self.bank.forward_images(src, fake)
        d_terms = gan_loss_d_per_scale([s for s, _ in real_out], [s for s, _ in fake_out], mode_gan)
        loss_d = sum(d_terms)
        if not torch.isfinite(loss_d):
            self._abort("discriminator loss", float(loss_d.detach()), snapshot_dir)
        loss_d.backward()
        self.opt_d.step()

        # generator update; discriminator parameters receive no gradient
        self.bank.requires_grad_(False)
        try:
            self.opt_g.zero_grad(set_to_none=True)
            fake = self.generator(src, mode)
            fake_out = self.bank.forward_images(src, fake)
            with torch.no_grad():
                real_out = self.bank.forward_images(src, tgt)
            g_terms = gan_loss_g_per_scale([s for s, _ in fake_out], mode_gan)
            fm_terms = feature_matching_per_scale([f for _, f in real_out], [f for _, f in fake_out])
            gan_g = sum(g_terms)
            fm = sum(fm_terms)
            total = total_generator_objective(gan_g, fm, self.config.weights)
            if not torch.isfinite(total):
                self._abort("generator loss", float(total.detach()), snapshot_dir)
            total.backward()
            self.opt_g.step()
        finally:
            self.bank.requires_grad_(True)

        self.step += 1

        def num(t):
            return float(t.detach())

        return LossReport(
            gan_g=num(gan_g),
            gan_d=num(loss_d),
            fm=num(fm),
            total_g=num(total),
            per_scale=[
                {"gan_g": num(g_terms[k]), "gan_d": num(d_terms[k]), "fm": num(fm_terms[k])}
                for k in range(n_scales)
            ],
        )

    # -- persistence -------------------------------------------------------

    def state_payload(self):
        tensors = {}
        tensors.update(ckpt.module_tensors("generator", self.generator))
        tensors.update(ckpt.module_tensors("bank", self.bank))
        meta_g, t_g = ckpt.optimizer_payload("opt_g", self.opt_g)
        meta_d, t_d = ckpt.optimizer_payload("opt_d", self.opt_d)
        tensors.update(t_g)
        tensors.update(t_d)
        tensors["rng/state"] = self.rng.get_state()
        meta = {
            "step": self.step,
            "stage": self.stage,
            "generator_spec": self.gen_spec.to_dict(),
            "discriminator_spec": self.disc_spec.to_dict(),
            "train_config": self.config.to_dict(),
            "opt_g": meta_g,
            "opt_d": meta_d,
        }
        return meta, tensors

    def save(self, path):
        meta, tensors = self.state_payload()
        return ckpt.write_archive(path, COMPONENT, meta, tensors)

    @classmethod
    def load(cls, path, config: Optional[TrainConfig] = None) -> "Trainer":
        """Restore a trainer. ``config`` may override the step budget only."""
        meta, tensors = ckpt.read_archive(path, COMPONENT)
        saved = TrainConfig.from_dict(meta["train_config"])
        if config is not None:
            saved = replace(saved, stage1_steps=config.stage1_steps, joint_steps=config.joint_steps,
                            snapshot_every=config.snapshot_every)
        trainer = cls(GeneratorSpec.from_dict(meta["generator_spec"]),
                      DiscriminatorSpec.from_dict(meta["discriminator_spec"]), saved)
        ckpt.load_module("generator", trainer.generator, tensors)
        ckpt.load_module("bank", trainer.bank, tensors)
        ckpt.load_optimizer("opt_g", trainer.opt_g, meta["opt_g"], tensors)
        ckpt.load_optimizer("opt_d", trainer.opt_d, meta["opt_d"], tensors)
        trainer.rng.set_state(tensors["rng/state"])
        trainer.step = meta["step"]
        return trainer


def save_checkpoint(trainer: Trainer, path):
    return trainer.save(path)


def load_checkpoint(path) -> Trainer:
    return Trainer.load(path)


def load_generator(path):
    """Generator only, for inference."""
    meta, tensors = ckpt.read_archive(path, COMPONENT)
    gen = build_generator(GeneratorSpec.from_dict(meta["generator_spec"]), 0)
    ckpt.load_module("generator", gen, tensors)
    gen.eval()
    return gen


def run_schedule(
    config: TrainConfig,
    dataset,
    gen_spec: GeneratorSpec,
    disc_spec: DiscriminatorSpec,
    out_dir=None,
    resume=None,
    log_path=None,
    callback=None,
) -> Trainer:
    """Train until ``config.total_steps``; optionally resume from a snapshot.

    Writes ``snapshots/step_XXXXXX.ckpt`` every ``snapshot_every`` steps and
    ``final.ckpt`` into ``out_dir``; appends one JSON line per step to
    ``log_path``.
    """
    if len(dataset) == 0:
        raise PreconditionError("dataset is empty")
    trainer = Trainer.load(resume, config) if resume else Trainer(gen_spec, disc_spec, config)
    out_dir = Path(out_dir) if out_dir is not None else None
    snap_dir = out_dir / "snapshots" if out_dir is not None else None
    log_file = open(log_path, "a") if log_path is not None else None
    try:
        while not trainer.finished:
            stage = trainer.stage
            t0 = time.perf_counter()
            batch = trainer.sample_batch(dataset)
            report = trainer.train_step(batch, snapshot_dir=snap_dir)
            wall_ms = (time.perf_counter() - t0) * 1000.0
            if log_file is not None:
                record = {"step": trainer.step, "stage": stage, "gan_g": report.gan_g, "gan_d": report.gan_d,
                          "fm": report.fm, "total_g": report.total_g, "wall_ms": round(wall_ms, 3)}
                log_file.write(json.dumps(record) + "\n")
                log_file.flush()
            if callback is not None:
                callback(trainer, report)
            every = trainer.config.snapshot_every
            if snap_dir is not None and every and trainer.step % every == 0:
                trainer.save(snap_dir / f"step_{trainer.step:06d}.ckpt")
            if trainer.step == trainer.config.stage1_steps and stage == GLOBAL_ONLY:
                log.info("stage 1 done at step %d; switching to joint training", trainer.step)
    finally:
        if log_file is not None:
            log_file.close()
    if out_dir is not None:
        trainer.save(out_dir / "final.ckpt")
    return trainer
