import pytest
import torch

from vis2ir import losses, superres
from vis2ir.data import synthetic_dataset
from vis2ir.errors import ConfigError, PreconditionError
from vis2ir.metrics import psnr
from vis2ir.superres import (
    SrSpec,
    SrTrainConfig,
    SrTrainer,
    bicubic_upsample,
    build_sr_network,
    load_sr_network,
    make_sr_pairs,
    sr_forward,
    train_sr,
)

SMALL = SrSpec(res_blocks=2, base_width=16)


def _pairs(count, seed):
    return make_sr_pairs([s.infrared for s in synthetic_dataset(count, seed=seed, size=(32, 64))])


def test_bicubic_shapes_identity_constant():
    x = torch.randn(1, 32, 64)
    assert bicubic_upsample(x, 2).shape == (1, 64, 128)
    assert torch.equal(bicubic_upsample(x, 1), x)
    c = bicubic_upsample(torch.full((1, 1, 16, 16), 0.5), 2)
    assert (c - 0.5).abs().max() < 1e-6
    with pytest.raises(PreconditionError):
        bicubic_upsample(x, 0)


def test_sr_shapes():
    net = build_sr_network(SMALL, 0, zero_residual=False)
    assert sr_forward(net, torch.rand(1, 1, 128, 128) * 2 - 1).shape == (1, 1, 256, 256)
    assert net(torch.zeros(1, 17, 9)).shape == (1, 34, 18)


def test_zero_residual_equals_bicubic():
    net = build_sr_network(SMALL, 3)
    x = torch.rand(2, 1, 16, 24) * 1.6 - 0.8
    assert torch.equal(net(x), bicubic_upsample(x, 2).clamp(-1, 1))


def test_output_stays_in_range():
    net = build_sr_network(SMALL, 1, zero_residual=False)
    with torch.no_grad():
        net.egress.bias.fill_(5.0)
    out = net(torch.rand(1, 1, 16, 16) * 2 - 1)
    assert out.min() >= -1 and out.max() <= 1


def test_spec_validation():
    with pytest.raises(ConfigError) as exc:
        SrSpec(scale_factor=4).validate()
    assert exc.value.field == "scale_factor"
    with pytest.raises(PreconditionError):
        build_sr_network(SMALL, 0)(torch.zeros(1, 3, 8, 8))


def test_pairs_are_exact_downsamples():
    (low, high), = make_sr_pairs([torch.arange(16.0).view(1, 4, 4)])
    assert low.shape == (1, 2, 2)
    assert low[0, 0, 0] == (0 + 1 + 4 + 5) / 4
    with pytest.raises(PreconditionError):
        make_sr_pairs([torch.zeros(1, 3, 4)])


def test_training_deterministic():
    pairs = _pairs(4, 0)
    cfg = SrTrainConfig(steps=3, batch_size=2, seed=4)
    runs = []
    for _ in range(2):
        curve = []
        train_sr(pairs, SMALL, cfg, callback=lambda t, l: curve.append(l))
        runs.append(curve)
    assert runs[0] == runs[1]


def test_trained_network_beats_bicubic():
    train, held = _pairs(16, 11), _pairs(4, 12)
    trainer = train_sr(train, SMALL, SrTrainConfig(steps=120, batch_size=8, lr=1e-3, seed=0))
    with torch.no_grad():
        for low, high in held:
            to01 = lambda t: (t + 1) / 2  # noqa: E731
            assert psnr(to01(trainer.net(low)), to01(high)) > psnr(to01(bicubic_upsample(low, 2).clamp(-1, 1)), to01(high))


def test_fm_path_is_shared_with_translation():
    assert superres.feature_matching_loss is losses.feature_matching_loss


def test_fm_mode_calls_shared_function(monkeypatch):
    calls = []
    real = losses.feature_matching_loss

    def spy(*a, **k):
        calls.append(1)
        return real(*a, **k)

    monkeypatch.setattr(superres, "feature_matching_loss", spy)
    trainer = SrTrainer(SMALL, SrTrainConfig(steps=2, batch_size=2, fm_weight=1.0, disc_conv_layers=2, disc_base_width=8))
    out = trainer.train_step(*trainer.sample_batch(_pairs(2, 0)))
    assert calls and out["fm"] > 0 and out["total"] == pytest.approx(out["l1"] + out["fm"], rel=1e-6)


def test_checkpoint_round_trip(tmp_path):
    trainer = train_sr(_pairs(2, 0), SMALL, SrTrainConfig(steps=2, batch_size=2, fm_weight=0.5, disc_conv_layers=2),
                       out_path=tmp_path / "sr.ckpt")
    net = load_sr_network(tmp_path / "sr.ckpt")
    x = torch.rand(1, 1, 16, 16)
    assert torch.equal(net(x), trainer.net(x))
    assert SrTrainer.load(tmp_path / "sr.ckpt").step == 2


def test_default_network_halves_held_out_l1():
    train, held = _pairs(16, 21), _pairs(8, 22)
    spec = SrSpec()
    net0 = build_sr_network(spec, 0)

    def held_l1(net):
        with torch.no_grad():
            return sum(float((net(low) - high).abs().mean()) for low, high in held) / len(held)

    before = held_l1(net0)
    trainer = train_sr(train, spec, SrTrainConfig(steps=150, batch_size=8, lr=1e-3, seed=0))
    assert held_l1(trainer.net) <= 0.5 * before
