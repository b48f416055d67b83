import pytest

from vis2ir.config import default_config_path, load_config, parse_config
from vis2ir.errors import ConfigError


def test_bundled_desk_config():
    cfg = load_config(default_config_path())
    assert cfg.train.stage1_steps == cfg.train.joint_steps == 400
    assert cfg.train.train_resolution == (32, 64)
    assert cfg.generator.input_channels == 3 and cfg.generator.output_channels == 1
    assert cfg.discriminator.input_channels == 4
    assert cfg.train.weights.lambda_fm == 10.0
    assert cfg.superres.channels == 1 and cfg.superres_train.steps == 300


def test_defaults_for_empty_config():
    cfg = parse_config({})
    assert cfg.generator.base_width == 64 and cfg.generator.g1_res_blocks == 9
    assert cfg.discriminator.n_scales == 3
    assert cfg.train.weights.gan_mode == "least_squares"


@pytest.mark.parametrize(
    "raw,field",
    [
        ({"generator": {"base_widht": 3}}, "generator.base_widht"),
        ({"trian": {}}, "<root>.trian"),
        ({"loss": {"lambda": 1.0}}, "loss.lambda"),
        ({"generator": {"enhancer_count": 5}}, "generator.enhancer_count"),
        ({"train": {"lr_g": -1.0}}, "train.lr_g"),
        ({"data": {"direction": "sideways"}}, "data.direction"),
        ({"superres": {"scale_factor": 3}}, "superres.scale_factor"),
    ],
)
def test_bad_values_name_the_key(raw, field):
    with pytest.raises(ConfigError) as exc:
        parse_config(raw)
    assert exc.value.field == field


def test_inverse_direction_swaps_channels():
    cfg = parse_config({"data": {"direction": "infrared_to_visible"}})
    assert (cfg.generator.input_channels, cfg.generator.output_channels) == (1, 3)
    assert cfg.superres.channels == 3


def test_toml_syntax_error_has_line(tmp_path):
    p = tmp_path / "bad.toml"
    p.write_text("[train]\nseed = = 1\n")
    with pytest.raises(ConfigError, match="line 2"):
        load_config(p)
