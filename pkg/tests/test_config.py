import pytest

from talkstyle.config import (
    CONFIG_ENV, ConfigError, RunConfig, StageSchedule, desk_config, from_flat, load_config, parse_config_text,
)


def test_defaults_match_reference_scale():
    cfg = RunConfig()
    b = cfg.backbone
    assert (b.hidden, b.heads, b.filter, b.encoder_blocks, b.decoder_blocks) == (256, 2, 1024, 4, 6)
    assert b.conv_kernels == (9, 1) and b.dropout == 0.2 and b.s2_hidden == 100
    assert cfg.loss.lambda_lap == 1.0 and cfg.clip_norm == 1.0
    s1, s2 = cfg.schedule(1), cfg.schedule(2)
    assert (s1.warmup_steps, s1.lr_constant) == (4000, 256 ** -0.5)
    assert (s2.warmup_steps, s2.lr_constant) == (1600, 0.01)


def test_file_env_and_overrides(tmp_path, monkeypatch):
    path = tmp_path / "run.cfg"
    path.write_text("# comment\nhidden = 64\nstyle_dim = 64\nlambda_lap = 0.5\nvertex_mask = false\n")
    cfg = load_config(path, {"seed": "9"})
    assert cfg.backbone.hidden == 64 and cfg.loss.lambda_lap == 0.5 and cfg.seed == 9
    assert cfg.loss.vertex_mask is False
    monkeypatch.setenv(CONFIG_ENV, str(path))
    assert load_config().backbone.hidden == 64
    assert load_config(overrides={"lambda_lap": "2"}).loss.lambda_lap == 2.0


def test_rejections(tmp_path):
    with pytest.raises(ConfigError, match="unknown"):
        load_config(overrides={"hiden": "3"})
    with pytest.raises(ConfigError, match="bad value"):
        load_config(overrides={"hidden": "wide"})
    with pytest.raises(ConfigError):
        load_config(overrides={"lambda_lap": "-1"})
    with pytest.raises(ConfigError):
        parse_config_text("hidden 3")
    with pytest.raises(ConfigError):
        StageSchedule(1, 0, 1.0, 10).validate()


def test_text_and_flat_roundtrip(tmp_path):
    cfg = desk_config(seed=3, warmup_steps=100, conv_kernels=(3, 1))
    path = tmp_path / "c.cfg"
    path.write_text(cfg.to_text())
    again = load_config(path)
    assert again == cfg
    assert from_flat(cfg.flat()) == cfg


def test_desk_config_keeps_structure():
    d = desk_config()
    assert d.backbone.hidden == d.backbone.style_dim == 32
    assert (d.backbone.encoder_blocks, d.backbone.decoder_blocks) == (4, 6)
    assert d.schedule(1).lr_constant == 32 ** -0.5
