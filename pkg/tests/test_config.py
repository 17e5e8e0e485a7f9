"""Config parsing: file syntax, schema checks, overrides, seed plumbing."""

import pytest

from dynsplat.config import (
    CameraConfig,
    ConfigError,
    RunConfig,
    build_config,
    load_config,
    parse_config_text,
)

SAMPLE = """
# run setup
camera.width = 64
camera.height = 48          # inline comment
fit.iterations = 120
fit.grid = 4, 3
loss.lambda_depth = 0.1
stream.render_times = 0.5, 1.0
stream.strict = true
synth.n_blobs = 5
seed = 7
"""


def test_parse_config_text_reads_flat_keys():
    values = parse_config_text(SAMPLE)
    assert values["camera.width"] == "64"
    assert values["camera.height"] == "48"
    assert values["fit.grid"] == "4, 3"
    assert values["seed"] == "7"
    assert len(values) == 9


def test_parse_config_text_rejects_unknown_key():
    with pytest.raises(ConfigError, match="unknown key"):
        parse_config_text("fit.iteratons = 5")


def test_parse_config_text_rejects_missing_equals():
    with pytest.raises(ConfigError, match="line 2"):
        parse_config_text("seed = 1\njust words\n")


def test_parse_config_text_ignores_blank_and_comments():
    assert parse_config_text("\n# only a comment\n   \n") == {}


def test_build_config_applies_sections():
    cfg = build_config(parse_config_text(SAMPLE))
    assert isinstance(cfg, RunConfig)
    assert cfg.camera.width == 64
    assert cfg.camera.height == 48
    assert cfg.fit.iterations == 120
    assert cfg.fit.grid == (4, 3)
    assert cfg.fit.weights.lambda_depth == 0.1
    assert cfg.stream.render_times == (0.5, 1.0)
    assert cfg.stream.strict is True
    assert cfg.synth.n_blobs == 5
    assert cfg.seed == 7


def test_build_config_defaults():
    cfg = build_config({})
    assert cfg.camera.width == 512
    assert cfg.fit.iterations == 500
    assert cfg.stream.predictor == "fit"
    assert cfg.synth.background is True
    assert cfg.seed == 0
    assert cfg.threads == 0


def test_build_config_bad_values():
    with pytest.raises(ConfigError, match="bad value"):
        build_config({"camera.width": "wide"})
    with pytest.raises(ConfigError, match="two values"):
        build_config({"fit.grid": "4"})
    with pytest.raises(ConfigError, match="render_times"):
        build_config({"stream.render_times": "0.5, 1.5"})
    with pytest.raises(ConfigError, match="not a boolean"):
        build_config({"stream.strict": "maybe"})
    # Dataclass validation surfaces as ConfigError too.
    with pytest.raises(ConfigError):
        build_config({"fit.iterations": "0"})
    with pytest.raises(ConfigError):
        build_config({"loss.lambda_mse": "-1"})


def test_camera_config_build():
    cam = CameraConfig(width=64, height=32, fx=32.0, fy=16.0).build()
    assert cam.width == 64
    assert cam.height == 32
    assert cam.fx == 32.0
    assert cam.fy == 16.0
    assert CameraConfig().build().width == 512


def test_load_config_reads_file(tmp_path):
    p = tmp_path / "run.cfg"
    p.write_text(SAMPLE)
    cfg = load_config(p)
    assert cfg.camera.width == 64
    # The run seed is copied into the fitter config.
    assert cfg.fit.seed == 7


def test_load_config_missing_file():
    with pytest.raises(ConfigError, match="not found"):
        load_config("/nonexistent/run.cfg")


def test_load_config_overrides_win(tmp_path):
    p = tmp_path / "run.cfg"
    p.write_text(SAMPLE)
    cfg = load_config(p, overrides={
        "camera.width": 128,
        "fit.iterations": 9,
        "loss.lambda_depth": 0.25,
        "seed": 11,
        "threads": 2,
    })
    assert cfg.camera.width == 128
    assert cfg.camera.height == 48            # untouched keys survive
    assert cfg.fit.iterations == 9
    assert cfg.fit.weights.lambda_depth == 0.25
    assert cfg.seed == 11
    assert cfg.fit.seed == 11
    assert cfg.threads == 2


def test_load_config_none_overrides_skipped():
    cfg = load_config(None, overrides={"seed": None, "camera.width": None})
    assert cfg.seed == 0
    assert cfg.camera.width == 512


def test_load_config_unknown_override():
    with pytest.raises(ConfigError, match="unknown override"):
        load_config(None, overrides={"fit.bogus": 1})
