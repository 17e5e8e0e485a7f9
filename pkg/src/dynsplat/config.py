"""Run configuration: a flat key-value file with dotted section keys, plus
CLI flag overrides.

Example file:

    camera.width = 64
    camera.height = 64
    fit.iterations = 400
    loss.lambda_depth = 0.05
    stream.render_times = 0.5, 1.0
    seed = 7

Unknown keys are rejected so typos fail loudly (exit code 2 at the CLI).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

from .camera import OrthoCamera
from .errors import DynsplatError
from .fit import FitConfig
from .losses import LossWeights


class ConfigError(DynsplatError):
    """Malformed configuration file or value."""


@dataclass(frozen=True)
class CameraConfig:
    width: int = 512
    height: int = 288
    fx: float = 256.0
    fy: float = 144.0
    cx: float = 0.0
    cy: float = 0.0

    def build(self) -> OrthoCamera:
        return OrthoCamera(width=self.width, height=self.height,
                           fx=self.fx, fy=self.fy, cx=self.cx, cy=self.cy)


@dataclass(frozen=True)
class StreamConfig:
    eps_prune: float = 1e-3
    render_times: tuple = (1.0,)
    strict: bool = False
    predictor: str = "fit"
    fixture: str | None = None


@dataclass(frozen=True)
class SynthConfig:
    n_blobs: int = 3
    n_frames: int = 4
    velocity_scale: float = 0.15
    depth_layers: int = 2
    background: bool = True
    noise: float = 0.0


@dataclass
class RunConfig:
    camera: CameraConfig = field(default_factory=CameraConfig)
    fit: FitConfig = field(default_factory=FitConfig)
    stream: StreamConfig = field(default_factory=StreamConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)
    seed: int = 0
    threads: int = 0


def _parse_bool(v: str) -> bool:
    lv = v.lower()
    if lv in ("1", "true", "yes", "on"):
        return True
    if lv in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {v!r}")


def _parse_floats(v: str) -> tuple:
    return tuple(float(x) for x in v.replace(",", " ").split())


def _parse_ints(v: str) -> tuple:
    return tuple(int(x) for x in v.replace(",", " ").split())


# dotted key -> (section attr or None for top level, field, parser)
_SCHEMA = {
    "camera.width": ("camera", "width", int),
    "camera.height": ("camera", "height", int),
    "camera.fx": ("camera", "fx", float),
    "camera.fy": ("camera", "fy", float),
    "camera.cx": ("camera", "cx", float),
    "camera.cy": ("camera", "cy", float),
    "fit.grid": ("fit", "grid", _parse_ints),
    "fit.n_gaussians": ("fit", "n_gaussians", int),
    "fit.cell_px": ("fit", "cell_px", int),
    "fit.iterations": ("fit", "iterations", int),
    "fit.decode_iterations": ("fit", "decode_iterations", int),
    "fit.step_size": ("fit", "step_size", float),
    "fit.k_candidates": ("fit", "k_candidates", int),
    "fit.tolerance": ("fit", "tolerance", float),
    "fit.init_std": ("fit", "init_std", float),
    "fit.init_alpha": ("fit", "init_alpha", float),
    "fit.init_scale_z": ("fit", "init_scale_z", float),
    "fit.deterministic_init": ("fit", "deterministic_init", _parse_bool),
    "fit.n_times": ("fit", "n_times", int),
    "loss.lambda_mse": ("loss", "lambda_mse", float),
    "loss.lambda_depth": ("loss", "lambda_depth", float),
    "loss.lambda_mask": ("loss", "lambda_mask", float),
    "loss.w": ("loss", "w", float),
    "stream.eps_prune": ("stream", "eps_prune", float),
    "stream.render_times": ("stream", "render_times", _parse_floats),
    "stream.strict": ("stream", "strict", _parse_bool),
    "stream.predictor": ("stream", "predictor", str),
    "stream.fixture": ("stream", "fixture", str),
    "synth.n_blobs": ("synth", "n_blobs", int),
    "synth.n_frames": ("synth", "n_frames", int),
    "synth.velocity_scale": ("synth", "velocity_scale", float),
    "synth.depth_layers": ("synth", "depth_layers", int),
    "synth.background": ("synth", "background", _parse_bool),
    "synth.noise": ("synth", "noise", float),
    "seed": (None, "seed", int),
    "threads": (None, "threads", int),
}


def parse_config_text(text: str) -> dict:
    """Flat `key = value` lines; # starts a comment; blank lines ignored."""
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in _SCHEMA:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        values[key] = val
    return values


def build_config(values: dict) -> RunConfig:
    cfg = RunConfig()
    sections = {
        "camera": dict(), "fit": dict(), "loss": dict(),
        "stream": dict(), "synth": dict(), None: dict(),
    }
    for key, raw in values.items():
        section, fld, parser = _SCHEMA[key]
        try:
            sections[section][fld] = parser(raw)
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"bad value for {key}: {raw!r} ({exc})") from exc
    try:
        if sections["loss"]:
            weights = LossWeights(**sections["loss"])
        else:
            weights = cfg.fit.weights
        if sections["fit"] or sections["loss"]:
            if "grid" in sections["fit"]:
                g = sections["fit"]["grid"]
                if len(g) != 2:
                    raise ConfigError(f"fit.grid needs two values, got {g}")
            cfg.fit = replace(cfg.fit, weights=weights, **sections["fit"])
        if sections["camera"]:
            cfg.camera = replace(cfg.camera, **sections["camera"])
        if sections["stream"]:
            if "render_times" in sections["stream"]:
                times = sections["stream"]["render_times"]
                if any(not 0.0 <= t <= 1.0 for t in times):
                    raise ConfigError("stream.render_times must lie in [0, 1]")
            cfg.stream = replace(cfg.stream, **sections["stream"])
        if sections["synth"]:
            cfg.synth = replace(cfg.synth, **sections["synth"])
        for fld, val in sections[None].items():
            setattr(cfg, fld, val)
    except ConfigError:
        raise
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from exc
    return cfg


def load_config(path=None, overrides: dict | None = None) -> RunConfig:
    """Read the config file (when given) and apply CLI overrides on top.

    overrides uses the same dotted keys with already-typed values.
    """
    values = {}
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file not found: {path}")
        values = parse_config_text(p.read_text())
    cfg = build_config(values)
    for key, val in (overrides or {}).items():
        if val is None:
            continue
        if key not in _SCHEMA:
            raise ConfigError(f"unknown override {key!r}")
        section, fld, _ = _SCHEMA[key]
        if section is None:
            setattr(cfg, fld, val)
        elif section == "loss":
            cfg.fit = replace(cfg.fit, weights=replace(cfg.fit.weights, **{fld: val}))
        else:
            setattr(cfg, section, replace(getattr(cfg, section), **{fld: val}))
    # seed flows into the fitter so encode stays deterministic per run
    cfg.fit = replace(cfg.fit, seed=cfg.seed)
    return cfg
