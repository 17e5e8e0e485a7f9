"""Command-line entry points: render, fit, stream, synth, metrics.

Exit codes: 0 success, 2 bad input or config, 3 render error (time outside
every deformation window), 4 optimization divergence. Verbosity comes from
the GSPLAT_LOG environment variable (error, warn, info, debug).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import losses
from .camera import OrthoCamera
from .config import ConfigError, RunConfig, load_config
from .errors import DynsplatError, FitDiverged, OutOfWindow
from .io import (append_jsonl, dumps_json, load_scene, read_gsdp, read_ppm,
                 save_scene, write_gsdp, write_loss_curve, write_ppm)
from .model import DeformSet, DynamicSet
from .predictor import (FitPredictor, FixturePredictor, fixture_from_dict,
                        fixture_to_dict)
from .render import render_at
from .stream import load_checkpoint, run_stream, save_checkpoint
from .synth import SceneSpec, load_run_dir, make_scene, perturb_depth, write_run_dir

log = logging.getLogger(__name__)

_LOG_LEVELS = {"error": logging.ERROR, "warn": logging.WARNING,
               "info": logging.INFO, "debug": logging.DEBUG}


def _setup_logging() -> None:
    name = os.environ.get("GSPLAT_LOG", "warn").lower()
    level = _LOG_LEVELS.get(name, logging.WARNING)
    logging.basicConfig(level=level,
                        format="%(levelname)s %(name)s: %(message)s")


def _overrides(args) -> dict:
    ov = {
        "seed": getattr(args, "seed", None),
        "threads": getattr(args, "threads", None),
    }
    if getattr(args, "strict", None):
        ov["stream.strict"] = True
    if getattr(args, "deterministic_init", None):
        ov["fit.deterministic_init"] = True
    if getattr(args, "predictor", None):
        ov["stream.predictor"] = args.predictor
    return ov


def _load_cfg(args) -> RunConfig:
    return load_config(getattr(args, "config", None), _overrides(args))


def _camera_for_frames(cfg: RunConfig, manifest) -> OrthoCamera:
    """Config camera wins; a run-dir manifest supplies it when the config
    left the camera untouched."""
    from .config import CameraConfig

    if cfg.camera == CameraConfig() and manifest and "camera" in manifest:
        c = manifest["camera"]
        return OrthoCamera(width=int(c["width"]), height=int(c["height"]),
                           fx=float(c["fx"]), fy=float(c["fy"]),
                           cx=float(c.get("cx", 0.0)), cy=float(c.get("cy", 0.0)))
    return cfg.camera.build()


def _check_frame_shape(frames, cam: OrthoCamera) -> None:
    if frames and frames[0].rgb.shape[:2] != (cam.height, cam.width):
        raise ConfigError(
            f"frame size {frames[0].rgb.shape[1]}x{frames[0].rgb.shape[0]} "
            f"does not match camera {cam.width}x{cam.height}")


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_render(args) -> int:
    cfg = _load_cfg(args)
    cam = cfg.camera.build()
    scene, frame_time = load_scene(args.scene)
    t = args.time if args.time is not None else frame_time
    buf = render_at(scene, t, cam, threads=cfg.threads)
    out = _out_dir(args)
    write_ppm(out / "rgb.ppm", buf.rgb)
    write_gsdp(out / "depth.gsdp", buf.depth)
    write_gsdp(out / "alpha.gsdp", buf.alpha)
    log.info("rendered %d gaussians at t=%g", len(scene), t)
    return 0


def cmd_synth(args) -> int:
    cfg = _load_cfg(args)
    s = cfg.synth
    spec = SceneSpec(seed=cfg.seed, width=cfg.camera.width, height=cfg.camera.height,
                     n_frames=s.n_frames, n_blobs=s.n_blobs,
                     velocity_scale=s.velocity_scale, depth_layers=s.depth_layers,
                     background=s.background)
    scene, frames = make_scene(spec)
    if s.noise > 0:
        frames = perturb_depth(frames, s.noise, seed=cfg.seed)
    write_run_dir(_out_dir(args), spec, scene, frames)
    log.info("wrote %d synthetic frames to %s", len(frames), args.out)
    return 0


def cmd_fit(args) -> int:
    cfg = _load_cfg(args)
    frames, manifest = load_run_dir(args.frames)
    if not frames:
        raise ConfigError(f"no frames found in {args.frames}")
    cam = _camera_for_frames(cfg, manifest)
    _check_frame_shape(frames, cam)
    out = _out_dir(args)
    predictor = FitPredictor(cam, cfg.fit, threads=cfg.threads)

    curve_rows: list = []
    statics, states, fwd_maps, bwd_sets, psnrs = [], [], [], [], []
    diverged = None
    try:
        for k, frame in enumerate(frames):
            state, static = predictor.encode(frame, k)
            states.append(state)
            statics.append(static)
            _extend_curve(curve_rows, predictor.last_encode_result)
            if k > 0:
                out_k = predictor.decode(states[k - 1], states[k])
                fwd_maps.append(out_k.forward)
                bwd_sets.append(out_k.backward)
                _extend_curve(curve_rows, predictor.last_decode_result)
            buf = render_at(DynamicSet(static.copy()), 0.0, cam, threads=cfg.threads)
            psnrs.append(losses.psnr(buf.rgb, frame.rgb))
    except FitDiverged as exc:
        diverged = str(exc)
        log.error("fit diverged: %s", exc)

    for k, static in enumerate(statics):
        n = len(static)
        if k == 0 or k > len(bwd_sets):
            deform = DeformSet.identity(n, t0=float(k))
        else:
            b = bwd_sets[k - 1]
            deform = DeformSet(b.velocity.copy(), b.gamma0.copy(), b.gamma1.copy(),
                               np.full(n, float(k)))
        save_scene(out / f"scene_{k:04d}.json", DynamicSet(static.copy(), deform),
                   frame_time=float(k))
    if statics:
        fwd = [dict() for _ in statics]
        bwd = [dict() for _ in statics]
        for i, m in enumerate(fwd_maps):
            fwd[i + 1] = m
        for i, b in enumerate(bwd_sets):
            bwd[i + 1] = {
                (int(f), int(t)): d
                for (f, t), d in zip(statics[i + 1].ids, b.params())
            }
        (out / "fixture.json").write_text(
            dumps_json(fixture_to_dict(statics, fwd, bwd)) + "\n")
    write_loss_curve(out / "loss_curve.csv", curve_rows)
    summary = {
        "frames_fit": len(statics),
        "frames_total": len(frames),
        "psnr": psnrs,
        "mean_psnr": float(np.mean(psnrs)) if psnrs else None,
        "diverged": diverged,
    }
    (out / "summary.json").write_text(dumps_json(summary) + "\n")
    if diverged is not None:
        print(f"error: fit diverged after frame {len(statics) - 1}; "
              f"partial outputs in {out}", file=sys.stderr)
        return 4
    return 0


def _extend_curve(rows: list, result) -> None:
    """Append a fit's loss curve with a run-global iteration counter."""
    if result is None or not result.curve:
        return
    base = len(rows)
    first = result.curve[0][0]
    for r in result.curve:
        rows.append((base + (r[0] - first), r[1], r[2], r[3], r[4]))


def _build_predictor(cfg: RunConfig, cam: OrthoCamera):
    name = cfg.stream.predictor
    if name == "fit":
        return FitPredictor(cam, cfg.fit, threads=cfg.threads)
    if name == "fixture":
        if not cfg.stream.fixture:
            raise ConfigError("fixture predictor needs stream.fixture = <path>")
        path = Path(cfg.stream.fixture)
        if not path.exists():
            raise ConfigError(f"fixture file not found: {path}")
        return fixture_from_dict(json.loads(path.read_text()))
    raise ConfigError(f"unknown predictor {name!r} (expected fit or fixture)")


def cmd_stream(args) -> int:
    cfg = _load_cfg(args)
    if getattr(args, "fixture", None):
        cfg.stream = replace(cfg.stream, fixture=args.fixture,
                             predictor="fixture")
    frames, manifest = load_run_dir(args.frames)
    if not frames:
        raise ConfigError(f"no frames found in {args.frames}")
    cam = _camera_for_frames(cfg, manifest)
    _check_frame_shape(frames, cam)
    out = _out_dir(args)
    predictor = _build_predictor(cfg, cam)
    telemetry_path = out / "telemetry.jsonl"

    initial_state = None
    remaining = frames
    if getattr(args, "resume", None):
        k0 = int(json.loads(Path(args.resume).read_text()).get("frame_index", -1))
        if not 0 <= k0 < len(frames) - 1:
            raise ConfigError(f"checkpoint frame {k0} leaves nothing to resume")
        initial_state = load_checkpoint(args.resume, predictor, frames[k0])
        remaining = frames[k0 + 1:]
    else:
        telemetry_path.unlink(missing_ok=True)

    def on_step(state, renders):
        k = state.frame_index
        for j, (t_global, buf) in enumerate(renders):
            write_ppm(out / f"rgb_{k:04d}_{j:02d}.ppm", buf.rgb)
            write_gsdp(out / f"depth_{k:04d}_{j:02d}.gsdp", buf.depth)
        append_jsonl(telemetry_path, state.telemetry[-1].as_record())
        save_checkpoint(out / "checkpoint.json", state)

    state = run_stream(remaining, predictor, cam,
                       render_times=cfg.stream.render_times,
                       eps_prune=cfg.stream.eps_prune,
                       strict=cfg.stream.strict, threads=cfg.threads,
                       on_step=on_step, initial_state=initial_state)
    log.info("stream finished at frame %d with %d gaussians",
             state.frame_index, len(state.scene))
    return 0


def cmd_metrics(args) -> int:
    rendered = sorted(Path(args.rendered).glob("*.ppm"))
    reference = sorted(Path(args.reference).glob("*.ppm"))
    if len(rendered) != len(reference):
        raise ConfigError(
            f"frame count mismatch: {len(rendered)} rendered vs "
            f"{len(reference)} reference")
    if not rendered:
        raise ConfigError("no frames to compare")
    rendered_d = sorted(Path(args.rendered).glob("depth_*.gsdp"))
    reference_d = sorted(Path(args.reference).glob("depth_*.gsdp"))
    with_depth = len(rendered_d) == len(reference_d) == len(rendered)

    out = _out_dir(args)
    rows = []
    for i, (pa, pb) in enumerate(zip(rendered, reference)):
        a, b = read_ppm(pa), read_ppm(pb)
        row = {"frame": i, "psnr": losses.psnr(a, b), "ssim": losses.ssim(a, b)}
        if with_depth:
            da, db = read_gsdp(rendered_d[i]), read_gsdp(reference_d[i])
            try:
                row["depth_loss"] = losses.depth_loss(da, db)
            except DynsplatError:
                row["depth_loss"] = None
        else:
            row["depth_loss"] = None
        rows.append(row)
    (out / "metrics.jsonl").write_text(
        "".join(dumps_json(r) + "\n" for r in rows))
    dl = [r["depth_loss"] for r in rows if r["depth_loss"] is not None]
    summary = {
        "frames": len(rows),
        "mean_psnr": float(np.mean([r["psnr"] for r in rows])),
        "mean_ssim": float(np.mean([r["ssim"] for r in rows])),
        "mean_depth_loss": float(np.mean(dl)) if dl else None,
    }
    (out / "summary.json").write_text(dumps_json(summary) + "\n")
    print(dumps_json(summary))
    return 0


def _add_common(p: argparse.ArgumentParser, out_required: bool = True) -> None:
    p.add_argument("--config", metavar="PATH", help="run configuration file")
    p.add_argument("--seed", type=int, default=None, help="override RNG seed")
    p.add_argument("--out", metavar="DIR", required=out_required,
                   help="output directory")
    p.add_argument("--threads", type=int, default=None,
                   help="rasterizer threads (0 = auto)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dynsplat",
        description="Streaming dynamic Gaussian-splat reconstruction toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("render", help="render a scene file at one time")
    p.add_argument("scene", help="scene JSON file")
    p.add_argument("--time", type=float, default=None,
                   help="evaluation time (default: the file's frame_time)")
    _add_common(p)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("synth", help="generate a synthetic RGB-D run directory")
    _add_common(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("fit", help="fit Gaussians to a frame directory")
    p.add_argument("frames", help="directory of frame_*.ppm (+ depth/mask .gsdp)")
    p.add_argument("--strict", action="store_const", const=True, default=None,
                   help=argparse.SUPPRESS)
    p.add_argument("--deterministic-init", action="store_const", const=True,
                   default=None, help="disable probabilistic offset sampling")
    _add_common(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("stream", help="run the online loop over a frame directory")
    p.add_argument("frames", help="directory of frame_*.ppm (+ depth/mask .gsdp)")
    p.add_argument("--predictor", choices=("fit", "fixture"), default=None)
    p.add_argument("--fixture", metavar="PATH", default=None,
                   help="fixture file (implies --predictor fixture)")
    p.add_argument("--resume", metavar="CHECKPOINT", default=None,
                   help="continue a stream from a saved checkpoint")
    p.add_argument("--strict", action="store_const", const=True, default=None,
                   help="abort on the first failed step")
    p.add_argument("--deterministic-init", action="store_const", const=True,
                   default=None, help="disable probabilistic offset sampling")
    _add_common(p)
    p.set_defaults(func=cmd_stream)

    p = sub.add_parser("metrics", help="compare two directories of frames")
    p.add_argument("rendered", help="directory of rendered *.ppm (+ *.gsdp)")
    p.add_argument("reference", help="directory of reference *.ppm (+ *.gsdp)")
    _add_common(p)
    p.set_defaults(func=cmd_metrics)
    return parser


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except FitDiverged as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except OutOfWindow as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (DynsplatError, OSError, json.JSONDecodeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
