"""Synthetic ground-truth scenes: moving/fading Gaussian blobs over a
background plane, rendered by the engine's own rasterizer.

Every emitted frame comes from render_at on the ground-truth Gaussians, so
fit-quality tests measure optimization error only, never renderer mismatch.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .camera import OrthoCamera
from .errors import SpecError
from .losses import FrameTarget
from .model import DeformSet, DynamicSet, StaticSet
from .render import ImageBuffer, render

# Foreground blobs sit in z in front of this; the plane guarantees full
# depth coverage so tau-normalization never degenerates. Depths live inside
# the inverse-depth map's range [1, 2000] so a fitted z offset can reach them.
_BACKGROUND_Z = 3.5
_BACKGROUND_COLOR = (0.08, 0.09, 0.12)


@dataclass(frozen=True)
class Blob:
    """One ground-truth Gaussian blob with constant-velocity motion."""

    position: tuple          # canonical (x, y, z) at t = 0; z within [1, 3]
    velocity: tuple = (0.0, 0.0, 0.0)
    scale: tuple = (0.12, 0.12, 0.05)
    color: tuple = (0.9, 0.2, 0.2)
    alpha: float = 0.9
    appear_frame: int = 0
    vanish_frame: int | None = None   # absent in frames >= vanish_frame

    def present_at(self, t: float) -> bool:
        if t < self.appear_frame - 1e-9:
            return False
        return self.vanish_frame is None or t < self.vanish_frame - 1e-9

    def center_at(self, t: float) -> np.ndarray:
        return np.asarray(self.position) + np.asarray(self.velocity) * t


@dataclass(frozen=True)
class SceneSpec:
    seed: int = 0
    width: int = 64
    height: int = 64
    n_frames: int = 2
    blobs: tuple = ()
    n_blobs: int | None = None        # generate this many random blobs instead
    velocity_scale: float = 0.15      # max |v| component for generated blobs
    depth_layers: int = 2             # distinct z layers for generated blobs
    background: bool = True

    def camera(self) -> OrthoCamera:
        return OrthoCamera.canonical(self.width, self.height)


def _generate_blobs(spec: SceneSpec) -> tuple:
    """Random blobs with margins chosen so every frame keeps them in view."""
    rng = np.random.default_rng(spec.seed)
    travel = spec.velocity_scale * max(spec.n_frames - 1, 1)
    margin = 0.35 + travel
    if margin >= 0.95:
        raise SpecError("velocity_scale times frame count leaves no room in view")
    blobs = []
    palette = [(0.9, 0.2, 0.2), (0.2, 0.85, 0.25), (0.25, 0.35, 0.95),
               (0.95, 0.85, 0.2), (0.85, 0.3, 0.85), (0.2, 0.85, 0.85)]
    layers = np.linspace(1.3, 2.6, max(spec.depth_layers, 1))
    for i in range(spec.n_blobs or 0):
        pos = rng.uniform(margin, 2.0 - margin, size=2)
        z = float(layers[i % len(layers)]) + float(rng.uniform(-0.02, 0.02))
        v = rng.uniform(-spec.velocity_scale, spec.velocity_scale, size=2)
        blobs.append(Blob(
            position=(float(pos[0]), float(pos[1]), z),
            velocity=(float(v[0]), float(v[1]), 0.0),
            scale=(float(rng.uniform(0.08, 0.16)),) * 2 + (0.05,),
            color=palette[i % len(palette)],
            alpha=float(rng.uniform(0.75, 0.95)),
        ))
    return tuple(blobs)


class SynthScene:
    """Ground truth: blobs plus camera; renders frames and evaluates GT
    quantities (blob pixel centers, per-interval velocities) at any time."""

    def __init__(self, spec: SceneSpec):
        self.spec = spec
        self.cam = spec.camera()
        self.blobs = spec.blobs if spec.blobs else _generate_blobs(spec)
        self._check_footprint()

    def _check_footprint(self) -> None:
        for b in self.blobs:
            for k in range(self.spec.n_frames):
                if not b.present_at(k):
                    continue
                x, y, _ = b.center_at(k)
                px, py = self.cam.fx * x + self.cam.cx, self.cam.fy * y + self.cam.cy
                if not (0 <= px < self.cam.width and 0 <= py < self.cam.height):
                    raise SpecError(
                        f"blob leaves the view at frame {k}: pixel ({px:.1f}, {py:.1f})")

    def static_at(self, t: float, include_background: bool = True,
                  foreground_only: bool = False) -> StaticSet:
        mu, scale, quat, alpha, color = [], [], [], [], []
        for b in self.blobs:
            if not b.present_at(t):
                continue
            mu.append(b.center_at(t))
            scale.append(b.scale)
            quat.append((1.0, 0.0, 0.0, 0.0))
            alpha.append(b.alpha)
            color.append(b.color)
        if self.spec.background and include_background and not foreground_only:
            mu.append((1.0, 1.0, _BACKGROUND_Z))
            scale.append((2.0, 2.0, 0.01))
            quat.append((1.0, 0.0, 0.0, 0.0))
            alpha.append(0.995)
            color.append(_BACKGROUND_COLOR)
        if not mu:
            return StaticSet.empty()
        return StaticSet(np.array(mu), np.array(scale), np.array(quat),
                         np.array(alpha), np.array(color))

    def render_at(self, t: float, **kw) -> ImageBuffer:
        return render(self.static_at(t), self.cam, **kw)

    def frame(self, k: int, **kw) -> FrameTarget:
        buf = self.render_at(float(k), **kw)
        return FrameTarget(rgb=buf.rgb, depth=buf.depth, mask=self.mask(float(k)))

    def frames(self, **kw) -> list:
        return [self.frame(k, **kw) for k in range(self.spec.n_frames)]

    def mask(self, t: float) -> np.ndarray:
        """Binary union of the moving blobs' rendered footprints."""
        fg = self.static_at(t, foreground_only=True)
        if len(fg) == 0:
            return np.zeros((self.cam.height, self.cam.width))
        buf = render(fg, self.cam)
        return (buf.alpha > 0.01).astype(np.float64)

    def blob_pixel_center(self, blob_index: int, t: float) -> tuple:
        x, y, _ = self.blobs[blob_index].center_at(t)
        return (self.cam.fx * x + self.cam.cx, self.cam.fy * y + self.cam.cy)

    def timeline_at(self, k: int) -> DynamicSet:
        """GT dynamic scene for interval [k, k+1]: per-blob velocity, t0 = k."""
        base = self.static_at(float(k))
        n = len(base)
        vel = np.zeros((n, 3))
        present = [b for b in self.blobs if b.present_at(float(k))]
        for i, b in enumerate(present):
            vel[i] = b.velocity
        return DynamicSet(base, DeformSet(vel, np.full(n, 4.0), np.ones(n),
                                          np.full(n, float(k))))


def make_scene(spec: SceneSpec) -> tuple[SynthScene, list]:
    """Build the ground truth and render every frame. Returns
    (scene, [FrameTarget, ...])."""
    scene = SynthScene(spec)
    return scene, scene.frames()


def perturb_depth(frames, noise_level: float, seed: int) -> list:
    """Additive seeded Gaussian noise on the depth planes; RGB untouched."""
    if noise_level < 0:
        raise ValueError("noise_level must be non-negative")
    rng = np.random.default_rng(seed)
    out = []
    for f in frames:
        depth = f.depth
        if depth is not None and noise_level > 0:
            depth = depth + rng.normal(0.0, noise_level, size=depth.shape)
        out.append(FrameTarget(rgb=f.rgb, depth=depth, mask=f.mask))
    return out


def write_run_dir(out_dir, spec: SceneSpec, scene: SynthScene, frames: list) -> dict:
    """Emit PPM/GSDP frames, per-frame GT scene JSON and a manifest."""
    from .io import dumps_json, save_scene, write_gsdp, write_ppm

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for k, f in enumerate(frames):
        rgb_name = f"frame_{k:04d}.ppm"
        depth_name = f"depth_{k:04d}.gsdp"
        mask_name = f"mask_{k:04d}.gsdp"
        scene_name = f"gt_scene_{k:04d}.json"
        write_ppm(out / rgb_name, f.rgb)
        write_gsdp(out / depth_name, f.depth)
        write_gsdp(out / mask_name, f.mask)
        save_scene(out / scene_name, scene.timeline_at(k), frame_time=float(k))
        entries.append({"index": k, "time": float(k), "rgb": rgb_name,
                        "depth": depth_name, "mask": mask_name, "gt_scene": scene_name})
    manifest = {
        "spec": {
            "seed": spec.seed, "width": spec.width, "height": spec.height,
            "n_frames": spec.n_frames, "n_blobs": len(scene.blobs),
            "velocity_scale": spec.velocity_scale, "depth_layers": spec.depth_layers,
            "background": spec.background,
        },
        "camera": {"width": spec.width, "height": spec.height,
                   "fx": scene.cam.fx, "fy": scene.cam.fy,
                   "cx": scene.cam.cx, "cy": scene.cam.cy},
        "frames": entries,
    }
    (out / "manifest.json").write_text(dumps_json(manifest) + "\n")
    return manifest


def load_run_dir(run_dir) -> tuple[list, dict | None]:
    """Read frames back from a run directory (manifest if present, else by
    file-name convention). Returns ([FrameTarget, ...], manifest or None)."""
    from .io import read_gsdp, read_ppm

    run = Path(run_dir)
    manifest = None
    mpath = run / "manifest.json"
    if mpath.exists():
        manifest = json.loads(mpath.read_text())
        entries = manifest["frames"]
    else:
        entries = []
        for p in sorted(run.glob("frame_*.ppm")):
            k = p.stem.split("_")[1]
            entry = {"rgb": p.name}
            if (run / f"depth_{k}.gsdp").exists():
                entry["depth"] = f"depth_{k}.gsdp"
            if (run / f"mask_{k}.gsdp").exists():
                entry["mask"] = f"mask_{k}.gsdp"
            entries.append(entry)
    frames = []
    for e in entries:
        rgb = read_ppm(run / e["rgb"])
        depth = read_gsdp(run / e["depth"]) if e.get("depth") else None
        mask = read_gsdp(run / e["mask"]) if e.get("mask") else None
        frames.append(FrameTarget(rgb=rgb, depth=depth, mask=mask))
    return frames, manifest
