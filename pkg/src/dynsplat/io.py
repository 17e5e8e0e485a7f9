"""File formats: scene JSON, binary PPM (P6), GSDP float planes, JSONL
records and loss-curve CSV.

Scene JSON is emitted by a small custom writer so every real is printed with
17 significant digits (%.16e), which round-trips float64 exactly; reading
uses the stdlib json parser.
"""

from __future__ import annotations

import csv
import json
import math
import struct
from pathlib import Path

import numpy as np

from .errors import DynsplatError
from .model import DeformSet, DynamicSet, StaticSet

GSDP_MAGIC = b"GSDP"


class FormatError(DynsplatError):
    """Malformed input file."""


def format_float(x: float) -> str:
    x = float(x)
    if math.isfinite(x):
        return "%.16e" % x
    # same non-finite tokens the stdlib json parser accepts
    if math.isnan(x):
        return "NaN"
    return "Infinity" if x > 0 else "-Infinity"


def _emit_json(obj, out: list) -> None:
    if isinstance(obj, bool):
        out.append("true" if obj else "false")
    elif isinstance(obj, (int, np.integer)):
        out.append(str(int(obj)))
    elif isinstance(obj, (float, np.floating)):
        out.append(format_float(obj))
    elif isinstance(obj, str):
        out.append(json.dumps(obj))
    elif isinstance(obj, (list, tuple, np.ndarray)):
        out.append("[")
        for i, v in enumerate(obj):
            if i:
                out.append(", ")
            _emit_json(v, out)
        out.append("]")
    elif isinstance(obj, dict):
        out.append("{")
        for i, (k, v) in enumerate(obj.items()):
            if i:
                out.append(", ")
            out.append(json.dumps(str(k)))
            out.append(": ")
            _emit_json(v, out)
        out.append("}")
    elif obj is None:
        out.append("null")
    else:
        raise TypeError(f"cannot serialize {type(obj)!r}")


def dumps_json(obj) -> str:
    """JSON text with all reals at full float64 precision."""
    out: list = []
    _emit_json(obj, out)
    return "".join(out)


def scene_to_dict(scene: DynamicSet, frame_time: float = 0.0) -> dict:
    entries = []
    b, d = scene.base, scene.deform
    for i in range(len(scene)):
        entries.append({
            "id": [int(b.ids[i, 0]), int(b.ids[i, 1])],
            "mu": [float(v) for v in b.mu[i]],
            "scale": [float(v) for v in b.scale[i]],
            "quat": [float(v) for v in b.quat[i]],
            "alpha": float(b.alpha[i]),
            "color": [float(v) for v in b.color[i]],
            "velocity": [float(v) for v in d.velocity[i]],
            "gamma": [float(d.gamma0[i]), float(d.gamma1[i])],
            "t0": float(d.t0[i]),
        })
    return {"frame_time": float(frame_time), "gaussians": entries}


def scene_from_dict(doc: dict) -> tuple[DynamicSet, float]:
    try:
        frame_time = float(doc["frame_time"])
        raw = doc["gaussians"]
        n = len(raw)
        mu = np.zeros((n, 3))
        scale = np.zeros((n, 3))
        quat = np.zeros((n, 4))
        alpha = np.zeros(n)
        color = np.zeros((n, 3))
        ids = np.zeros((n, 2), dtype=np.int64)
        vel = np.zeros((n, 3))
        g0 = np.zeros(n)
        g1 = np.zeros(n)
        t0 = np.zeros(n)
        for i, e in enumerate(raw):
            ids[i] = e["id"]
            mu[i] = e["mu"]
            scale[i] = e["scale"]
            quat[i] = e["quat"]
            alpha[i] = e["alpha"]
            color[i] = e["color"]
            vel[i] = e["velocity"]
            g0[i], g1[i] = e["gamma"]
            t0[i] = e["t0"]
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"malformed scene document: {exc}") from exc
    scene = DynamicSet(StaticSet(mu, scale, quat, alpha, color, ids),
                       DeformSet(vel, g0, g1, t0))
    return scene, frame_time


def save_scene(path, scene: DynamicSet, frame_time: float = 0.0) -> None:
    Path(path).write_text(dumps_json(scene_to_dict(scene, frame_time)) + "\n")


def load_scene(path) -> tuple[DynamicSet, float]:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"invalid JSON in {path}: {exc}") from exc
    return scene_from_dict(doc)


def write_ppm(path, rgb: np.ndarray) -> None:
    """8-bit binary P6; values round(255*clamp(c,0,1))."""
    rgb = np.asarray(rgb, dtype=np.float64)
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise ValueError(f"expected (H,W,3) rgb, got {rgb.shape}")
    data = np.floor(255.0 * np.clip(rgb, 0.0, 1.0) + 0.5).astype(np.uint8)
    h, w = rgb.shape[:2]
    with open(path, "wb") as f:
        f.write(b"P6\n%d %d\n255\n" % (w, h))
        f.write(data.tobytes())


def read_ppm(path) -> np.ndarray:
    """Returns float64 rgb in [0,1]."""
    blob = Path(path).read_bytes()
    pos = 0
    fields = []
    while len(fields) < 4:
        while pos < len(blob) and blob[pos : pos + 1].isspace():
            pos += 1
        if pos < len(blob) and blob[pos : pos + 1] == b"#":
            while pos < len(blob) and blob[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(blob) and not blob[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError(f"truncated PPM header in {path}")
        fields.append(blob[start:pos])
    pos += 1  # single whitespace after maxval
    if fields[0] != b"P6":
        raise FormatError(f"not a binary PPM (P6): {path}")
    try:
        w, h, maxval = int(fields[1]), int(fields[2]), int(fields[3])
    except ValueError as exc:
        raise FormatError(f"bad PPM header in {path}") from exc
    if maxval != 255:
        raise FormatError(f"unsupported PPM maxval {maxval} in {path}")
    need = w * h * 3
    raw = blob[pos : pos + need]
    if len(raw) != need:
        raise FormatError(f"truncated PPM pixel data in {path}")
    return np.frombuffer(raw, dtype=np.uint8).reshape(h, w, 3).astype(np.float64) / 255.0


def write_gsdp(path, plane: np.ndarray) -> None:
    """Raw float32 planes with a 16-byte header: magic, width, height, channels."""
    plane = np.asarray(plane)
    if plane.ndim == 2:
        plane = plane[:, :, None]
    if plane.ndim != 3:
        raise ValueError(f"expected (H,W) or (H,W,C) plane, got {plane.shape}")
    h, w, c = plane.shape
    with open(path, "wb") as f:
        f.write(GSDP_MAGIC)
        f.write(struct.pack("<III", w, h, c))
        f.write(np.ascontiguousarray(plane, dtype="<f4").tobytes())


def read_gsdp(path) -> np.ndarray:
    """Returns float64 (H,W) for single-channel files, else (H,W,C)."""
    blob = Path(path).read_bytes()
    if len(blob) < 16 or blob[:4] != GSDP_MAGIC:
        raise FormatError(f"not a GSDP file: {path}")
    w, h, c = struct.unpack("<III", blob[4:16])
    need = w * h * c * 4
    if len(blob) != 16 + need:
        raise FormatError(f"GSDP size mismatch in {path}")
    arr = np.frombuffer(blob, dtype="<f4", offset=16).reshape(h, w, c).astype(np.float64)
    return arr[:, :, 0] if c == 1 else arr


def append_jsonl(path, record: dict) -> None:
    with open(path, "a", encoding="utf-8") as f:
        f.write(json.dumps(record, sort_keys=False) + "\n")


def write_jsonl(path, records) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for r in records:
            f.write(json.dumps(r, sort_keys=False) + "\n")


def read_jsonl(path) -> list:
    out = []
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if line:
            out.append(json.loads(line))
    return out


LOSS_CURVE_COLUMNS = ("iter", "total", "mse", "depth", "mask")


def write_loss_curve(path, rows) -> None:
    """rows: iterable of (iter, total, mse, depth, mask)."""
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(LOSS_CURVE_COLUMNS)
        for row in rows:
            writer.writerow([row[0]] + [format_float(v) for v in row[1:]])


def read_loss_curve(path) -> list:
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        header = next(reader)
        if tuple(header) != LOSS_CURVE_COLUMNS:
            raise FormatError(f"unexpected loss-curve header {header} in {path}")
        return [(int(r[0]),) + tuple(float(v) for v in r[1:]) for r in reader]
