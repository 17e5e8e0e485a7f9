"""Pluggable per-frame prediction backends.

A Predictor turns frames into static Gaussian sets (encode) and a pair of
adjacent per-frame states into bidirectional deformations (decode). Two
backends: FixturePredictor replays sets and deformation fields from a file;
FitPredictor runs the gradient-descent fitter. Both are stateless between
calls except through the PredictorState values they hand back.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .camera import OrthoCamera
from .errors import DynsplatError
from .fit import FitConfig, decode as fit_decode, encode as fit_encode
from .losses import FrameTarget
from .model import DeformationParams, DeformSet, DynamicSet, StaticSet

__all__ = [
    "FitConfig", "PredictorState", "PredictorOutput", "Predictor",
    "FixturePredictor", "FitPredictor", "fixture_from_dict", "fixture_to_dict",
]


@dataclass(frozen=True)
class PredictorState:
    """Opaque per-backend payload passed between consecutive steps."""

    backend: str
    frame_index: int
    static: Optional[StaticSet] = None
    target: Optional[FrameTarget] = None


@dataclass
class PredictorOutput:
    """Decoder result for one frame interval, in local [0, 1] time.

    forward maps previous-frame GaussianId tuples to their new forward
    deformation (t0 = 0); backward aligns with current_static rows (t0 = 1).
    """

    current_static: StaticSet
    backward: DeformSet
    forward: dict

    def validate(self, prev_ids: np.ndarray) -> None:
        if len(self.backward) != len(self.current_static):
            raise ValueError("backward deform count does not match current Gaussians")
        known = {(int(f), int(t)) for f, t in prev_ids}
        unknown = set(self.forward) - known
        if unknown:
            raise ValueError(f"forward deform keys not in previous frame: {sorted(unknown)!r}")


class Predictor:
    """Interface: encode a frame, decode an adjacent pair of states."""

    name = "abstract"

    def encode(self, frame: FrameTarget, frame_index: int):
        raise NotImplementedError

    def decode(self, prev: PredictorState, cur: PredictorState) -> PredictorOutput:
        raise NotImplementedError

    def restore_state(self, frame_index: int, frame: Optional[FrameTarget]) -> PredictorState:
        """Rebuild the stored state for a frame, for checkpoint resume."""
        raise NotImplementedError


def _check_backend(state: PredictorState, expected: str) -> None:
    if state.backend != expected:
        raise DynsplatError(
            f"predictor state from backend {state.backend!r}, expected {expected!r}")


class FixturePredictor(Predictor):
    """Replays per-frame Gaussian sets and deformation fields verbatim.

    The fixture document holds one entry per frame: a static set, plus (for
    frames >= 1) a forward block keyed by previous-frame ids and a backward
    block keyed by this frame's ids.
    """

    name = "fixture"

    def __init__(self, frames: list, forward: list, backward: list):
        # frames: list of StaticSet; forward/backward: list of dicts keyed by
        # id tuple -> DeformationParams (local t0: forward 0, backward 1).
        if not (len(frames) == len(forward) == len(backward)):
            raise ValueError("fixture lists must align per frame")
        self.frames = frames
        self.forward = forward
        self.backward = backward

    def encode(self, frame: FrameTarget, frame_index: int):
        if not 0 <= frame_index < len(self.frames):
            raise DynsplatError(f"fixture has no frame {frame_index}")
        return (PredictorState(self.name, frame_index),
                self.frames[frame_index].copy())

    def decode(self, prev: PredictorState, cur: PredictorState) -> PredictorOutput:
        _check_backend(prev, self.name)
        _check_backend(cur, self.name)
        k = cur.frame_index
        static = self.frames[k].copy()
        bwd_map = self.backward[k]
        bwd = DeformSet.from_params([
            bwd_map[(int(f), int(t))] for f, t in static.ids
        ]) if len(static) else DeformSet.identity(0, t0=1.0)
        out = PredictorOutput(current_static=static, backward=bwd,
                              forward=dict(self.forward[k]))
        out.validate(self.frames[prev.frame_index].ids)
        return out

    def restore_state(self, frame_index: int, frame=None) -> PredictorState:
        return PredictorState(self.name, frame_index)


def fixture_to_dict(frames, forward, backward) -> dict:
    """Serializable fixture document; inverse of fixture_from_dict."""
    from .io import scene_to_dict

    entries = []
    for k, static in enumerate(frames):
        entry = scene_to_dict(DynamicSet(static.copy()), frame_time=float(k))
        entry["forward"] = {
            f"{f}:{t}": {"velocity": list(map(float, d.velocity)),
                         "gamma": [float(d.gamma0), float(d.gamma1)]}
            for (f, t), d in forward[k].items()
        }
        entry["backward"] = {
            f"{f}:{t}": {"velocity": list(map(float, d.velocity)),
                         "gamma": [float(d.gamma0), float(d.gamma1)]}
            for (f, t), d in backward[k].items()
        }
        entries.append(entry)
    return {"frames": entries}


def _parse_deform_block(block: dict, t0: float) -> dict:
    out = {}
    for key, val in block.items():
        f, t = key.split(":")
        out[(int(f), int(t))] = DeformationParams(
            tuple(float(v) for v in val["velocity"]),
            float(val["gamma"][0]), float(val["gamma"][1]), t0,
        )
    return out


def fixture_from_dict(doc: dict) -> FixturePredictor:
    from .io import scene_from_dict

    frames, forward, backward = [], [], []
    for entry in doc["frames"]:
        scene, _ = scene_from_dict(entry)
        frames.append(scene.base)
        forward.append(_parse_deform_block(entry.get("forward", {}), t0=0.0))
        backward.append(_parse_deform_block(entry.get("backward", {}), t0=1.0))
    return FixturePredictor(frames, forward, backward)


class FitPredictor(Predictor):
    """Gradient-descent backend: encode fits static Gaussians to the frame,
    decode fits bidirectional deformations between two fitted frames."""

    name = "fit"

    def __init__(self, cam: OrthoCamera, cfg: FitConfig | None = None, threads: int = 0):
        self.cam = cam
        self.cfg = cfg if cfg is not None else FitConfig()
        self.threads = threads
        self.last_encode_result = None
        self.last_decode_result = None

    def encode(self, frame: FrameTarget, frame_index: int):
        static, result = fit_encode(frame, self.cam, self.cfg,
                                    frame_index=frame_index, threads=self.threads)
        self.last_encode_result = result
        state = PredictorState(self.name, frame_index, static=static, target=frame)
        return state, static

    def decode(self, prev: PredictorState, cur: PredictorState) -> PredictorOutput:
        _check_backend(prev, self.name)
        _check_backend(cur, self.name)
        if prev.static is None or cur.static is None:
            raise DynsplatError("fit predictor states must carry fitted Gaussians")
        fwd, bwd, result = fit_decode(prev.static, prev.target, cur.static, cur.target,
                                      self.cam, self.cfg, threads=self.threads)
        self.last_decode_result = result
        forward = {
            (int(f), int(t)): DeformationParams(
                tuple(fwd.velocity[i]), float(fwd.gamma0[i]), float(fwd.gamma1[i]), 0.0)
            for i, (f, t) in enumerate(prev.static.ids)
        }
        out = PredictorOutput(current_static=cur.static.copy(), backward=bwd,
                              forward=forward)
        out.validate(prev.static.ids)
        return out

    def restore_state(self, frame_index: int, frame: Optional[FrameTarget]) -> PredictorState:
        if frame is None:
            raise DynsplatError("fit predictor needs the frame to rebuild its state")
        state, _ = self.encode(frame, frame_index)
        return state
