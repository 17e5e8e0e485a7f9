"""Online streaming engine.

Holds the live canonical Gaussian set across frame intervals. Each step:
predict, replace matched deformations with the forward field, append the new
backward cohort, render the requested times inside the interval, prune by
lifecycle opacity at the new key time. Steps build a fresh state and never
mutate the one passed in, so a failing step leaves the caller's state
bit-identical.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .camera import OrthoCamera
from .deform import opacity_at
from .errors import DynsplatError
from .losses import FrameTarget
from .model import DeformSet, DynamicSet, StaticSet
from .predictor import Predictor, PredictorState
from .render import render_at

log = logging.getLogger("dynsplat.stream")

EPS_PRUNE = 1e-3


@dataclass
class StepTelemetry:
    frame: int
    persistent: int
    emerging: int
    pruned: int
    population: int

    def as_record(self) -> dict:
        return {"frame": self.frame, "persistent": self.persistent,
                "emerging": self.emerging, "pruned": self.pruned,
                "population": self.population}


@dataclass
class CanonicalSceneState:
    """Live scene plus the stored predictor state for the latest frame.

    Deformation t0 values are in global frame time; every live Gaussian's
    window covers the current interval [frame_index - 1, frame_index].
    """

    scene: DynamicSet
    prev_state: PredictorState
    frame_index: int
    telemetry: list = field(default_factory=list)
    max_tokens: int = 0

    def population(self) -> int:
        return len(self.scene)


def _check_unique_ids(scene: DynamicSet) -> None:
    ids = scene.base.ids
    if len(np.unique(ids, axis=0)) != len(ids):
        raise DynsplatError("duplicate Gaussian ids in scene state")


def init(first_frame: FrameTarget, predictor: Predictor) -> CanonicalSceneState:
    """Bootstrap from frame 0: its static Gaussians with identity deformation."""
    pstate, static = predictor.encode(first_frame, 0)
    n = len(static)
    scene = DynamicSet(static, DeformSet.identity(n, t0=0.0))
    _check_unique_ids(scene)
    tele = StepTelemetry(frame=0, persistent=0, emerging=n, pruned=0, population=n)
    return CanonicalSceneState(scene=scene, prev_state=pstate, frame_index=0,
                               telemetry=[tele], max_tokens=n)


def step(state: CanonicalSceneState, frame: FrameTarget, predictor: Predictor,
         cam: OrthoCamera, render_times=(1.0,), eps_prune: float = EPS_PRUNE,
         threads: int = 0):
    """Advance one frame interval [k-1, k].

    render_times are local fractions of the interval; the returned renders
    are [(global_time, ImageBuffer), ...]. Returns (new_state, renders).
    """
    k = state.frame_index + 1
    cur_state, _ = predictor.encode(frame, k)
    out = predictor.decode(state.prev_state, cur_state)
    out.validate(state.scene.base.ids)

    # Retire cohorts whose window ends before this interval.
    live = state.scene.select(state.scene.deform.t0 >= k - 1 - 1e-9)

    # UPDATE: matched previous-frame Gaussians take the forward field.
    deform = live.deform.copy()
    id_rows = live.base.ids
    n_matched = 0
    for i in range(len(live)):
        key = (int(id_rows[i, 0]), int(id_rows[i, 1]))
        d = out.forward.get(key)
        if d is None:
            continue
        deform.velocity[i] = d.velocity
        deform.gamma0[i] = d.gamma0
        deform.gamma1[i] = d.gamma1
        deform.t0[i] = float(k - 1)
        n_matched += 1
    updated = DynamicSet(live.base.copy(), deform)

    # FUSE: the new cohort carries its backward field, anchored at global k.
    bwd = out.backward
    new_cohort = DynamicSet(
        out.current_static.copy(),
        DeformSet(bwd.velocity.copy(), bwd.gamma0.copy(), bwd.gamma1.copy(),
                  np.full(len(bwd), float(k))),
    )
    fused = DynamicSet.concatenate(updated, new_cohort)
    _check_unique_ids(fused)

    renders = []
    for frac in render_times:
        t = (k - 1) + float(frac)
        renders.append((t, render_at(fused, t, cam, threads=threads)))

    # PRUNE at the new key time.
    d = fused.deform
    op = opacity_at(fused.base.alpha, d.gamma0, d.gamma1, d.t0, float(k))
    keep = np.asarray(op) > eps_prune
    pruned = int(np.sum(~keep))
    survivors = fused.select(keep)

    old_cohort = survivors.deform.t0 < k - 1e-9
    tele = StepTelemetry(
        frame=k,
        persistent=int(np.sum(old_cohort)),
        emerging=int(np.sum(~old_cohort)),
        pruned=pruned,
        population=len(survivors),
    )
    max_tokens = max(state.max_tokens, len(out.current_static))
    if max_tokens and len(survivors) > 2 * max_tokens:
        raise DynsplatError(
            f"population {len(survivors)} exceeds bound {2 * max_tokens} at frame {k}")

    new_state = CanonicalSceneState(
        scene=survivors,
        prev_state=cur_state,
        frame_index=k,
        telemetry=state.telemetry + [tele],
        max_tokens=max_tokens,
    )
    return new_state, renders


def run_stream(frames, predictor: Predictor, cam: OrthoCamera, *,
               render_times=(1.0,), eps_prune: float = EPS_PRUNE,
               strict: bool = False, threads: int = 0, on_step=None,
               initial_state: CanonicalSceneState | None = None):
    """Consume a frame sequence; constant memory in stream length.

    on_step(state, renders) is called after init (with the frame-0 render)
    and after every step; renders are discarded afterwards. In non-strict
    mode a failing step is logged and skipped, continuing from the last good
    state. Returns the final state.

    With initial_state (a loaded checkpoint) the init phase is skipped and
    frames are treated as the remainder of the stream, starting at
    initial_state.frame_index + 1.
    """
    frames = iter(frames)
    if initial_state is not None:
        state = initial_state
    else:
        try:
            first = next(frames)
        except StopIteration:
            raise DynsplatError("stream needs at least one frame") from None
        state = init(first, predictor)
        if on_step is not None:
            first_render = [(0.0, render_at(state.scene, 0.0, cam, threads=threads))]
            on_step(state, first_render)
    for frame in frames:
        try:
            state, renders = step(state, frame, predictor, cam,
                                  render_times=render_times, eps_prune=eps_prune,
                                  threads=threads)
        except Exception:
            if strict:
                raise
            log.exception("step after frame %d failed; continuing", state.frame_index)
            continue
        if on_step is not None:
            on_step(state, renders)
    return state


def save_checkpoint(path, state: CanonicalSceneState) -> None:
    from .io import dumps_json, scene_to_dict
    from pathlib import Path

    doc = scene_to_dict(state.scene, frame_time=float(state.frame_index))
    doc = {"frame_index": state.frame_index, **doc}
    Path(path).write_text(dumps_json(doc) + "\n")


def load_checkpoint(path, predictor: Predictor,
                    frame: FrameTarget | None = None) -> CanonicalSceneState:
    """Rebuild a state from a checkpoint; the predictor reconstructs its own
    stored payload (the fixture backend needs no frame data for this)."""
    import json
    from pathlib import Path

    from .io import FormatError, scene_from_dict

    doc = json.loads(Path(path).read_text())
    if "frame_index" not in doc:
        raise FormatError(f"checkpoint missing frame_index: {path}")
    k = int(doc["frame_index"])
    scene, _ = scene_from_dict(doc)
    n = len(scene)
    return CanonicalSceneState(
        scene=scene,
        prev_state=predictor.restore_state(k, frame),
        frame_index=k,
        telemetry=[],
        max_tokens=n,
    )
