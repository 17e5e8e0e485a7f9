"""Synthetic ground-truth scenes: blob lifecycle, rendering, run-dir IO."""

import json

import numpy as np
import pytest

from dynsplat.errors import SpecError
from dynsplat.render import render
from dynsplat.synth import (
    Blob,
    SceneSpec,
    SynthScene,
    load_run_dir,
    make_scene,
    perturb_depth,
    write_run_dir,
)


def small_spec(**over):
    base = dict(seed=3, width=32, height=32, n_frames=3, n_blobs=2,
                velocity_scale=0.05)
    base.update(over)
    return SceneSpec(**base)


def test_blob_presence_window():
    b = Blob(position=(1, 1, 1.5), appear_frame=1, vanish_frame=3)
    assert not b.present_at(0.0)
    assert not b.present_at(0.9)
    assert b.present_at(1.0)
    assert b.present_at(2.5)
    assert not b.present_at(3.0)
    assert not b.present_at(4.0)
    always = Blob(position=(1, 1, 1.5))
    assert always.present_at(0.0) and always.present_at(100.0)


def test_blob_center_is_linear():
    b = Blob(position=(0.5, 1.0, 1.5), velocity=(0.1, -0.2, 0.0))
    np.testing.assert_allclose(b.center_at(0.0), (0.5, 1.0, 1.5))
    np.testing.assert_allclose(b.center_at(2.0), (0.7, 0.6, 1.5))


def test_generated_blobs_are_seeded():
    s1 = SynthScene(small_spec())
    s2 = SynthScene(small_spec())
    s3 = SynthScene(small_spec(seed=4))
    assert s1.blobs == s2.blobs
    assert s1.blobs != s3.blobs
    assert len(s1.blobs) == 2
    for b in s1.blobs:
        assert 1.0 <= b.position[2] <= 3.0
        assert np.all(np.abs(b.velocity) <= 0.05 + 1e-12)


def test_excessive_velocity_rejected():
    with pytest.raises(SpecError):
        SynthScene(small_spec(n_frames=5, velocity_scale=0.2))


def test_blob_leaving_view_rejected():
    escaping = Blob(position=(1.9, 1.0, 1.5), velocity=(0.2, 0.0, 0.0))
    with pytest.raises(SpecError):
        SynthScene(small_spec(n_blobs=None, blobs=(escaping,), n_frames=2))
    # The same blob is fine when the clip ends before it exits.
    SynthScene(small_spec(n_blobs=None, blobs=(escaping,), n_frames=1))


def test_static_at_counts_and_background():
    fading = Blob(position=(0.8, 0.8, 1.4), vanish_frame=1)
    stays = Blob(position=(1.2, 1.2, 2.2), color=(0.2, 0.85, 0.25))
    spec = small_spec(n_blobs=None, blobs=(fading, stays), n_frames=2)
    scene = SynthScene(spec)
    assert len(scene.static_at(0.0)) == 3          # 2 blobs + background
    assert len(scene.static_at(1.0)) == 2          # fading blob gone
    assert len(scene.static_at(0.0, foreground_only=True)) == 2
    assert len(scene.static_at(0.0, include_background=False)) == 2
    bare = SynthScene(small_spec(background=False))
    assert len(bare.static_at(0.0)) == 2
    # Background row sits behind every blob.
    full = scene.static_at(0.0)
    assert full.mu[-1, 2] > max(fading.position[2], stays.position[2])


def test_frames_match_direct_render():
    scene = SynthScene(small_spec())
    frames = scene.frames()
    assert len(frames) == 3
    buf = render(scene.static_at(1.0), scene.cam)
    np.testing.assert_array_equal(frames[1].rgb, buf.rgb)
    np.testing.assert_array_equal(frames[1].depth, buf.depth)


def test_mask_is_foreground_footprint_union():
    scene = SynthScene(small_spec())
    mask = scene.mask(0.0)
    fg = render(scene.static_at(0.0, foreground_only=True), scene.cam)
    np.testing.assert_array_equal(mask, (fg.alpha > 0.01).astype(np.float64))
    assert mask.sum() > 0
    # The background plane never enters the mask: corners stay empty.
    assert mask[0, 0] == 0.0


def test_blob_pixel_center():
    b = Blob(position=(0.5, 1.5, 1.5), velocity=(0.1, 0.0, 0.0))
    scene = SynthScene(small_spec(n_blobs=None, blobs=(b,)))
    px, py = scene.blob_pixel_center(0, 0.0)
    assert px == pytest.approx(16 * 0.5)
    assert py == pytest.approx(16 * 1.5)
    px1, _ = scene.blob_pixel_center(0, 1.0)
    assert px1 == pytest.approx(16 * 0.6)


def test_timeline_at_carries_gt_velocities():
    b = Blob(position=(0.8, 1.0, 1.5), velocity=(0.04, -0.03, 0.0))
    scene = SynthScene(small_spec(n_blobs=None, blobs=(b,), n_frames=2))
    dyn = scene.timeline_at(1)
    assert len(dyn) == 2                       # blob + background
    np.testing.assert_allclose(dyn.deform.velocity[0], (0.04, -0.03, 0.0))
    np.testing.assert_array_equal(dyn.deform.velocity[1], (0.0, 0.0, 0.0))
    assert np.all(dyn.deform.t0 == 1.0)
    assert np.all(dyn.deform.gamma1 == 1.0)    # GT blobs never fade mid-interval


def test_make_scene_returns_all_frames():
    scene, frames = make_scene(small_spec(n_frames=4))
    assert isinstance(scene, SynthScene)
    assert len(frames) == 4
    for f in frames:
        assert f.rgb.shape == (32, 32, 3)
        assert f.depth.shape == (32, 32)
        assert f.mask.shape == (32, 32)


def test_perturb_depth_noise_and_seeding():
    _, frames = make_scene(small_spec())
    with pytest.raises(ValueError):
        perturb_depth(frames, -0.1, 0)
    clean = perturb_depth(frames, 0.0, 0)
    for a, b in zip(clean, frames):
        assert a.rgb is b.rgb
        np.testing.assert_array_equal(a.depth, b.depth)
    n1 = perturb_depth(frames, 0.3, 123)
    n2 = perturb_depth(frames, 0.3, 123)
    n3 = perturb_depth(frames, 0.3, 124)
    for a, b, c, orig in zip(n1, n2, n3, frames):
        np.testing.assert_array_equal(a.depth, b.depth)
        assert not np.array_equal(a.depth, c.depth)
        np.testing.assert_array_equal(a.rgb, orig.rgb)
        resid = a.depth - orig.depth
        assert 0.2 < resid.std() < 0.4
        assert abs(resid.mean()) < 0.05


def test_run_dir_round_trip(tmp_path):
    spec = small_spec()
    scene, frames = make_scene(spec)
    manifest = write_run_dir(tmp_path, spec, scene, frames)
    assert manifest["spec"]["n_frames"] == 3
    assert manifest["spec"]["n_blobs"] == 2
    assert manifest["camera"]["fx"] == 16.0
    assert (tmp_path / "manifest.json").exists()

    loaded, loaded_manifest = load_run_dir(tmp_path)
    assert loaded_manifest == json.loads((tmp_path / "manifest.json").read_text())
    assert len(loaded) == 3
    for got, orig in zip(loaded, frames):
        # Depth and mask travel as float32 planes.
        np.testing.assert_array_equal(
            got.depth, orig.depth.astype(np.float32).astype(np.float64))
        np.testing.assert_array_equal(got.mask, orig.mask)
        # RGB goes through 8-bit quantization.
        np.testing.assert_array_equal(
            got.rgb, np.floor(np.clip(orig.rgb, 0, 1) * 255 + 0.5) / 255.0)


def test_load_run_dir_without_manifest(tmp_path):
    spec = small_spec(n_frames=2)
    scene, frames = make_scene(spec)
    write_run_dir(tmp_path, spec, scene, frames)
    (tmp_path / "manifest.json").unlink()
    loaded, manifest = load_run_dir(tmp_path)
    assert manifest is None
    assert len(loaded) == 2
    np.testing.assert_array_equal(
        loaded[1].depth, frames[1].depth.astype(np.float32).astype(np.float64))


def test_run_dir_rewrite_is_byte_identical(tmp_path):
    spec = small_spec()
    scene, frames = make_scene(spec)
    a, b = tmp_path / "a", tmp_path / "b"
    write_run_dir(a, spec, scene, frames)
    write_run_dir(b, spec, scene, frames)
    for p in sorted(a.iterdir()):
        assert (b / p.name).read_bytes() == p.read_bytes()
