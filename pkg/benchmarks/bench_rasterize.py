"""Rasterizer backend benchmark: compiled extension vs numpy fallback.

Times the forward render and the gradient pass on random scenes at a few
population/resolution combinations and prints per-backend timings with the
speedup ratio. Run from the repository root:

    python3 benchmarks/bench_rasterize.py [--repeat N] [--threads N]
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from dynsplat import _kernels
from dynsplat.camera import OrthoCamera
from dynsplat.losses import FrameTarget, LossWeights, total_static_loss_grad
from dynsplat.model import StaticSet
from dynsplat.render import render, render_gradients


def random_scene(n: int, rng: np.random.Generator) -> StaticSet:
    quat = rng.normal(size=(n, 4))
    quat /= np.linalg.norm(quat, axis=1, keepdims=True)
    return StaticSet(
        np.column_stack([rng.uniform(0.1, 1.9, (n, 2)), rng.uniform(1.0, 3.0, (n, 1))]),
        rng.uniform(0.02, 0.15, (n, 3)),
        quat,
        rng.uniform(0.2, 0.95, n),
        rng.uniform(0.0, 1.0, (n, 3)),
    )


def time_case(fn, repeat: int) -> float:
    fn()  # warmup
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5, help="timed repetitions (best-of)")
    ap.add_argument("--threads", type=int, default=0, help="rasterizer threads (0 = auto)")
    args = ap.parse_args()

    cases = [(256, 64, 64), (1024, 128, 128), (4096, 256, 256)]
    weights = LossWeights(lambda_depth=0.0)

    print(f"backends available: {', '.join(_kernels.AVAILABLE_BACKENDS)}")
    header = f"{'case':>24} {'pass':>8}" + "".join(
        f" {b:>12}" for b in _kernels.AVAILABLE_BACKENDS)
    if len(_kernels.AVAILABLE_BACKENDS) > 1:
        header += f" {'speedup':>9}"
    print(header)

    rng = np.random.default_rng(0)
    for n, w, h in cases:
        scene = random_scene(n, rng)
        cam = OrthoCamera.canonical(w, h)
        target = FrameTarget(rgb=np.zeros((h, w, 3)), depth=None, mask=None)

        def loss_fn(buf, tgt):
            return total_static_loss_grad(buf, tgt, weights)

        for label, runner in (
            ("forward", lambda b: render(scene, cam, backend=b, threads=args.threads)),
            ("gradient", lambda b: render_gradients(scene, cam, target, loss_fn,
                                                    backend=b, threads=args.threads)),
        ):
            times = {b: time_case(lambda b=b: runner(b), args.repeat)
                     for b in _kernels.AVAILABLE_BACKENDS}
            row = f"{f'{n} splats {w}x{h}':>24} {label:>8}"
            for b in _kernels.AVAILABLE_BACKENDS:
                row += f" {times[b] * 1e3:>10.2f}ms"
            if "cython" in times and "numpy" in times:
                row += f" {times['numpy'] / times['cython']:>8.1f}x"
            print(row)


if __name__ == "__main__":
    main()
