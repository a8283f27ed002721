"""Benchmark the numba kernels against their numpy fallbacks.

    python -m eventness.bench [--repeat N] [--train-steps N]

Kernel timings run both variants in-process on detector-sized inputs.  With
``--train-steps`` the full training step is also timed in two subprocesses,
one per backend (the backend is fixed at import time).
"""

import argparse
import os
import subprocess
import sys
import time

import numpy as np

from . import _kernels as K


def _time(fn, repeat):
    fn()  # warm-up / JIT compile
    best = float("inf")
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t)
    return best


def kernel_cases(rng):
    x = rng.standard_normal((16, 130, 216))
    cols = K.im2col_np(x, 3, 3, 1)
    pooled_in = rng.standard_normal((32, 64, 107))
    feat = rng.standard_normal((64, 8, 13))
    r0 = rng.integers(0, 7, 64)
    c0 = rng.integers(0, 12, 64)
    rois = np.stack([r0, np.minimum(r0 + rng.integers(1, 5, 64), 8), c0, np.minimum(c0 + rng.integers(1, 6, 64), 13)], 1)
    _, arg = K.roi_pool_np(feat, rois, 7)
    g = rng.standard_normal((64, 64, 7, 7))
    t0 = rng.uniform(0, 200, 900)
    f0 = rng.uniform(0, 100, 900)
    boxes = np.stack([t0, f0, t0 + rng.uniform(5, 60, 900), f0 + rng.uniform(5, 40, 900)], 1)
    order = np.argsort(-rng.uniform(size=900), kind="stable")
    return {
        "im2col 16x130x216 k3": (lambda f: f(x, 3, 3, 1), "im2col"),
        "col2im 16x130x216 k3": (lambda f: f(cols, x.shape, 3, 3, 1), "col2im"),
        "maxpool 32x64x107 w2": (lambda f: f(pooled_in, 2, 2), "maxpool"),
        "roi_pool 64 rois P7": (lambda f: f(feat, rois, 7), "roi_pool"),
        "roi_pool_grad 64 rois": (lambda f: f(g, arg, feat.shape), "roi_pool_grad"),
        "nms 900 boxes": (lambda f: f(boxes, order, 0.7), "nms"),
    }


def run_kernels(repeat=5, out=sys.stdout):
    rng = np.random.default_rng(0)
    print(f"{'kernel':<24}{'numpy ms':>12}{'numba ms':>12}{'speedup':>10}", file=out)
    rows = []
    for label, (call, name) in kernel_cases(rng).items():
        t_np = _time(lambda: call(getattr(K, f"{name}_np")), repeat)
        if K.HAVE_NUMBA:
            t_nb = _time(lambda: call(getattr(K, f"{name}_nb")), repeat)
            print(f"{label:<24}{1e3 * t_np:>12.3f}{1e3 * t_nb:>12.3f}{t_np / t_nb:>9.1f}x", file=out)
        else:
            t_nb = float("nan")
            print(f"{label:<24}{1e3 * t_np:>12.3f}{'n/a':>12}", file=out)
        rows.append((label, t_np, t_nb))
    return rows


_TRAIN_SNIPPET = """
import time, numpy as np
from eventness import synth, pipeline, _kernels
rng = np.random.default_rng(0)
bank = synth.tone_burst_bank([synth.ClassSpec('a', 800.0, 0.0, (0.5, 2.0), 3)], rng, per_class=2)
bgs = synth.noise_background_bank(1, 12.0, rng)
scenes, _ = synth.synthesize_dataset(2, synth.SceneSpec(), bank, bgs, seed=0)
data = [(s.waveform, s.annotations) for s in scenes]
pipeline.train(data, pipeline.TrainConfig(iterations=2))
t = time.perf_counter()
pipeline.train(data, pipeline.TrainConfig(iterations={steps}))
print(_kernels.backend(), (time.perf_counter() - t) / {steps})
"""


def run_training(steps):
    for disable in ("0", "1"):
        env = dict(os.environ, EVENTNESS_DISABLE_JIT=disable)
        res = subprocess.run(
            [sys.executable, "-c", _TRAIN_SNIPPET.format(steps=steps)],
            env=env,
            capture_output=True,
            text=True,
            check=True,
        )
        name, per_step = res.stdout.split()
        print(f"train step ({name:>5}): {1e3 * float(per_step):8.1f} ms")


def main(argv=None):
    parser = argparse.ArgumentParser(description="numba vs numpy kernel benchmark")
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--train-steps", type=int, default=0)
    args = parser.parse_args(argv)
    print(f"active backend: {K.backend()}")
    run_kernels(args.repeat)
    if args.train_steps:
        run_training(args.train_steps)


if __name__ == "__main__":
    main()
