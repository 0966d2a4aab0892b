"""Time the numpy and numba kernels side by side, plus one training epoch per backend.

    python benchmarks/bench_kernels.py [--repeat 50]

Kernel timings call both implementations directly. The epoch timing runs in
a subprocess per backend because the switch is read once at import.
"""
import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from tcn_seg import kernels

EPOCH_SNIPPET = """
import time
from tcn_seg import kernels, models, synth
data = synth.gen_composition(synth.CompositionSpec(seed=0)).train
spec = models.EDTCNSpec(5, 3, num_layers=2, filter_duration=15)
cfg = models.TrainConfig(epochs=1, seed=0)
models.train(models.build(spec, seed=0), data[:2], cfg)  # warm-up / jit
t = time.perf_counter()
models.train(models.build(spec, seed=0), data, cfg)
print(kernels.BACKEND, time.perf_counter() - t)
"""


def cases(rng):
    x = rng.normal(size=(128, 1000)).astype(np.float32)
    offsets = np.arange(-7, 8, dtype=np.int64)
    xp = np.pad(x, ((0, 0), (7, 7)))
    dcols = rng.normal(size=(128, 15, 1000)).astype(np.float32)
    dy_pool = rng.normal(size=(128, 500)).astype(np.float32)
    idx = kernels.NUMPY_KERNELS.maxpool_fwd(x, False)[1]
    dy = rng.normal(size=x.shape).astype(np.float32)
    eps = np.float32(1e-5)
    a = rng.integers(0, 10, 300)
    b = rng.integers(0, 10, 300)
    p = rng.normal(size=(128, 128, 15)).astype(np.float32)
    f = np.float32
    adam_scalars = (f(1e-3), f(0.9), f(0.1), f(0.999), f(0.001), f(0.1), f(0.001), f(1e-8))
    return {
        "im2col": lambda k: k.im2col(xp, offsets, 7, 1000),
        "col2im": lambda k: k.col2im(dcols, offsets, 7, 1014),
        "maxpool_fwd": lambda k: k.maxpool_fwd(x, False),
        "maxpool_bwd": lambda k: k.maxpool_bwd(dy_pool, idx, 1000),
        "nrelu_fwd": lambda k: k.nrelu_fwd(x, eps),
        "nrelu_bwd": lambda k: k.nrelu_bwd(dy, x, eps),
        "levenshtein": lambda k: k.levenshtein(a, b),
        "adam": lambda k: k.adam(p, p, np.zeros_like(p), np.zeros_like(p), *adam_scalars),
    }


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--repeat", type=int, default=50)
    args = parser.parse_args()
    if kernels.NUMBA_KERNELS is None:
        sys.exit("numba is not installed; nothing to compare")

    impls = {"numpy": kernels.NUMPY_KERNELS, "numba": kernels.NUMBA_KERNELS}
    print(f"{'kernel':<12} {'numpy ms':>10} {'numba ms':>10} {'speedup':>8}")
    for name, call in cases(np.random.default_rng(0)).items():
        call(impls["numba"])  # compile
        ms = {}
        for backend, impl in impls.items():
            ms[backend] = 1e3 * min(timeit.repeat(lambda: call(impl), number=1, repeat=args.repeat))
        print(f"{name:<12} {ms['numpy']:>10.3f} {ms['numba']:>10.3f} {ms['numpy'] / ms['numba']:>7.1f}x")

    print("\none epoch, ED-TCN d=15 L=2, 50 synthetic sequences of 150 frames")
    for flag in ("0", "1"):
        out = subprocess.run(
            [sys.executable, "-c", EPOCH_SNIPPET],
            env=dict(os.environ, TCN_NUMBA=flag),
            capture_output=True,
            text=True,
            check=True,
        ).stdout.split()
        print(f"  {out[0]:<6} {float(out[1]):.2f}s")


if __name__ == "__main__":
    main()
