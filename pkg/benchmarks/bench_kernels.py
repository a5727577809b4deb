"""Time the compiled kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat 20]

Shapes mirror one adaptation batch: 16 patches of 16 bands at 32x32, a 15x15
blur-kernel estimate and 3x3 convolution layers. Also times a short
adaptation run with each backend by re-importing in a subprocess.
"""
import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from u2k import _fallback

try:
    from u2k import _kernels
except ImportError:
    _kernels = None


def cases(rng):
    x = rng.random((16, 16, 46, 46), dtype=np.float32)
    k = rng.random((15, 15), dtype=np.float32)
    g = rng.random((16, 16, 32, 32), dtype=np.float32)
    a = rng.random((16, 32, 34, 34), dtype=np.float32)
    cols = rng.random((32, 3, 3, 16, 32, 32), dtype=np.float32)
    return {
        "depthwise_conv2d 15x15": lambda m: m.depthwise_conv2d(x, k),
        "depthwise grad_input": lambda m: m.depthwise_conv2d_grad_input(g, k),
        "depthwise grad_kernel": lambda m: m.depthwise_conv2d_grad_kernel(x, g, 15, 15),
        "im2col 3x3": lambda m: m.im2col(a, 3, 3),
        "col2im 3x3": lambda m: m.col2im(cols, 34, 34),
    }


STEP = """
import time, numpy as np
from u2k import kernels, tensor as T
from u2k.data import synth_hsi
from u2k.degradation import DegradationSpec, make_gaussian_psf, synth_srf, apply_observation
from u2k.fusion import FusionNet
from u2k.u2k import U2kConfig, gao_train
spec = DegradationSpec(make_gaussian_psf(7, 3.0), synth_srf(3, 16, 1.0), 4)
cubes = [synth_hsi(i, 64, 64, 16, 8) for i in range(4)]
X, Y = apply_observation(np.stack([c.data for c in cubes[:1]]), spec)
net = FusionNet(16, 3, 4, seed=0).freeze()
cfg = U2kConfig(known=spec, epochs_a=5, epochs_b=1)
t = time.perf_counter(); gao_train(net, cubes, X, Y, cfg); print(kernels.BACKEND, time.perf_counter() - t)
"""


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    impls = [("python", _fallback)] + ([("cython", _kernels)] if _kernels else [])
    print(f"{'kernel':26s}" + "".join(f"{n:>12s}" for n, _ in impls) + ("     speedup" if _kernels else ""))
    for name, fn in cases(rng).items():
        times = []
        for _, mod in impls:
            fn(mod)
            times.append(min(timeit.repeat(lambda: fn(mod), number=1, repeat=args.repeat)) * 1e3)
        line = f"{name:26s}" + "".join(f"{t:10.2f}ms" for t in times)
        if len(times) == 2:
            line += f"{times[0] / times[1]:11.1f}x"
        print(line)
    print("\none adaptation run (5 + 1 epochs, 4 cubes of 64x64x16):")
    for pure in ("1", ""):
        env = dict(os.environ, U2K_PURE_PYTHON=pure)
        out = subprocess.run([sys.executable, "-c", STEP], env=env, capture_output=True, text=True, check=True)
        backend, secs = out.stdout.split()
        print(f"  {backend:8s} {float(secs):7.2f}s")


if __name__ == "__main__":
    main()
