"""Compare the compiled and pure-Python kernel backends.

    python benchmarks/bench_kernels.py [--repeat 5] [--full]

Times each hot kernel on training-sized inputs and, with ``--full``, one
forward/backward pass of the default model on a 256 x 256 crop per backend.
"""

import argparse
import importlib
import os
import subprocess
import sys
import time

import numpy as np

from blurkp import kernels


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def kernel_cases(rng):
    x = rng.normal(size=(256, 256, 64)).astype(np.float32)
    g = rng.normal(size=x.shape).astype(np.float32)
    x2 = x.reshape(-1, 64)
    gamma, beta = np.ones(64, np.float32), np.zeros(64, np.float32)
    _, xhat, rstd = kernels.layer_norm_forward(x2, gamma, beta, 1e-6, backend="python")
    n = 20000
    ii, jj = rng.integers(0, 1000, n), rng.integers(0, 1000, n)
    ys, xs = rng.integers(0, 256, 5000), rng.integers(0, 256, 5000)
    px, py = rng.uniform(-10, 10, 20000), rng.uniform(-10, 10, 20000)
    w = rng.uniform(0, 1, 20000)
    return {
        "gelu_forward 4M": lambda b: kernels.gelu_forward(x, backend=b),
        "gelu_backward 4M": lambda b: kernels.gelu_backward(x, g, backend=b),
        "layer_norm_forward 65k x 64": lambda b: kernels.layer_norm_forward(x2, gamma, beta, 1e-6, backend=b),
        "layer_norm_backward 65k x 64": lambda b: kernels.layer_norm_backward(g.reshape(-1, 64), xhat, rstd, gamma,
                                                                             backend=b),
        "greedy_match 20k pairs": lambda b: kernels.greedy_match(ii, jj, 1000, 1000, backend=b),
        "nms_disk 5k points": lambda b: kernels.nms_disk(ys, xs, 256, 256, 4.0, backend=b),
        "splat_bilinear 20k samples": lambda b: kernels.splat_bilinear(px, py, w, 25, backend=b),
    }


FULL_PASS = """
import time, numpy as np
from blurkp import kernels, tensorgrad as tg
from blurkp.model import build_model, score_map
kernels.tune_allocator()
m = build_model(seed=0)
img = np.random.default_rng(0).uniform(0, 1, (256, 256)).astype(np.float32)
target = tg.Tensor(np.zeros((256, 256, 1), np.float32))
best = 1e9
for _ in range({repeat}):
    t0 = time.perf_counter()
    with tg.Graph() as g:
        loss = tg.mse_loss(score_map(m, img), target)
    tg.backward(g, loss)
    best = min(best, time.perf_counter() - t0)
print(kernels.BACKEND, best)
"""


def full_pass(backend, repeat):
    env = dict(os.environ, BLURKP_PURE_PYTHON="1" if backend == "python" else "0")
    out = subprocess.run([sys.executable, "-c", FULL_PASS.format(repeat=repeat)], env=env,
                         capture_output=True, text=True, check=True).stdout.split()
    return float(out[1])


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--full", action="store_true", help="also time a model forward/backward per backend")
    args = ap.parse_args()
    names = kernels.backends()
    if "cython" not in names:
        print("compiled backend not built; only the Python fallback is available")
    rng = np.random.default_rng(0)
    print(f"{'kernel':32s}" + "".join(f"{n:>12s}" for n in names) + ("     speedup" if len(names) > 1 else ""))
    for label, fn in kernel_cases(rng).items():
        t = [best_of(lambda: fn(b), args.repeat) for b in names]
        row = f"{label:32s}" + "".join(f"{v * 1e3:10.2f}ms" for v in t)
        if len(t) > 1:
            row += f"{t[0] / t[1]:11.1f}x"
        print(row)
    if args.full:
        t = [full_pass(b, max(2, args.repeat // 2)) for b in names]
        row = f"{'model fwd+bwd 256x256':32s}" + "".join(f"{v * 1e3:10.0f}ms" for v in t)
        if len(t) > 1:
            row += f"{t[0] / t[1]:11.1f}x"
        print(row)


if __name__ == "__main__":
    importlib.invalidate_caches()
    main()
