"""Compare the compiled and numpy im2col/col2im kernels.

Usage: python3 benchmarks/bench_kernels.py [--repeat N]

Prints one row per kernel/shape with the best-of-N time for each backend and
the speedup, then times a full training step under each backend.
"""
import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from emdnet import _kernels_py

try:
    from emdnet import _ckernels
except ImportError:
    _ckernels = None

# (label, N, C, H, kernel, stride, padding) from the 32px toy and 80px paper models
SHAPES = [
    ("toy first conv", 8, 4, 32, 5, 1, 2),
    ("toy stride-2", 8, 16, 16, 3, 2, 1),
    ("paper first conv", 2, 10, 80, 5, 1, 2),
    ("paper stride-2", 2, 64, 80, 3, 2, 1),
]

STEP = """
import numpy as np
from emdnet.config import TrainConfig
from emdnet.dataset import build_corpus
from emdnet.model import build_model
from emdnet.optim import AdamState
from emdnet.training import train_step, training_pool
cfg = TrainConfig()
corpus = build_corpus(8, 16, 32, 0)
pool = training_pool(corpus, cfg)
model = build_model(cfg.arch()).train()
adam = AdamState.for_params(model.params)
train_step(model, adam, corpus, pool[:8], cfg)
"""


def best(fn, repeat):
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def bench_kernels(repeat):
    print(f"{'kernel':<8} {'shape':<18} {'numpy ms':>10} {'cython ms':>10} {'speedup':>8}")
    rng = np.random.default_rng(0)
    for label, n, c, h, k, s, p in SHAPES:
        xp = np.pad(rng.normal(size=(n, c, h, h)).astype(np.float32), ((0, 0), (0, 0), (p, p), (p, p)))
        ho = (h + 2 * p - k) // s + 1
        hp = h + 2 * p
        cols = _kernels_py.im2col(xp, k, k, s, ho, ho)
        for name, args in (("im2col", (xp, k, k, s, ho, ho)), ("col2im", (cols, c, hp, hp, k, k, s, ho, ho))):
            t_py = best(lambda: getattr(_kernels_py, name)(*args), repeat)
            if _ckernels is None:
                print(f"{name:<8} {label:<18} {t_py * 1e3:>10.2f} {'n/a':>10} {'n/a':>8}")
                continue
            t_c = best(lambda: getattr(_ckernels, name)(*args), repeat)
            print(f"{name:<8} {label:<18} {t_py * 1e3:>10.2f} {t_c * 1e3:>10.2f} {t_py / t_c:>7.1f}x")


def bench_step(repeat):
    timer = (f"import timeit\nsetup = {STEP!r}\n"
             f"print(min(timeit.repeat('train_step(model, adam, corpus, pool[:8], cfg)', setup, "
             f"number=5, repeat={repeat}, globals=None)) / 5)")
    results = {}
    for backend, env in (("numpy", {"EMDNET_PURE_PYTHON": "1"}), ("cython", {})):
        out = subprocess.run([sys.executable, "-c", timer], env=dict(os.environ, **env),
                             capture_output=True, text=True, check=True)
        results[backend] = float(out.stdout.strip())
    print(f"\ntoy training step (batch 8, 32px, C=8, r=4): numpy {results['numpy'] * 1e3:.1f} ms, "
          f"cython {results['cython'] * 1e3:.1f} ms ({results['numpy'] / results['cython']:.2f}x)")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    bench_kernels(args.repeat)
    bench_step(max(1, args.repeat // 2))


if __name__ == "__main__":
    main()
