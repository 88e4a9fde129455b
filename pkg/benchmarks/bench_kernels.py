"""Time the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Shapes match training and evaluation defaults: batches of 256 samples, a
2000-step rollout to the total horizon and the 9488 parameters of a
64-wide hypermodel.
"""
import argparse
import timeit

import numpy as np

from localgen import _fallback

try:
    from localgen import _kernels
except ImportError:
    _kernels = None


def cases():
    rng = np.random.default_rng(0)
    v = np.ascontiguousarray(np.c_[np.ones(256), rng.uniform(-0.5, 0.5, (256, 3))])
    vn = np.ascontiguousarray(np.c_[np.ones(256), rng.uniform(-0.5, 0.5, (256, 3))])
    M = np.eye(4) + 0.01 * rng.normal(size=(4, 4))
    Ms = np.ascontiguousarray(np.eye(4) + 0.01 * rng.normal(size=(256, 4, 4)))
    Mt = np.ascontiguousarray(np.eye(4) + 0.001 * rng.normal(size=(2000, 4, 4)))
    v0 = np.array([1.0, 0.2, 0.3, 0.4])
    n = 9488
    p, g = rng.normal(size=n), rng.normal(size=n)
    m, s = np.zeros(n), np.zeros(n)
    return {
        "linear_loss_grad (B=256)": lambda k: k.linear_loss_grad(M, v, vn, False),
        "batched_loss_grad (B=256)": lambda k: k.batched_loss_grad(Ms, v, vn, False),
        "rollout_fixed (2000 steps)": lambda k: k.rollout_fixed(M, v0, 2000),
        "rollout_varying (2000 steps)": lambda k: k.rollout_varying(Mt, v0),
        "adam_update (9488 params)": lambda k: k.adam_update(p, g, m, s, 1e-3, 0.9, 0.999, 1e-8, 10),
    }


def best_time(fn, repeat):
    timer = timeit.Timer(fn)
    number, _ = timer.autorange()
    return min(timer.repeat(repeat, number)) / number


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    if _kernels is None:
        print("compiled extension not built; only the fallback is available")
    print(f"{'kernel':<30} {'python [us]':>12} {'cython [us]':>12} {'speedup':>8}")
    for name, call in cases().items():
        py = best_time(lambda: call(_fallback), args.repeat) * 1e6
        if _kernels is None:
            print(f"{name:<30} {py:12.1f} {'-':>12} {'-':>8}")
            continue
        cy = best_time(lambda: call(_kernels), args.repeat) * 1e6
        print(f"{name:<30} {py:12.1f} {cy:12.1f} {py / cy:7.1f}x")


if __name__ == "__main__":
    main()
