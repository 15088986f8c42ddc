"""Compiled vs numpy elementwise kernels, plus one FFN forward/backward per variant.

    python benchmarks/bench_kernels.py [--size N] [--repeat R]
"""

import argparse
import importlib
import timeit

import numpy as np

from glulab import _kernels_py

try:
    _kernels_c = importlib.import_module("glulab._kernels")
except ImportError:
    _kernels_c = None

KERNELS = [
    ("erf", lambda k, x: k.erf(x)),
    ("sigmoid", lambda k, x: k.sigmoid(x)),
    ("gelu", lambda k, x: k.gelu(x)),
    ("gelu_grad", lambda k, x: k.gelu_grad(x)),
    ("swish", lambda k, x: k.swish(x, 1.0)),
    ("swish_grad", lambda k, x: k.swish_grad(x, 1.0)),
]


def best(fn, repeat):
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def bench_kernels(size, repeat):
    rng = np.random.default_rng(0)
    print(f"elementwise kernels, {size} elements, best of {repeat} (ms)")
    print(f"{'kernel':<12} {'dtype':<8} {'python':>9} {'cython':>9} {'speedup':>8}")
    for dtype in (np.float32, np.float64):
        x = rng.normal(0, 3, size).astype(dtype)
        for name, call in KERNELS:
            t_py = best(lambda: call(_kernels_py, x), repeat)
            if _kernels_c is None:
                print(f"{name:<12} {np.dtype(dtype).name:<8} {1e3 * t_py:9.3f} {'n/a':>9}")
                continue
            t_c = best(lambda: call(_kernels_c, x), repeat)
            print(f"{name:<12} {np.dtype(dtype).name:<8} {1e3 * t_py:9.3f} {1e3 * t_c:9.3f} {t_py / t_c:7.2f}x")


def bench_ffn(repeat):
    from glulab import ops
    from glulab.ffn import FfnVariant, init_ffn, matched_hidden_width
    from glulab.tensor import precision, tensor

    rng = np.random.default_rng(0)
    print(f"\nFFN forward+backward, 16x64 tokens, d_model 64, d_ff 192 (gated {matched_hidden_width(192)}), float32 (ms)")
    with precision("float32"):
        x = tensor(rng.normal(size=(16, 64, 64)))
        for v in FfnVariant:
            layer = init_ffn(v, 64, matched_hidden_width(192) if v.gated else 192, rng)

            def step():
                loss = ops.reduce_sum(layer(x))
                loss.backward()
                for p in layer.parameters().values():
                    p.grad = None

            print(f"{v.value:<9} {1e3 * best(step, repeat):8.3f}")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--size", type=int, default=1_000_000)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    bench_kernels(args.size, args.repeat)
    bench_ffn(args.repeat)


if __name__ == "__main__":
    main()
