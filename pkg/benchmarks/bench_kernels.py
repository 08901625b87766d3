"""Compare the compiled and pure-Python tensor-product kernels.

    python benchmarks/bench_kernels.py [--repeat 20]

Times forward and backward on the programs that dominate training (the
shape network's convolutions and the charged-particle layer), checks that
both backends agree, and prints one row per program and backend.
"""
import argparse
import time

import numpy as np

from relaxed_e3 import kernels
from relaxed_e3.experiments import em_network, shape_network


def programs():
    shape = shape_network()
    em = em_network()
    yield "shape layer0 conv", shape.layers[0].conv_table.program, 1
    yield "shape layer1 conv", shape.layers[1].conv_table.program, 1
    yield "shape filter", shape.layers[0].filter_product.program, 1
    yield "em conv (batch 50)", em.layers[0].conv_table.program, 50
    yield "em fuse (batch 50)", em.layers[0].fuse_table.program, 50


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=20)
    args = parser.parse_args()
    rng = np.random.default_rng(0)
    backends = [b for b in ("python", "compiled") if b in kernels.BACKENDS]
    if "compiled" not in backends:
        print("compiled extension not built; timing the fallback only")
    print(f"{'program':24s} {'nnz':>7s} {'batch':>5s} {'backend':>9s} {'forward us':>11s} {'backward us':>12s}")
    for name, prog, batch in programs():
        x = rng.normal(size=(batch, prog.dim_in))
        y = rng.normal(size=(batch, prog.dim_filter))
        w = rng.normal(size=(batch, prog.num_weights))
        g = rng.normal(size=(batch, prog.dim_out))
        results = {}
        for b in backends:
            fwd, bwd = kernels.BACKENDS[b]
            results[b] = (fwd(prog, x, y, w), bwd(prog, g, x, y, w))
            tf = best_of(lambda: fwd(prog, x, y, w), args.repeat)
            tb = best_of(lambda: bwd(prog, g, x, y, w), args.repeat)
            print(f"{name:24s} {len(prog):7d} {batch:5d} {b:>9s} {tf * 1e6:11.1f} {tb * 1e6:12.1f}")
        if len(results) == 2:
            (fa, ba), (fb, bb) = results["python"], results["compiled"]
            diff = max(np.abs(fa - fb).max(), *(np.abs(p - q).max() for p, q in zip(ba, bb)))
            print(f"{'':24s} max |python - compiled| = {diff:.1e}")


if __name__ == "__main__":
    main()
