"""Time the compiled and pure-Python kernel backends on grid-sized patterns.

    python3 benchmarks/bench_kernels.py [--rows 8] [--cols 8] [--horizon 20] [--d 2]

The patterns are those of a localized SLS response: the FIR realization of
the bottom layer and the row updates of the localized MPC solver.
"""

import argparse
import timeit

import numpy as np

from slsgrid import kernels
from slsgrid.kernels import Pattern
from slsgrid.plant import generate_plant, locality_mask


def cases(rows, cols, horizon, d, seed=0):
    plant = generate_plant(rows, cols, seed)
    mask = locality_mask(plant.topology, d)
    rng = np.random.default_rng(seed)
    for label, support in (("state", mask.state_support), ("input", mask.input_support)):
        pat = Pattern(support)
        vals = rng.normal(size=(horizon, pat.nnz))
        hist = rng.normal(size=(horizon, support.shape[1]))
        vec = rng.normal(size=support.shape[1])
        coeff = rng.normal(size=(horizon, support.shape[0]))
        yield label, pat, vals, hist, vec, coeff


def bench(args):
    print(f"{args.rows}x{args.cols} grid, T={args.horizon}, d={args.d}; "
          f"backends: {', '.join(sorted(kernels.BACKENDS))}")
    print(f"{'pattern':<8}{'kernel':<9}" + "".join(f"{b:>12}" for b in sorted(kernels.BACKENDS))
          + f"{'speedup':>10}")
    for label, pat, vals, hist, vec, coeff in cases(args.rows, args.cols, args.horizon, args.d):
        for kernel in ("fir", "rowdot", "rowaxpy"):
            times = {}
            for name in sorted(kernels.BACKENDS):
                impl = kernels.backend(name)
                work = vals.copy()
                call = {
                    "fir": lambda: pat.fir(work, hist, impl=impl),
                    "rowdot": lambda: pat.rowdot(work, vec, impl=impl),
                    "rowaxpy": lambda: pat.rowaxpy(work, coeff, vec, impl=impl),
                }[kernel]
                times[name] = min(timeit.repeat(call, number=args.number, repeat=3)) / args.number
            speed = times["python"] / times["cython"] if "cython" in times else float("nan")
            print(f"{label:<8}{kernel:<9}" + "".join(f"{times[b] * 1e6:>10.1f}us"
                                                      for b in sorted(times)) + f"{speed:>9.1f}x")


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    parser.add_argument("--rows", type=int, default=8)
    parser.add_argument("--cols", type=int, default=8)
    parser.add_argument("--horizon", type=int, default=20)
    parser.add_argument("--d", type=int, default=2)
    parser.add_argument("--number", type=int, default=200)
    bench(parser.parse_args(argv))


if __name__ == "__main__":
    main()
