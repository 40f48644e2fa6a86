"""Compare the compiled and numpy kernels on transition-counting workloads.

    python benchmarks/bench_kernels.py [--units 500] [--samples 65536]
"""

import argparse
import time

import numpy as np

from netsense import _kernels_py

try:
    from netsense import _kernels as _compiled
except ImportError:
    _compiled = None


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def workloads(mod, pre, bounds, chunk, codes_grid):
    def codes():
        mod.region_codes(pre, bounds)

    def transitions():
        per_neuron = np.zeros(pre.shape[1], dtype=np.int64)
        per_arc = np.zeros(pre.shape[0], dtype=np.int64)
        prev = None
        for s in range(0, pre.shape[0], chunk):
            prev = mod.accumulate_transitions(pre[s : s + chunk], bounds, prev, per_neuron, per_arc[s : s + chunk])

    def mask():
        mod.neighbor_mismatch_mask(codes_grid)

    return {"region_codes": codes, "accumulate_transitions": transitions, "neighbor_mismatch_mask": mask}


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--units", type=int, default=500)
    parser.add_argument("--samples", type=int, default=65536)
    parser.add_argument("--chunk", type=int, default=4096)
    parser.add_argument("--resolution", type=int, default=256)
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args(argv)
    rng = np.random.default_rng(0)
    # a slowly varying signal, like preactivations along a finely sampled loop
    t = np.linspace(0, 2 * np.pi, args.samples, endpoint=False)[:, None]
    pre = np.sin(t * rng.integers(1, 40, args.units) + rng.uniform(0, 2 * np.pi, args.units)) * 3.0
    bounds = np.array([0.0, 6.0])
    codes_grid = (rng.random((args.resolution, args.resolution, 100)) < 0.01).astype(np.int8)

    backends = [("numpy", _kernels_py)] + ([("cython", _compiled)] if _compiled else [])
    results = {name: {k: best_of(fn, args.repeat) for k, fn in workloads(mod, pre, bounds, args.chunk, codes_grid).items()}
               for name, mod in backends}
    print(f"{args.samples} samples x {args.units} units, grid {args.resolution}^2 x 100 codes, best of {args.repeat}")
    print(f"{'kernel':<26}" + "".join(f"{name:>12}" for name, _ in backends) + ("     speedup" if _compiled else ""))
    for kernel in results["numpy"]:
        line = f"{kernel:<26}" + "".join(f"{results[name][kernel] * 1e3:>10.1f}ms" for name, _ in backends)
        if _compiled:
            line += f"{results['numpy'][kernel] / results['cython'][kernel]:>11.1f}x"
        print(line)
    if _compiled is None:
        print("compiled extension not built; only the numpy backend was timed")


if __name__ == "__main__":
    main()
