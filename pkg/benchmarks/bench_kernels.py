"""Time the compiled and pure-Python local prox kernels on default-scenario cells.

Usage: ``python benchmarks/bench_kernels.py [--repeats N] [--cells S]``.
Prints the median per-solve time for each backend, the speedup and the largest
difference between the two backends' solutions.
"""

import argparse
import statistics
import time

import numpy as np

from fedslice import _kernels_py
from fedslice.model import scale_problem
from fedslice.scenario import ScenarioSpec, generate_scenario

try:
    from fedslice import _kernels as _compiled
except ImportError:
    _compiled = None


def problems(S: int, seed: int = 0):
    sp = scale_problem(generate_scenario(ScenarioSpec(num_cells=S, seed=seed)))
    rng = np.random.default_rng(seed)
    out = []
    for s in range(S):
        data = sp.cell_data(s)
        x0 = _kernels_py.feasible_start(*data)
        center = np.asarray(x0) * rng.uniform(0.8, 1.2, size=len(x0))
        out.append((data, center))
    return out


def time_backend(solve, cases, repeats: int, rho: float = 1.0):
    samples = []
    results = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        for data, center in cases:
            results.append(solve(*data, rho, center))
        samples.append((time.perf_counter() - t0) / len(cases))
    return statistics.median(samples), results[: len(cases)]


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeats", type=int, default=20)
    p.add_argument("--cells", type=int, default=10)
    args = p.parse_args(argv)
    cases = problems(args.cells)
    t_py, r_py = time_backend(_kernels_py.solve_local, cases, args.repeats)
    print(f"python  {t_py * 1e6:10.1f} us / solve")
    if _compiled is None:
        print("cython  extension not built; run `pip install -e . --no-build-isolation`")
        return
    t_cy, r_cy = time_backend(_compiled.solve_local, cases, args.repeats)
    diff = max(float(np.max(np.abs(a[0] - b[0]))) for a, b in zip(r_py, r_cy))
    print(f"cython  {t_cy * 1e6:10.1f} us / solve")
    print(f"speedup {t_py / t_cy:10.1f}x   max |x_py - x_cy| = {diff:.3g}")


if __name__ == "__main__":
    main()
