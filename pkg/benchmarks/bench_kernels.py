"""Time the convection assembly kernel with the compiled and NumPy backends.

Usage: python3 benchmarks/bench_kernels.py [--n 8 16 32] [--repeat 5]

For every mesh size the script reports the best-of-``repeat`` time of one
scatter of the convection block into the step matrix, the speed-up of the
compiled backend, and the largest entry difference between backends.
"""
import argparse
import timeit

import numpy as np

from stochns import kernels
from stochns.fem import FemSystem
from stochns.fem.saddle import StepOperator
from stochns.mesh import build_mesh


def bench(n, repeat):
    fem = FemSystem(build_mesh(n))
    op = StepOperator(fem, mu=1.0, tau=1.0 / 64)
    w = np.random.default_rng(n).standard_normal(fem.n_vel)
    W = np.ascontiguousarray(fem.cell_values(w))
    q = fem.quad
    out = {}
    for backend in kernels.available_backends():
        data = op.base.data.copy()

        def run():
            data[:] = op.base.data
            kernels.add_convection(data, op.pos, W, q.phi, q.dphi, q.wdet, op.tau, 0.5,
                                   backend=backend)

        run()
        number = max(1, int(0.2 / max(timeit.timeit(run, number=1), 1e-6)))
        best = min(timeit.repeat(run, number=number, repeat=repeat)) / number
        out[backend] = (best, data.copy())
    return fem.mesh.n_triangles, out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, nargs="+", default=[8, 16, 32])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    backends = kernels.available_backends()
    print(f"backends: {', '.join(backends)} (default {kernels.BACKEND})")
    print(f"{'n':>4} {'cells':>6} " + " ".join(f"{b + ' [ms]':>14}" for b in backends)
          + f" {'speed-up':>9} {'max diff':>9}")
    for n in args.n:
        cells, res = bench(n, args.repeat)
        times = " ".join(f"{1e3 * res[b][0]:14.3f}" for b in backends)
        if "cython" in res:
            speed = res["python"][0] / res["cython"][0]
            diff = np.abs(res["python"][1] - res["cython"][1]).max()
            tail = f" {speed:9.1f} {diff:9.1e}"
        else:
            tail = f" {'n/a':>9} {'n/a':>9}"
        print(f"{n:4d} {cells:6d} {times}{tail}")


if __name__ == "__main__":
    main()
