"""Compare the compiled and numpy semi-Lagrangian sweep kernels.

Both kernels run on identical precomputed foot stencils, so the timing
covers only the backward recursion. Values and taint must agree exactly.

    python benchmarks/bench_sweep.py [--points 101 201] [--steps 200] [--repeat 3]
"""

import argparse
import time

import numpy as np

from mayer_sens.hamiltonian import make_ball_model, make_interval_box_model
from mayer_sens.hjb import _backend
from mayer_sens.hjb.grid import GridSpec, _foot_stencil, sample_directions, support_velocities


def setup(dim, points, steps, directions):
    if dim == 1:
        model = make_interval_box_model(1, 1.0)
        spec = GridSpec(1, (-3.0,), (3.0,), points, steps, 0.0, 1.0)
        phi = lambda x: float(x @ x)
    else:
        model = make_ball_model(2, 1.0)
        spec = GridSpec(2, (-2.5, -2.5), (2.5, 2.5), points, steps, 0.0, 1.0)
        phi = lambda x: -0.5 * float(x @ x)
    nodes = spec.nodes()
    vel = support_velocities(model, nodes, sample_directions(dim, directions))
    base, frac, outside, strides = _foot_stencil(spec, nodes[:, None, :] + spec.dt * vel)
    terminal = np.array([phi(x) for x in nodes])
    return terminal, base, frac, outside, strides, steps


def run(sweep, terminal, base, frac, outside, strides, steps):
    values = np.empty((steps + 1, terminal.size))
    values[steps] = terminal
    taint = np.zeros_like(values)
    sweep(values, taint, base, frac, outside, strides)
    return values, taint


def best_of(fn, repeat):
    times = []
    out = None
    for _ in range(repeat):
        t = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t)
    return min(times), out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--points", type=int, nargs="+", default=[101, 201])
    ap.add_argument("--steps", type=int, default=200)
    ap.add_argument("--directions", type=int, default=64)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)

    if not _backend.COMPILED_AVAILABLE:
        print("compiled kernel not built; only the numpy kernel is timed")
    py_sweep, _ = _backend.get("python")
    print(f"{'case':<22}{'python [s]':>12}{'compiled [s]':>14}{'speedup':>10}{'max |dV|':>11}")
    cases = [(1, 401, 2)] + [(2, n, args.directions) for n in args.points]
    for dim, points, dirs in cases:
        data = setup(dim, points, args.steps, dirs)
        t_py, (v_py, c_py) = best_of(lambda: run(py_sweep, *data), args.repeat)
        name = f"{dim}-D {points}^{dim} x{dirs}"
        if not _backend.COMPILED_AVAILABLE:
            print(f"{name:<22}{t_py:>12.3f}{'-':>14}{'-':>10}{'-':>11}")
            continue
        c_sweep, _ = _backend.get("compiled")
        t_c, (v_c, c_c) = best_of(lambda: run(c_sweep, *data), args.repeat)
        diff = max(float(np.abs(v_py - v_c).max()), float(np.abs(c_py - c_c).max()))
        print(f"{name:<22}{t_py:>12.3f}{t_c:>14.3f}{t_py / t_c:>10.1f}{diff:>11.1e}")


if __name__ == "__main__":
    main()
