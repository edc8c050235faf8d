"""Compare the compiled kernels with the numpy fallback.

Usage: ``python benchmarks/bench_kernels.py [--repeat N]``

Times polytope projection, a forward-backward VI solve and a closed-loop
run of the first shipped example with each backend, and checks that both
backends return the same answers.
"""

import argparse
import time

import numpy as np

from mpglab import _core_py, scenario, simulate
from mpglab.mpg import ControllerBank
from mpglab.vi_solver import solve

try:
    from mpglab import _core
except ImportError:
    _core = None


def _timeit(fn, repeat):
    best = np.inf
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def _polytope(rng, n, p):
    C = rng.normal(size=(p, n))
    d = C @ rng.normal(size=n) + rng.uniform(0.1, 1.0, size=p)
    return C, d


def bench_project(k, rng_seed=0, n=12, p=30, count=200):
    rng = np.random.default_rng(rng_seed)
    C, d = _polytope(rng, n, p)
    H, h = np.zeros((0, n)), np.zeros(0)
    ys = rng.normal(size=(count, n)) * 3
    return np.array([k.project(C, d, H, h, np.zeros(0), np.zeros(0), False, y)[0] for y in ys])


def bench_solve(k, sc):
    bank = sc.bank()
    x = sc.initial_states[0]
    return np.concatenate([solve(vi, x, polish=False, kernels=k).u_star for vi in bank.vis])


def bench_closed_loop(name, sc):
    # the bank reads the module-level backend, so swap it for the run
    from mpglab import _backend
    saved = _backend.kernels
    _backend.kernels = _core_py if name == "python" else _core
    try:
        bank = ControllerBank(sc.dynamics, sc.conjectures, sc.polytope)
        return simulate.run(bank, sc.initial_states[0], max_steps=200).final_state
    finally:
        _backend.kernels = saved


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)
    sc = scenario.load(scenario.shipped("example1"))
    backends = [("python", _core_py)] + ([("compiled", _core)] if _core is not None else [])
    if _core is None:
        print("compiled extension not built; timing the python backend only")
    cases = [
        ("project x200 (n=12, 30 rows)", lambda k, name: bench_project(k)),
        ("VI solve, no polish (example1)", lambda k, name: bench_solve(k, sc)),
        ("closed loop, 200 steps (example1)", lambda k, name: bench_closed_loop(name, sc)),
    ]
    print(f"{'case':<36}" + "".join(f"{n:>12}" for n, _ in backends) + f"{'speedup':>10}"
          + f"{'max diff':>12}")
    for label, fn in cases:
        times, outs = [], []
        for name, k in backends:
            t, out = _timeit(lambda: fn(k, name), args.repeat)
            times.append(t)
            outs.append(out)
        speed = f"{times[0] / times[1]:>9.1f}x" if len(times) > 1 else f"{'-':>10}"
        diff = f"{np.max(np.abs(outs[0] - outs[1])):>12.1e}" if len(outs) > 1 else f"{'-':>12}"
        print(f"{label:<36}" + "".join(f"{t * 1e3:>10.2f}ms" for t in times) + speed + diff)


if __name__ == "__main__":
    main()
