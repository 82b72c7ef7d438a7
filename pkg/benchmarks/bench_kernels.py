"""Compare the compiled and numpy trajectory kernels.

    python3 benchmarks/bench_kernels.py [--n-traj 4000] [--steps 1000] [--dim 2 4]

Both kernels receive the same tables and uniforms; the script reports
nanoseconds per trajectory step and the largest state difference.
"""
import argparse
import time

import numpy as np

from qunravel import _backend
from qunravel.equations import canonical_equation, pair
from qunravel.unraveling import _record_steps, _run, _tabulate


def test_equation(d):
    rng = np.random.default_rng(1)
    h = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    rates = [1.0] * (d * d - 2) + [lambda t: -np.tanh(t)]
    return canonical_equation(0.25 * (h + h.conj().T), rates)


def bench(d, n_traj, steps, repeat):
    pr = pair(test_equation(d))
    dt = 1.0 / steps
    tab = _tabulate(pr, 0.0, 1.0, dt)
    rng = np.random.default_rng(0)
    u = rng.random((n_traj, steps))
    psi0 = np.zeros((n_traj, d), dtype=complex)
    psi0[:, 0] = 1.0
    rec = _record_steps(steps, 20)
    out = {}
    for name in _backend.available_backends():
        best = np.inf
        for _ in range(repeat):
            t = time.perf_counter()
            res = _run(tab, psi0, u, rec, False, name)
            best = min(best, time.perf_counter() - t)
        out[name] = (best, res)
    return out


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--n-traj", type=int, default=4000)
    p.add_argument("--steps", type=int, default=1000)
    p.add_argument("--dim", type=int, nargs="+", default=[2, 4])
    p.add_argument("--repeat", type=int, default=3)
    args = p.parse_args()
    print(f"backends: {', '.join(_backend.available_backends())}")
    print(f"{'d':>3} {'backend':>9} {'seconds':>9} {'ns/step':>9} {'speedup':>8}")
    for d in args.dim:
        res = bench(d, args.n_traj, args.steps, args.repeat)
        base = res["python"][0]
        for name, (sec, _) in res.items():
            ns = 1e9 * sec / (args.n_traj * args.steps)
            print(f"{d:>3} {name:>9} {sec:>9.3f} {ns:>9.1f} {base / sec:>7.1f}x")
        if len(res) == 2:
            diff = np.max(np.abs(res["compiled"][1][0] - res["python"][1][0]))
            same = np.array_equal(res["compiled"][1][3], res["python"][1][3])
            print(f"    max |psi_compiled - psi_python| = {diff:.2e}; identical jump counts: {same}")


if __name__ == "__main__":
    main()
