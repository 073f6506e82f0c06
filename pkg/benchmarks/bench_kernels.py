"""Compiled versus numpy stencil kernels.

Times the two hot kernels (centered difference along one axis and the
deterministic weighted reduction) for both backends, checks that they agree,
and times one network right-hand-side evaluation of a bundled scenario under
each backend (the backend is chosen at import, so that part runs in
subprocesses).

Usage::

    python3 benchmarks/bench_kernels.py --sizes 64 128 256 --repeat 20
"""
from __future__ import annotations

import argparse
import json
import os
import subprocess
import sys
import timeit

import numpy as np

from phcm.kernels import backend_module

RHS_SNIPPET = """
import timeit, json
from phcm import kernels, simulator as S
sy = S.System(S.load_scenario({name!r}))
st = sy.initial_state()
z = sy.pack(st)
sy.rhs(0.0, z)
t = min(timeit.repeat(lambda: sy.rhs(0.0, z), number=1, repeat={repeat}))
print(json.dumps({{"backend": kernels.BACKEND, "seconds": t}}))
"""


def bench_kernels(sizes, repeat):
    try:
        cy = backend_module("cython")
    except ImportError:
        cy = None
    py = backend_module("python")
    rng = np.random.default_rng(0)
    rows = []
    for N in sizes:
        f = rng.standard_normal((N, N, N // 4 or 1))
        f3 = np.ascontiguousarray(f.reshape(N, N, -1))
        v = rng.standard_normal(N * N * 4)
        w = rng.random(N * N * 4)
        row = {"N": N}
        for label, mod in (("python", py), ("cython", cy)):
            if mod is None:
                continue
            row[f"diff_{label}"] = min(timeit.repeat(lambda: mod.diff_axis(f3, 0.1, False), number=1, repeat=repeat))
            row[f"sum_{label}"] = min(timeit.repeat(lambda: mod.weighted_sum(v, w), number=1, repeat=repeat))
        if cy is not None:
            row["diff_max_abs_dev"] = float(np.max(np.abs(np.asarray(cy.diff_axis(f3, 0.1, False))
                                                          - py.diff_axis(f3, 0.1, False))))
            row["sum_abs_dev"] = abs(cy.weighted_sum(v, w) - py.weighted_sum(v, w))
        rows.append(row)
    return rows


def bench_rhs(name, repeat):
    out = {}
    for label, env in (("python", {"PHCM_PURE_PYTHON": "1"}), ("default", {})):
        e = dict(os.environ)
        e.pop("PHCM_PURE_PYTHON", None)
        e.update(env)
        res = subprocess.run([sys.executable, "-c", RHS_SNIPPET.format(name=name, repeat=repeat)],
                             env=e, capture_output=True, text=True, check=True)
        out[label] = json.loads(res.stdout.strip().splitlines()[-1])
    return out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", type=int, nargs="+", default=[64, 128, 256])
    ap.add_argument("--repeat", type=int, default=10)
    ap.add_argument("--scenario", default="ns2d-periodic-taylor-green-like")
    ap.add_argument("--json", action="store_true", help="print machine-readable results")
    args = ap.parse_args(argv)
    rows = bench_kernels(args.sizes, args.repeat)
    rhs = bench_rhs(args.scenario, args.repeat)
    if args.json:
        print(json.dumps({"kernels": rows, "rhs": rhs}, indent=2))
        return 0
    print(f"{'N':>5} {'diff py [ms]':>13} {'diff cy [ms]':>13} {'speedup':>8} "
          f"{'sum py [ms]':>12} {'sum cy [ms]':>12} {'speedup':>8}")
    for r in rows:
        if "diff_cython" in r:
            print(f"{r['N']:>5} {1e3 * r['diff_python']:>13.3f} {1e3 * r['diff_cython']:>13.3f} "
                  f"{r['diff_python'] / r['diff_cython']:>8.2f} {1e3 * r['sum_python']:>12.3f} "
                  f"{1e3 * r['sum_cython']:>12.3f} {r['sum_python'] / r['sum_cython']:>8.2f}")
        else:
            print(f"{r['N']:>5} {1e3 * r['diff_python']:>13.3f} {'n/a':>13}")
    print(f"rhs evaluation ({args.scenario}): "
          + ", ".join(f"{v['backend']} {1e3 * v['seconds']:.2f} ms" for v in rhs.values()))
    return 0


if __name__ == "__main__":
    sys.exit(main())
