"""Time the compiled and numpy kernel backends on the recipe-sized flow.

    python benchmarks/bench_backends.py --dim 10 --layers 10 --hidden 32 --batch 8192
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from flowvi import kernels
from flowvi.flow import FlowConfig, _args, random_params
from flowvi.rng import RngState, split, standard_normal_matrix
from flowvi.scorekit import score
from flowvi.targets import get_target


def best_of(fn, repeats):
    times = []
    for _ in range(repeats):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def cases(backend, p, E, D, target):
    a = _args(p)
    dY = np.ones_like(E)
    fn = lambda Z: (target.log_density(Z), score(target, Z))
    return {
        "forward": lambda: backend.forward(*a, E),
        "inverse": lambda: backend.inverse(*a, E),
        "forward_vjp": lambda: backend.forward_vjp(*a, E, dY, 1.0),
        "inverse_vjp": lambda: backend.inverse_vjp(*a, E, None, 1.0, 1.0, param_grad=True),
        "reparam_total": lambda: backend.reparam_vjp(*a, E, fn, False),
        "reparam_stl": lambda: backend.reparam_vjp(*a, E, fn, True),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--dim", type=int, default=10)
    ap.add_argument("--layers", type=int, default=10)
    ap.add_argument("--hidden", type=int, default=32)
    ap.add_argument("--batch", type=int, default=8192)
    ap.add_argument("--repeats", type=int, default=5)
    args = ap.parse_args(argv)

    rng = RngState(0)
    p = random_params(FlowConfig(args.dim, args.layers, args.hidden), split(rng, 0), 0.1)
    E = standard_normal_matrix(split(rng, 1), args.batch, args.dim)
    target = get_target(f"funnel-{args.dim}")
    backends = kernels.available_backends()
    if "cython" not in backends:
        print("# compiled extension not built; timing the numpy backend only")
    print(f"# D={args.dim} K={args.layers} H={args.hidden} S={args.batch}, best of {args.repeats} (ms)")
    results = {name: {k: best_of(f, args.repeats) for k, f in cases(b, p, E, args.dim, target).items()}
               for name, b in backends.items()}
    names = list(results)
    print("kernel,".ljust(16) + ",".join(f"{n:>10}" for n in names) + (",   speedup" if len(names) == 2 else ""))
    for k in results[names[0]]:
        row = [f"{1e3 * results[n][k]:10.2f}" for n in names]
        if len(names) == 2:
            row.append(f"{results['python'][k] / results['cython'][k]:9.2f}x")
        print(f"{k},".ljust(16) + ",".join(row))


if __name__ == "__main__":
    main()
