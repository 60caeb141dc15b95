"""Compiled vs. pure-Python jet kernels.

Times jet product, quotient and square root at several orders and batch
sizes, plus two end-to-end workloads (a full curvature frame and a depth-4
algebra generation), once per backend.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--json out.json]
"""
from __future__ import annotations

import argparse
import json
import timeit

import numpy as np

from finhol import jets
from finhol.geometry import frame
from finhol.holalg import generate_algebra
from finhol.mdsl import builtin_metric


def _random_jet(rng, order, batch):
    c = rng.normal(size=(jets.ncoef(order), batch))
    c[0] = 1.0 + np.abs(c[0])  # keep division and sqrt well defined
    return jets.Jet(c, order)


def kernel_cases(rng, orders=(4, 6, 8, 10), batches=(1, 64, 256)):
    for order in orders:
        for batch in batches:
            a, b = _random_jet(rng, order, batch), _random_jet(rng, order, batch)
            yield f"mul  k={order:<2} B={batch:<3}", lambda a=a, b=b: a * b
            yield f"div  k={order:<2} B={batch:<3}", lambda a=a, b=b: a / b
            yield f"sqrt k={order:<2} B={batch:<3}", lambda a=a: a.sqrt()


def workload_cases():
    funk = builtin_metric("funk")
    rng = np.random.default_rng(0)
    x = funk.domain.sample(rng, 256).T
    th = rng.uniform(0, 2 * np.pi, 256)
    y = np.stack([np.cos(th), np.sin(th)])
    yield "frame  funk, 256 points", lambda: frame(funk, x, y)
    yield "algebra funk, depth 4, N=128", lambda: generate_algebra(funk, (0.0, 0.0), max_depth=4, grid_n=128)


def best_time(fn, repeat: int) -> float:
    number = 1
    while True:
        t = min(timeit.repeat(fn, number=number, repeat=1))
        if t > 0.05 or number >= 1000:
            break
        number *= 4
    return min(timeit.repeat(fn, number=number, repeat=repeat)) / number


def main(argv=None) -> dict:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=3)
    p.add_argument("--json", help="write results to this file")
    p.add_argument("--quick", action="store_true", help="fewer cases (for smoke tests)")
    args = p.parse_args(argv)

    backends = ["python"] + (["compiled"] if jets.compiled_available() else [])
    cases = list(kernel_cases(np.random.default_rng(1), orders=(4, 8) if args.quick else (4, 6, 8, 10),
                              batches=(64,) if args.quick else (1, 64, 256)))
    if not args.quick:
        cases += list(workload_cases())
    results = {}
    previous = jets.BACKEND
    try:
        for name in backends:
            jets.use_backend(name)
            results[name] = {label: best_time(fn, args.repeat) for label, fn in cases}
    finally:
        jets.use_backend(previous)

    print(f"{'case':<32}" + "".join(f"{b:>14}" for b in backends) + ("   speedup" if len(backends) == 2 else ""))
    for label, _ in cases:
        row = f"{label:<32}" + "".join(f"{results[b][label] * 1e3:>12.3f}ms" for b in backends)
        if len(backends) == 2:
            row += f"{results['python'][label] / results['compiled'][label]:>9.1f}x"
        print(row)
    if args.json:
        with open(args.json, "w", encoding="utf-8") as fh:
            json.dump(results, fh, indent=2, sort_keys=True)
    return results


if __name__ == "__main__":
    main()
