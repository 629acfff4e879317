"""Compare the compiled and pure-Python geometry kernels.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--json out.json]

Each kernel runs on the same inputs under both backends; outputs are checked
for agreement before timings are reported.
"""

from __future__ import annotations

import argparse
import json
import sys
import timeit

import numpy as np

from partforge import kernels
from partforge.dataset import icosphere
from partforge.geometry import sample_surface


def workloads(seed: int = 0):
    rng = np.random.default_rng(seed)
    sphere = icosphere([0.1, -0.05, 0.02], 0.8, subdivisions=4)
    P = sample_surface(sphere, 10000, seed=1).points
    Q = P + rng.normal(scale=0.01, size=P.shape)
    tris = sphere.triangles
    tris2d = tris[:, :, :2].copy()
    return {
        "nn_distances (10k x 10k)": lambda impl: kernels.nn_distances(P, Q, impl=impl),
        "voxelize_parity (5120 tris, R=64)": lambda impl: kernels.voxelize_parity(tris, 64, impl=impl),
        "raster_triangles (5120 tris, 32^2)": lambda impl: kernels.raster_triangles(tris2d, 32, impl=impl),
    }


def run(repeat: int = 5) -> list[dict]:
    impls = kernels.backends()
    rows = []
    for name, fn in workloads().items():
        outputs = {b: np.asarray(fn(m)) for b, m in impls.items()}
        ref = outputs["python"]
        agree = all(np.array_equal(o, ref) if o.dtype == bool else np.allclose(o, ref, rtol=0, atol=1e-12)
                    for o in outputs.values())
        row = {"kernel": name, "agree": bool(agree)}
        for b, m in impls.items():
            row[b] = min(timeit.repeat(lambda: fn(m), number=1, repeat=repeat))
        rows.append(row)
    return rows


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--json", default=None, help="also write results to this file")
    args = ap.parse_args(argv)
    rows = run(args.repeat)
    if "cython" not in kernels.backends():
        print("compiled extension not built; timing the Python backend only")
    print(f"{'kernel':38s} {'python [ms]':>12s} {'cython [ms]':>12s} {'speedup':>8s}  agree")
    for r in rows:
        cy = r.get("cython")
        cy_s = f"{cy * 1e3:12.2f}" if cy is not None else f"{'-':>12s}"
        sp = f"{r['python'] / cy:8.1f}" if cy else f"{'-':>8s}"
        print(f"{r['kernel']:38s} {r['python'] * 1e3:12.2f} {cy_s} {sp}  {r['agree']}")
    if args.json:
        with open(args.json, "w", encoding="utf-8") as fh:
            json.dump(rows, fh, indent=2)
    return 0 if all(r["agree"] for r in rows) else 1


if __name__ == "__main__":
    sys.exit(main())
