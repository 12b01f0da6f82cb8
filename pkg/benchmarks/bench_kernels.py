"""Compare the compiled and numpy rolling chi2 kernels.

Times ``walk_segment`` on template-sized inputs and ``find_jumps`` on a batch
of noisy scans, once per available backend.  Run from the repository root::

    python benchmarks/bench_kernels.py --repeats 5
"""
import argparse
import os
import subprocess
import sys
import timeit

import numpy as np


def bench_kernel(walk, n_points, n_theta, repeats):
    rng = np.random.default_rng(0)
    x = rng.uniform(0, 1, n_points)
    pred = rng.uniform(0, 1, (n_points, n_theta))
    weight = np.full((n_points, n_theta), 1 / 0.03**2)
    t = timeit.Timer(lambda: walk(x, pred, weight, 0, np.inf, 0))
    loops, _ = t.autorange()
    return min(t.repeat(repeats, loops)) / loops


def bench_scans(n_scans):
    from chargejumps import presets
    from chargejumps.jumpfind import find_jumps
    from chargejumps.synth import InjectionPlan, NoiseModel, generate_scan, inject_jumps

    tpl = presets.replica_template(1, "SC")
    sched, cfg = presets.schedule(), presets.detection(1, "SC")
    noise = NoiseModel(presets.NOISE_SIGMA[(1, "SC")], seed=3)
    plan = InjectionPlan(n_scans=n_scans)
    scans = []
    for k in range(n_scans):
        rng = np.random.default_rng([3, k])
        scan = generate_scan(tpl, sched, noise, rng.uniform(-0.5, 0.5), rng=rng)
        scans.append(inject_jumps(scan, plan, rng, tpl)[0])
    t0 = timeit.default_timer()
    for s in scans:
        find_jumps(s, tpl, cfg)
    return (timeit.default_timer() - t0) / n_scans


def run_backend(args):
    from chargejumps import kernels
    rows = [(f"walk_segment {n}x{m}", bench_kernel(kernels.walk_segment, n, m, args.repeats))
            for n, m in ((74, 370), (740, 370))]
    rows.append((f"find_jumps per scan ({args.scans} scans)", bench_scans(args.scans)))
    for name, sec in rows:
        print(f"{kernels.BACKEND}\t{name}\t{sec * 1e3:.3f} ms")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats", type=int, default=5)
    ap.add_argument("--scans", type=int, default=200)
    ap.add_argument("--child", action="store_true", help=argparse.SUPPRESS)
    args = ap.parse_args()
    if args.child:
        run_backend(args)
        return
    # the backend is fixed at import, so each one runs in its own interpreter
    results = {}
    for backend in ("cython", "numpy"):
        env = dict(os.environ, CHARGEJUMPS_BACKEND=backend)
        out = subprocess.run([sys.executable, __file__, "--child", "--repeats", str(args.repeats),
                              "--scans", str(args.scans)], env=env, capture_output=True, text=True, check=True)
        for line in out.stdout.splitlines():
            got, name, ms = line.split("\t")
            results.setdefault(name, {})[got] = float(ms.split()[0])
    print(f"{'benchmark':40s} {'cython ms':>10s} {'numpy ms':>10s} {'speedup':>8s}")
    for name, r in results.items():
        c, n = r.get("cython"), r.get("numpy")
        speed = f"{n / c:8.1f}" if c and n else "     n/a"
        print(f"{name:40s} {c if c else float('nan'):10.3f} {n:10.3f} {speed}")


if __name__ == "__main__":
    main()
