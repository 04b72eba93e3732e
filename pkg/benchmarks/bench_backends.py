"""Compare the numba-compiled kernels against the pure-numpy fallback.

Runs the same workloads under both backends (selected via the
PROXSKIP_BACKEND environment variable in child processes), reports wall
times and the speedup, and checks that the two backends produce the same
trajectories.

    python3 benchmarks/bench_backends.py
"""

import json
import os
import subprocess
import sys
import time

WORKLOADS = ("central", "federated", "decentralized")


def run_workloads():
    import numpy as np

    import proxskip as pk
    from proxskip.decentralized import DecentralizedConfig

    results = {}

    problem = pk.synthetic_quadratic(16, 1000.0, n_samples=8, seed=3,
                                     heterogeneity=1.0)
    info = problem.smoothness_constants()
    cfg = pk.ProxSkipConfig(gamma=1.0 / info.L, p=0.05, T=20_000, seed=1)
    pk.run_proxskip(problem, pk.L1(0.01), cfg, x0=np.ones(16))  # warm-up/JIT
    t0 = time.perf_counter()
    rec = pk.run_proxskip(problem, pk.L1(0.01), cfg, x0=np.ones(16))
    results["central"] = {"seconds": time.perf_counter() - t0,
                          "iters": cfg.T,
                          "state": rec.final_x.tolist()}

    split = pk.heterogeneous_split(8, 8)
    fcfg = pk.ProxSkipConfig(gamma=1.0 / info.L, p=0.1, T=5_000, seed=2)
    problem2 = pk.synthetic_quadratic(8, 100.0, n_samples=8, seed=4,
                                      heterogeneity=1.0)
    pk.run_scaffnew(problem2, split, fcfg)
    t0 = time.perf_counter()
    rec = pk.run_scaffnew(problem2, split, fcfg)
    results["federated"] = {"seconds": time.perf_counter() - t0,
                            "iters": fcfg.T,
                            "state": rec.final_x.reshape(-1).tolist()}

    mix = pk.mixing_matrix(pk.ring(8))
    dcfg = DecentralizedConfig(gamma=1.0 / info.L, p=0.3, T=2_000, seed=3)
    pk.run_decentralized_scaffnew(problem2, split, mix, dcfg)
    t0 = time.perf_counter()
    rec = pk.run_decentralized_scaffnew(problem2, split, mix, dcfg)
    results["decentralized"] = {"seconds": time.perf_counter() - t0,
                                "iters": dcfg.T,
                                "state": rec.final_x.reshape(-1).tolist()}

    results["backend"] = pk.backend_name()
    return results


def main():
    if len(sys.argv) > 1 and sys.argv[1] == "--child":
        print(json.dumps(run_workloads()))
        return

    reports = {}
    for backend in ("numba", "numpy"):
        env = dict(os.environ, PROXSKIP_BACKEND=backend)
        proc = subprocess.run(
            [sys.executable, os.path.abspath(__file__), "--child"],
            env=env, capture_output=True, text=True, check=True,
        )
        reports[backend] = json.loads(proc.stdout.strip().splitlines()[-1])
        assert reports[backend]["backend"] == backend, reports[backend]["backend"]

    print(f"{'workload':<15} {'numba':>10} {'numpy':>10} {'speedup':>9} {'max |diff|':>12}")
    for name in WORKLOADS:
        a = reports["numba"][name]
        b = reports["numpy"][name]
        diff = max(abs(x - y) for x, y in zip(a["state"], b["state"]))
        print(f"{name:<15} {a['seconds']:>9.3f}s {b['seconds']:>9.3f}s "
              f"{b['seconds'] / a['seconds']:>8.1f}x {diff:>12.3e}")


if __name__ == "__main__":
    main()
