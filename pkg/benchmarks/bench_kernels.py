"""Time the compiled kernels against the pure-numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat N]

The backend is fixed at import time, so each one runs in its own
interpreter with RDMC_BACKEND set. The first call of every kernel is a
warm-up (numba compiles there) and is not counted.
"""
import argparse
import json
import os
import subprocess
import sys
import textwrap

WORKER = textwrap.dedent("""
    import json, sys, time
    import numpy as np
    from rdmc import _accel, detect, fdm, modulate as M
    from rdmc.fields import SpeciesSystem, Waveform, make_grid

    repeat = int(sys.argv[1])

    def best(fn):
        fn()
        times = []
        for _ in range(repeat):
            t = time.perf_counter()
            fn()
            times.append(time.perf_counter() - t)
        return min(times)

    g1 = make_grid(1, 1.28e-3, 512, 10.0, 1000)
    sy1 = SpeciesSystem(1, 1e-9, 7e-10, 1e-10, 1e-22)
    src1 = {"A": Waveform.impulses([(0.0, 5e8)], (0.0,)), "B": Waveform.impulses([(0.0, 2.4e9)], (1e-4,))}
    g2 = make_grid(2, 8e-4, 128, 10.0, 200)
    sy2 = SpeciesSystem(2, 1e-9, 1e-9, 1e-9, 1e-23)
    src2 = {"A": Waveform.impulses([(0.0, 5e8)], (0.0, 0.0)), "B": Waveform.impulses([(0.0, 2.4e9)], (1e-4, 0.0))}
    rng = np.random.default_rng(0)
    means = [rng.uniform(0, 200, 4) for _ in range(200)]
    sy3 = SpeciesSystem(3, 1e-9, 1e-9, 1e-9, 1e-23)
    geo = M.Geometry(d_b=(1e-4, 0, 0), d_r=(5e-5, 0, 0))
    table = M.ResponseTable.build(sy3, geo, 3.0, 21)

    out = {
        "backend": "numba" if _accel.USE_NUMBA else "numpy",
        "fdm_1d_512x1000": best(lambda: fdm.fdm_solve(sy1, src1, fdm.FdmConfig(g1, 0.1), probes=[(5e-5,)])),
        "fdm_2d_128sq_x200": best(lambda: fdm.fdm_solve(sy2, src2, fdm.FdmConfig(g2, 0.2), probes=[(5e-5, 0.0)])),
        "map_error_x200": best(lambda: [detect.fast_log_error(m) for m in means]),
        "pulse_scan_16_levels": best(lambda: M.pulse_baseline(sy3, (1e7, 1e7), geo, 3.0, 1e-11, 16, table)),
    }
    print(json.dumps(out))
""")


def run(backend, repeat):
    env = dict(os.environ, RDMC_BACKEND=backend)
    proc = subprocess.run([sys.executable, "-c", WORKER, str(repeat)], env=env,
                          capture_output=True, text=True, check=True)
    return json.loads(proc.stdout.strip().splitlines()[-1])


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    fast, slow = run("numba", args.repeat), run("numpy", args.repeat)
    if fast["backend"] != "numba":
        print("numba unavailable; both runs used numpy")
    print(f"{'kernel':24s} {'numba [s]':>10s} {'numpy [s]':>10s} {'speedup':>8s}")
    for key in fast:
        if key == "backend":
            continue
        print(f"{key:24s} {fast[key]:10.4f} {slow[key]:10.4f} {slow[key] / fast[key]:8.1f}")


if __name__ == "__main__":
    main()
