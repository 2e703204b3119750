"""Time the hot kernels with numba and with the pure-numpy fallback.

Each backend runs in its own subprocess because the backend is chosen when
``clupisac._kernels`` is imported.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--json out.json]
"""

import argparse
import json
import os
import subprocess
import sys
import time

WORKER = r'''
import json, sys, time
import numpy as np
from clupisac import _kernels as K
from clupisac.clup import ClupParams, as_problem, calibrate, run_clup
from clupisac.baseline import AdmmParams, lambda_scale, run_admm
from clupisac.linop import ForwardOperator, HankelLift
from clupisac.scene import SceneConfig, sample_scene, synthesize

repeat = int(sys.argv[1])
sc = sample_scene(SceneConfig(snr_db=37.0, seed=0, min_sep_tau=1 / 15, min_sep_nu=1 / 9))
ms = synthesize(sc)
op = ForwardOperator.from_scene(sc)
lift = HankelLift.for_pulses(15, 9)
pb = as_problem(ms.y, op, lift)
rng = np.random.default_rng(0)
h = rng.standard_normal(lift.size) + 1j * rng.standard_normal(lift.size)
G = lift.lift(h)
x = rng.standard_normal(pb.n) + 1j * rng.standard_normal(pb.n)
tk = pb.tk

def best(fn, inner):
    fn()  # warm-up (includes compilation for numba)
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        for _ in range(inner):
            fn()
        times.append((time.perf_counter() - t) / inner)
    return min(times)

params = ClupParams()
cal = calibrate(pb.y, pb, params)
lam = 0.01 * lambda_scale(ms.y, op)
out = {
    "backend": "numba" if K.USING_NUMBA else "numpy",
    "hankel_lift_us": 1e6 * best(lambda: K.hankel_lift(h, 15, 5, 5), 2000),
    "hankel_adjoint_us": 1e6 * best(lambda: K.hankel_adjoint(G, 15, 5, 5), 2000),
    "nuclear_project_us": 1e6 * best(lambda: K.nuclear_project(G, 1.0), 500),
    "ball_project_us": 1e6 * best(lambda: K.ball_project(x, tk.Vh, tk.V, tk.S, tk.beta,
                                                         tk.yperp2, 0.5, tk.tol), 500),
    "clup_solve_s": best(lambda: run_clup(pb.y, pb, params, calibration=cal), 1),
    "admm_solve_s": best(lambda: run_admm(ms.y, op, AdmmParams(lam=lam)), 1),
}
print(json.dumps(out))
'''


def run(backend: str, repeat: int) -> dict:
    env = dict(os.environ)
    if backend == "numpy":
        env["CLUP_ISAC_PURE_NUMPY"] = "1"
    else:
        env.pop("CLUP_ISAC_PURE_NUMPY", None)
    proc = subprocess.run([sys.executable, "-c", WORKER, str(repeat)], env=env,
                          capture_output=True, text=True, check=True)
    return json.loads(proc.stdout.strip().splitlines()[-1])


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--json", default=None, help="also write the table as JSON")
    args = ap.parse_args(argv)
    t0 = time.perf_counter()
    res = {b: run(b, args.repeat) for b in ("numba", "numpy")}
    keys = [k for k in res["numba"] if k != "backend"]
    print(f"{'kernel':<22}{'numba':>12}{'numpy':>12}{'speedup':>10}")
    for k in keys:
        a, b = res["numba"][k], res["numpy"][k]
        print(f"{k:<22}{a:>12.4g}{b:>12.4g}{b / a:>10.1f}")
    print(f"total wall time {time.perf_counter() - t0:.1f} s")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(res, fh, indent=1)


if __name__ == "__main__":
    main()
