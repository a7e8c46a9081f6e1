"""Time the compiled kernels against the plain-numpy fallback.

Each path runs in its own interpreter because SSOLAB_NO_JIT is read at import.
The compiled path is timed after a warm-up run so compilation is excluded.

    python benchmarks/bench_jit.py --duration 1.0
"""
import argparse
import json
import os
import subprocess
import sys

import numpy as np

CHILD = r"""
import json, sys, time
import numpy as np
from ssolab.experiment import kauai_mini, simulate
from ssolab._accel import USING_NUMBA

dur = float(sys.argv[1])
sc = kauai_mini(duration=dur, pow_synthesis=False)
if USING_NUMBA:
    simulate(kauai_mini(duration=0.01, pow_synthesis=False))   # compile / load cache
t0 = time.perf_counter()
res = simulate(sc)
wall = time.perf_counter() - t0
f = res.channels["IBR1_f_hz"].values
print(json.dumps({"numba": USING_NUMBA, "wall_s": wall, "steps": round(dur / sc.dt),
                  "f_tail": f[-50:].tolist()}))
"""


def run(no_jit, duration):
    env = dict(os.environ)
    env.pop("SSOLAB_NO_JIT", None)
    if no_jit:
        env["SSOLAB_NO_JIT"] = "1"
    out = subprocess.run([sys.executable, "-c", CHILD, str(duration)], env=env,
                         capture_output=True, text=True, check=True)
    return json.loads(out.stdout.strip().splitlines()[-1])


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--duration", type=float, default=1.0, help="simulated seconds")
    args = ap.parse_args()

    jit = run(False, args.duration)
    ref = run(True, args.duration)
    diff = np.max(np.abs(np.array(jit["f_tail"]) - np.array(ref["f_tail"])))
    for name, r in (("numba", jit), ("numpy", ref)):
        print(f"{name:6s} {r['wall_s']:8.3f} s  {r['steps'] / r['wall_s']:10.0f} steps/s")
    print(f"speed-up {ref['wall_s'] / jit['wall_s']:.1f}x, max |df| between paths {diff:.2e} Hz")


if __name__ == "__main__":
    main()
