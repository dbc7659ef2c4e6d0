"""Time the hot kernels with numba and with the pure-numpy fallback.

Each backend runs in its own interpreter because the choice is fixed at
import time by DEMANDLSTM_DISABLE_NUMBA.

    python3 benchmarks/bench_kernels.py [--repeat 5]
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
    from demandlstm._accel import backend
    from demandlstm import benchmarks as bm
    from demandlstm.lstm.kernels import lstm_backward, lstm_forward

    repeat = int(sys.argv[1])
    rng = np.random.default_rng(0)

    def timed(fn, *args):
        fn(*args)  # warm-up, includes compilation
        best = float("inf")
        for _ in range(repeat):
            t0 = time.perf_counter()
            fn(*args)
            best = min(best, time.perf_counter() - t0)
        return best

    out = {"backend": backend()}
    for name, (T, B, d, p, m) in {"lstm_small": (4, 8, 26, 8, 10), "lstm_batch": (4, 60, 351, 50, 10)}.items():
        X = rng.normal(size=(T, B, d)); W = rng.normal(0, .1, (4 * p, d)); U = rng.normal(0, .1, (4 * p, p))
        b = np.zeros(4 * p); peep = rng.normal(0, .1, (3, p)); V = rng.normal(0, .1, (m, p))
        h0 = np.zeros((B, p)); c0 = np.zeros((B, p))
        fwd = lstm_forward(X, W, U, b, peep, V, h0, c0)
        dY = rng.normal(size=fwd[0].shape)

        def step():
            Y, I, F, G, O, C, H = lstm_forward(X, W, U, b, peep, V, h0, c0)
            lstm_backward(X, U, peep, V, h0, c0, I, F, G, O, C, H, dY)

        out[name + "_fwd_bwd"] = timed(step)
    x = rng.gamma(2.0, 5.0, 180)
    out["holt_winters_grid"] = timed(bm.fit_holt_winters, x)
    out["holt_grid"] = timed(bm.fit_holt, x)
    out["ses_grid"] = timed(bm.fit_ewma, x, None)
    print(json.dumps(out))
""")


def run(disable: bool, repeat: int) -> dict:
    env = dict(os.environ)
    env.pop("DEMANDLSTM_DISABLE_NUMBA", None)
    if disable:
        env["DEMANDLSTM_DISABLE_NUMBA"] = "1"
    res = subprocess.run([sys.executable, "-c", WORKER, str(repeat)], env=env, capture_output=True,
                         text=True, check=True)
    return json.loads(res.stdout.strip().splitlines()[-1])


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    fast = run(False, args.repeat)
    slow = run(True, args.repeat)
    print(f"{'kernel':<22}{fast['backend'] + ' (ms)':>14}{slow['backend'] + ' (ms)':>14}{'speed-up':>10}")
    for key in fast:
        if key == "backend":
            continue
        a, b = fast[key] * 1e3, slow[key] * 1e3
        print(f"{key:<22}{a:>14.3f}{b:>14.3f}{b / a:>9.1f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())
