"""Time the numba and pure-numpy convolution kernels, then one full training step under each.

    python benchmarks/bench_kernels.py [--repeat 5]
"""
import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from dualdual import kernels as K

# (batch, c_in, side, c_out) for the layers a depth-4 generator and critic actually see
SHAPES = [(1, 1, 16, 16), (1, 16, 8, 32), (1, 64, 2, 128), (1, 256, 4, 64), (5, 16, 16, 16)]

STEP_SCRIPT = """
import time
from dualdual import trainer as tr
from dualdual.config import RunConfig
from dualdual.networks import build_model
from dualdual.signal_io import synthesize_dataset
cfg = RunConfig()
pairs = synthesize_dataset(16, 0)
state = tr.init_state(build_model(cfg, 0), cfg, 0)
data = tr.to_matrices(pairs, cfg.generator.depth)
tr.train_step(state, data)  # compile / warm up
t0 = time.perf_counter()
for _ in range({steps}):
    tr.train_step(state, data)
print((time.perf_counter() - t0) / {steps})
"""


def time_kernels(repeat):
    rng = np.random.default_rng(0)
    rows = []
    for n, c, side, o in SHAPES:
        x = rng.normal(size=(n, c, side, side))
        w = rng.normal(size=(o, c, 3, 3))
        y = K.conv2d_forward(x, w, 1, 1, use_numba=False)
        gy = rng.normal(size=y.shape)
        for use in (True, False):
            K.conv2d_forward(x, w, 1, 1, use_numba=use)  # compile
            K.conv2d_backward_input(gy, w, x.shape, 1, 1, use_numba=use)
            K.conv2d_backward_weight(x, gy, w.shape, 1, 1, use_numba=use)
        row = [f"{n}x{c}x{side}x{side}->{o}"]
        for use in (True, False):
            def one():
                K.conv2d_forward(x, w, 1, 1, use_numba=use)
                K.conv2d_backward_input(gy, w, x.shape, 1, 1, use_numba=use)
                K.conv2d_backward_weight(x, gy, w.shape, 1, 1, use_numba=use)
            number = 50
            row.append(min(timeit.repeat(one, number=number, repeat=repeat)) / number * 1e6)
        rows.append(row)
    return rows


def time_step(pure, steps):
    env = dict(os.environ, DUALDUAL_PURE_NUMPY="1" if pure else "0")
    out = subprocess.run([sys.executable, "-c", STEP_SCRIPT.format(steps=steps)], env=env, check=True,
                         capture_output=True, text=True)
    return float(out.stdout.strip())


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--steps", type=int, default=5)
    args = ap.parse_args()
    if not K.HAS_NUMBA:
        sys.exit("numba is not importable; nothing to compare")
    print(f"{'conv fwd+bwd':<24}{'numba us':>12}{'numpy us':>12}{'speedup':>10}")
    for name, nb_us, np_us in time_kernels(args.repeat):
        print(f"{name:<24}{nb_us:>12.1f}{np_us:>12.1f}{np_us / nb_us:>10.2f}")
    nb_s, np_s = time_step(False, args.steps), time_step(True, args.steps)
    print(f"\ntraining step (depth 4, N=5): numba {nb_s * 1e3:.1f} ms, numpy {np_s * 1e3:.1f} ms, "
          f"speedup {np_s / nb_s:.2f}")


if __name__ == "__main__":
    main()
