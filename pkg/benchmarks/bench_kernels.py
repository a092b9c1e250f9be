"""Time the numba kernels against their numpy twins, then a whole pipeline
run under each backend (``DJET_DISABLE_NUMBA`` selects the backend per process).

    python3 benchmarks/bench_kernels.py [--size 59049] [--repeat 5]
"""
import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from djet import _kernels

PIPELINE = """
import time
from djet.corpus import unit_interval, builtin_field
from djet.tensor_frames import Frame
from djet.difference_quotients import step_schedule
from djet.diffuse_jets import estimate_diffuse_jet
from djet.mollifier import assemble
dom = unit_interval(3**9); g = dom.g
u = builtin_field("sin", dom); fr = Frame.standard(1, 1)
sched = step_schedule(1, 729 * g, 1 / 3, 7, g)
estimate_diffuse_jet(u, fr, sched); assemble(u, fr, sched[-1], 0.1)
t = time.perf_counter()
estimate_diffuse_jet(u, fr, sched); assemble(u, fr, sched[-1], 0.1)
print(time.perf_counter() - t)
"""


def cases(size, rng):
    coords = rng.normal(scale=2.0, size=(size, 3))
    values = rng.normal(size=(size, 4))
    ncubes = size // 27
    cube_of = np.repeat(np.arange(ncubes), 27)
    cube_of = np.concatenate([cube_of, np.full(size - len(cube_of), -1)])
    center_row = np.arange(ncubes) * 27 + 13
    side = int(round(size ** 0.5))
    grid = rng.normal(size=(side, side, 2))
    active = np.ones((side, side), dtype=bool)
    offsets = np.array([(i, j) for i in range(-3, 4) for j in range(-3, 4)])
    line = rng.normal(size=(1, size, 2))
    kernel = np.hanning(41)
    kernel /= kernel.sum()
    return {
        "bin_index": (coords, 4.0, 9),
        "center_deviation": (values, cube_of, center_row, ncubes),
        "cube_max": (values, cube_of, ncubes),
        "offset_modulus": (grid, active, offsets),
        "convolve_axis": (line, kernel),
    }


def bench(impl, args, repeat):
    impl(*args)  # warm-up (and JIT compile)
    return min(timeit.repeat(lambda: impl(*args), number=1, repeat=repeat))


def pipeline_seconds(disable):
    env = dict(os.environ, DJET_DISABLE_NUMBA="1" if disable else "0")
    res = subprocess.run([sys.executable, "-c", PIPELINE], env=env, capture_output=True, text=True, check=True)
    return float(res.stdout.strip().splitlines()[-1])


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--size", type=int, default=3**10)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--skip-pipeline", action="store_true")
    args = ap.parse_args(argv)
    if _kernels.NUMBA_IMPL is None:
        print("numba unavailable (or disabled); only numpy timings are meaningful")
    rng = np.random.default_rng(0)
    print(f"{'kernel':18s} {'numpy [ms]':>11s} {'numba [ms]':>11s} {'speedup':>8s}")
    for name, call in cases(args.size, rng).items():
        t_np = bench(_kernels.NUMPY_IMPL[name], call, args.repeat)
        if _kernels.NUMBA_IMPL is None:
            print(f"{name:18s} {1e3 * t_np:11.2f} {'-':>11s} {'-':>8s}")
            continue
        t_nb = bench(_kernels.NUMBA_IMPL[name], call, args.repeat)
        print(f"{name:18s} {1e3 * t_np:11.2f} {1e3 * t_nb:11.2f} {t_np / t_nb:8.2f}")
    if not args.skip_pipeline:
        t_np = pipeline_seconds(True)
        t_nb = pipeline_seconds(False)
        print(f"{'estimate+assemble':18s} {1e3 * t_np:11.1f} {1e3 * t_nb:11.1f} {t_np / t_nb:8.2f}")


if __name__ == "__main__":
    main()
