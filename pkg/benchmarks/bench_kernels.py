"""Compare the compiled and pure-Python kernel backends.

Usage: python3 benchmarks/bench_kernels.py [--repeat N] [--json out.json]
"""
import argparse
import json
import sys
import timeit

import numpy as np

from nwrap.jpeg import STD_AC, STD_DC, quantize_plane
from nwrap.kernels import available_backends


def _workloads(rng):
    x = np.ascontiguousarray(np.pad(rng.standard_normal((1, 24, 128, 128)), ((0, 0), (0, 0), (1, 1), (1, 1))))
    k = np.ascontiguousarray(rng.standard_normal((24, 3, 3)))
    g = np.ascontiguousarray(rng.standard_normal((1, 24, 128, 128)))
    yy, xx = np.mgrid[0:256, 0:256]
    plane = np.clip(128 + 60 * np.sin(xx / 9.0) * np.cos(yy / 13.0) + rng.normal(0, 6, (256, 256)), 0, 255)
    zz, _, _ = quantize_plane(plane.round(), 75)
    dc, ac = STD_DC.encoder(), STD_AC.encoder()
    return {
        "dwconv_forward 24x128x128": lambda m: m.dwconv_forward(x, k, 1, 128, 128),
        "dwconv_backward 24x128x128": lambda m: m.dwconv_backward(x, k, g, 1),
        "entropy_count 256x256": lambda m: m.entropy_count(zz, *dc, *ac),
        "entropy_encode 256x256": lambda m: m.entropy_encode(zz, *dc, *ac),
    }


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=5)
    p.add_argument("--json", default=None)
    args = p.parse_args(argv)
    backends = available_backends()
    if "cython" not in backends:
        print("compiled backend not built; only the Python fallback is timed", file=sys.stderr)
    rows = []
    for name, fn in _workloads(np.random.default_rng(0)).items():
        times = {b: min(timeit.repeat(lambda: fn(m), number=1, repeat=args.repeat)) for b, m in backends.items()}
        speedup = times["python"] / times["cython"] if "cython" in times else float("nan")
        rows.append({"kernel": name, **{f"{b}_ms": round(t * 1e3, 3) for b, t in times.items()},
                     "speedup": round(speedup, 2)})
        print(f"{name:30s} " + "  ".join(f"{b}={t * 1e3:9.3f} ms" for b, t in times.items())
              + f"  speedup={speedup:6.2f}x")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(rows, fh, indent=2)


if __name__ == "__main__":
    main()
