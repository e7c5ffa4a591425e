"""Time the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--batch 64]
"""

import argparse
import sys
import timeit

import numpy as np

from rscsnn.kernels import backends


def cases(batch: int, rng):
    x = rng.random((batch, 8, 8, 8))
    w = rng.normal(size=(16, 8, 3, 3))
    gy = rng.normal(size=(batch, 16, 8, 8))
    u = rng.normal(1.0, 0.5, (batch, 2048))
    return {
        "conv2d_forward": lambda k: k.conv2d_forward(x, w, 1, 1),
        "conv2d_backward": lambda k: k.conv2d_backward(x, w, gy, 1, 1),
        "lif_fire": lambda k: k.lif_fire(u, 1.0, 0.9, 1.0),
    }


def main(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--repeat", type=int, default=5)
    p.add_argument("--number", type=int, default=20)
    p.add_argument("--batch", type=int, default=64)
    args = p.parse_args(argv)

    found = backends()
    if "cython" not in found:
        print("compiled kernels unavailable; timing the numpy fallback only", file=sys.stderr)
    rng = np.random.default_rng(0)
    table = cases(args.batch, rng)
    print(f"{'kernel':<18}" + "".join(f"{name:>12}" for name in found) + ("     speedup" if len(found) > 1 else ""))
    for kname, fn in table.items():
        ref = None
        times = {}
        for bname, mod in found.items():
            out = fn(mod)
            if ref is None:
                ref = out
            else:
                pairs = zip(ref, out) if isinstance(ref, tuple) else [(ref, out)]
                for a, b in pairs:
                    np.testing.assert_allclose(a, b, rtol=1e-10, atol=1e-12)
            best = min(timeit.repeat(lambda: fn(mod), number=args.number, repeat=args.repeat))
            times[bname] = best / args.number * 1e3
        row = f"{kname:<18}" + "".join(f"{times[b]:>10.3f}ms" for b in found)
        if len(found) > 1:
            row += f"{times['python'] / times['cython']:>11.2f}x"
        print(row)
    return 0


if __name__ == "__main__":
    sys.exit(main())
