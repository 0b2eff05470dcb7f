"""Time the convolution kernels: compiled extension vs NumPy im2col.

Runs the three convolution shapes of the reference network through
forward, input-gradient and weight-gradient kernels for both backends,
checks they agree, and prints a speedup table.

    python3 benchmarks/bench_conv.py [--batch 64] [--repeats 20]
"""

import argparse
import time

import numpy as np

from spikeadapt.kernels import conv_numpy

try:
    from spikeadapt.kernels import _convext
except ImportError:
    _convext = None

# layer name, input [C,H,W], weight [F,C,kh,kw], stride, padding
SHAPES = [
    ("conv1", (3, 16, 16), (8, 3, 3, 3), 1, 1),
    ("conv2", (8, 16, 16), (16, 8, 3, 3), 2, 1),
    ("conv3", (16, 8, 8), (16, 16, 3, 3), 1, 1),
]


def best_of(fn, repeats):
    fn()                                    # warm up
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def bench_layer(name, cin_hw, wshape, stride, padding, batch, repeats, rng):
    x = rng.standard_normal((batch, *cin_hw))
    w = rng.standard_normal(wshape) * 0.1
    h, wdt = cin_hw[1], cin_hw[2]
    kh, kw = wshape[2], wshape[3]
    y = conv_numpy.conv2d_forward(x, w, stride, padding)
    gy = rng.standard_normal(y.shape)

    ops = {
        "forward": lambda m: m.conv2d_forward(x, w, stride, padding),
        "grad_in": lambda m: m.conv2d_grad_input(gy, w, stride, padding,
                                                 h, wdt),
        "grad_w": lambda m: m.conv2d_grad_weight(gy, x, stride, padding,
                                                 kh, kw),
    }
    rows = []
    for op, call in ops.items():
        t_np = best_of(lambda: call(conv_numpy), repeats)
        if _convext is None:
            rows.append((name, op, t_np, None, None))
            continue
        diff = float(np.max(np.abs(call(conv_numpy) - call(_convext))))
        if diff > 1e-9:
            raise AssertionError(f"{name}/{op}: backends disagree by {diff}")
        t_cy = best_of(lambda: call(_convext), repeats)
        rows.append((name, op, t_np, t_cy, t_np / t_cy))
    return rows


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--batch", type=int, default=64)
    ap.add_argument("--repeats", type=int, default=20)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    rng = np.random.default_rng(args.seed)
    rows = []
    for spec in SHAPES:
        rows.extend(bench_layer(*spec, args.batch, args.repeats, rng))

    if _convext is None:
        print("compiled extension not built; timing the NumPy backend only")
    print(f"batch={args.batch}  best of {args.repeats}  times in ms")
    print(f"{'layer':<7}{'op':<9}{'numpy':>9}{'cython':>9}{'speedup':>9}")
    for name, op, t_np, t_cy, ratio in rows:
        cy = f"{t_cy * 1e3:9.3f}" if t_cy is not None else f"{'-':>9}"
        sp = f"{ratio:8.2f}x" if ratio is not None else f"{'-':>9}"
        print(f"{name:<7}{op:<9}{t_np * 1e3:9.3f}{cy}{sp}")


if __name__ == "__main__":
    main()
