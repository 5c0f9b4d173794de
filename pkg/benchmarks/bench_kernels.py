"""Times the compiled kernels against the pure-Python fallback on the shapes
the network actually runs: stem and stage convolutions at batch 32, pooling,
and the biquad cascade over a full segment batch.

Run from the repository root:

    python3 benchmarks/bench_kernels.py [--repeats 5]
"""

import argparse
import time

import numpy as np

from emgssi import _kernels
from emgssi.dsp import FilterSpec, design_bandpass

# (label, in_channels, out_channels, kernel, stride, padding, in_len)
CONV_CASES = [
    ("stem conv 4->16 k7 s2, t=3000", 4, 16, 7, 2, 3, 3000),
    ("stage1 conv 16->16 k3 s1, t=750", 16, 16, 3, 1, 1, 750),
    ("stage2 conv 16->32 k3 s2, t=750", 16, 32, 3, 2, 1, 750),
    ("stage3 conv 32->64 k3 s2, t=375", 32, 64, 3, 2, 1, 375),
]
BATCH = 32


def timeit(fn, repeats):
    fn()  # warm up caches and any lazy setup
    best = float("inf")
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - start)
    return best


def conv_workloads(rng):
    for label, cin, cout, k, stride, pad, t in CONV_CASES:
        x = rng.normal(size=(BATCH, cin, t)).astype(np.float32)
        w = rng.normal(size=(cout, cin, k)).astype(np.float32)
        t_out = (t + 2 * pad - k) // stride + 1
        gy = rng.normal(size=(BATCH, cout, t_out)).astype(np.float32)
        yield (f"{label} forward",
               lambda x=x, w=w, s=stride, p=pad:
               _kernels.conv1d_forward(x, w, s, p))
        yield (f"{label} grad-input",
               lambda w=w, gy=gy, s=stride, p=pad, t=t:
               _kernels.conv1d_backward_input(w, gy, s, p, t))
        yield (f"{label} grad-weights",
               lambda x=x, gy=gy, s=stride, p=pad, k=k:
               _kernels.conv1d_backward_weights(x, gy, s, p, k))


def pool_workloads(rng):
    x = rng.normal(size=(BATCH, 16, 1500)).astype(np.float32)
    yield ("maxpool 16ch k3 s2, t=1500",
           lambda: _kernels.maxpool1d_forward(x, 3, 2, 1))


def filter_workloads(rng):
    cascade = design_bandpass(FilterSpec())
    sections = np.asarray(cascade.sections, dtype=np.float64)
    x = rng.normal(size=(BATCH * 4, 3000))
    yield ("biquad cascade, 128 rows x 3000",
           lambda: _kernels.sosfilt_many(sections, cascade.overall_gain, x))


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeats", type=int, default=5)
    args = parser.parse_args()

    backends = _kernels.available_backends()
    rng = np.random.default_rng(0)
    cases = list(conv_workloads(rng)) + list(pool_workloads(rng)) \
        + list(filter_workloads(rng))

    results = {}
    for backend in backends:
        _kernels.set_backend(backend)
        for label, fn in cases:
            results.setdefault(label, {})[backend] = timeit(fn, args.repeats)

    width = max(len(label) for label in results)
    header = f"{'case':<{width}}"
    for backend in backends:
        header += f"  {backend + ' [ms]':>12}"
    if "c" in backends and "python" in backends:
        header += f"  {'speedup':>8}"
    print(header)
    print("-" * len(header))
    for label, times in results.items():
        row = f"{label:<{width}}"
        for backend in backends:
            row += f"  {times[backend] * 1e3:>12.3f}"
        if "c" in times and "python" in times:
            row += f"  {times['python'] / times['c']:>7.1f}x"
        print(row)


if __name__ == "__main__":
    main()
