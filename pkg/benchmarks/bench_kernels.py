"""Benchmark the compiled Merkle kernels against the pure-Python fallback.

Runs the three hot loops (leaf hashing, level construction, proof folding)
over a few tree sizes and prints per-call timings plus the speedup of the
compiled extension.  Usage:

    python3 benchmarks/bench_kernels.py [--sizes 256,2048,16384] [--repeat 5]

The same comparison can be forced on the whole package by exporting
DELTAMONEY_PURE_PYTHON=1 before importing deltamoney.
"""

import argparse
import os
import timeit

from deltamoney._kernels import _merkle_py

try:
    from deltamoney._kernels import _merkle_cy
except ImportError:
    _merkle_cy = None


def _payloads(n, size=120, seed=1234):
    rng = __import__("random").Random(seed)
    return [rng.randbytes(size) for _ in range(n)]


def _bench(fn, repeat, number):
    # Best of `repeat` runs, reported per call.
    return min(timeit.repeat(fn, repeat=repeat, number=number)) / number


def run(sizes, repeat):
    backends = [("python", _merkle_py)]
    if _merkle_cy is not None:
        backends.append(("compiled", _merkle_cy))
    else:
        print("compiled extension not available; timing the fallback only")

    header = f"{'kernel':<14} {'n':>7}"
    for name, _ in backends:
        header += f" {name + ' (us)':>14}"
    if len(backends) == 2:
        header += f" {'speedup':>9}"
    print(header)
    print("-" * len(header))

    for n in sizes:
        payloads = _payloads(n)
        leaves = _merkle_py.hash_leaves(payloads)
        levels = _merkle_py.build_levels(leaves)
        # Authentication path for the middle leaf, rebuilt from the levels.
        path = []
        idx = n // 2
        for level in levels[:-1]:
            if idx % 2 == 0 and idx + 1 < len(level):
                path.append((1, level[idx + 1]))
            elif idx % 2 == 1:
                path.append((0, level[idx - 1]))
            idx //= 2
        number = max(1, 20000 // n)

        cases = [
            ("hash_leaves", lambda mod: lambda: mod.hash_leaves(payloads)),
            ("build_levels", lambda mod: lambda: mod.build_levels(leaves)),
            ("fold_proof", lambda mod: lambda: mod.fold_proof(leaves[n // 2], path)),
        ]
        for kernel, make in cases:
            times = []
            for _, mod in backends:
                fold_number = number * 50 if kernel == "fold_proof" else number
                times.append(_bench(make(mod), repeat, fold_number))
            row = f"{kernel:<14} {n:>7}"
            for t in times:
                row += f" {t * 1e6:>14.2f}"
            if len(times) == 2:
                row += f" {times[0] / times[1]:>8.2f}x"
            print(row)
        print()

    # Sanity: both backends must agree bit for bit on a sample tree.
    if _merkle_cy is not None:
        sample = _payloads(257, seed=99)
        a = _merkle_py.build_levels(_merkle_py.hash_leaves(sample))[-1][0]
        b = _merkle_cy.build_levels(_merkle_cy.hash_leaves(sample))[-1][0]
        assert a == b, "backend outputs diverge"
        print("backend agreement check: ok")


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--sizes", default="256,2048,16384",
                        help="comma-separated leaf counts")
    parser.add_argument("--repeat", type=int, default=5,
                        help="timing repetitions (best is reported)")
    args = parser.parse_args()
    sizes = [int(s) for s in args.sizes.split(",") if s]
    if os.environ.get("DELTAMONEY_PURE_PYTHON"):
        print("note: DELTAMONEY_PURE_PYTHON is set; package-level imports "
              "use the fallback, but this script times both backends anyway")
    run(sizes, args.repeat)


if __name__ == "__main__":
    main()
