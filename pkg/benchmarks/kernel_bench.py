#!/usr/bin/env python3
"""Time the compiled kernels against their pure-Python fallbacks.

Usage: python benchmarks/kernel_bench.py [--tokens N] [--repeats K]
"""

from __future__ import annotations

import argparse
import random
import time
from array import array

from fedleak._kernels import pure

try:
    from fedleak._kernels import _speedups
except ImportError:
    _speedups = None


def bench(fn, repeats):
    best = float("inf")
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - start)
    return best


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--tokens", type=int, default=200_000)
    parser.add_argument("--repeats", type=int, default=3)
    args = parser.parse_args()

    rng = random.Random(0)
    ids = [rng.randrange(2_000) for _ in range(args.tokens)]
    ids[:: args.tokens // 500] = [0] * len(ids[:: args.tokens // 500])
    ids_q = array("q", ids)

    docs = [
        [rng.randrange(300) for _ in range(rng.randint(20, 120))]
        for _ in range(2_000)
    ]
    docs_q = [array("q", d) for d in docs]
    needles = [
        [rng.randrange(300) for _ in range(rng.randint(2, 5))]
        for _ in range(300)
    ]
    needles_q = [array("q", n) for n in needles]

    seq_a = [rng.randrange(40) for _ in range(600)]
    seq_b = [rng.randrange(40) for _ in range(600)]
    seq_aq, seq_bq = array("q", seq_a), array("q", seq_b)
    flat = [t for d in docs for t in d]
    flat_q = array("q", flat)

    cases = [
        (
            f"count_ngrams ({args.tokens} tokens, order 5)",
            lambda: pure.count_ngrams(ids, 5, 0),
            lambda: _speedups.count_ngrams(ids_q, 5, 0),
        ),
        (
            "doc_frequencies (2000 docs x 300 needles)",
            lambda: pure.doc_frequencies(docs, needles),
            lambda: _speedups.doc_frequencies(docs_q, needles_q),
        ),
        (
            "contains_flags (one big haystack)",
            lambda: pure.contains_flags(flat, needles),
            lambda: _speedups.contains_flags(flat_q, needles_q),
        ),
        (
            "edit_distance (600 x 600)",
            lambda: pure.edit_distance(seq_a, seq_b),
            lambda: _speedups.edit_distance(seq_aq, seq_bq),
        ),
    ]

    print(f"{'kernel':45s} {'pure':>10s} {'compiled':>10s} {'speedup':>8s}")
    for name, pure_fn, fast_fn in cases:
        pure_t = bench(pure_fn, args.repeats)
        if _speedups is None:
            print(f"{name:45s} {pure_t * 1e3:9.1f}ms {'-':>10s} {'-':>8s}")
            continue
        fast_t = bench(fast_fn, args.repeats)
        print(
            f"{name:45s} {pure_t * 1e3:9.1f}ms {fast_t * 1e3:9.1f}ms "
            f"{pure_t / fast_t:7.1f}x"
        )
    if _speedups is None:
        print("\ncompiled kernels not built; showing pure timings only")


if __name__ == "__main__":
    main()
