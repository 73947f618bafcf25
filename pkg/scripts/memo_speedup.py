#!/usr/bin/env python3
"""Measure batch-verification speedup from subtree memoization as a function
of the duplicate fraction in the batch.

Usage: python3 scripts/memo_speedup.py [--size 500] [--seed 42]
"""

import argparse
import statistics
import time

from proofloop.corpus import GenBounds, InjectionConfig, build_corpus, default_library
from proofloop.verifier import VerifierConfig, verify_batch


def timed(trees, lib, cfg, reps=3):
    times = []
    for _ in range(reps):
        t0 = time.perf_counter()
        verify_batch(trees, lib, cfg)
        times.append(time.perf_counter() - t0)
    return statistics.median(times)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--size", type=int, default=500, help="unique trees per batch")
    ap.add_argument("--seed", type=int, default=42)
    args = ap.parse_args()

    lib = default_library()
    corpus, _ = build_corpus(
        InjectionConfig(seed=args.seed), GenBounds(), args.size + 200, lib
    )
    base = [p.tree for p in corpus[: args.size]]

    print(f"{'dup frac':>8}  {'memo on (s)':>11}  {'memo off (s)':>12}  {'speedup':>7}")
    for dup in (0.0, 0.25, 0.5, 0.75):
        n_dup = int(len(base) * dup / (1 - dup)) if dup < 1 else len(base)
        trees = base + base[:n_dup]
        on = timed(trees, lib, VerifierConfig(memoize=True))
        off = timed(trees, lib, VerifierConfig(memoize=False))
        print(f"{dup:8.2f}  {on:11.4f}  {off:12.4f}  {off / on:7.2f}x")


if __name__ == "__main__":
    main()
