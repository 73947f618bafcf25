#!/usr/bin/env python3
"""Train the proposer policy on a generated curriculum and report held-out
first-pass success (FPSR) for the untrained and trained policies, bucketed
by goal difficulty.

Usage: python3 scripts/train_curve.py [--updates 200] [--seed 42] [--size 800]
"""

import argparse

from proofloop.corpus import GenBounds, InjectionConfig, SplitConfig, build_corpus, \
    default_library, split
from proofloop.policy import (
    PolicyParams,
    TrainConfig,
    curriculum_schedule,
    evaluate_fpsr,
    train,
)
from proofloop.prooftree import tree_depth


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--updates", type=int, default=200)
    ap.add_argument("--seed", type=int, default=42)
    ap.add_argument("--size", type=int, default=800)
    args = ap.parse_args()

    lib = default_library()
    corpus, _ = build_corpus(InjectionConfig(seed=args.seed), GenBounds(), args.size, lib)
    assigned, _ = split(corpus, SplitConfig(seed=args.seed))

    cfg = TrainConfig(updates=args.updates, max_steps=32, lr=0.08, seed=args.seed)
    goals = [g for _, g in curriculum_schedule(
        [p for p in assigned if p.split == "train"]
    )]
    print(f"training on {len(goals)} goals, {args.updates} updates ...")
    lines = []
    params, _ = train(goals, lib, cfg, log=lines.append)
    for line in lines[:: max(1, len(lines) // 10)]:
        print(" ", line)

    held = [p for p in assigned if p.split in ("val", "test") and p.label == "valid"]
    buckets = {
        "easy (depth<=2)": [p.tree.goal for p in held if tree_depth(p.tree) <= 2],
        "medium (3-4)": [p.tree.goal for p in held if 3 <= tree_depth(p.tree) <= 4],
        "hard (>=5)": [p.tree.goal for p in held if tree_depth(p.tree) >= 5],
    }
    print(f"\n{'bucket':>16}  {'n':>4}  {'untrained':>9}  {'trained':>8}")
    for name, goals in buckets.items():
        if not goals:
            continue
        f0 = evaluate_fpsr(PolicyParams.zeros(), goals, lib, cfg, seed=7)
        f1 = evaluate_fpsr(params, goals, lib, cfg, seed=7)
        print(f"{name:>16}  {len(goals):>4}  {f0:9.3f}  {f1:8.3f}")


if __name__ == "__main__":
    main()
