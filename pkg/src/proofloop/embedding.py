"""Fixed symbolic statement embeddings shared by drift injection and drift
detection: normalized constructor counts, max term depth, binder count."""

from __future__ import annotations

import numpy as np

from .kernel import Add, Mul, Statement, Succ, Term, Var, Zero, term_depth

EMBED_DIM = 7


def embed(s: Statement) -> np.ndarray:
    counts = {Zero: 0, Succ: 0, Add: 0, Mul: 0, Var: 0}

    def walk(t: Term) -> None:
        counts[type(t)] += 1
        if isinstance(t, Succ):
            walk(t.inner)
        elif isinstance(t, (Add, Mul)):
            walk(t.lhs)
            walk(t.rhs)

    walk(s.lhs)
    walk(s.rhs)
    total = max(sum(counts.values()), 1)
    return np.array(
        [
            counts[Zero] / total,
            counts[Succ] / total,
            counts[Add] / total,
            counts[Mul] / total,
            counts[Var] / total,
            max(term_depth(s.lhs), term_depth(s.rhs)),
            len(s.binders),
        ],
        dtype=float,
    )


def cosine(u: np.ndarray, v: np.ndarray) -> float:
    nu = float(np.linalg.norm(u))
    nv = float(np.linalg.norm(v))
    if nu == 0.0 or nv == 0.0:
        return 0.0
    return float(u @ v) / (nu * nv)
