"""Independent oracle for ordered tree edit distance.

Implements the mapping definition directly: the distance between two ordered
labeled trees is the minimum, over all valid edit mappings M, of

    relabel cost within M  +  nodes of A left unmapped  +  nodes of B unmapped

where a valid mapping is injective and preserves both post-order and the
ancestor relation.  This is exponential but exact, and shares no code with
the dynamic-programming implementation under test.

Trees here are nested tuples ``(label, (child, ...))``.
"""

from __future__ import annotations

from itertools import combinations, permutations

from proofloop.kernel import JRefl, parse_statement
from proofloop.prooftree import ProofNode, ProofTree


def flatten(tree) -> tuple[list, list[frozenset[int]]]:
    """Post-order labels plus, per node, the set of its proper descendants."""
    labels: list = []
    desc: list[frozenset[int]] = []

    def walk(t) -> frozenset[int]:
        label, children = t
        mine: set[int] = set()
        for c in children:
            child_desc = walk(c)
            mine |= child_desc
            mine.add(len(labels) - 1)
        labels.append(label)
        desc.append(frozenset(mine))
        return frozenset(mine | {len(labels) - 1})

    walk(tree)
    return labels, desc


def oracle_ted(a, b) -> int:
    la, da = flatten(a)
    lb, db = flatten(b)
    n, m = len(la), len(lb)
    best = n + m  # empty mapping: delete everything, insert everything
    for k in range(1, min(n, m) + 1):
        for asel in combinations(range(n), k):
            for bperm in permutations(range(m), k):
                # post-order must be preserved: bperm ascending
                if any(bperm[i] >= bperm[i + 1] for i in range(k - 1)):
                    continue
                ok = True
                for i in range(k):
                    for j in range(k):
                        if (asel[j] in da[asel[i]]) != (bperm[j] in db[bperm[i]]):
                            ok = False
                            break
                    if not ok:
                        break
                if not ok:
                    continue
                cost = sum(1 for i in range(k) if la[asel[i]] != lb[bperm[i]])
                cost += (n - k) + (m - k)
                best = min(best, cost)
    return best


# Bridge: the same abstract tree as a ProofTree, so the implementation under
# test sees its native input.  Labels map to distinct (statement, rule) pairs.

_LABEL_STMTS = {
    0: parse_statement("0 = 0"),
    1: parse_statement("S(0) = S(0)"),
    2: parse_statement("S(S(0)) = S(S(0))"),
}


def to_prooftree(tree) -> ProofTree:
    nodes: dict[int, ProofNode] = {}

    def walk(t) -> int:
        label, children = t
        kids = tuple(walk(c) for c in children)
        nid = len(nodes)
        nodes[nid] = ProofNode(nid, _LABEL_STMTS[label], JRefl(), kids)
        return nid

    root = walk(tree)
    return ProofTree(goal=nodes[root].statement, root=root, nodes=nodes)


def all_shapes(n: int) -> list:
    """All ordered tree shapes with exactly n unlabeled nodes."""
    if n == 1:
        return [(None, ())]
    out = []
    for parts in _compositions(n - 1):
        for kids in _products([all_shapes(p) for p in parts]):
            out.append((None, tuple(kids)))
    return out


def _compositions(n: int):
    if n == 0:
        yield ()
        return
    for first in range(1, n + 1):
        for rest in _compositions(n - first):
            yield (first,) + rest


def _products(pools):
    if not pools:
        yield ()
        return
    for head in pools[0]:
        for rest in _products(pools[1:]):
            yield (head,) + rest


def labelings(shape, n_labels: int):
    """Every labeling of a shape with labels 0..n_labels-1."""
    label, children = shape
    child_pools = [list(labelings(c, n_labels)) for c in children]
    for lab in range(n_labels):
        for kids in _products(child_pools):
            yield (lab, tuple(kids))


def all_labeled_trees(max_nodes: int, n_labels: int) -> list:
    out = []
    for n in range(1, max_nodes + 1):
        for shape in all_shapes(n):
            out.extend(labelings(shape, n_labels))
    return out
