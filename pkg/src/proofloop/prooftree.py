"""Labeled n-ary proof trees: dependency checking, linearization, complexity
scoring, ordered tree edit distance, and the canonical line-oriented format.

Trees are immutable by convention after construction. Node ids are dense
(0..n-1); canonical trees number nodes in post-order, so the root is n-1.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Iterator, Optional, Sequence

from .kernel import (
    Justification,
    Statement,
    justification_to_text,
    parse_justification,
    parse_statement,
    statement_to_text,
    term_size,
)

MAX_TREE_DEPTH = 64

NodeId = int


@dataclass(frozen=True, slots=True)
class ProofNode:
    id: NodeId
    statement: Statement
    just: Justification
    children: tuple[NodeId, ...]


@dataclass(frozen=True, slots=True)
class ProofTree:
    goal: Statement
    root: NodeId
    nodes: dict[NodeId, ProofNode]
    cites: tuple[str, ...] = ()

    def __len__(self) -> int:
        return len(self.nodes)

    def node(self, nid: NodeId) -> ProofNode:
        return self.nodes[nid]


class LemmaLibrary:
    """Named statements available for citation, in insertion order."""

    def __init__(self, items: Sequence[tuple[str, Statement]] = ()):
        self._map: dict[str, Statement] = {}
        self._fp: Optional[int] = None
        for name, s in items:
            self.add(name, s)

    def add(self, name: str, s: Statement) -> None:
        if name in self._map:
            raise ValueError(f"duplicate lemma {name!r}")
        self._map[name] = s
        self._fp = None

    def get(self, name: str) -> Optional[Statement]:
        return self._map.get(name)

    def __contains__(self, name: str) -> bool:
        return name in self._map

    def __iter__(self) -> Iterator[tuple[str, Statement]]:
        return iter(self._map.items())

    def names(self) -> tuple[str, ...]:
        return tuple(self._map)

    def fingerprint(self) -> int:
        if self._fp is None:
            self._fp = hash(tuple((n, s) for n, s in self._map.items()))
        return self._fp


@dataclass(frozen=True, slots=True)
class CycleError(Exception):
    """Dependency relation has a cycle or forward reference; names one edge."""

    parent: NodeId
    child: NodeId

    def __str__(self) -> str:
        return f"cyclic dependency via edge {self.parent} -> {self.child}"


def topo_order(t: ProofTree) -> list[NodeId]:
    """Post-order listing (children before parents); raises CycleError."""
    order: list[NodeId] = []
    state: dict[NodeId, int] = {}  # 1 = on stack, 2 = done
    stack: list[tuple[NodeId, int]] = [(t.root, 0)]
    while stack:
        nid, ci = stack.pop()
        if ci == 0:
            if state.get(nid) == 2:
                continue
            state[nid] = 1
        node = t.nodes[nid]
        if ci < len(node.children):
            child = node.children[ci]
            stack.append((nid, ci + 1))
            cs = state.get(child)
            if cs == 1:
                raise CycleError(nid, child)
            if cs != 2:
                stack.append((child, 0))
        else:
            state[nid] = 2
            order.append(nid)
    return order


def tree_depth(t: ProofTree) -> int:
    """Longest root-to-leaf path, in nodes (single node -> 1)."""
    depth = {}
    for nid in topo_order(t):
        node = t.nodes[nid]
        depth[nid] = 1 + max((depth[c] for c in node.children), default=0)
    return depth[t.root]


def node_depths(t: ProofTree) -> dict[NodeId, int]:
    """Depth of each node below the root (root -> 1); cycle-tolerant."""
    depths = {t.root: 1}
    queue = [t.root]
    while queue:
        nid = queue.pop()
        for c in t.nodes[nid].children:
            if c not in depths:
                depths[c] = depths[nid] + 1
                queue.append(c)
    return depths


def statement_size(s: Statement) -> int:
    return term_size(s.lhs) + term_size(s.rhs) + 1 + len(s.binders)


def complexity(t: ProofTree) -> tuple[int, int]:
    """(total symbol count over node statements, logical depth)."""
    syntactic = sum(statement_size(n.statement) for n in t.nodes.values())
    return syntactic, tree_depth(t)


# ---------------------------------------------------------------------------
# Linearization


@dataclass(frozen=True, slots=True)
class StateAction:
    goal: Statement
    statement: Statement
    depth: int
    budget: int  # nodes remaining after this one in post-order
    action: Justification


def rule_arity(j: Justification) -> int:
    head = j.head()
    return {"JSym": 1, "JCong": 1, "JTrans": 2, "JInduction": 2}.get(head, 0)


def linearize(t: ProofTree) -> list[StateAction]:
    """Post-order state-action sequence; replay rebuilds the tree exactly."""
    order = topo_order(t)  # propagates CycleError
    depths = node_depths(t)
    total = len(order)
    return [
        StateAction(
            goal=t.goal,
            statement=t.nodes[nid].statement,
            depth=depths[nid],
            budget=total - i - 1,
            action=t.nodes[nid].just,
        )
        for i, nid in enumerate(order)
    ]


def delinearize(seq: Sequence[StateAction]) -> ProofTree:
    """Rebuild a canonical tree from a post-order sequence.

    Child counts come from the standard rule arities, which every
    generator-produced tree obeys.
    """
    stack: list[NodeId] = []
    nodes: dict[NodeId, ProofNode] = {}
    for i, sa in enumerate(seq):
        k = rule_arity(sa.action)
        if k > len(stack):
            raise ValueError(f"sequence underflow at position {i}")
        children = tuple(stack[len(stack) - k:])
        del stack[len(stack) - k:]
        nodes[i] = ProofNode(i, sa.statement, sa.action, children)
        stack.append(i)
    if len(stack) != 1:
        raise ValueError(f"sequence leaves {len(stack)} roots")
    return ProofTree(goal=seq[0].goal, root=stack[0], nodes=nodes)


def remap_justification(j: Justification, remap: dict[NodeId, NodeId]) -> Justification:
    """Hyp justifications reference node ids and must follow renumbering."""
    from .kernel import JHyp

    if isinstance(j, JHyp) and j.hyp_id in remap:
        return JHyp(remap[j.hyp_id])
    return j


def renumber_postorder(t: ProofTree) -> ProofTree:
    """Renumber node ids to post-order positions (canonical form)."""
    order = topo_order(t)
    remap = {old: new for new, old in enumerate(order)}
    nodes = {
        remap[old]: ProofNode(
            remap[old],
            t.nodes[old].statement,
            remap_justification(t.nodes[old].just, remap),
            tuple(remap[c] for c in t.nodes[old].children),
        )
        for old in order
    }
    return ProofTree(goal=t.goal, root=remap[t.root], nodes=nodes, cites=t.cites)


# ---------------------------------------------------------------------------
# Tree edit distance (ordered, unit-cost insert/delete/relabel)


def node_label(n: ProofNode) -> tuple[str, str]:
    return (statement_to_text(n.statement), n.just.head())


def _safe_children(t: ProofTree, nid: NodeId, on_path: set[NodeId]) -> list[NodeId]:
    # Back-edges (into the current root-path) are cut so flawed cyclic trees
    # still have a defined traversal for distance purposes.
    return [c for c in t.nodes[nid].children if c not in on_path]


def _postorder_labels(t: ProofTree) -> tuple[list[tuple[str, str]], list[int]]:
    """Post-order labels and leftmost-leaf-descendant indices (1-based lmd)."""
    labels: list[tuple[str, str]] = []
    lmd: list[int] = []

    def walk(nid: NodeId, path: set[NodeId]) -> int:
        path.add(nid)
        first: Optional[int] = None
        for c in _safe_children(t, nid, path):
            cl = walk(c, path)
            if first is None:
                first = cl
        path.discard(nid)
        labels.append(node_label(t.nodes[nid]))
        idx = len(labels)
        lmd.append(first if first is not None else idx)
        return lmd[idx - 1]

    walk(t.root, set())
    return labels, lmd


def tree_edit_distance(a: ProofTree, b: ProofTree) -> int:
    """Zhang-Shasha ordered tree edit distance with unit costs.

    Node label = (statement text, justification head).
    """
    la, lmda = _postorder_labels(a)
    lb, lmdb = _postorder_labels(b)
    n, m = len(la), len(lb)

    def keyroots(lmd: list[int]) -> list[int]:
        seen: set[int] = set()
        out = []
        for i in range(len(lmd), 0, -1):
            if lmd[i - 1] not in seen:
                out.append(i)
                seen.add(lmd[i - 1])
        out.reverse()
        return out

    kra, krb = keyroots(lmda), keyroots(lmdb)
    td = [[0] * (m + 1) for _ in range(n + 1)]

    for i in kra:
        for j in krb:
            li, lj = lmda[i - 1], lmdb[j - 1]
            rows = i - li + 2
            cols = j - lj + 2
            fd = [[0] * cols for _ in range(rows)]
            for di in range(1, rows):
                fd[di][0] = fd[di - 1][0] + 1
            for dj in range(1, cols):
                fd[0][dj] = fd[0][dj - 1] + 1
            for di in range(1, rows):
                x = li + di - 1
                for dj in range(1, cols):
                    y = lj + dj - 1
                    if lmda[x - 1] == li and lmdb[y - 1] == lj:
                        cost = 0 if la[x - 1] == lb[y - 1] else 1
                        fd[di][dj] = min(
                            fd[di - 1][dj] + 1,
                            fd[di][dj - 1] + 1,
                            fd[di - 1][dj - 1] + cost,
                        )
                        td[x][y] = fd[di][dj]
                    else:
                        pi = lmda[x - 1] - li
                        pj = lmdb[y - 1] - lj
                        fd[di][dj] = min(
                            fd[di - 1][dj] + 1,
                            fd[di][dj - 1] + 1,
                            fd[pi][pj] + td[x][y],
                        )
    return td[n][m]


# ---------------------------------------------------------------------------
# Canonical serialization


class TreeParseError(ValueError):
    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


def serialize(t: ProofTree) -> str:
    """Canonical text: header line, then one node record per line.

    Nodes are written in post-order when the tree is acyclic, falling back
    to id order for flawed trees whose dependency relation has cycles.
    """
    try:
        order = topo_order(t)
        # Unreachable nodes (possible after edge rewiring) still get records.
        rest = sorted(set(t.nodes) - set(order))
        order.extend(rest)
    except CycleError:
        order = sorted(t.nodes)
    lines = [f"goal\t{statement_to_text(t.goal)}\troot={t.root}"]
    for nid in order:
        n = t.nodes[nid]
        kids = ",".join(map(str, n.children))
        lines.append(
            f"{n.id}\t{statement_to_text(n.statement)}\t{justification_to_text(n.just)}\t{kids}"
        )
    return "\n".join(lines) + "\n"


def parse_tree(text: str) -> ProofTree:
    lines = text.splitlines()
    if not lines:
        raise TreeParseError("empty input", 1)
    head = lines[0].split("\t")
    if len(head) != 3 or head[0] != "goal" or not head[2].startswith("root="):
        raise TreeParseError("malformed header", 1)
    try:
        goal = parse_statement(head[1])
        root = int(head[2][5:])
    except ValueError as e:
        raise TreeParseError(str(e), 1) from None
    nodes: dict[NodeId, ProofNode] = {}
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 4:
            raise TreeParseError("expected 4 tab-separated fields", lineno)
        try:
            nid = int(parts[0])
            s = parse_statement(parts[1])
            j = parse_justification(parts[2])
            children = tuple(int(c) for c in parts[3].split(",")) if parts[3] else ()
        except ValueError as e:
            raise TreeParseError(str(e), lineno) from None
        if nid in nodes:
            raise TreeParseError(f"duplicate node id {nid}", lineno)
        nodes[nid] = ProofNode(nid, s, j, children)
    if root not in nodes:
        raise TreeParseError(f"root {root} has no record", 1)
    for n in nodes.values():
        for c in n.children:
            if c not in nodes:
                raise TreeParseError(f"node {n.id} cites missing child {c}", 1)
    return ProofTree(goal=goal, root=root, nodes=nodes)


def validate_tree(t: ProofTree) -> None:
    """Structural well-formedness: dense ids, reachability, depth bound,
    root statement equals goal. Raises ValueError/CycleError."""
    if set(t.nodes) != set(range(len(t.nodes))):
        raise ValueError("node ids are not dense")
    order = topo_order(t)
    if set(order) != set(t.nodes):
        raise ValueError("unreachable nodes present")
    if tree_depth(t) > MAX_TREE_DEPTH:
        raise ValueError("tree exceeds depth bound")
    if t.nodes[t.root].statement != t.goal:
        raise ValueError("root statement differs from goal")
