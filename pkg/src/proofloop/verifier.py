"""Verification engine over the kernel: whole-tree reports, wall-clock
timeouts, subtree-memoized batch verification, and a learned verdict
approximator used to skip unpromising rollout branches.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from .kernel import (
    TIMEOUT,
    JCiteLemma,
    JInduction,
    JSubstLemma,
    Reason,
    Statement,
    StepVerdict,
    check_step,
    induction_hypothesis,
    invalid,
    term_depth,
)
from .prooftree import CycleError, LemmaLibrary, NodeId, ProofTree, topo_order, tree_depth


@dataclass(frozen=True)
class VerifierConfig:
    timeout_per_proof: float = 0.5  # seconds
    memoize: bool = True
    approx_skip_threshold: float = 0.0

    def __post_init__(self):
        if self.timeout_per_proof < 0:
            raise ValueError("timeout must be >= 0")
        if not 0.0 <= self.approx_skip_threshold <= 1.0:
            raise ValueError("skip threshold must lie in [0, 1]")


@dataclass
class VerifyReport:
    tree_id: str
    verdicts: dict[NodeId, StepVerdict]
    overall_valid: bool
    failed_node: Optional[NodeId]
    latency_ms: float
    cache_hits: int = 0
    cache_misses: int = 0

    def valid_node_count(self) -> int:
        return sum(1 for v in self.verdicts.values() if v.is_valid)


@dataclass
class BatchStats:
    trees: int
    valid: int
    cache_hits: int
    cache_misses: int
    mean_latency_ms: float

    @property
    def cache_hit_rate(self) -> float:
        total = self.cache_hits + self.cache_misses
        return self.cache_hits / total if total else 0.0

    def summary_line(self) -> str:
        return (
            f"trees={self.trees} valid={self.valid} "
            f"cache_hit_rate={self.cache_hit_rate:.3f} "
            f"mean_latency_ms={self.mean_latency_ms:.3f}"
        )


VerifyCache = dict  # SubtreeKey -> StepVerdict


def hyp_environments(t: ProofTree) -> dict[NodeId, dict[int, Statement]]:
    """Per-node hypothesis scope: an Induction node provides its IH to all
    of its children's subtrees. Cycle-tolerant (first-visit wins)."""
    envs: dict[NodeId, dict[int, Statement]] = {t.root: {}}
    stack = [t.root]
    while stack:
        nid = stack.pop()
        node = t.nodes[nid]
        env = envs[nid]
        child_env = env
        if isinstance(node.just, JInduction) and node.just.var in node.statement.binders:
            child_env = dict(env)
            child_env[nid] = induction_hypothesis(node.statement, node.just.var)
        for c in node.children:
            if c not in envs:
                envs[c] = child_env
                stack.append(c)
    return envs


def _subtree_keys(
    t: ProofTree,
    order: Sequence[NodeId],
    envs: Mapping[NodeId, Mapping[int, Statement]],
    lib_fp: int,
) -> dict[NodeId, int]:
    """Canonical per-subtree hash; dependency-aware (library + hypotheses)."""
    keys: dict[NodeId, int] = {}
    env_fps: dict[int, int] = {}  # sibling nodes share env dicts; hash each once
    for nid in order:
        n = t.nodes[nid]
        env = envs[nid]
        if env:
            hyp_fp = env_fps.get(id(env))
            if hyp_fp is None:
                hyp_fp = env_fps[id(env)] = hash(frozenset(env.items()))
        else:
            hyp_fp = 0
        keys[nid] = hash(
            (n.statement, n.just, tuple(keys[c] for c in n.children), lib_fp, hyp_fp)
        )
    return keys


def verify_tree(
    t: ProofTree,
    lib: LemmaLibrary,
    cfg: VerifierConfig,
    cache: Optional[VerifyCache] = None,
    tree_id: str = "",
    key_memo: Optional[dict] = None,
) -> VerifyReport:
    """Verify every node; post-order; first Invalid node is the failure locus.

    Cyclic dependency structure marks the offending edge's parent Invalid
    (its premise is not derivable before it); remaining nodes are checked
    node-locally so per-step statistics stay meaningful.
    """
    start = time.perf_counter()
    deadline = start + cfg.timeout_per_proof
    envs = hyp_environments(t)
    verdicts: dict[NodeId, StepVerdict] = {}
    hits = misses = 0

    try:
        order = topo_order(t)
        cycle_parent: Optional[NodeId] = None
    except CycleError as e:
        order = sorted(set(envs))  # reachable nodes, id order
        cycle_parent = e.parent

    use_cache = cache is not None and cfg.memoize and cycle_parent is None
    if use_cache:
        # Repeated tree objects in a batch (structural sharing) reuse their
        # key table; keys depend only on the tree and the library.
        keys = key_memo.get(id(t)) if key_memo is not None else None
        if keys is None:
            keys = _subtree_keys(t, order, envs, lib.fingerprint())
            if key_memo is not None:
                key_memo[id(t)] = keys
    else:
        keys = {}

    def local_check(nid: NodeId) -> StepVerdict:
        n = t.nodes[nid]
        premises = [t.nodes[c].statement for c in n.children]
        return check_step(n.statement, n.just, premises, dict(lib), envs.get(nid, {}))

    if use_cache:
        hits, misses = _verify_memoized(t, cache, keys, verdicts, local_check, deadline)
    else:
        for nid in order:
            if time.perf_counter() > deadline:
                break
            verdicts[nid] = local_check(nid)
            misses += 1

    for nid in order:
        verdicts.setdefault(nid, TIMEOUT)
    for nid in set(t.nodes) - set(verdicts):
        verdicts[nid] = local_check(nid)  # unreachable nodes, flawed trees only

    if cycle_parent is not None:
        verdicts[cycle_parent] = invalid(Reason.PREMISE_MISMATCH)

    overall = all(v.is_valid for v in verdicts.values()) and cycle_parent is None
    failed = None
    for nid in order:
        v = verdicts[nid]
        if not v.is_valid:
            failed = nid
            break
    if failed is None and cycle_parent is not None:
        failed = cycle_parent
    latency_ms = (time.perf_counter() - start) * 1000.0
    return VerifyReport(tree_id, verdicts, overall, failed, latency_ms, hits, misses)


def _verify_memoized(t, cache, keys, verdicts, local_check, deadline) -> tuple[int, int]:
    hits = misses = 0
    stack: list[tuple[NodeId, bool]] = [(t.root, False)]
    while stack:
        nid, expanded = stack.pop()
        if nid in verdicts:
            continue
        if time.perf_counter() > deadline:
            break
        if not expanded:
            hit = cache.get(keys[nid])
            if hit is not None:
                hits += _fill_from_cache(t, cache, keys, verdicts, nid)
                continue
            stack.append((nid, True))
            for c in t.nodes[nid].children:
                stack.append((c, False))
        else:
            v = local_check(nid)
            verdicts[nid] = v
            cache[keys[nid]] = v
            misses += 1
    return hits, misses


def _fill_from_cache(t, cache, keys, verdicts, root: NodeId) -> int:
    count = 0
    stack = [root]
    while stack:
        nid = stack.pop()
        if nid in verdicts:
            continue
        verdicts[nid] = cache[keys[nid]]
        count += 1
        stack.extend(t.nodes[nid].children)
    return count


def verify_batch(
    trees: Sequence[ProofTree],
    lib: LemmaLibrary,
    cfg: VerifierConfig,
    workers: int = 1,
    tree_ids: Optional[Sequence[str]] = None,
) -> tuple[list[VerifyReport], BatchStats]:
    """Verify a batch; reports come back in input order.

    With memoization on, structurally shared subtrees are checked once
    through a batch-wide cache; verdicts are identical to element-wise
    verification with memoization off.
    """
    ids = list(tree_ids) if tree_ids is not None else [str(i) for i in range(len(trees))]
    cache: Optional[VerifyCache] = {} if cfg.memoize else None
    key_memo: dict = {}  # alive only for this batch; trees outlive it
    report_memo: dict = {}  # whole-tree reuse for repeated tree objects

    def run(item):
        t, tid = item
        if cfg.memoize:
            prior = report_memo.get(id(t))
            if prior is not None:
                return VerifyReport(
                    tree_id=tid,
                    verdicts=dict(prior.verdicts),
                    overall_valid=prior.overall_valid,
                    failed_node=prior.failed_node,
                    latency_ms=0.0,
                    cache_hits=len(prior.verdicts),
                    cache_misses=0,
                )
        r = verify_tree(t, lib, cfg, cache=cache, tree_id=tid, key_memo=key_memo)
        if cfg.memoize and not any(v.status == "Timeout" for v in r.verdicts.values()):
            report_memo[id(t)] = r
        return r

    work = list(zip(trees, ids))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            reports = list(pool.map(run, work))
    else:
        reports = [run(w) for w in work]
    stats = BatchStats(
        trees=len(reports),
        valid=sum(r.overall_valid for r in reports),
        cache_hits=sum(r.cache_hits for r in reports),
        cache_misses=sum(r.cache_misses for r in reports),
        mean_latency_ms=(
            sum(r.latency_ms for r in reports) / len(reports) if reports else 0.0
        ),
    )
    return reports, stats


# ---------------------------------------------------------------------------
# Approximate verifier

FEATURE_VERSION = 1

_RULE_ORDER = (
    "JRefl",
    "JSym",
    "JTrans",
    "JCong",
    "JAxiom",
    "JSubstLemma",
    "JCiteLemma",
    "JHyp",
    "JInduction",
)

FEATURE_DIM = len(_RULE_ORDER) + 4


def subtree_features(t: ProofTree, lib: LemmaLibrary) -> np.ndarray:
    """Fixed feature vector: rule histogram, size, depth, known-citation
    fraction, max term depth."""
    hist = np.zeros(len(_RULE_ORDER))
    cited = known = 0
    max_td = 0
    for n in t.nodes.values():
        head = n.just.head()
        if head in _RULE_ORDER:
            hist[_RULE_ORDER.index(head)] += 1
        if isinstance(n.just, (JCiteLemma, JSubstLemma)):
            cited += 1
            if n.just.name in lib:
                known += 1
        max_td = max(max_td, term_depth(n.statement.lhs), term_depth(n.statement.rhs))
    count = len(t.nodes)
    hist /= max(count, 1)
    try:
        depth = tree_depth(t)
    except CycleError:
        depth = len(t.nodes)
    cited_frac = known / cited if cited else 1.0
    extra = np.array([count / 50.0, depth / 10.0, cited_frac, max_td / 10.0])
    return np.concatenate([hist, extra])


@dataclass
class ApproxModel:
    weights: np.ndarray
    bias: float
    threshold: float = 0.5
    feature_version: int = FEATURE_VERSION
    degenerate: bool = False


def train_approx(
    samples: Sequence[tuple[np.ndarray, bool]],
    seed: int = 0,
    iters: int = 800,
    lr: float = 0.5,
    l2: float = 1e-4,
) -> ApproxModel:
    """Logistic regression by full-batch gradient descent; deterministic."""
    if not samples:
        raise ValueError("no training samples")
    X = np.stack([f for f, _ in samples])
    y = np.array([1.0 if ok else 0.0 for _, ok in samples])
    if len(set(y.tolist())) < 2:
        prior = float(y.mean())
        bias = 20.0 if prior > 0.5 else -20.0
        return ApproxModel(np.zeros(X.shape[1]), bias, degenerate=True)
    rng = np.random.default_rng(seed)
    w = rng.normal(scale=1e-3, size=X.shape[1])
    b = 0.0
    n = len(y)
    for _ in range(iters):
        z = X @ w + b
        p = 1.0 / (1.0 + np.exp(-z))
        g = p - y
        gw = X.T @ g / n + l2 * w
        gb = float(g.mean())
        w -= lr * gw
        b -= lr * gb
    return ApproxModel(w, b)


def approx_verify(m: ApproxModel, t: ProofTree, lib: LemmaLibrary) -> float:
    """Probability the tree would fully verify, per the trained model."""
    f = subtree_features(t, lib)
    z = float(f @ m.weights + m.bias)
    return 1.0 / (1.0 + np.exp(-z))
