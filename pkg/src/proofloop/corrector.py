"""Self-correction loop: find the failing node, propose policy-ranked
verifier-checked repairs, splice the first accepted candidate, repeat.

Repairs are whole replacement subtrees for the failed node: its obligation is
re-proved by bounded search seeded from the ranked action candidates, so the
loop shares its proposal machinery with the trained policy. A tree only
counts as Repaired after full re-verification.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Optional

from .construct import NodeSpec, _replace_hyp_marker, _token_counter
from .kernel import (
    JCiteLemma,
    JHyp,
    JInduction,
    JSubstLemma,
    Reason,
    Statement,
    induction_hypothesis,
)
from .policy import (
    ActionCandidate,
    PolicyParams,
    ProposerState,
    candidate_features,
    enumerate_actions,
)
from .prooftree import (
    LemmaLibrary,
    NodeId,
    ProofNode,
    ProofTree,
    renumber_postorder,
    tree_edit_distance,
)
from .verifier import VerifierConfig, VerifyReport, hyp_environments, verify_tree


@dataclass(frozen=True)
class CorrectionConfig:
    max_candidates: int = 8  # K
    max_regen_depth: int = 16
    max_iterations: int = 8
    trace: bool = False

    def __post_init__(self):
        if self.max_candidates < 1 or self.max_regen_depth < 1:
            raise ValueError("K and regeneration depth must be >= 1")
        if self.max_iterations < 0:
            raise ValueError("iteration limit must be >= 0")


@dataclass(frozen=True)
class FailureContext:
    tree_id: str
    node_id: NodeId
    reason: Optional[Reason]
    statement: Statement
    chain: tuple[NodeId, ...]  # root .. failed node (inclusive)
    subtree_nodes: tuple[NodeId, ...]  # failed node's (cycle-cut) subtree
    hyps: tuple[tuple[int, Statement], ...]
    lemma_names: tuple[str, ...]


@dataclass
class CorrectionOutcome:
    status: str  # "Repaired" | "Exhausted"
    tree: ProofTree
    iterations: int
    candidate_counts: list[int] = field(default_factory=list)
    edpt: Optional[float] = None
    trace: list[str] = field(default_factory=list)


def _ancestor_chain(t: ProofTree, target: NodeId) -> tuple[NodeId, ...]:
    """Root-to-target path by DFS; tolerates cycles via a visited set."""
    stack: list[tuple[NodeId, tuple[NodeId, ...]]] = [(t.root, (t.root,))]
    seen: set[NodeId] = set()
    while stack:
        nid, path = stack.pop()
        if nid == target:
            return path
        if nid in seen:
            continue
        seen.add(nid)
        for c in t.nodes[nid].children:
            stack.append((c, path + (c,)))
    return (target,)


def _subtree_ids(t: ProofTree, root: NodeId) -> tuple[NodeId, ...]:
    out: list[NodeId] = []
    seen: set[NodeId] = set()
    stack = [root]
    while stack:
        nid = stack.pop()
        if nid in seen:
            continue
        seen.add(nid)
        out.append(nid)
        stack.extend(t.nodes[nid].children)
    return tuple(sorted(out))


def extract_failure(t: ProofTree, report: VerifyReport, lib: LemmaLibrary) -> FailureContext:
    """Context for the post-order-first Invalid node of a failing report."""
    if report.overall_valid:
        raise ValueError("extract_failure called on a fully valid report")
    nid = report.failed_node
    if nid is None:  # defensive: first invalid in id order
        nid = min(k for k, v in report.verdicts.items() if not v.is_valid)
    verdict = report.verdicts.get(nid)
    envs = hyp_environments(t)
    return FailureContext(
        tree_id=report.tree_id,
        node_id=nid,
        reason=verdict.reason if verdict is not None else None,
        statement=t.nodes[nid].statement,
        chain=_ancestor_chain(t, nid),
        subtree_nodes=_subtree_ids(t, nid),
        hyps=tuple(sorted(envs.get(nid, {}).items())),
        lemma_names=lib.names(),
    )


def propose_repairs(
    ctx: FailureContext,
    lib: LemmaLibrary,
    params: PolicyParams,
    cfg: CorrectionConfig,
) -> list[NodeSpec]:
    """Policy-ranked replacement subtrees for the failed obligation.

    Zero-premise candidates splice directly; candidates that open premises
    get depth-limited regenerated children. Unprovable premises drop the
    candidate.
    """
    from .construct import RewriteProver

    state = ProposerState(
        goal=ctx.statement,
        obligation=ctx.statement,
        depth=len(ctx.chain),
        budget=cfg.max_regen_depth,
        lemma_names=ctx.lemma_names,
        hyps=ctx.hyps,
    )
    cands = enumerate_actions(state, lib)
    scores = candidate_features(state, cands) @ params.weights
    ranked = sorted(range(len(cands)), key=lambda i: (-scores[i], i))
    prover = RewriteProver(lib, max_depth=cfg.max_regen_depth)
    hyps = dict(ctx.hyps)

    out: list[NodeSpec] = []
    for i in ranked:
        if len(out) >= cfg.max_candidates:
            break
        spec = _realize(cands[i], ctx.statement, hyps, prover)
        if spec is not None:
            out.append(spec)
    return out


def _realize(
    cand: ActionCandidate,
    obligation: Statement,
    hyps: dict[int, Statement],
    prover,
) -> Optional[NodeSpec]:
    if not cand.premises:
        return NodeSpec(obligation, cand.just)
    if isinstance(cand.just, JInduction):
        var = cand.just.var
        ih = induction_hypothesis(obligation, var)
        token = next(_token_counter)
        marker = -token
        base = prover.prove(cand.premises[0], hyps)
        if base is None:
            return None
        step_hyps = dict(hyps)
        step_hyps[marker] = ih
        step = prover.prove(cand.premises[1], step_hyps)
        if step is None:
            return None
        _replace_hyp_marker(step, marker, token)
        spec = NodeSpec(obligation, cand.just, [base, step])
        spec.hyp_token = token
        return spec
    kids = []
    for prem in cand.premises:
        sub = prover.prove(prem, hyps)
        if sub is None:
            return None
        kids.append(sub)
    return NodeSpec(obligation, cand.just, kids)


def replace_subtree(t: ProofTree, node_id: NodeId, spec: NodeSpec) -> tuple[ProofTree, NodeId]:
    """Graft `spec` in place of node_id's subtree; prune unreachable leftovers.

    Retained nodes keep their ids so hypothesis references from surviving
    ancestors stay meaningful; the caller canonicalizes afterwards. Returns
    the new tree and the grafted root's id.
    """
    fresh = itertools.count(max(t.nodes) + 1)
    nodes: dict[NodeId, ProofNode] = {}
    token_to_id: dict[int, NodeId] = {}
    pending: list[tuple[NodeId, int]] = []

    def build(s: NodeSpec, use_id: Optional[NodeId] = None) -> NodeId:
        kids = tuple(build(c) for c in s.children)
        nid = next(fresh) if use_id is None else use_id
        if s.hyp_token is not None:
            token_to_id[s.hyp_token] = nid
        just = s.just
        if isinstance(just, str):
            pending.append((nid, int(just.split(":", 1)[1])))
            just = JHyp(-1)
        nodes[nid] = ProofNode(nid, s.statement, just, kids)
        return nid

    graft_root = build(spec, use_id=node_id)
    for nid, token in pending:
        n = nodes[nid]
        nodes[nid] = ProofNode(n.id, n.statement, JHyp(token_to_id[token]), n.children)

    # Copy every original node reachable without passing through node_id.
    stack = [t.root]
    seen: set[NodeId] = set()
    while stack:
        nid = stack.pop()
        if nid in seen or nid == node_id:
            continue
        seen.add(nid)
        nodes.setdefault(nid, t.nodes[nid])
        stack.extend(t.nodes[nid].children)

    # Drop anything no longer reachable from the root (the old subtree).
    reachable: set[NodeId] = set()
    stack = [t.root]
    while stack:
        nid = stack.pop()
        if nid in reachable:
            continue
        reachable.add(nid)
        stack.extend(nodes[nid].children)
    nodes = {k: v for k, v in nodes.items() if k in reachable}

    cites = tuple(
        sorted(
            {
                n.just.name
                for n in nodes.values()
                if isinstance(n.just, (JCiteLemma, JSubstLemma))
            }
        )
    )
    return ProofTree(goal=t.goal, root=t.root, nodes=nodes, cites=cites), graft_root


def correct_loop(
    t: ProofTree,
    lib: LemmaLibrary,
    vcfg: VerifierConfig,
    ccfg: CorrectionConfig,
    params: Optional[PolicyParams] = None,
    tree_id: str = "",
) -> CorrectionOutcome:
    """Verify-extract-propose-splice until fully valid or limits run out."""
    params = params or PolicyParams.prior()
    original = t
    out = CorrectionOutcome(status="Exhausted", tree=t, iterations=0)

    report = verify_tree(t, lib, vcfg, tree_id=tree_id)
    while not report.overall_valid and out.iterations < ccfg.max_iterations:
        out.iterations += 1
        ctx = extract_failure(t, report, lib)
        cands = propose_repairs(ctx, lib, params, ccfg)
        out.candidate_counts.append(len(cands))
        accepted: Optional[int] = None
        for j, spec in enumerate(cands):
            t2, graft_root = replace_subtree(t, ctx.node_id, spec)
            r2 = verify_tree(t2, lib, vcfg, tree_id=tree_id)
            v = r2.verdicts.get(graft_root)
            if v is not None and v.is_valid:
                t = renumber_postorder(t2)
                report = verify_tree(t, lib, vcfg, tree_id=tree_id)
                accepted = j
                break
        if ccfg.trace:
            reason = ctx.reason.value if ctx.reason is not None else "?"
            out.trace.append(
                f"iter={out.iterations} node={ctx.node_id} reason={reason} "
                f"candidates={len(cands)} accepted={accepted if accepted is not None else 'none'}"
            )
        if accepted is None:
            break

    out.tree = t
    if report.overall_valid:
        out.status = "Repaired"
        out.edpt = float(tree_edit_distance(original, t))
    return out
