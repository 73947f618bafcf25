"""Self-correction loop tests: failure extraction, candidate ranking and
realization, subtree replacement, and end-to-end repair."""

import pytest

from proofloop.corpus import (
    ErrorMode,
    GenBounds,
    InjectionConfig,
    build_corpus,
    default_library,
    inject_error,
)
from proofloop.corrector import (
    CorrectionConfig,
    correct_loop,
    extract_failure,
    propose_repairs,
    replace_subtree,
)
from proofloop.construct import NodeSpec
from proofloop.kernel import JAxiom, JCiteLemma, JRefl, Reason, parse_statement
from proofloop.policy import PolicyParams
from proofloop.prooftree import (
    ProofNode,
    ProofTree,
    serialize,
    tree_edit_distance,
    validate_tree,
)
from proofloop.verifier import VerifierConfig, verify_tree

S = parse_statement
LIB = default_library()
VCFG = VerifierConfig()
CCFG = CorrectionConfig()


def flawed_pool(n=80, seed=19):
    corpus, _ = build_corpus(InjectionConfig(seed=seed), GenBounds(), n, LIB)
    return [p for p in corpus if p.label == "flawed"]


# ---------------------------------------------------------------------------
# Failure extraction


def test_extract_failure_requires_invalid():
    t = ProofTree(
        goal=S("0 = 0"), root=0, nodes={0: ProofNode(0, S("0 = 0"), JRefl(), ())}
    )
    r = verify_tree(t, LIB, VCFG)
    assert r.overall_valid
    with pytest.raises(ValueError):
        extract_failure(t, r, LIB)


def test_extract_failure_fields():
    p = flawed_pool()[0]
    r = verify_tree(p.tree, LIB, VCFG)
    ctx = extract_failure(p.tree, r, LIB)
    assert ctx.node_id == r.failed_node
    assert ctx.statement == p.tree.nodes[ctx.node_id].statement
    assert ctx.chain[-1] == ctx.node_id
    assert ctx.chain[0] == p.tree.root or len(ctx.chain) == 1
    assert ctx.node_id in ctx.subtree_nodes
    assert ctx.lemma_names == LIB.names()


# ---------------------------------------------------------------------------
# Candidate proposal


def test_propose_repairs_truncates_to_k():
    p = flawed_pool()[0]
    r = verify_tree(p.tree, LIB, VCFG)
    ctx = extract_failure(p.tree, r, LIB)
    prior = PolicyParams.prior()
    for k in (1, 2, 4):
        cands = propose_repairs(ctx, LIB, prior, CorrectionConfig(max_candidates=k))
        assert len(cands) <= k
        assert all(isinstance(c, NodeSpec) for c in cands)


def test_propose_repairs_axiom_for_hallucinated_axiom_statement():
    # a hallucinated citation standing where A1 applies: the ranked list must
    # offer the matched axiom instance
    s = S("(S(0) + 0) = S(0)")
    t = ProofTree(goal=s, root=0, nodes={0: ProofNode(0, s, JCiteLemma("ghost_9"), ())})
    r = verify_tree(t, LIB, VCFG)
    assert r.verdicts[0].reason == Reason.UNKNOWN_LEMMA
    ctx = extract_failure(t, r, LIB)
    cands = propose_repairs(ctx, LIB, PolicyParams.prior(), CCFG)
    heads = [c.just.head() for c in cands]
    assert "JAxiom" in heads
    best_axiom = next(c for c in cands if isinstance(c.just, JAxiom))
    assert best_axiom.just.name == "A1"


# ---------------------------------------------------------------------------
# Subtree replacement


def test_replace_subtree_keeps_context():
    p = next(p for p in flawed_pool() if len(p.tree.nodes) >= 3)
    r = verify_tree(p.tree, LIB, VCFG)
    ctx = extract_failure(p.tree, r, LIB)
    stmt = p.tree.nodes[ctx.node_id].statement
    spec = NodeSpec(stmt, JCiteLemma("placeholder"))
    t2, graft_root = replace_subtree(p.tree, ctx.node_id, spec)
    assert t2.nodes[graft_root].statement == stmt
    assert t2.nodes[graft_root].just == JCiteLemma("placeholder")
    # nodes outside the replaced subtree survive with their ids
    outside = set(p.tree.nodes) - set(ctx.subtree_nodes)
    for nid in outside:
        assert t2.nodes[nid].statement == p.tree.nodes[nid].statement


# ---------------------------------------------------------------------------
# The loop


def test_correct_valid_tree_is_identity():
    t = ProofTree(goal=S("0 = 0"), root=0, nodes={0: ProofNode(0, S("0 = 0"), JRefl(), ())})
    out = correct_loop(t, LIB, VCFG, CCFG)
    assert out.status == "Repaired"
    assert out.iterations == 0
    assert out.edpt == 0.0
    assert serialize(out.tree) == serialize(t)


def test_correct_zero_iterations_is_exhausted():
    p = flawed_pool()[0]
    out = correct_loop(p.tree, LIB, VCFG, CorrectionConfig(max_iterations=0))
    assert out.status == "Exhausted"
    assert out.iterations == 0
    assert serialize(out.tree) == serialize(p.tree)


def test_correct_repairs_injected_faults():
    pool = flawed_pool(120, seed=23)
    repaired = 0
    for p in pool[:30]:
        out = correct_loop(p.tree, LIB, VCFG, CCFG, tree_id=p.id)
        if out.status == "Repaired":
            repaired += 1
            final = verify_tree(out.tree, LIB, VCFG)
            assert final.overall_valid, p.id
            validate_tree(out.tree)
            assert out.tree.goal == p.tree.goal
            assert out.tree.nodes[out.tree.root].statement == p.tree.goal
            assert out.edpt == float(tree_edit_distance(p.tree, out.tree))
            assert out.edpt > 0
    assert repaired >= 24  # the loop must fix the vast majority


def test_correct_each_mode():
    corpus, _ = build_corpus(InjectionConfig(seed=31), GenBounds(), 80, LIB)
    valid = [p for p in corpus if p.label == "valid"]
    for mode in ErrorMode:
        fixed = tried = 0
        for i, p in enumerate(valid):
            if tried >= 4:
                break
            try:
                f = inject_error(p, mode, seed=700 + i, lib=LIB)
            except Exception:
                continue
            tried += 1
            out = correct_loop(f.tree, LIB, VCFG, CCFG)
            if out.status == "Repaired":
                fixed += 1
                assert verify_tree(out.tree, LIB, VCFG).overall_valid
        assert tried > 0, mode
        assert fixed >= 1, mode  # every mode must be repairable sometimes


def test_correct_trace_format():
    p = flawed_pool()[0]
    out = correct_loop(p.tree, LIB, VCFG, CorrectionConfig(trace=True))
    assert out.trace, "trace requested but empty"
    import re

    pat = re.compile(r"^iter=\d+ node=\d+ reason=\S+ candidates=\d+ accepted=(\d+|none)$")
    for line in out.trace:
        assert pat.match(line), line


def test_correction_config_validation():
    with pytest.raises(ValueError):
        CorrectionConfig(max_candidates=0)
    with pytest.raises(ValueError):
        CorrectionConfig(max_iterations=-1)
