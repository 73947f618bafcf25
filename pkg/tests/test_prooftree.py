"""Proof-tree structure tests: traversal, linearization, renumbering,
serialization, and tree edit distance against an independent oracle."""

import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from proofloop.construct import RewriteProver, flatten
from proofloop.corpus import default_library
from proofloop.kernel import (
    JAxiom,
    JCiteLemma,
    JCong,
    JHyp,
    JRefl,
    JSym,
    JTrans,
    make_bindings,
    parse_statement,
)
from proofloop.prooftree import (
    CycleError,
    ProofNode,
    ProofTree,
    StateAction,
    complexity,
    delinearize,
    linearize,
    node_depths,
    parse_tree,
    renumber_postorder,
    serialize,
    topo_order,
    tree_depth,
    tree_edit_distance,
    validate_tree,
    TreeParseError,
)

from ted_oracle import all_labeled_trees, oracle_ted, to_prooftree

S = parse_statement


def leaf_tree(text="0 = 0"):
    s = S(text)
    return ProofTree(goal=s, root=0, nodes={0: ProofNode(0, s, JRefl(), ())})


def chain_tree():
    """goal <- Sym <- Refl, three nodes in a line."""
    a = S("0 = (0 + 0)")
    b = S("(0 + 0) = 0")
    nodes = {
        0: ProofNode(0, b, JAxiom("A1", make_bindings({"x": S("0 = 0").lhs})), ()),
        1: ProofNode(1, a, JSym(), (0,)),
    }
    return ProofTree(goal=a, root=1, nodes=nodes)


def cyclic_tree():
    a = S("0 = 0")
    nodes = {
        0: ProofNode(0, a, JSym(), (1,)),
        1: ProofNode(1, a, JSym(), (0,)),
    }
    return ProofTree(goal=a, root=0, nodes=nodes)


# ---------------------------------------------------------------------------
# Traversal and shape


def test_topo_order_postorder():
    t = chain_tree()
    assert topo_order(t) == [0, 1]
    assert tree_depth(t) == 2
    assert node_depths(t) == {1: 1, 0: 2}


def test_topo_order_cycle():
    with pytest.raises(CycleError):
        topo_order(cyclic_tree())


def test_validate_tree():
    validate_tree(chain_tree())
    t = chain_tree()
    bad = ProofTree(goal=S("S(0) = S(0)"), root=t.root, nodes=t.nodes)
    with pytest.raises(ValueError):
        validate_tree(bad)  # root statement differs from goal
    sparse = ProofTree(goal=t.goal, root=5, nodes={5: ProofNode(5, t.goal, JRefl(), ())})
    with pytest.raises(ValueError):
        validate_tree(sparse)  # ids not dense


def test_complexity():
    syntactic, depth = complexity(leaf_tree())
    assert depth == 1
    assert syntactic == 3  # two '0' leaves plus '='


# ---------------------------------------------------------------------------
# Linearization round trip


def test_linearize_round_trip():
    t = chain_tree()
    seq = linearize(t)
    assert [sa.action.head() for sa in seq] == ["JAxiom", "JSym"]
    assert [sa.budget for sa in seq] == [1, 0]
    back = delinearize(seq)
    assert serialize(renumber_postorder(t)) == serialize(back)


def test_delinearize_underflow():
    sa = StateAction(S("0 = 0"), S("0 = 0"), 1, 0, JSym())
    with pytest.raises(ValueError):
        delinearize([sa])  # Sym needs one child already on the stack


def test_linearize_generated_trees():
    lib = default_library()
    prover = RewriteProver(lib)
    for text in ["(S(0) + S(0)) = S(S(0))", "forall x. (x + 0) = x"]:
        spec = prover.prove(S(text), {})
        assert spec is not None
        canon = renumber_postorder(flatten(spec))
        assert serialize(delinearize(linearize(canon))) == serialize(canon)


# ---------------------------------------------------------------------------
# Renumbering


def test_renumber_remaps_hyp_refs():
    a = S("0 = 0")
    # node 7 cites node 9 as a hypothesis; after renumbering ids change
    nodes = {
        9: ProofNode(9, a, JRefl(), ()),
        7: ProofNode(7, a, JHyp(9), ()),
        3: ProofNode(3, a, JTrans(), (9, 7)),
    }
    t = renumber_postorder(ProofTree(goal=a, root=3, nodes=nodes))
    assert sorted(t.nodes) == [0, 1, 2]
    assert t.root == 2
    hyp_node = t.nodes[1]
    assert hyp_node.just == JHyp(0)


# ---------------------------------------------------------------------------
# Serialization


def test_serialize_round_trip():
    for t in [leaf_tree(), chain_tree()]:
        assert serialize(parse_tree(serialize(t))) == serialize(t)


def test_serialize_cyclic_round_trip():
    t = cyclic_tree()
    assert serialize(parse_tree(serialize(t))) == serialize(t)


def test_parse_tree_errors():
    with pytest.raises(TreeParseError):
        parse_tree("")
    with pytest.raises(TreeParseError):
        parse_tree("goal\t0 = 0\troot=0\n0\t0 = 0\tRefl\n")  # 3 fields
    with pytest.raises(TreeParseError):
        parse_tree("goal\t0 = 0\troot=1\n0\t0 = 0\tRefl\t\n")  # missing root


# ---------------------------------------------------------------------------
# Tree edit distance: hand-checked cases plus random oracle agreement


def test_ted_identity_and_leaf():
    t = chain_tree()
    assert tree_edit_distance(t, t) == 0
    assert tree_edit_distance(leaf_tree(), leaf_tree("S(0) = S(0)")) == 1
    # deleting one interior node
    assert tree_edit_distance(t, leaf_tree("0 = (0 + 0)")) == 2


def test_ted_symmetric_and_triangle():
    trees = [to_prooftree(t) for t in all_labeled_trees(3, 2)]
    rng = random.Random(0)
    for _ in range(60):
        a, b, c = rng.choice(trees), rng.choice(trees), rng.choice(trees)
        dab = tree_edit_distance(a, b)
        assert dab == tree_edit_distance(b, a)
        assert dab <= tree_edit_distance(a, c) + tree_edit_distance(c, b)


def test_ted_matches_oracle_sampled():
    trees = all_labeled_trees(4, 3)
    rng = random.Random(1)
    for _ in range(150):
        a = rng.choice(trees)
        b = rng.choice(trees)
        assert tree_edit_distance(to_prooftree(a), to_prooftree(b)) == oracle_ted(a, b)


def test_ted_cyclic_trees_defined():
    # back-edges are cut; the distance is still a nonnegative integer
    d = tree_edit_distance(cyclic_tree(), leaf_tree())
    assert d >= 0


# ---------------------------------------------------------------------------
# Properties

labels3 = st.integers(min_value=0, max_value=2)
abstract_trees = st.recursive(
    st.tuples(labels3, st.just(())),
    lambda sub: st.tuples(labels3, st.lists(sub, min_size=1, max_size=3).map(tuple)),
    max_leaves=5,
)


@settings(max_examples=60, deadline=None)
@given(abstract_trees, abstract_trees)
def test_ted_bounds(a, b):
    ta, tb = to_prooftree(a), to_prooftree(b)
    d = tree_edit_distance(ta, tb)
    assert 0 <= d <= len(ta) + len(tb)
    assert (d == 0) == (serialize(renumber_postorder(ta)) == serialize(renumber_postorder(tb)))
