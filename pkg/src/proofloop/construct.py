"""Proof synthesis helpers: build kernel-checkable derivations for equational
goals. Used by the corpus generator (valid-tree emission) and the corrector
(subtree regeneration).

Derivations are assembled as nested NodeSpec values and flattened into
canonical post-order ProofTrees at the end. Induction hypotheses are wired
by placeholder tokens resolved to node ids at flatten time.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Mapping, Optional

from .kernel import (
    AXIOMS,
    ZERO,
    Add,
    JAxiom,
    JCiteLemma,
    JCong,
    JHyp,
    JInduction,
    JRefl,
    JSubstLemma,
    JSym,
    JTrans,
    Justification,
    Mul,
    Statement,
    Succ,
    Term,
    Var,
    eval_closed,
    free_vars,
    make_bindings,
    match_statement,
    match_term,
    numeral,
    numeral_value,
    replace_at,
    statement_to_text,
    stmt,
    subst_term,
    substitute,
    subterm_at,
    term_size,
)
from .prooftree import LemmaLibrary, NodeId, ProofNode, ProofTree

_token_counter = itertools.count(1)


@dataclass
class NodeSpec:
    statement: Statement
    just: Justification | str  # str form: "hyp:<token>" placeholder
    children: list["NodeSpec"] = field(default_factory=list)
    hyp_token: Optional[int] = None  # set on induction nodes providing an IH

    def depth(self) -> int:
        return 1 + max((c.depth() for c in self.children), default=0)

    def size(self) -> int:
        return 1 + sum(c.size() for c in self.children)


def induction_spec(conclusion: Statement, var: str, base: NodeSpec, step: NodeSpec) -> NodeSpec:
    spec = NodeSpec(conclusion, JInduction(var), [base, step])
    spec.hyp_token = next(_token_counter)
    return spec


def hyp_spec(statement: Statement, token: int) -> NodeSpec:
    return NodeSpec(statement, f"hyp:{token}")


def flatten(spec: NodeSpec, goal: Optional[Statement] = None) -> ProofTree:
    """Assign post-order ids and resolve hypothesis placeholders."""
    nodes: dict[NodeId, ProofNode] = {}
    token_to_id: dict[int, NodeId] = {}
    pending_hyps: list[tuple[NodeId, int]] = []
    counter = itertools.count()

    def walk(s: NodeSpec) -> NodeId:
        kids = tuple(walk(c) for c in s.children)
        nid = next(counter)
        if s.hyp_token is not None:
            token_to_id[s.hyp_token] = nid
        just = s.just
        if isinstance(just, str):
            token = int(just.split(":", 1)[1])
            pending_hyps.append((nid, token))
            just = JHyp(-1)
        nodes[nid] = ProofNode(nid, s.statement, just, kids)
        return nid

    root = walk(spec)
    for nid, token in pending_hyps:
        n = nodes[nid]
        nodes[nid] = ProofNode(n.id, n.statement, JHyp(token_to_id[token]), n.children)
    cites = tuple(
        sorted(
            {
                n.just.name
                for n in nodes.values()
                if isinstance(n.just, (JCiteLemma, JSubstLemma))
            }
        )
    )
    return ProofTree(goal=goal or spec.statement, root=root, nodes=nodes, cites=cites)


# ---------------------------------------------------------------------------
# Closed-term evaluation proofs


def closed_eq(l: Term, r: Term) -> Statement:
    return stmt((), l, r)


def trans_chain(parts: list[NodeSpec]) -> NodeSpec:
    """Fold consecutive equality proofs l=m, m=n, ... into one Trans tree."""
    assert parts
    out = parts[0]
    for nxt in parts[1:]:
        conclusion = closed_eq(out.statement.lhs, nxt.statement.rhs)
        out = NodeSpec(conclusion, JTrans(), [out, nxt])
    return out


def axiom_instance(name: str, bindings: Mapping[str, Term]) -> NodeSpec:
    conclusion = substitute(AXIOMS[name], bindings)
    return NodeSpec(conclusion, JAxiom(name, make_bindings(bindings)))


def lemma_instance(name: str, schema: Statement, bindings: Mapping[str, Term]) -> NodeSpec:
    conclusion = substitute(schema, bindings)
    if bindings:
        return NodeSpec(conclusion, JSubstLemma(name, make_bindings(bindings)))
    return NodeSpec(conclusion, JCiteLemma(name))


class EvalProver:
    """Derives t = numeral(value(t)) for closed terms by axiom rewriting.

    With an rng attached, occasionally routes through library lemma
    citations so generated corpora exercise Cite/Subst justifications.
    """

    def __init__(self, lib: Optional[LemmaLibrary] = None, rng=None, lemma_prob: float = 0.3):
        self.lib = lib
        self.rng = rng
        self.lemma_prob = lemma_prob

    def _use_lemma(self) -> bool:
        return self.rng is not None and self.lib is not None and self.rng.random() < self.lemma_prob

    def prove(self, t: Term) -> NodeSpec:
        """Proof of t = numeral(eval(t)); Refl when t is already a numeral."""
        n = eval_closed(t)
        target = numeral(n)
        if t == target:
            return NodeSpec(closed_eq(t, t), JRefl())
        if isinstance(t, Succ):
            sub = self.prove(t.inner)
            return NodeSpec(closed_eq(t, target), JCong((0,)), [sub])
        if isinstance(t, Add):
            return self._prove_binop(t, Add, self.prove_add_numerals)
        if isinstance(t, Mul):
            return self._prove_binop(t, Mul, self.prove_mul_numerals)
        raise ValueError(f"cannot evaluate {statement_to_text(closed_eq(t, t))}")

    def _prove_binop(self, t, ctor, numeral_case) -> NodeSpec:
        a, b = t.lhs, t.rhs
        m, n = eval_closed(a), eval_closed(b)
        na, nb = numeral(m), numeral(n)
        parts: list[NodeSpec] = []
        cur: Term = t
        if b != nb:
            nxt = ctor(a, nb)
            parts.append(NodeSpec(closed_eq(cur, nxt), JCong((1,)), [self.prove(b)]))
            cur = nxt
        if a != na:
            nxt = ctor(na, nb)
            parts.append(NodeSpec(closed_eq(cur, nxt), JCong((0,)), [self.prove(a)]))
            cur = nxt
        parts.append(numeral_case(m, n))
        return trans_chain(parts)

    def prove_add_numerals(self, m: int, n: int) -> NodeSpec:
        """(num m + num n) = num (m+n)."""
        nm, nn = numeral(m), numeral(n)
        if m == 0 and n > 0 and self._use_lemma():
            zl = self.lib.get("zero_add")  # type: ignore[union-attr]
            if zl is not None:
                return lemma_instance("zero_add", zl, {"x": nn})
        if n == 0:
            return axiom_instance("A1", {"x": nm})
        head = axiom_instance("A2", {"x": nm, "y": numeral(n - 1)})
        inner = self.prove_add_numerals(m, n - 1)
        lifted = NodeSpec(
            closed_eq(Succ(Add(nm, numeral(n - 1))), numeral(m + n)),
            JCong((0,)),
            [inner],
        )
        return trans_chain([head, lifted])

    def prove_mul_numerals(self, m: int, n: int) -> NodeSpec:
        """(num m * num n) = num (m*n)."""
        nm = numeral(m)
        if n == 0:
            return axiom_instance("M1", {"x": nm})
        if n == 1 and self.lib is not None and self._use_lemma():
            ml = self.lib.get("mul_one")
            if ml is not None:
                return lemma_instance("mul_one", ml, {"x": nm})
        head = axiom_instance("M2", {"x": nm, "y": numeral(n - 1)})
        inner_mul = self.prove_mul_numerals(m, n - 1)
        prod = m * (n - 1)
        step1 = NodeSpec(
            closed_eq(Add(Mul(nm, numeral(n - 1)), nm), Add(numeral(prod), nm)),
            JCong((0,)),
            [inner_mul],
        )
        step2 = self.prove_add_numerals(prod, m)
        return trans_chain([head, step1, step2])


# ---------------------------------------------------------------------------
# Induction families


def zero_add_induction(lib: Optional[LemmaLibrary] = None) -> NodeSpec:
    """forall x. (0 + x) = x, by induction; the step case uses the IH."""
    x = Var("x")
    goal = stmt(("x",), Add(ZERO, x), x)
    base = axiom_instance("A1", {"x": ZERO})  # (0 + 0) = 0
    token = next(_token_counter)
    ih = closed_eq(Add(ZERO, x), x)
    head = axiom_instance("A2", {"x": ZERO, "y": x})  # (0 + S(x)) = S(0 + x)
    lift = NodeSpec(
        closed_eq(Succ(Add(ZERO, x)), Succ(x)),
        JCong((0,)),
        [hyp_spec(ih, token)],
    )
    step = trans_chain([head, lift])
    spec = NodeSpec(goal, JInduction("x"), [base, step])
    spec.hyp_token = token
    return spec


def add_constant_induction(n: int, prover: EvalProver) -> NodeSpec:
    """forall x. (x + num n) = S^n(x), by induction.

    Base and step cases unroll A2 down to A1 and never need the IH.
    """
    assert n >= 1
    x = Var("x")
    nn = numeral(n)

    def rhs_for(t: Term) -> Term:
        out = t
        for _ in range(n):
            out = Succ(out)
        return out

    goal = stmt(("x",), Add(x, nn), rhs_for(x))

    def unroll(t: Term, k: int) -> NodeSpec:
        # (t + num k) = S^k(t), for an arbitrary (possibly open) term t.
        if k == 0:
            return axiom_instance("A1", {"x": t})
        head = axiom_instance("A2", {"x": t, "y": numeral(k - 1)})
        inner = unroll(t, k - 1)
        lift = NodeSpec(
            closed_eq(Succ(Add(t, numeral(k - 1))), Succ(inner.statement.rhs)),
            JCong((0,)),
            [inner],
        )
        return trans_chain([head, lift])

    base = unroll(ZERO, n)
    step = unroll(Succ(x), n)
    return NodeSpec(goal, JInduction("x"), [base, step])


def sym_wrap(spec: NodeSpec) -> NodeSpec:
    s = spec.statement
    return NodeSpec(Statement(s.binders, s.rhs, s.lhs), JSym(), [spec])


# ---------------------------------------------------------------------------
# Bounded rewrite prover (repair-oriented)


def _equations(lib: LemmaLibrary, hyps: Mapping[int, Statement]):
    """Oriented rewrite rules: (kind, name/id, schema statement)."""
    out = [("axiom", name, s) for name, s in AXIOMS.items()]
    out.extend(("lemma", name, s) for name, s in lib)
    out.extend(("hyp", hid, s) for hid, s in hyps.items())
    return out


def _instance_spec(kind: str, name, schema: Statement, bindings: Mapping[str, Term]) -> NodeSpec:
    if kind == "axiom":
        return axiom_instance(name, bindings)
    if kind == "lemma":
        return lemma_instance(name, schema, bindings)
    # Hypotheses are cited verbatim; bindings must be the identity.
    return NodeSpec(schema, JHyp(int(name)))


def _all_paths(t: Term, prefix: tuple[int, ...] = ()) -> list[tuple[int, ...]]:
    out = [prefix]
    if isinstance(t, Succ):
        out.extend(_all_paths(t.inner, prefix + (0,)))
    elif isinstance(t, (Add, Mul)):
        out.extend(_all_paths(t.lhs, prefix + (0,)))
        out.extend(_all_paths(t.rhs, prefix + (1,)))
    return out


class RewriteProver:
    """Depth-bounded search for equational derivations.

    Strategy: leaf closers, closed-term evaluation via EvalProver, induction
    on quantified goals, and iterative-deepening rewrite chains for open
    equalities (as arise in induction step contexts).
    """

    def __init__(self, lib: LemmaLibrary, max_depth: int = 24, max_chain: int = 10):
        self.lib = lib
        self.max_depth = max_depth
        self.max_chain = max_chain
        self.eval_prover = EvalProver(lib=lib, rng=None)

    def prove(self, goal: Statement, hyps: Mapping[int, Statement]) -> Optional[NodeSpec]:
        spec = self._prove(goal, dict(hyps), self.max_depth)
        if spec is not None and spec.depth() > self.max_depth:
            return None
        return spec

    # -- internals --

    def _closer(self, goal: Statement, hyps: Mapping[int, Statement]) -> Optional[NodeSpec]:
        if goal.lhs == goal.rhs:
            return NodeSpec(goal, JRefl())
        for hid, h in hyps.items():
            if h == goal:
                return NodeSpec(goal, JHyp(hid))
        for name, schema in AXIOMS.items():
            b = match_statement(schema, goal)
            if b is not None:
                return NodeSpec(goal, JAxiom(name, make_bindings(b)))
        for name, schema in self.lib:
            if schema == goal:
                return NodeSpec(goal, JCiteLemma(name))
            b = match_statement(schema, goal)
            if b is not None:
                return NodeSpec(goal, JSubstLemma(name, make_bindings(b)))
        return None

    def _prove(self, goal: Statement, hyps: dict[int, Statement], depth: int) -> Optional[NodeSpec]:
        if depth <= 0:
            return None
        hit = self._closer(goal, hyps)
        if hit is not None:
            return hit
        if goal.binders:
            return self._prove_by_induction(goal, hyps, depth)
        fv = free_vars(goal.lhs) | free_vars(goal.rhs)
        if not fv:
            try:
                if eval_closed(goal.lhs) != eval_closed(goal.rhs):
                    return None
            except ValueError:
                return None
            left = self.eval_prover.prove(goal.lhs)
            right = self.eval_prover.prove(goal.rhs)
            if numeral_value(goal.rhs) is not None:
                if numeral_value(goal.lhs) is not None:
                    return None  # distinct numerals, unprovable
                return left  # left already ends at the shared numeral
            if numeral_value(goal.lhs) is not None:
                return sym_wrap(right)
            return trans_chain([left, sym_wrap(right)])
        return self._prove_open(goal, hyps, depth)

    def _prove_by_induction(self, goal: Statement, hyps: dict[int, Statement], depth: int) -> Optional[NodeSpec]:
        for var in goal.binders:
            rest = tuple(b for b in goal.binders if b != var)
            if rest:
                continue  # single-binder induction only at desk scale
            base_goal = substitute(goal, {var: ZERO})
            step_goal = substitute(goal, {var: Succ(Var(var))})
            ih = substitute(goal, {var: Var(var)})
            token = next(_token_counter)
            base = self._prove(base_goal, hyps, depth - 1)
            if base is None:
                continue
            step = self._prove_with_hyp(step_goal, hyps, ih, token, depth - 1)
            if step is None:
                continue
            spec = NodeSpec(goal, JInduction(var), [base, step])
            spec.hyp_token = token
            return spec
        return None

    def _prove_with_hyp(self, goal, hyps, ih: Statement, token: int, depth: int):
        # The IH enters with a placeholder id; flatten() resolves it.
        marker = -token  # negative ids never collide with real node ids
        ext = dict(hyps)
        ext[marker] = ih
        spec = self._prove(goal, ext, depth)
        if spec is None:
            return None
        _replace_hyp_marker(spec, marker, token)
        return spec

    def _prove_open(self, goal: Statement, hyps: dict[int, Statement], depth: int) -> Optional[NodeSpec]:
        for chain in range(1, min(self.max_chain, depth) + 1):
            spec = self._search_chain(goal.lhs, goal.rhs, hyps, chain, frozenset((goal.lhs,)))
            if spec is not None:
                return spec
        return None

    def _search_chain(self, lhs: Term, rhs: Term, hyps, budget: int, seen: frozenset[Term]) -> Optional[NodeSpec]:
        if lhs == rhs:
            return NodeSpec(closed_eq(lhs, rhs), JRefl())
        if budget <= 0:
            return None
        for new_term, step in self._rewrites(lhs, hyps):
            if new_term in seen:
                continue
            if new_term == rhs:
                return step
            rest = self._search_chain(new_term, rhs, hyps, budget - 1, seen | {new_term})
            if rest is not None:
                return trans_chain([step, rest])
        return None

    def _rewrites(self, t: Term, hyps):
        """One-step rewrites of t with their single-step proofs (t = t')."""
        for kind, name, schema in _equations(self.lib, hyps):
            pv = frozenset(schema.binders)
            for lhs_pat, rhs_pat, forward in ((schema.lhs, schema.rhs, True), (schema.rhs, schema.lhs, False)):
                for path in _all_paths(t):
                    sub = subterm_at(t, path)
                    assert sub is not None
                    b: dict[str, Term] = {}
                    if not match_term(lhs_pat, sub, b, pv):
                        continue
                    if set(b) != set(schema.binders):
                        continue
                    if kind == "hyp" and any(b[k] != Var(k) for k in b):
                        continue  # hypotheses are not schemas
                    new_sub = subst_term(rhs_pat, b)
                    new_term = replace_at(t, path, new_sub)
                    if new_term is None or term_size(new_term) > 80:
                        continue
                    inst = _instance_spec(kind, name, schema, {} if kind == "hyp" else b)
                    if not forward:
                        inst = sym_wrap(inst)
                    if path:
                        step = NodeSpec(closed_eq(t, new_term), JCong(path), [inst])
                    else:
                        step = inst
                    yield new_term, step


def _replace_hyp_marker(spec: NodeSpec, marker: int, token: int) -> None:
    if isinstance(spec.just, JHyp) and spec.just.hyp_id == marker:
        spec.just = f"hyp:{token}"
    for c in spec.children:
        _replace_hyp_marker(c, marker, token)
