"""Equational Peano-arithmetic kernel: terms, statements, and the one-step rule checker.

The kernel is total and pure: every failure is an Invalid verdict, never an
exception, and identical inputs always produce identical verdicts.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from enum import Enum
from typing import Mapping, Optional, Sequence

MAX_TERM_DEPTH = 32

_VAR_RE = re.compile(r"[a-z][a-z0-9_]*")


# ---------------------------------------------------------------------------
# Terms


class Term:
    """Base class for term nodes. Instances are immutable and hashable."""

    __slots__ = ()


@dataclass(frozen=True, slots=True)
class Zero(Term):
    pass


@dataclass(frozen=True, slots=True)
class Succ(Term):
    inner: Term


@dataclass(frozen=True, slots=True)
class Var(Term):
    name: str


@dataclass(frozen=True, slots=True)
class Add(Term):
    lhs: Term
    rhs: Term


@dataclass(frozen=True, slots=True)
class Mul(Term):
    lhs: Term
    rhs: Term


ZERO = Zero()


def term_to_text(t: Term) -> str:
    if isinstance(t, Zero):
        return "0"
    if isinstance(t, Succ):
        return f"S({term_to_text(t.inner)})"
    if isinstance(t, Var):
        return t.name
    if isinstance(t, Add):
        return f"({term_to_text(t.lhs)} + {term_to_text(t.rhs)})"
    if isinstance(t, Mul):
        return f"({term_to_text(t.lhs)} * {term_to_text(t.rhs)})"
    raise TypeError(f"not a term: {t!r}")


def term_depth(t: Term) -> int:
    if isinstance(t, (Zero, Var)):
        return 1
    if isinstance(t, Succ):
        return 1 + term_depth(t.inner)
    return 1 + max(term_depth(t.lhs), term_depth(t.rhs))  # type: ignore[union-attr]


def term_size(t: Term) -> int:
    """Symbol count: every constructor and variable occurrence counts one."""
    if isinstance(t, (Zero, Var)):
        return 1
    if isinstance(t, Succ):
        return 1 + term_size(t.inner)
    return 1 + term_size(t.lhs) + term_size(t.rhs)  # type: ignore[union-attr]


def free_vars(t: Term) -> frozenset[str]:
    if isinstance(t, Zero):
        return frozenset()
    if isinstance(t, Var):
        return frozenset((t.name,))
    if isinstance(t, Succ):
        return free_vars(t.inner)
    return free_vars(t.lhs) | free_vars(t.rhs)  # type: ignore[union-attr]


def numeral(n: int) -> Term:
    t: Term = ZERO
    for _ in range(n):
        t = Succ(t)
    return t


def numeral_value(t: Term) -> Optional[int]:
    """Value of a pure numeral term, or None if t is not S^k(0)."""
    n = 0
    while isinstance(t, Succ):
        n += 1
        t = t.inner
    return n if isinstance(t, Zero) else None


def eval_closed(t: Term) -> int:
    """Evaluate a variable-free term to its natural-number value."""
    if isinstance(t, Zero):
        return 0
    if isinstance(t, Succ):
        return 1 + eval_closed(t.inner)
    if isinstance(t, Add):
        return eval_closed(t.lhs) + eval_closed(t.rhs)
    if isinstance(t, Mul):
        return eval_closed(t.lhs) * eval_closed(t.rhs)
    raise ValueError(f"term is not closed: {term_to_text(t)}")


def subterm_at(t: Term, path: Sequence[int]) -> Optional[Term]:
    for i in path:
        if isinstance(t, Succ) and i == 0:
            t = t.inner
        elif isinstance(t, (Add, Mul)) and i in (0, 1):
            t = t.lhs if i == 0 else t.rhs
        else:
            return None
    return t


def replace_at(t: Term, path: Sequence[int], repl: Term) -> Optional[Term]:
    if not path:
        return repl
    i, rest = path[0], path[1:]
    if isinstance(t, Succ) and i == 0:
        inner = replace_at(t.inner, rest, repl)
        return None if inner is None else Succ(inner)
    if isinstance(t, (Add, Mul)) and i in (0, 1):
        ctor = Add if isinstance(t, Add) else Mul
        if i == 0:
            new = replace_at(t.lhs, rest, repl)
            return None if new is None else ctor(new, t.rhs)
        new = replace_at(t.rhs, rest, repl)
        return None if new is None else ctor(t.lhs, new)
    return None


def subst_term(t: Term, bindings: Mapping[str, Term]) -> Term:
    if isinstance(t, Zero):
        return t
    if isinstance(t, Var):
        return bindings.get(t.name, t)
    if isinstance(t, Succ):
        return Succ(subst_term(t.inner, bindings))
    ctor = Add if isinstance(t, Add) else Mul
    return ctor(subst_term(t.lhs, bindings), subst_term(t.rhs, bindings))  # type: ignore[union-attr]


# ---------------------------------------------------------------------------
# Parsing


class TermSyntaxError(ValueError):
    """Raised on malformed term/statement text; carries the byte offset."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} at offset {offset}")
        self.offset = offset


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.pos = 0

    def skip_ws(self) -> None:
        while self.pos < len(self.text) and self.text[self.pos] in " \t":
            self.pos += 1

    def fail(self, msg: str):
        raise TermSyntaxError(msg, self.pos)

    def expect(self, ch: str) -> None:
        self.skip_ws()
        if self.pos >= len(self.text) or self.text[self.pos] != ch:
            self.fail(f"expected {ch!r}")
        self.pos += 1

    def term(self, depth: int = 0) -> Term:
        if depth > MAX_TERM_DEPTH:
            self.fail("term too deep")
        self.skip_ws()
        if self.pos >= len(self.text):
            self.fail("unexpected end of input")
        ch = self.text[self.pos]
        if ch == "0":
            self.pos += 1
            return ZERO
        if ch == "S":
            self.pos += 1
            self.expect("(")
            inner = self.term(depth + 1)
            self.expect(")")
            return Succ(inner)
        if ch == "(":
            self.pos += 1
            lhs = self.term(depth + 1)
            self.skip_ws()
            if self.pos >= len(self.text) or self.text[self.pos] not in "+*":
                self.fail("expected '+' or '*'")
            op = self.text[self.pos]
            self.pos += 1
            rhs = self.term(depth + 1)
            self.expect(")")
            return Add(lhs, rhs) if op == "+" else Mul(lhs, rhs)
        m = _VAR_RE.match(self.text, self.pos)
        if m:
            self.pos = m.end()
            return Var(m.group())
        self.fail("expected a term")
        raise AssertionError  # unreachable


def parse_term(text: str) -> Term:
    p = _Parser(text)
    t = p.term()
    p.skip_ws()
    if p.pos != len(text):
        p.fail("trailing input")
    return t


# ---------------------------------------------------------------------------
# Statements


@dataclass(frozen=True, slots=True)
class Statement:
    """Universally quantified equation: forall binders. lhs = rhs.

    A statement whose terms mention variables outside its binders is "open";
    open statements only arise inside induction step contexts.
    """

    binders: tuple[str, ...]
    lhs: Term
    rhs: Term

    def is_wellformed(self) -> bool:
        return len(set(self.binders)) == len(self.binders) and all(
            _VAR_RE.fullmatch(b) for b in self.binders
        )

    def is_closed(self) -> bool:
        fv = free_vars(self.lhs) | free_vars(self.rhs)
        return fv <= set(self.binders)


def stmt(binders: Sequence[str], lhs: Term, rhs: Term) -> Statement:
    return Statement(tuple(binders), lhs, rhs)


def statement_to_text(s: Statement) -> str:
    eq = f"{term_to_text(s.lhs)} = {term_to_text(s.rhs)}"
    if s.binders:
        return f"forall {' '.join(s.binders)}. {eq}"
    return eq


def parse_statement(text: str) -> Statement:
    binders: tuple[str, ...] = ()
    body = text
    offset = 0
    if text.lstrip().startswith("forall "):
        head, dot, rest = text.partition(".")
        if not dot:
            raise TermSyntaxError("missing '.' after binders", len(text))
        names = head.split()[1:]
        for b in names:
            if not _VAR_RE.fullmatch(b):
                raise TermSyntaxError(f"bad binder {b!r}", text.index(b))
        binders = tuple(names)
        body = rest
        offset = len(head) + 1
    lhs_text, eq, rhs_text = body.partition("=")
    if not eq:
        raise TermSyntaxError("missing '='", offset + len(body))
    try:
        lhs = parse_term(lhs_text.strip())
        rhs = parse_term(rhs_text.strip())
    except TermSyntaxError as e:
        raise TermSyntaxError(str(e).rsplit(" at offset", 1)[0], offset + e.offset) from None
    s = Statement(binders, lhs, rhs)
    if not s.is_wellformed():
        raise TermSyntaxError("duplicate or malformed binders", 0)
    return s


class UnknownBinderError(KeyError):
    pass


def substitute(s: Statement, bindings: Mapping[str, Term]) -> Statement:
    """Instantiate binders of s; substituted binders leave the binder list.

    Capture-free by construction: terms contain no binders.
    """
    for k in bindings:
        if k not in s.binders:
            raise UnknownBinderError(k)
    return Statement(
        tuple(b for b in s.binders if b not in bindings),
        subst_term(s.lhs, bindings),
        subst_term(s.rhs, bindings),
    )


# ---------------------------------------------------------------------------
# Axiom schemas

X, Y = Var("x"), Var("y")

AXIOMS: dict[str, Statement] = {
    # x + 0 = x
    "A1": stmt(("x",), Add(X, ZERO), X),
    # x + S(y) = S(x + y)
    "A2": stmt(("x", "y"), Add(X, Succ(Y)), Succ(Add(X, Y))),
    # x * 0 = 0
    "M1": stmt(("x",), Mul(X, ZERO), ZERO),
    # x * S(y) = (x * y) + x
    "M2": stmt(("x", "y"), Mul(X, Succ(Y)), Add(Mul(X, Y), X)),
}


# ---------------------------------------------------------------------------
# Justifications

Bindings = tuple[tuple[str, Term], ...]


def make_bindings(m: Mapping[str, Term]) -> Bindings:
    return tuple(sorted(m.items()))


class Justification:
    __slots__ = ()

    def head(self) -> str:
        return type(self).__name__


@dataclass(frozen=True, slots=True)
class JAxiom(Justification):
    name: str
    bindings: Bindings


@dataclass(frozen=True, slots=True)
class JRefl(Justification):
    pass


@dataclass(frozen=True, slots=True)
class JSym(Justification):
    pass


@dataclass(frozen=True, slots=True)
class JTrans(Justification):
    pass


@dataclass(frozen=True, slots=True)
class JCong(Justification):
    path: tuple[int, ...]


@dataclass(frozen=True, slots=True)
class JSubstLemma(Justification):
    name: str
    bindings: Bindings


@dataclass(frozen=True, slots=True)
class JHyp(Justification):
    hyp_id: int


@dataclass(frozen=True, slots=True)
class JInduction(Justification):
    var: str


@dataclass(frozen=True, slots=True)
class JCiteLemma(Justification):
    name: str


def justification_to_text(j: Justification) -> str:
    if isinstance(j, JAxiom):
        return f"Axiom[{j.name}]{{{_bindings_text(j.bindings)}}}"
    if isinstance(j, JRefl):
        return "Refl"
    if isinstance(j, JSym):
        return "Sym"
    if isinstance(j, JTrans):
        return "Trans"
    if isinstance(j, JCong):
        return "Cong[" + ".".join(map(str, j.path)) + "]"
    if isinstance(j, JSubstLemma):
        return f"Subst[{j.name}]{{{_bindings_text(j.bindings)}}}"
    if isinstance(j, JHyp):
        return f"Hyp[{j.hyp_id}]"
    if isinstance(j, JInduction):
        return f"Induction[{j.var}]"
    if isinstance(j, JCiteLemma):
        return f"Cite[{j.name}]"
    raise TypeError(f"not a justification: {j!r}")


def _bindings_text(b: Bindings) -> str:
    return ",".join(f"{k}:={term_to_text(v)}" for k, v in b)


def _parse_bindings(text: str) -> Bindings:
    if not text:
        return ()
    out = []
    for item in text.split(","):
        k, sep, v = item.partition(":=")
        if not sep:
            raise TermSyntaxError(f"bad binding {item!r}", 0)
        out.append((k.strip(), parse_term(v.strip())))
    return make_bindings(dict(out))


_JUST_RE = re.compile(r"^(\w+)(?:\[([^\]]*)\])?(?:\{([^}]*)\})?$")


def parse_justification(text: str) -> Justification:
    m = _JUST_RE.match(text.strip())
    if not m:
        raise TermSyntaxError(f"bad justification {text!r}", 0)
    head, arg, binds = m.group(1), m.group(2), m.group(3)
    if head == "Refl":
        return JRefl()
    if head == "Sym":
        return JSym()
    if head == "Trans":
        return JTrans()
    if head == "Axiom":
        return JAxiom(arg or "", _parse_bindings(binds or ""))
    if head == "Subst":
        return JSubstLemma(arg or "", _parse_bindings(binds or ""))
    if head == "Cite":
        return JCiteLemma(arg or "")
    if head == "Cong":
        path = tuple(int(p) for p in arg.split(".")) if arg else ()
        return JCong(path)
    if head == "Hyp":
        return JHyp(int(arg))
    if head == "Induction":
        return JInduction(arg or "")
    raise TermSyntaxError(f"unknown justification head {head!r}", 0)


# ---------------------------------------------------------------------------
# Verdicts


class Reason(Enum):
    UNKNOWN_LEMMA = "UnknownLemma"
    UNKNOWN_AXIOM = "UnknownAxiom"
    BAD_INSTANTIATION = "BadInstantiation"
    PREMISE_MISMATCH = "PremiseMismatch"
    MALFORMED_STATEMENT = "MalformedStatement"
    MISSING_INDUCTION_CASE = "MissingInductionCase"
    UNBOUND_HYPOTHESIS = "UnboundHypothesis"


@dataclass(frozen=True, slots=True)
class StepVerdict:
    status: str  # "Valid" | "Invalid" | "Timeout"
    reason: Optional[Reason] = None

    def __post_init__(self):
        assert (self.status == "Invalid") == (self.reason is not None)

    @property
    def is_valid(self) -> bool:
        return self.status == "Valid"


VALID = StepVerdict("Valid")
TIMEOUT = StepVerdict("Timeout")


def invalid(reason: Reason) -> StepVerdict:
    return StepVerdict("Invalid", reason)


# ---------------------------------------------------------------------------
# The step checker


def check_step(
    conclusion: Statement,
    just: Justification,
    premises: Sequence[Statement],
    library: Mapping[str, Statement],
    hyps: Mapping[int, Statement],
) -> StepVerdict:
    """Decide whether `conclusion` follows from `premises` by `just`.

    Total and deterministic; all failures come back as Invalid verdicts.
    """
    if not conclusion.is_wellformed():
        return invalid(Reason.MALFORMED_STATEMENT)

    if isinstance(just, JRefl):
        if premises:
            return invalid(Reason.PREMISE_MISMATCH)
        if conclusion.lhs != conclusion.rhs:
            return invalid(Reason.PREMISE_MISMATCH)
        return VALID

    if isinstance(just, JAxiom):
        schema = AXIOMS.get(just.name)
        if schema is None:
            return invalid(Reason.UNKNOWN_AXIOM)
        return _check_instance(conclusion, schema, just.bindings, premises)

    if isinstance(just, JSubstLemma):
        schema = library.get(just.name)
        if schema is None:
            return invalid(Reason.UNKNOWN_LEMMA)
        return _check_instance(conclusion, schema, just.bindings, premises)

    if isinstance(just, JCiteLemma):
        target = library.get(just.name)
        if target is None:
            return invalid(Reason.UNKNOWN_LEMMA)
        if premises:
            return invalid(Reason.PREMISE_MISMATCH)
        if target != conclusion:
            return invalid(Reason.BAD_INSTANTIATION)
        return VALID

    if isinstance(just, JHyp):
        target = hyps.get(just.hyp_id)
        if target is None:
            return invalid(Reason.UNBOUND_HYPOTHESIS)
        if premises:
            return invalid(Reason.PREMISE_MISMATCH)
        if target != conclusion:
            return invalid(Reason.PREMISE_MISMATCH)
        return VALID

    if isinstance(just, JSym):
        if len(premises) != 1:
            return invalid(Reason.PREMISE_MISMATCH)
        p = premises[0]
        if p.binders != conclusion.binders or p.lhs != conclusion.rhs or p.rhs != conclusion.lhs:
            return invalid(Reason.PREMISE_MISMATCH)
        return VALID

    if isinstance(just, JTrans):
        if len(premises) != 2:
            return invalid(Reason.PREMISE_MISMATCH)
        p1, p2 = premises
        ok = (
            p1.binders == conclusion.binders
            and p2.binders == conclusion.binders
            and p1.lhs == conclusion.lhs
            and p1.rhs == p2.lhs
            and p2.rhs == conclusion.rhs
        )
        return VALID if ok else invalid(Reason.PREMISE_MISMATCH)

    if isinstance(just, JCong):
        if len(premises) != 1:
            return invalid(Reason.PREMISE_MISMATCH)
        s = subterm_at(conclusion.lhs, just.path)
        t = subterm_at(conclusion.rhs, just.path)
        if s is None or t is None:
            return invalid(Reason.MALFORMED_STATEMENT)
        if replace_at(conclusion.lhs, just.path, t) != conclusion.rhs:
            return invalid(Reason.PREMISE_MISMATCH)
        if premises[0] != Statement(conclusion.binders, s, t):
            return invalid(Reason.PREMISE_MISMATCH)
        return VALID

    if isinstance(just, JInduction):
        if just.var not in conclusion.binders:
            return invalid(Reason.MALFORMED_STATEMENT)
        if len(premises) < 2:
            return invalid(Reason.MISSING_INDUCTION_CASE)
        if len(premises) > 2:
            return invalid(Reason.PREMISE_MISMATCH)
        base = substitute(conclusion, {just.var: ZERO})
        step = substitute(conclusion, {just.var: Succ(Var(just.var))})
        if premises[0] != base or premises[1] != step:
            return invalid(Reason.PREMISE_MISMATCH)
        return VALID

    return invalid(Reason.MALFORMED_STATEMENT)


def induction_hypothesis(conclusion: Statement, var: str) -> Statement:
    """The open statement assumed inside an induction step subtree."""
    return substitute(conclusion, {var: Var(var)})


def _check_instance(
    conclusion: Statement,
    schema: Statement,
    bindings: Bindings,
    premises: Sequence[Statement],
) -> StepVerdict:
    if premises:
        return invalid(Reason.PREMISE_MISMATCH)
    bmap = dict(bindings)
    try:
        inst = substitute(schema, bmap)
    except UnknownBinderError:
        return invalid(Reason.BAD_INSTANTIATION)
    if inst != conclusion:
        return invalid(Reason.BAD_INSTANTIATION)
    return VALID


# ---------------------------------------------------------------------------
# Matching (one-sided unification), used by action enumeration and repair


def match_term(pattern: Term, target: Term, bindings: dict[str, Term], pattern_vars: frozenset[str]) -> bool:
    """Match `pattern` against `target`, binding pattern variables in place."""
    if isinstance(pattern, Var) and pattern.name in pattern_vars:
        bound = bindings.get(pattern.name)
        if bound is None:
            bindings[pattern.name] = target
            return True
        return bound == target
    if type(pattern) is not type(target):
        return False
    if isinstance(pattern, (Zero, Var)):
        return pattern == target
    if isinstance(pattern, Succ):
        return match_term(pattern.inner, target.inner, bindings, pattern_vars)  # type: ignore[union-attr]
    return match_term(pattern.lhs, target.lhs, bindings, pattern_vars) and match_term(  # type: ignore[union-attr]
        pattern.rhs, target.rhs, bindings, pattern_vars  # type: ignore[union-attr]
    )


def match_statement(schema: Statement, target: Statement) -> Optional[dict[str, Term]]:
    """Find bindings with substitute(schema, b) == target, or None."""
    if target.binders:
        return None
    b: dict[str, Term] = {}
    pv = frozenset(schema.binders)
    if match_term(schema.lhs, target.lhs, b, pv) and match_term(schema.rhs, target.rhs, b, pv):
        if set(b) == set(schema.binders):
            return b
    return None
