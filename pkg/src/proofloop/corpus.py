"""Corpus pipeline: generate valid proofs, inject the four flaw modes,
augment, and assign stratified train/val/test splits.

All randomness flows through per-item seeds derived from the master seed,
so generation is order-independent and byte-reproducible.
"""

from __future__ import annotations

import hashlib
import json
import logging
import random
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Optional, Sequence

from .construct import (
    EvalProver,
    NodeSpec,
    add_constant_induction,
    flatten,
    sym_wrap,
    zero_add_induction,
)
from .kernel import (
    AXIOMS,
    ZERO,
    Add,
    JAxiom,
    JCiteLemma,
    JHyp,
    JInduction,
    JRefl,
    JSubstLemma,
    Mul,
    Statement,
    Succ,
    Term,
    Var,
    eval_closed,
    make_bindings,
    numeral,
    numeral_value,
    stmt,
    substitute,
)
from .prooftree import (
    LemmaLibrary,
    NodeId,
    ProofNode,
    ProofTree,
    parse_tree,
    remap_justification,
    serialize,
    topo_order,
    tree_depth,
)

log = logging.getLogger(__name__)

CORPUS_FORMAT_VERSION = 1


class ErrorMode(Enum):
    HALLUCINATION = "Hallucination"
    TOPO_ORDER = "TopoOrder"
    INCOMPLETE_INDUCTION = "IncompleteInduction"
    SEMANTIC_DRIFT = "SemanticDrift"


MODE_ORDER = tuple(ErrorMode)


class GenerationError(RuntimeError):
    pass


class InjectionInapplicable(RuntimeError):
    pass


class CorpusFormatError(ValueError):
    pass


@dataclass
class AnnotatedProof:
    id: str
    tree: ProofTree
    label: str  # "valid" | "flawed"
    modes: tuple[str, ...] = ()
    injected_node: Optional[NodeId] = None
    split: str = "unassigned"
    gen_seed: int = 0
    inject_seed: Optional[int] = None

    def signature(self) -> str:
        return self.modes[0] if self.modes else "valid"


@dataclass(frozen=True)
class GenBounds:
    max_depth: int = 48
    max_value: int = 6
    max_term_size: int = 9


@dataclass(frozen=True)
class InjectionConfig:
    flawed_fraction: float = 0.23
    mode_weights: tuple[float, ...] = (0.29, 0.24, 0.32, 0.15)
    augmentation_factor: float = 1.5
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.flawed_fraction < 1.0:
            raise ValueError("flawed_fraction must lie in (0, 1)")
        if len(self.mode_weights) != len(MODE_ORDER):
            raise ValueError("one weight per error mode required")

    def normalized_weights(self) -> tuple[float, ...]:
        total = sum(self.mode_weights)
        return tuple(w / total for w in self.mode_weights)


@dataclass(frozen=True)
class SplitConfig:
    ratios: tuple[float, float, float] = (0.70, 0.15, 0.15)
    seed: int = 0

    def __post_init__(self):
        if abs(sum(self.ratios) - 1.0) > 1e-9:
            raise ValueError("split ratios must sum to 1")


def derive_seed(master: int, *parts) -> int:
    h = hashlib.sha256(repr((master,) + parts).encode()).digest()
    return int.from_bytes(h[:8], "big")


def apportion(weights: Sequence[float], total: int) -> list[int]:
    """Largest-remainder apportionment of `total` into len(weights) buckets."""
    wsum = sum(weights)
    quotas = [w / wsum * total for w in weights]
    floors = [int(q) for q in quotas]
    shortfall = total - sum(floors)
    order = sorted(range(len(weights)), key=lambda i: (-(quotas[i] - floors[i]), i))
    for i in order[:shortfall]:
        floors[i] += 1
    return floors


# ---------------------------------------------------------------------------
# Library and generation


def default_library() -> LemmaLibrary:
    x = Var("x")
    two = numeral(2)
    return LemmaLibrary(
        [
            ("zero_add", stmt(("x",), Add(ZERO, x), x)),
            ("mul_one", stmt(("x",), Mul(x, Succ(ZERO)), x)),
            ("two_plus_two", stmt((), Add(two, two), numeral(4))),
        ]
    )


def _random_closed_term(rng: random.Random, bounds: GenBounds) -> Term:
    """Closed non-numeral term with a small value (keeps proofs desk-sized)."""
    for _ in range(200):
        t = _grow_term(rng, bounds.max_term_size)
        try:
            v = eval_closed(t)
        except ValueError:
            continue
        if v <= bounds.max_value and numeral_value(t) is None:
            return t
    raise GenerationError("could not sample a closed term within bounds")


def _grow_term(rng: random.Random, budget: int) -> Term:
    if budget <= 1:
        return numeral(rng.randint(0, 2))
    r = rng.random()
    if r < 0.40:
        half = budget - 1
        a = _grow_term(rng, rng.randint(1, max(1, half // 2)))
        b = _grow_term(rng, rng.randint(1, max(1, half // 2)))
        return Add(a, b)
    if r < 0.65:
        half = budget - 1
        a = _grow_term(rng, rng.randint(1, max(1, half // 3)))
        b = _grow_term(rng, rng.randint(1, max(1, half // 3)))
        return Mul(a, b)
    if r < 0.85:
        return Succ(_grow_term(rng, budget - 1))
    return numeral(rng.randint(0, 3))


def _leaf_spec(rng: random.Random, bounds: GenBounds, lib: LemmaLibrary) -> NodeSpec:
    kind = rng.choice(["refl", "axiom", "cite", "subst"])
    if kind == "refl":
        t = _grow_term(rng, 4)
        return NodeSpec(stmt((), t, t), JRefl())
    if kind == "axiom":
        name = rng.choice(sorted(AXIOMS))
        schema = AXIOMS[name]
        bindings = {b: _grow_term(rng, 3) for b in schema.binders}
        return NodeSpec(substitute(schema, bindings), JAxiom(name, make_bindings(bindings)))
    names = lib.names()
    name = rng.choice(sorted(names))
    schema = lib.get(name)
    assert schema is not None
    if kind == "cite" or not schema.binders:
        return NodeSpec(schema, JCiteLemma(name))
    bindings = {b: _grow_term(rng, 3) for b in schema.binders}
    return NodeSpec(substitute(schema, bindings), JSubstLemma(name, make_bindings(bindings)))


def _induction_spec(rng: random.Random, lib: LemmaLibrary) -> NodeSpec:
    prover = EvalProver(lib=lib, rng=rng)
    kind = rng.randrange(5)
    if kind == 0:
        return zero_add_induction(lib)
    if kind == 1:
        return sym_wrap(zero_add_induction(lib))
    return add_constant_induction(1 + rng.randrange(3), prover)


def generate_one(
    seed: int,
    bounds: GenBounds,
    lib: LemmaLibrary,
    force_induction: bool = False,
    want_induction: bool = False,
) -> ProofTree:
    """One valid proof tree; deterministic under seed."""
    rng = random.Random(seed)
    for attempt in range(60):
        try:
            spec = _pick_spec(rng, bounds, lib, force_induction or want_induction)
        except GenerationError:
            continue
        if spec.depth() <= bounds.max_depth:
            return flatten(spec)
    raise GenerationError(f"bounds too tight to generate a proof (seed={seed})")


def _pick_spec(rng, bounds: GenBounds, lib: LemmaLibrary, induction: bool) -> NodeSpec:
    if bounds.max_depth <= 1:
        return _leaf_spec(rng, bounds, lib)
    if induction:
        return _induction_spec(rng, lib)
    r = rng.random()
    if r < 0.15:
        return _leaf_spec(rng, bounds, lib)
    prover = EvalProver(lib=lib, rng=rng)
    t = _random_closed_term(rng, bounds)
    spec = prover.prove(t)
    if r > 0.90:
        spec = sym_wrap(spec)
    return spec


def generate_valid(
    count: int,
    seed: int,
    bounds: GenBounds,
    lib: LemmaLibrary,
    id_prefix: str = "v",
) -> list[AnnotatedProof]:
    """Valid corpus slice; every fourth tree comes from the induction family."""
    if count < 1:
        raise ValueError("count must be >= 1")
    out = []
    for i in range(count):
        s = derive_seed(seed, "gen", i)
        tree = generate_one(s, bounds, lib, want_induction=(i % 4 == 0))
        out.append(AnnotatedProof(id=f"{id_prefix}{i:06d}", tree=tree, label="valid", gen_seed=s))
    return out


# ---------------------------------------------------------------------------
# Error injection


def _has_induction(t: ProofTree) -> bool:
    return any(isinstance(n.just, JInduction) for n in t.nodes.values())


def _subtree_ids(t: ProofTree, root: NodeId) -> set[NodeId]:
    seen: set[NodeId] = set()
    stack = [root]
    while stack:
        nid = stack.pop()
        if nid in seen:
            continue
        seen.add(nid)
        stack.extend(t.nodes[nid].children)
    return seen


def _parent_map(t: ProofTree) -> dict[NodeId, NodeId]:
    return {c: n.id for n in t.nodes.values() for c in n.children}


def _renumber_with_map(t: ProofTree) -> tuple[ProofTree, dict[NodeId, NodeId]]:
    order = topo_order(t)
    remap = {old: new for new, old in enumerate(order)}
    nodes = {}
    for old in order:
        n = t.nodes[old]
        nodes[remap[old]] = ProofNode(
            remap[old],
            n.statement,
            remap_justification(n.just, remap),
            tuple(remap[c] for c in n.children),
        )
    return ProofTree(goal=t.goal, root=remap[t.root], nodes=nodes, cites=t.cites), remap


def inject_error(
    p: AnnotatedProof,
    mode: ErrorMode,
    seed: int,
    lib: LemmaLibrary,
    bounds: Optional[GenBounds] = None,
) -> AnnotatedProof:
    """Flawed variant of a valid proof with exactly one injected mode."""
    if p.label != "valid":
        raise ValueError("injection requires a valid proof")
    rng = random.Random(seed)
    t = p.tree
    if mode is ErrorMode.HALLUCINATION:
        nid = rng.choice(sorted(t.nodes))
        n = t.nodes[nid]
        ghost = f"ghost_{rng.randrange(10**6)}"
        while ghost in lib:
            ghost = f"ghost_{rng.randrange(10**6)}"
        nodes = dict(t.nodes)
        nodes[nid] = ProofNode(n.id, n.statement, JCiteLemma(ghost), n.children)
        new_tree = ProofTree(t.goal, t.root, nodes, t.cites)
        injected = nid
    elif mode is ErrorMode.TOPO_ORDER:
        candidates = [n.id for n in t.nodes.values() if n.children]
        if not candidates:
            raise InjectionInapplicable("no non-leaf node to rewire")
        nid = rng.choice(sorted(candidates))
        parents = _parent_map(t)
        chain = [nid]
        while chain[-1] in parents:
            chain.append(parents[chain[-1]])
        target = rng.choice(chain)  # nid itself or one of its ancestors
        n = t.nodes[nid]
        slot = rng.randrange(len(n.children))
        kids = list(n.children)
        kids[slot] = target
        nodes = dict(t.nodes)
        nodes[nid] = ProofNode(n.id, n.statement, n.just, tuple(kids))
        new_tree = ProofTree(t.goal, t.root, nodes, t.cites)
        injected = nid
    elif mode is ErrorMode.INCOMPLETE_INDUCTION:
        ind = [n.id for n in t.nodes.values() if isinstance(n.just, JInduction)]
        if not ind:
            raise InjectionInapplicable("tree has no induction node")
        nid = rng.choice(sorted(ind))
        n = t.nodes[nid]
        drop = rng.randrange(len(n.children))  # base or step case
        victim = n.children[drop]
        doomed = _subtree_ids(t, victim)
        nodes = {k: v for k, v in t.nodes.items() if k not in doomed}
        kids = tuple(c for i, c in enumerate(n.children) if i != drop)
        nodes[nid] = ProofNode(n.id, n.statement, n.just, kids)
        new_tree, remap = _renumber_with_map(ProofTree(t.goal, t.root, nodes, t.cites))
        injected = remap[nid]
    elif mode is ErrorMode.SEMANTIC_DRIFT:
        injected, new_tree = _inject_drift(t, rng, seed, lib, bounds or GenBounds())
    else:  # pragma: no cover
        raise ValueError(f"unknown mode {mode}")
    return AnnotatedProof(
        id=p.id,
        tree=new_tree,
        label="flawed",
        modes=(mode.value,),
        injected_node=injected,
        gen_seed=p.gen_seed,
        inject_seed=seed,
    )


def _hyp_free(t: ProofTree, root: NodeId) -> bool:
    return not any(isinstance(t.nodes[i].just, JHyp) for i in _subtree_ids(t, root))


# A drift graft must register as semantic drift, not just kernel mismatch:
# the grafted statement's embedding has to sit at least this far (in cosine
# drop) from the parent's statement, or the detector would have nothing to
# see. Valid corpora stay well below this drop.
MIN_DRIFT_DROP = 0.25

_DRIFT_DONOR_TEXTS = (
    "0 = 0",
    "forall x. x = x",
    "forall x y. (x * y) = (x * y)",
    "forall x y z. ((x * y) * z) = ((x * y) * z)",
    "forall x y. (x + y) = (x + y)",
    "S(S(S(S(0)))) = S(S(S(S(0))))",
    "forall x. (x * x) = (x * x)",
)


def _drift_donor_pool() -> list[ProofTree]:
    """Constructed valid single-node proofs with shape-diverse statements,
    used when sampled donors sit too close to the graft parent."""
    from .kernel import JRefl, parse_statement

    pool = []
    for text in _DRIFT_DONOR_TEXTS:
        s = parse_statement(text)
        pool.append(ProofTree(goal=s, root=0, nodes={0: ProofNode(0, s, JRefl(), ())}))
    return pool


def _inject_drift(t: ProofTree, rng: random.Random, seed: int, lib, bounds) -> tuple[NodeId, ProofTree]:
    from .embedding import cosine, embed

    non_root = sorted(set(t.nodes) - {t.root})
    if not non_root:
        raise InjectionInapplicable("single-node tree has no graft point")
    parents = _parent_map(t)

    def drop(victim: NodeId, stmt) -> float:
        return 1.0 - cosine(embed(t.nodes[parents[victim]].statement), embed(stmt))

    for attempt in range(40):
        victim = rng.choice(non_root)
        donor = generate_one(derive_seed(seed, "drift-donor", attempt), bounds, lib)
        donor_roots = [
            nid
            for nid in sorted(donor.nodes)
            if _hyp_free(donor, nid)
            and donor.nodes[nid].statement != t.nodes[victim].statement
            and drop(victim, donor.nodes[nid].statement) >= MIN_DRIFT_DROP
        ]
        if not donor_roots:
            continue
        droot = rng.choice(donor_roots)
        return _graft(t, victim, donor, droot)

    # Sampled donors all hug the parent's embedding; fall back to the
    # constructed pool and take the graft point with the widest drop.
    best = None
    for victim in non_root:
        for donor in _drift_donor_pool():
            stmt = donor.nodes[donor.root].statement
            if stmt == t.nodes[victim].statement:
                continue
            d = drop(victim, stmt)
            if d >= MIN_DRIFT_DROP and (best is None or d > best[0]):
                best = (d, victim, donor)
    if best is None:
        raise InjectionInapplicable("could not find a drift donor")
    _, victim, donor = best
    return _graft(t, victim, donor, donor.root)


def _graft(t: ProofTree, victim: NodeId, donor: ProofTree, droot: NodeId) -> tuple[NodeId, ProofTree]:
    """Replace victim's subtree with donor's subtree rooted at droot."""
    doomed = _subtree_ids(t, victim)
    base = max(max(t.nodes), max(donor.nodes)) + 1
    nodes: dict[NodeId, ProofNode] = {}
    for k, v in t.nodes.items():
        if k in doomed and k != victim:
            continue
        kids = v.children
        nodes[k] = ProofNode(k, v.statement, v.just, kids)
    # Copy the donor subtree under offset ids; its root takes victim's slot.
    offset_ids = {d: base + i for i, d in enumerate(sorted(_subtree_ids(donor, droot)))}
    offset_ids[droot] = victim
    for d, new_id in offset_ids.items():
        dn = donor.nodes[d]
        kids = tuple(offset_ids[c] for c in dn.children)
        just = dn.just
        if isinstance(just, JHyp):  # excluded by _hyp_free, defensive
            raise InjectionInapplicable("donor subtree cites a hypothesis")
        nodes[new_id] = ProofNode(new_id, dn.statement, just, kids)
    grafted = ProofTree(t.goal, t.root, nodes, t.cites)
    renumbered, remap = _renumber_with_map(grafted)
    return remap[victim], renumbered


# ---------------------------------------------------------------------------
# Corpus assembly


@dataclass
class Manifest:
    size: int
    valid: int
    flawed: int
    augmented: int
    mode_counts: dict[str, int]
    split_counts: dict[str, dict[str, int]] = field(default_factory=dict)
    config: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(
            {
                "size": self.size,
                "valid": self.valid,
                "flawed": self.flawed,
                "augmented": self.augmented,
                "mode_counts": self.mode_counts,
                "split_counts": self.split_counts,
                "config": self.config,
            },
            indent=2,
            sort_keys=True,
        )


def _make_flawed(
    index: int,
    mode: ErrorMode,
    cfg: InjectionConfig,
    bounds: GenBounds,
    lib: LemmaLibrary,
    tag: str,
) -> AnnotatedProof:
    for attempt in range(60):
        gseed = derive_seed(cfg.seed, tag, index, "base", attempt)
        force = mode is ErrorMode.INCOMPLETE_INDUCTION
        base = AnnotatedProof(
            id=f"{tag}{index:06d}",
            tree=generate_one(gseed, bounds, lib, force_induction=force),
            label="valid",
            gen_seed=gseed,
        )
        try:
            return inject_error(
                base, mode, derive_seed(cfg.seed, tag, index, "inject", attempt), lib, bounds
            )
        except InjectionInapplicable:
            continue
    raise GenerationError(f"injection of {mode.value} kept failing (item {tag}{index})")


def build_corpus(
    cfg: InjectionConfig,
    bounds: GenBounds,
    size: int,
    lib: Optional[LemmaLibrary] = None,
) -> tuple[list[AnnotatedProof], Manifest]:
    lib = lib or default_library()
    n_flawed = apportion([cfg.flawed_fraction, 1.0 - cfg.flawed_fraction], size)[0]
    n_valid = size - n_flawed
    items = generate_valid(n_valid, derive_seed(cfg.seed, "valid"), bounds, lib, id_prefix="v")

    weights = cfg.normalized_weights()
    mode_counts = apportion(weights, n_flawed)
    flawed_modes = [m for m, c in zip(MODE_ORDER, mode_counts) for _ in range(c)]
    for i, mode in enumerate(flawed_modes):
        items.append(_make_flawed(i, mode, cfg, bounds, lib, tag="f"))

    n_aug = round(cfg.augmentation_factor * n_flawed)
    aug_counts = apportion(weights, n_aug)
    aug_modes = [m for m, c in zip(MODE_ORDER, aug_counts) for _ in range(c)]
    for i, mode in enumerate(aug_modes):
        items.append(_make_flawed(i, mode, cfg, bounds, lib, tag="a"))

    histogram: dict[str, int] = {m.value: 0 for m in MODE_ORDER}
    for it in items:
        for m in it.modes:
            histogram[m] += 1
    manifest = Manifest(
        size=len(items),
        valid=n_valid,
        flawed=n_flawed,
        augmented=n_aug,
        mode_counts=histogram,
        config={
            "flawed_fraction": cfg.flawed_fraction,
            "mode_weights": list(cfg.mode_weights),
            "augmentation_factor": cfg.augmentation_factor,
            "seed": cfg.seed,
            "requested_size": size,
            "bounds": {
                "max_depth": bounds.max_depth,
                "max_value": bounds.max_value,
                "max_term_size": bounds.max_term_size,
            },
        },
    )
    return items, manifest


# ---------------------------------------------------------------------------
# Stratified split


def split(
    corpus: Sequence[AnnotatedProof],
    cfg: SplitConfig,
) -> tuple[list[AnnotatedProof], dict[str, dict[str, int]]]:
    """Assign train/val/test tags, stratified by error-mode signature."""
    for it in corpus:
        if it.split != "unassigned":
            raise ValueError(f"item {it.id} already has a split")
    strata: dict[str, list[int]] = {}
    for i, it in enumerate(corpus):
        strata.setdefault(it.signature(), []).append(i)
    names = ("train", "val", "test")
    assignment: dict[int, str] = {}
    sig_order = ["valid"] + [m.value for m in MODE_ORDER]
    extras = sorted(set(strata) - set(sig_order))
    for sig in sig_order + extras:
        idxs = strata.get(sig)
        if not idxs:
            continue
        if len(idxs) < 3:
            log.warning("stratum %r has %d items; assigning all to train", sig, len(idxs))
            for i in idxs:
                assignment[i] = "train"
            continue
        counts = apportion(cfg.ratios, len(idxs))
        shuffled = list(idxs)
        random.Random(derive_seed(cfg.seed, "split", sig)).shuffle(shuffled)
        pos = 0
        for name, c in zip(names, counts):
            for i in shuffled[pos:pos + c]:
                assignment[i] = name
            pos += c
    out = [replace(it, split=assignment[i]) for i, it in enumerate(corpus)]
    histogram: dict[str, dict[str, int]] = {n: {} for n in names}
    for it in out:
        sig = it.signature()
        histogram[it.split][sig] = histogram[it.split].get(sig, 0) + 1
    return out, histogram


# ---------------------------------------------------------------------------
# Persistence


def _record(it: AnnotatedProof) -> dict:
    return {
        "version": CORPUS_FORMAT_VERSION,
        "id": it.id,
        "label": it.label,
        "modes": list(it.modes),
        "injected_node": it.injected_node,
        "split": it.split,
        "gen_seed": it.gen_seed,
        "inject_seed": it.inject_seed,
        "tree": serialize(it.tree),
    }


def dumps_corpus(corpus: Sequence[AnnotatedProof]) -> str:
    return "".join(
        json.dumps(_record(it), sort_keys=True, ensure_ascii=True) + "\n" for it in corpus
    )


def save_corpus(corpus: Sequence[AnnotatedProof], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(dumps_corpus(corpus))


def load_corpus(path) -> list[AnnotatedProof]:
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as e:
                raise CorpusFormatError(f"line {lineno}: bad JSON ({e})") from None
            if rec.get("version") != CORPUS_FORMAT_VERSION:
                raise CorpusFormatError(
                    f"line {lineno}: unsupported record version {rec.get('version')!r}"
                )
            try:
                out.append(
                    AnnotatedProof(
                        id=rec["id"],
                        tree=parse_tree(rec["tree"]),
                        label=rec["label"],
                        modes=tuple(rec["modes"]),
                        injected_node=rec["injected_node"],
                        split=rec["split"],
                        gen_seed=rec["gen_seed"],
                        inject_seed=rec["inject_seed"],
                    )
                )
            except (KeyError, ValueError) as e:
                raise CorpusFormatError(f"line {lineno}: {e}") from None
    return out
