"""Proposer and verifier-guided RL learner.

The proposer replaces a generative model with bounded enumeration of
candidate justifications scored by a linear softmax policy over
state x action feature products. Rollouts submit every proposed step to
the kernel; the binary verdict is the only reward source. Updates use a
clipped policy-gradient surrogate with n-step returns and a batch-mean
baseline.
"""

from __future__ import annotations

import itertools
import math
import random
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .construct import NodeSpec, flatten
from .kernel import (
    AXIOMS,
    ZERO,
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
    Statement,
    Succ,
    Term,
    Var,
    check_step,
    induction_hypothesis,
    make_bindings,
    match_statement,
    match_term,
    replace_at,
    subst_term,
    substitute,
    subterm_at,
    term_size,
)
from .prooftree import LemmaLibrary, ProofTree, statement_size
from .verifier import VerifierConfig

FEATURE_VERSION = 1
MAX_EXPAND_DEPTH = 24

_HEADS = (
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
N_STATE = 6
N_ACTION = len(_HEADS) + 5
FEATURE_DIM = N_STATE * N_ACTION


@dataclass(frozen=True)
class ProposerState:
    goal: Statement
    obligation: Statement
    depth: int
    budget: int
    lemma_names: tuple[str, ...]
    hyps: tuple[tuple[int, Statement], ...] = ()


@dataclass(frozen=True)
class ActionCandidate:
    just: Justification
    premises: tuple[Statement, ...]
    matched: bool  # instantiation came from successful matching


@dataclass
class PolicyParams:
    weights: np.ndarray
    feature_version: int = FEATURE_VERSION

    @classmethod
    def zeros(cls) -> "PolicyParams":
        return cls(np.zeros(FEATURE_DIM))

    @classmethod
    def prior(cls) -> "PolicyParams":
        """Untrained-but-sensible ranking prior: prefer candidates whose
        instantiation came from successful matching, mildly prefer closers."""
        w = np.zeros(FEATURE_DIM)
        w[len(_HEADS) + 3] = 4.0  # bias-state x matched
        w[len(_HEADS) + 1] = 0.5  # bias-state x closes
        return cls(w)


@dataclass
class EpisodeStep:
    features: np.ndarray  # (k, FEATURE_DIM) one row per candidate
    chosen: int
    log_prob: float  # under the behavior policy
    reward: float  # +1 / -1, straight from the kernel verdict
    ret: float = 0.0  # n-step return, filled by n_step_returns
    terminal: bool = False  # last step of its episode


@dataclass(frozen=True)
class TrainConfig:
    n_step: int = 4
    gamma: float = 0.95
    clip: float = 0.2
    lr: float = 0.05
    episodes_per_update: int = 8
    max_steps: int = 16
    updates: int = 200
    seed: int = 0

    def __post_init__(self):
        if self.clip <= 0 or self.n_step < 1 or not 0 < self.gamma <= 1:
            raise ValueError("bad training hyperparameters")


# ---------------------------------------------------------------------------
# Features


def state_features(s: ProposerState) -> np.ndarray:
    return np.array(
        [
            1.0,
            min(s.depth, 8) / 8.0,
            min(s.budget, 16) / 16.0,
            min(statement_size(s.obligation), 20) / 20.0,
            1.0 if s.obligation.binders else 0.0,
            1.0 if s.obligation.lhs == s.obligation.rhs else 0.0,
        ]
    )


def action_features(c: ActionCandidate) -> np.ndarray:
    head = np.zeros(len(_HEADS))
    h = c.just.head()
    if h in _HEADS:
        head[_HEADS.index(h)] = 1.0
    ob_size = sum(statement_size(p) for p in c.premises)
    extra = np.array(
        [
            1.0,
            1.0 if not c.premises else 0.0,  # closes the obligation
            len(c.premises) / 2.0,
            1.0 if c.matched else 0.0,
            min(ob_size, 20) / 20.0,
        ]
    )
    return np.concatenate([head, extra])


def candidate_features(s: ProposerState, cands: Sequence[ActionCandidate]) -> np.ndarray:
    sf = state_features(s)
    return np.stack([np.outer(sf, action_features(c)).ravel() for c in cands])


# ---------------------------------------------------------------------------
# Action enumeration


def _divergence_paths(l: Term, r: Term) -> list[tuple[int, ...]]:
    """Proper prefixes of the unique divergence chain between l and r."""
    out: list[tuple[int, ...]] = []
    path: tuple[int, ...] = ()
    while True:
        if l == r or type(l) is not type(r):
            return out
        if isinstance(l, Succ):
            out.append(path + (0,))
            l, r = l.inner, r.inner  # type: ignore[union-attr]
            path = out[-1]
            continue
        if not hasattr(l, "lhs"):
            return out
        left_diff = l.lhs != r.lhs  # type: ignore[union-attr]
        right_diff = l.rhs != r.rhs  # type: ignore[union-attr]
        if left_diff and right_diff:
            return out
        i = 0 if left_diff else 1
        out.append(path + (i,))
        l = l.lhs if i == 0 else l.rhs  # type: ignore[union-attr]
        r = r.lhs if i == 0 else r.rhs  # type: ignore[union-attr]
        path = out[-1]


def _one_step_rewrites(t: Term, lib: LemmaLibrary, limit: int = 6) -> list[Term]:
    """Left-to-right axiom/lemma rewrites of t at any position."""
    from .construct import _all_paths

    out: list[Term] = []
    seen = {t}
    eqs = [s for _, s in AXIOMS.items()] + [s for _, s in lib]
    for schema in eqs:
        pv = frozenset(schema.binders)
        for path in _all_paths(t):
            sub = subterm_at(t, path)
            b: dict[str, Term] = {}
            if sub is None or not match_term(schema.lhs, sub, b, pv):
                continue
            if set(b) != set(schema.binders):
                continue
            new = replace_at(t, path, subst_term(schema.rhs, b))
            if new is None or new in seen or term_size(new) > 60:
                continue
            seen.add(new)
            out.append(new)
            if len(out) >= limit:
                return out
    return out


def _closable(ob: Statement, lib: LemmaLibrary, s: ProposerState) -> bool:
    """True if some zero-premise rule discharges the obligation outright."""
    if ob.lhs == ob.rhs:
        return True
    if any(match_statement(sch, ob) is not None for sch in AXIOMS.values()):
        return True
    for name in s.lemma_names:
        sch = lib.get(name)
        if sch is not None and (sch == ob or match_statement(sch, ob) is not None):
            return True
    return any(h == ob for _, h in s.hyps)


def enumerate_actions(s: ProposerState, lib: LemmaLibrary) -> list[ActionCandidate]:
    """Bounded, deterministic candidate set at the obligation.

    Deliberately generous: contains kernel-invalid decoys (Refl on unequal
    sides, unmatched axiom/lemma citations, mismatched hypotheses) so the
    learner has verdicts worth distinguishing.
    """
    ob = s.obligation
    cands: list[ActionCandidate] = []
    expand = s.depth < MAX_EXPAND_DEPTH and s.budget > 1

    # Refl, always on offer.
    cands.append(ActionCandidate(JRefl(), (), ob.lhs == ob.rhs))

    # Axiom instantiations (matched) plus one unmatched decoy per schema.
    for name in sorted(AXIOMS):
        b = match_statement(AXIOMS[name], ob)
        if b is not None:
            cands.append(ActionCandidate(JAxiom(name, make_bindings(b)), (), True))
        else:
            cands.append(ActionCandidate(JAxiom(name, ()), (), False))

    # Lemma citations.
    for name in s.lemma_names:
        schema = lib.get(name)
        if schema is None:
            continue
        if schema == ob:
            cands.append(ActionCandidate(JCiteLemma(name), (), True))
            continue
        b = match_statement(schema, ob)
        if b is not None:
            cands.append(ActionCandidate(JSubstLemma(name, make_bindings(b)), (), True))
        else:
            cands.append(ActionCandidate(JCiteLemma(name), (), False))

    # Hypotheses in scope.
    for hid, h in s.hyps:
        cands.append(ActionCandidate(JHyp(hid), (), h == ob))

    if expand:
        # Sym flip, only when the flipped obligation closes immediately —
        # otherwise Sym-of-Sym lets valid steps loop without progress.
        flipped = Statement(ob.binders, ob.rhs, ob.lhs)
        if _closable(flipped, lib, s):
            cands.append(ActionCandidate(JSym(), (flipped,), True))
        # Cong along the divergence chain.
        for path in _divergence_paths(ob.lhs, ob.rhs):
            sub_l = subterm_at(ob.lhs, path)
            sub_r = subterm_at(ob.rhs, path)
            if sub_l is None or sub_r is None:
                continue
            cands.append(
                ActionCandidate(JCong(path), (Statement(ob.binders, sub_l, sub_r),), True)
            )
        # Trans through the first one-step rewrite of the left side. A single
        # midpoint keeps chains well-founded, and no Trans is offered when
        # rhs is itself one rewrite away (Cong or an axiom closes those);
        # otherwise valid Trans steps could oscillate instead of progressing.
        mids = _one_step_rewrites(ob.lhs, lib)
        if mids and ob.rhs not in mids:
            mid = mids[0]
            cands.append(
                ActionCandidate(
                    JTrans(),
                    (Statement(ob.binders, ob.lhs, mid), Statement(ob.binders, mid, ob.rhs)),
                    True,
                )
            )
        # Induction on each binder.
        for var in ob.binders:
            base = substitute(ob, {var: ZERO})
            step = substitute(ob, {var: Succ(Var(var))})
            cands.append(ActionCandidate(JInduction(var), (base, step), True))

    return cands


# ---------------------------------------------------------------------------
# Sampling


def _log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max()
    return z - math.log(float(np.exp(z).sum()))


def sample_action(
    p: PolicyParams,
    s: ProposerState,
    cands: Sequence[ActionCandidate],
    rng: random.Random,
) -> tuple[int, float, np.ndarray]:
    """Softmax draw over candidate scores; returns (index, log-prob, features)."""
    phi = candidate_features(s, cands)
    logp = _log_softmax(phi @ p.weights)
    probs = np.exp(logp)
    r = rng.random()
    acc = 0.0
    idx = len(cands) - 1
    for i, q in enumerate(probs):
        acc += float(q)
        if r < acc:
            idx = i
            break
    return idx, float(logp[idx]), phi


# ---------------------------------------------------------------------------
# Rollouts


@dataclass
class _Pending:
    spec: NodeSpec
    depth: int
    hyps: dict[int, Statement]
    done: bool = False


_token_counter = itertools.count(10**6)


def rollout(
    p: PolicyParams,
    goal: Statement,
    lib: LemmaLibrary,
    cfg: TrainConfig,
    rng: random.Random,
) -> tuple[Optional[ProofTree], list[EpisodeStep]]:
    """Sample one proof attempt. Every step is checked immediately; rejected
    steps leave the tree untouched. Returns the completed tree (or None) and
    the episode trace."""
    root = NodeSpec(goal, JRefl())  # justification overwritten once chosen
    frontier: list[_Pending] = [_Pending(root, 1, {})]
    steps: list[EpisodeStep] = []
    budget = cfg.max_steps

    while frontier and len(steps) < budget:
        cur = frontier[-1]
        state = ProposerState(
            goal=goal,
            obligation=cur.spec.statement,
            depth=cur.depth,
            budget=budget - len(steps),
            lemma_names=lib.names(),
            hyps=tuple(sorted(cur.hyps.items())),
        )
        cands = enumerate_actions(state, lib)
        idx, logp, phi = sample_action(p, state, cands, rng)
        chosen = cands[idx]
        verdict = check_step(
            cur.spec.statement, chosen.just, chosen.premises, dict(lib), cur.hyps
        )
        reward = 1.0 if verdict.is_valid else -1.0
        steps.append(EpisodeStep(phi, idx, logp, reward))
        if verdict.is_valid:
            frontier.pop()
            _attach(cur, chosen, frontier)
    complete = not frontier
    if steps:
        steps[-1].terminal = True
    if not complete:
        return None, steps
    return flatten(_resolve_placeholders(root), goal=goal), steps


def _attach(cur: _Pending, chosen: ActionCandidate, frontier: list[_Pending]) -> None:
    cur.spec.just = chosen.just
    child_hyps = cur.hyps
    if isinstance(chosen.just, JInduction):
        token = next(_token_counter)
        cur.spec.hyp_token = token
        ih = induction_hypothesis(cur.spec.statement, chosen.just.var)
        child_hyps = dict(cur.hyps)
        child_hyps[-token] = ih
    kids = [NodeSpec(prem, JRefl()) for prem in chosen.premises]
    cur.spec.children = kids
    for k in reversed(kids):
        frontier.append(_Pending(k, cur.depth + 1, child_hyps))


def _resolve_placeholders(spec: NodeSpec) -> NodeSpec:
    """Negative Hyp ids are induction-token markers; rewrite for flatten()."""
    if isinstance(spec.just, JHyp) and spec.just.hyp_id < 0:
        spec.just = f"hyp:{-spec.just.hyp_id}"
    for c in spec.children:
        _resolve_placeholders(c)
    return spec


# ---------------------------------------------------------------------------
# Returns and updates


def n_step_returns(
    steps: Sequence[EpisodeStep],
    n: int,
    gamma: float,
    value_fn: Optional[Callable[[int], float]] = None,
) -> list[EpisodeStep]:
    """Fill G_t = sum_{k<n} gamma^k r_{t+k} + gamma^n V(t+n); V is zero at and
    beyond the terminal step (and by default everywhere)."""
    T = len(steps)
    for t in range(T):
        g = 0.0
        for k in range(n):
            if t + k >= T:
                break
            g += (gamma ** k) * steps[t + k].reward
        if t + n < T and value_fn is not None:
            g += (gamma ** n) * value_fn(t + n)
        steps[t].ret = g
    return list(steps)


def _log_probs(w: np.ndarray, step: EpisodeStep) -> tuple[float, np.ndarray]:
    z = step.features @ w
    logp = _log_softmax(z)
    probs = np.exp(logp)
    grad = step.features[step.chosen] - probs @ step.features
    return float(logp[step.chosen]), grad


def _ratio(logp_new: float, logp_old: float) -> float:
    """exp(logp_new - logp_old), saturating to inf instead of raising."""
    try:
        return math.exp(logp_new - logp_old)
    except OverflowError:
        return math.inf


def clipped_surrogate(w: np.ndarray, batch: Sequence[EpisodeStep], clip: float) -> float:
    """L(w) = mean_t min(rho_t A_t, clip(rho_t) A_t), batch-mean baseline."""
    baseline = sum(s.ret for s in batch) / len(batch)
    total = 0.0
    for s in batch:
        logp_new, _ = _log_probs(w, s)
        rho = _ratio(logp_new, s.log_prob)
        adv = s.ret - baseline
        total += min(rho * adv, max(min(rho, 1 + clip), 1 - clip) * adv)
    return total / len(batch)


def surrogate_gradient(w: np.ndarray, batch: Sequence[EpisodeStep], clip: float) -> np.ndarray:
    baseline = sum(s.ret for s in batch) / len(batch)
    g = np.zeros_like(w)
    clipped = 0
    for s in batch:
        logp_new, grad_logp = _log_probs(w, s)
        rho = _ratio(logp_new, s.log_prob)
        adv = s.ret - baseline
        unclipped = rho * adv
        clamped = max(min(rho, 1 + clip), 1 - clip) * adv
        if unclipped <= clamped:
            g += adv * rho * grad_logp
        else:
            clipped += 1
            if 1 - clip < rho < 1 + clip:
                g += adv * rho * grad_logp
    return g / len(batch)


@dataclass
class UpdateDiagnostics:
    surrogate: float
    mean_reward: float
    clip_fraction: float
    grad_norm: float
    aborted: bool = False


def ppo_update(
    p: PolicyParams,
    batch: Sequence[EpisodeStep],
    cfg: TrainConfig,
) -> tuple[PolicyParams, UpdateDiagnostics]:
    """One ascent step on the clipped surrogate; aborts on non-finite grads."""
    if not batch:
        raise ValueError("empty batch")
    g = surrogate_gradient(p.weights, batch, cfg.clip)
    baseline = sum(s.ret for s in batch) / len(batch)
    clip_frac = sum(
        1
        for s in batch
        if not (
            1 - cfg.clip
            <= _ratio(_log_probs(p.weights, s)[0], s.log_prob)
            <= 1 + cfg.clip
        )
    ) / len(batch)
    diag = UpdateDiagnostics(
        surrogate=clipped_surrogate(p.weights, batch, cfg.clip),
        mean_reward=sum(s.reward for s in batch) / len(batch),
        clip_fraction=clip_frac,
        grad_norm=float(np.linalg.norm(g)),
    )
    if not np.isfinite(g).all():
        diag.aborted = True
        return p, diag
    new_w = p.weights + cfg.lr * g
    return PolicyParams(new_w, p.feature_version), diag


# ---------------------------------------------------------------------------
# Checkpoints

CHECKPOINT_VERSION = 1


def save_checkpoint(p: PolicyParams, path) -> None:
    import json

    payload = {
        "checkpoint_version": CHECKPOINT_VERSION,
        "feature_version": p.feature_version,
        "weights": [float(w) for w in p.weights],
    }
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(payload, fh, sort_keys=True)
        fh.write("\n")


def load_checkpoint(path) -> PolicyParams:
    import json

    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    if payload.get("checkpoint_version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version: {payload.get('checkpoint_version')}")
    if payload.get("feature_version") != FEATURE_VERSION:
        raise ValueError(f"feature version mismatch: {payload.get('feature_version')}")
    w = np.asarray(payload["weights"], dtype=float)
    if w.shape != (FEATURE_DIM,):
        raise ValueError("checkpoint weight vector has wrong dimension")
    return PolicyParams(w, payload["feature_version"])


# ---------------------------------------------------------------------------
# Curriculum and training loop


def curriculum_schedule(corpus) -> list[tuple[str, Statement]]:
    """Valid-proof goals ordered by (logical depth, syntactic complexity, id)."""
    from .prooftree import complexity

    rows = []
    for it in corpus:
        if getattr(it, "label", "valid") != "valid":
            continue
        syn, depth = complexity(it.tree)
        rows.append((depth, syn, it.id, it.tree.goal))
    rows.sort(key=lambda r: (r[0], r[1], r[2]))
    return [(rid, goal) for _, _, rid, goal in rows]


def evaluate_fpsr(
    p: PolicyParams,
    goals: Sequence[Statement],
    lib: LemmaLibrary,
    cfg: TrainConfig,
    seed: int,
    vcfg: Optional[VerifierConfig] = None,
) -> float:
    """Fraction of goals solved by a single sampled rollout, re-verified."""
    from .verifier import verify_tree

    vcfg = vcfg or VerifierConfig(timeout_per_proof=5.0)
    solved = 0
    for i, goal in enumerate(goals):
        rng = random.Random(seed * 1_000_003 + i)
        tree, _ = rollout(p, goal, lib, cfg, rng)
        if tree is not None and verify_tree(tree, lib, vcfg).overall_valid:
            solved += 1
    return solved / len(goals) if goals else 0.0


def train(
    goals: Sequence[Statement],
    lib: LemmaLibrary,
    cfg: TrainConfig,
    log: Optional[Callable[[str], None]] = None,
) -> tuple[PolicyParams, list[UpdateDiagnostics]]:
    """Curriculum training loop: rollouts over goals in order, PPO updates."""
    p = PolicyParams.zeros()
    rng = random.Random(cfg.seed)
    history: list[UpdateDiagnostics] = []
    goal_cycle = itertools.cycle(goals)
    for u in range(cfg.updates):
        batch: list[EpisodeStep] = []
        completed = 0
        for _ in range(cfg.episodes_per_update):
            goal = next(goal_cycle)
            tree, steps = rollout(p, goal, lib, cfg, rng)
            n_step_returns(steps, cfg.n_step, cfg.gamma)
            batch.extend(steps)
            # A completed rollout is valid by construction: every step was
            # kernel-checked before entering the tree.
            completed += tree is not None
        if not batch:
            continue
        p, diag = ppo_update(p, batch, cfg)
        history.append(diag)
        if log is not None:
            fpsr_train = completed / cfg.episodes_per_update
            log(
                f"update={u} mean_reward={diag.mean_reward:.3f} "
                f"fpsr_train={fpsr_train:.3f} clip_frac={diag.clip_fraction:.3f}"
            )
    return p, history
