"""Metrics, drift embeddings, error-mode detection, and statistics.

FPSR is the fraction of prompts whose final proof fully verifies; PPC is the
pooled fraction of individually valid steps; EDPT is the tree edit distance
from a flawed attempt to its repaired proof. Drift detection embeds each
statement in a fixed 7-dimensional symbolic feature space and thresholds the
largest adjacent cosine-similarity drop.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import stats as _scipy_stats

from .corpus import AnnotatedProof, ErrorMode, MODE_ORDER
from .corrector import CorrectionOutcome
from .embedding import EMBED_DIM, cosine, embed
from .kernel import JCiteLemma, JInduction, JSubstLemma, Statement
from .prooftree import CycleError, LemmaLibrary, ProofTree, topo_order
from .verifier import VerifyReport

DEFAULT_TAU = 0.13


@dataclass
class RunRecord:
    proof_id: str
    tree: ProofTree
    report: VerifyReport
    correction: Optional[CorrectionOutcome] = None
    split: str = "unassigned"


@dataclass
class MetricsReport:
    fpsr: float
    ppc: float
    mean_edpt: Optional[float]
    mean_latency_ms: Optional[float]
    mean_proof_len: float
    counts: dict[str, int] = field(default_factory=dict)


# ---------------------------------------------------------------------------
# Core metrics


def fpsr(records: Sequence[RunRecord]) -> float:
    if not records:
        raise ValueError("fpsr of empty record set")
    return sum(1 for r in records if r.report.overall_valid) / len(records)


def ppc(records: Sequence[RunRecord]) -> float:
    """Pooled (micro) step validity across all records."""
    valid = total = 0
    for r in records:
        valid += r.report.valid_node_count()
        total += len(r.report.verdicts)
    if total == 0:
        raise ValueError("ppc with no verdicts")
    return valid / total


def edpt(records: Sequence[RunRecord]) -> tuple[Optional[float], int]:
    """Mean edit distance to repair over Repaired records; also the count of
    records excluded for lacking a repair."""
    dists = [
        r.correction.edpt
        for r in records
        if r.correction is not None and r.correction.status == "Repaired"
    ]
    excluded = len(records) - len(dists)
    if not dists:
        return None, excluded
    return sum(dists) / len(dists), excluded


def metrics(records: Sequence[RunRecord], include_latency: bool = True) -> MetricsReport:
    mean_edpt, excluded = edpt(records)
    lat = (
        sum(r.report.latency_ms for r in records) / len(records)
        if include_latency and records
        else None
    )
    return MetricsReport(
        fpsr=fpsr(records),
        ppc=ppc(records),
        mean_edpt=mean_edpt,
        mean_latency_ms=lat,
        mean_proof_len=sum(len(r.tree.nodes) for r in records) / len(records),
        counts={
            "records": len(records),
            "valid": sum(1 for r in records if r.report.overall_valid),
            "repaired": sum(
                1
                for r in records
                if r.correction is not None and r.correction.status == "Repaired"
            ),
            "edpt_excluded": excluded,
        },
    )


# ---------------------------------------------------------------------------
# Embeddings and drift


@dataclass
class DriftProfile:
    similarities: list[float]  # one per parent-child edge
    max_drop: float  # 1 - min similarity; 0.0 for edgeless trees


def drift_profile(t: ProofTree) -> DriftProfile:
    """Adjacent-statement cosine similarities along every edge.

    Cycle-tolerant: each node's outgoing edges are scored once.
    """
    sims: list[float] = []
    seen: set[int] = set()
    stack = [t.root]
    emb = {t.root: embed(t.nodes[t.root].statement)}
    while stack:
        nid = stack.pop()
        if nid in seen:
            continue
        seen.add(nid)
        for c in t.nodes[nid].children:
            if c not in emb:
                emb[c] = embed(t.nodes[c].statement)
            sims.append(cosine(emb[nid], emb[c]))
            stack.append(c)
    drop = 1.0 - min(sims) if sims else 0.0
    return DriftProfile(similarities=sims, max_drop=drop)


def calibrate_tau(valid_trees: Sequence[ProofTree], margin: float = 1e-6) -> float:
    """Smallest threshold that keeps every valid tree below it."""
    worst = max((drift_profile(t).max_drop for t in valid_trees), default=0.0)
    tau = worst + margin
    if not 0.0 < tau < 1.0:
        tau = DEFAULT_TAU
    return tau


# ---------------------------------------------------------------------------
# Error-mode detection


@dataclass(frozen=True)
class DetectorModel:
    tau: float = DEFAULT_TAU

    def __post_init__(self):
        if not 0.0 < self.tau < 1.0:
            raise ValueError("tau must lie in (0, 1)")


def detect_modes(t: ProofTree, lib: LemmaLibrary, tau: float = DEFAULT_TAU) -> set[ErrorMode]:
    """Rule-based detector mirroring the four injection definitions.

    Drift detection is skipped on topologically broken trees: a rewired edge
    reuses existing statements, so embedding drops there say nothing.
    """
    found: set[ErrorMode] = set()
    for n in t.nodes.values():
        if isinstance(n.just, (JCiteLemma, JSubstLemma)) and n.just.name not in lib:
            found.add(ErrorMode.HALLUCINATION)
        if isinstance(n.just, JInduction) and len(n.children) < 2:
            found.add(ErrorMode.INCOMPLETE_INDUCTION)
    topo_broken = False
    try:
        topo_order(t)
    except CycleError:
        topo_broken = True
        found.add(ErrorMode.TOPO_ORDER)
    if not topo_broken and drift_profile(t).max_drop > tau:
        found.add(ErrorMode.SEMANTIC_DRIFT)
    return found


@dataclass
class DetectorScores:
    accuracy: float  # exact-set-match fraction
    per_mode_precision: dict[str, float]
    per_mode_recall: dict[str, float]
    macro_recall: float
    n: int


def detector_scores(
    corpus: Sequence[AnnotatedProof],
    lib: LemmaLibrary,
    tau: float = DEFAULT_TAU,
) -> DetectorScores:
    exact = 0
    tp = {m: 0 for m in MODE_ORDER}
    fp = {m: 0 for m in MODE_ORDER}
    fn = {m: 0 for m in MODE_ORDER}
    for p in corpus:
        truth = {ErrorMode(m) for m in p.modes}
        pred = detect_modes(p.tree, lib, tau)
        if truth == pred:
            exact += 1
        for m in MODE_ORDER:
            if m in truth and m in pred:
                tp[m] += 1
            elif m in pred:
                fp[m] += 1
            elif m in truth:
                fn[m] += 1
    precision = {
        m.value: tp[m] / (tp[m] + fp[m]) if tp[m] + fp[m] else 1.0 for m in MODE_ORDER
    }
    recall = {
        m.value: tp[m] / (tp[m] + fn[m]) if tp[m] + fn[m] else 1.0 for m in MODE_ORDER
    }
    present = [m.value for m in MODE_ORDER if tp[m] + fn[m] > 0]
    macro = sum(recall[m] for m in present) / len(present) if present else 1.0
    return DetectorScores(
        accuracy=exact / len(corpus) if corpus else 0.0,
        per_mode_precision=precision,
        per_mode_recall=recall,
        macro_recall=macro,
        n=len(corpus),
    )


# ---------------------------------------------------------------------------
# Statistics


def pearson(x: Sequence[float], y: Sequence[float]) -> float:
    if len(x) != len(y) or len(x) < 3:
        raise ValueError("pearson needs equal-length series of length >= 3")
    xa = np.asarray(x, dtype=float)
    ya = np.asarray(y, dtype=float)
    sx = xa.std()
    sy = ya.std()
    if sx == 0.0 or sy == 0.0:
        raise ValueError("pearson undefined for zero-variance series")
    r = float(((xa - xa.mean()) * (ya - ya.mean())).mean() / (sx * sy))
    return max(-1.0, min(1.0, r))


class ReportedSingular(ValueError):
    """Design matrix is rank-deficient; coefficients are not identifiable."""


@dataclass
class RegressionResult:
    coefficients: np.ndarray
    intercept: float
    r_squared: float
    p_value: float
    n: int


def ols_regression(X: Sequence[Sequence[float]], y: Sequence[float]) -> RegressionResult:
    """Least squares with intercept; overall F-test p-value."""
    Xa = np.asarray(X, dtype=float)
    ya = np.asarray(y, dtype=float)
    if Xa.ndim != 2:
        raise ValueError("X must be 2-dimensional")
    n, k = Xa.shape
    if n <= k + 1:
        raise ValueError("need more observations than predictors plus one")
    design = np.column_stack([np.ones(n), Xa])
    if np.linalg.matrix_rank(design) < k + 1:
        raise ReportedSingular("design matrix is rank-deficient")
    beta, _, _, _ = np.linalg.lstsq(design, ya, rcond=None)
    fitted = design @ beta
    ss_res = float(((ya - fitted) ** 2).sum())
    ss_tot = float(((ya - ya.mean()) ** 2).sum())
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    r2 = max(0.0, min(1.0, r2))
    dof_num = k
    dof_den = n - k - 1
    if ss_res <= 1e-300 or r2 >= 1.0:
        p = 0.0
    else:
        f_stat = (r2 / dof_num) / ((1.0 - r2) / dof_den)
        p = float(_scipy_stats.f.sf(f_stat, dof_num, dof_den))
    return RegressionResult(
        coefficients=beta[1:], intercept=float(beta[0]), r_squared=r2, p_value=p, n=n
    )


def mode_frequency_matrix(
    corpus: Sequence[AnnotatedProof],
    lib: LemmaLibrary,
    tau: float = DEFAULT_TAU,
) -> tuple[np.ndarray, np.ndarray]:
    """Per-proof detected-mode frequency rows X (one column per mode, counts
    normalized by node count) and valid-label indicator y."""
    rows = []
    ys = []
    for p in corpus:
        pred = detect_modes(p.tree, lib, tau)
        size = max(len(p.tree.nodes), 1)
        rows.append([(1.0 / size if m in pred else 0.0) for m in MODE_ORDER])
        ys.append(1.0 if p.label == "valid" else 0.0)
    return np.asarray(rows), np.asarray(ys)


# ---------------------------------------------------------------------------
# Table rendering

REPORT_COLUMNS = (
    "Dataset",
    "FPSR (%)",
    "PPC (%)",
    "EDPT",
    "Latency (ms)",
    "Proof Len (avg)",
)


def _cell(value: Optional[float], percent: bool = False) -> str:
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return "—"
    return f"{value * 100:.1f}" if percent else f"{value:.1f}"


def report(slices: Sequence[tuple[str, Optional[MetricsReport]]]) -> str:
    """Aligned plain-text table; one body row per slice, in input order."""
    rows = [list(REPORT_COLUMNS)]
    for name, m in slices:
        if m is None:
            rows.append([name] + ["—"] * (len(REPORT_COLUMNS) - 1))
            continue
        rows.append(
            [
                name,
                _cell(m.fpsr, percent=True),
                _cell(m.ppc, percent=True),
                _cell(m.mean_edpt),
                _cell(m.mean_latency_ms),
                _cell(m.mean_proof_len),
            ]
        )
    widths = [max(len(r[i]) for r in rows) for i in range(len(REPORT_COLUMNS))]
    lines = []
    for i, r in enumerate(rows):
        lines.append("  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip())
        if i == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"
