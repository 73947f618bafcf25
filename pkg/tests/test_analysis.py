"""Metrics and statistics tests, with independent numeric oracles for the
regression and correlation code."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from proofloop.analysis import (
    DEFAULT_TAU,
    DetectorModel,
    MetricsReport,
    ReportedSingular,
    RunRecord,
    calibrate_tau,
    detect_modes,
    detector_scores,
    drift_profile,
    edpt,
    fpsr,
    metrics,
    mode_frequency_matrix,
    ols_regression,
    pearson,
    ppc,
    report,
)
from proofloop.corpus import (
    ErrorMode,
    GenBounds,
    InjectionConfig,
    build_corpus,
    default_library,
)
from proofloop.corrector import CorrectionOutcome
from proofloop.embedding import EMBED_DIM, cosine, embed
from proofloop.kernel import JRefl, Reason, parse_statement
from proofloop.prooftree import ProofNode, ProofTree
from proofloop.verifier import StepVerdict, VerifierConfig, VerifyReport, verify_tree

S = parse_statement
LIB = default_library()
VCFG = VerifierConfig()

VALID_STEP = StepVerdict("Valid")
INVALID_STEP = StepVerdict("Invalid", Reason.PREMISE_MISMATCH)


def _tree(n=1):
    s = S("0 = 0")
    return ProofTree(goal=s, root=0, nodes={0: ProofNode(0, s, JRefl(), ())})


def _rec(valid=True, node_verdicts=None, correction=None, latency=1.0):
    verdicts = node_verdicts or {0: VALID_STEP if valid else INVALID_STEP}
    rep = VerifyReport(
        tree_id="t",
        verdicts=verdicts,
        overall_valid=valid,
        failed_node=None if valid else 0,
        latency_ms=latency,
    )
    return RunRecord(proof_id="t", tree=_tree(), report=rep, correction=correction)


# ---------------------------------------------------------------------------
# Core metrics


def test_fpsr_worked_example():
    records = [_rec(valid=True)] * 684 + [_rec(valid=False)] * 316
    assert fpsr(records) == pytest.approx(0.684)
    with pytest.raises(ValueError):
        fpsr([])


def test_ppc_is_pooled_not_macro():
    # record A: 1/2 steps valid; record B: 8/8 steps valid.
    # pooled: 9/10 = 0.9; a per-proof macro average would give 0.75.
    a = _rec(valid=False, node_verdicts={0: VALID_STEP, 1: INVALID_STEP})
    b = _rec(valid=True, node_verdicts={i: VALID_STEP for i in range(8)})
    assert ppc([a, b]) == pytest.approx(0.9)
    with pytest.raises(ValueError):
        ppc([])


def test_edpt_over_repaired_only():
    rep = CorrectionOutcome(status="Repaired", tree=_tree(), iterations=1, edpt=4.0)
    exh = CorrectionOutcome(status="Exhausted", tree=_tree(), iterations=8)
    mean, excluded = edpt([_rec(correction=rep), _rec(correction=exh), _rec()])
    assert mean == pytest.approx(4.0)
    assert excluded == 2
    assert edpt([_rec()]) == (None, 1)


def test_metrics_latency_toggle():
    m = metrics([_rec(latency=2.0), _rec(latency=4.0)])
    assert m.mean_latency_ms == pytest.approx(3.0)
    m2 = metrics([_rec()], include_latency=False)
    assert m2.mean_latency_ms is None
    assert m2.counts["records"] == 1


# ---------------------------------------------------------------------------
# Embedding and drift


def test_embed_shape_and_cosine():
    e = embed(S("forall x. (x + 0) = x"))
    assert e.shape == (EMBED_DIM,)
    assert cosine(e, e) == pytest.approx(1.0)
    assert cosine(e, np.zeros(EMBED_DIM)) == 0.0


def test_drift_profile_single_node():
    p = drift_profile(_tree())
    assert p.similarities == []
    assert p.max_drop == 0.0


def test_calibrate_tau_clears_valid_trees():
    corpus, _ = build_corpus(InjectionConfig(seed=41), GenBounds(), 80, LIB)
    valid = [p.tree for p in corpus if p.label == "valid"]
    tau = calibrate_tau(valid)
    assert 0.0 < tau < 1.0
    for t in valid:
        assert drift_profile(t).max_drop < tau


def test_detector_model_validation():
    with pytest.raises(ValueError):
        DetectorModel(tau=0.0)
    with pytest.raises(ValueError):
        DetectorModel(tau=1.0)


# ---------------------------------------------------------------------------
# Mode detection


def test_detect_modes_on_injected_corpus():
    corpus, _ = build_corpus(InjectionConfig(seed=47), GenBounds(), 150, LIB)
    tau = calibrate_tau([p.tree for p in corpus if p.label == "valid"])
    for p in corpus:
        pred = detect_modes(p.tree, LIB, tau)
        truth = {ErrorMode(m) for m in p.modes}
        if p.label == "valid":
            assert pred == set(), p.id
        else:
            assert truth <= pred or pred & truth == truth, p.id


def test_detector_scores_perfect_on_clean_corpus():
    corpus, _ = build_corpus(InjectionConfig(seed=53), GenBounds(), 150, LIB)
    tau = calibrate_tau([p.tree for p in corpus if p.label == "valid"])
    scores = detector_scores(corpus, LIB, tau)
    assert scores.n == len(corpus)
    assert scores.accuracy >= 0.9
    assert scores.macro_recall >= 0.85
    for m in ("Hallucination", "TopoOrder", "IncompleteInduction"):
        assert scores.per_mode_recall[m] == 1.0


def test_detector_scores_empty_mode_defaults():
    from proofloop.corpus import generate_valid

    corpus = generate_valid(10, seed=59, bounds=GenBounds(), lib=LIB)
    tau = calibrate_tau([p.tree for p in corpus])
    scores = detector_scores(corpus, LIB, tau)
    assert scores.macro_recall == 1.0  # no flawed modes present
    assert all(v == 1.0 for v in scores.per_mode_recall.values())


# ---------------------------------------------------------------------------
# Statistics, against numpy oracles


def test_pearson_matches_numpy():
    rng = np.random.default_rng(0)
    x = rng.normal(size=50)
    y = 2.0 * x + rng.normal(size=50)
    assert pearson(list(x), list(y)) == pytest.approx(float(np.corrcoef(x, y)[0, 1]))


def test_pearson_extremes_and_errors():
    x = [1.0, 2.0, 3.0, 4.0]
    assert pearson(x, [2.0, 4.0, 6.0, 8.0]) == pytest.approx(1.0)
    assert pearson(x, [-1.0, -2.0, -3.0, -4.0]) == pytest.approx(-1.0)
    with pytest.raises(ValueError):
        pearson([1.0, 2.0], [1.0, 2.0])
    with pytest.raises(ValueError):
        pearson(x, [5.0, 5.0, 5.0, 5.0])


def test_ols_recovers_planted_coefficients():
    rng = np.random.default_rng(3)
    X = rng.normal(size=(200, 3))
    beta = np.array([1.5, -2.0, 0.25])
    y = X @ beta + 0.75
    res = ols_regression(X, y)
    assert np.allclose(res.coefficients, beta, atol=1e-9)
    assert res.intercept == pytest.approx(0.75, abs=1e-9)
    assert res.r_squared == pytest.approx(1.0, abs=1e-9)
    assert res.p_value == 0.0


def test_ols_null_model():
    rng = np.random.default_rng(4)
    X = rng.normal(size=(300, 2))
    y = rng.normal(size=300)  # no relationship
    res = ols_regression(X, y)
    assert res.r_squared < 0.05
    assert res.p_value > 0.01


def test_ols_pvalue_matches_scipy_linregress():
    rng = np.random.default_rng(5)
    x = rng.normal(size=80)
    y = 0.4 * x + rng.normal(size=80)
    res = ols_regression(x.reshape(-1, 1), y)
    from scipy import stats

    lr = stats.linregress(x, y)
    assert res.coefficients[0] == pytest.approx(lr.slope)
    assert res.p_value == pytest.approx(lr.pvalue, rel=1e-9)


def test_ols_rejects_singular():
    X = np.ones((30, 2))  # collinear with the intercept
    y = np.arange(30.0)
    with pytest.raises(ReportedSingular):
        ols_regression(X, y)
    with pytest.raises(ValueError):
        ols_regression(np.zeros((3, 4)), np.zeros(3))


def test_mode_frequency_matrix_shapes():
    corpus, _ = build_corpus(InjectionConfig(seed=61), GenBounds(), 60, LIB)
    tau = calibrate_tau([p.tree for p in corpus if p.label == "valid"])
    X, y = mode_frequency_matrix(corpus, LIB, tau)
    assert X.shape == (len(corpus), 4)
    assert y.shape == (len(corpus),)
    assert set(np.unique(y)) <= {0.0, 1.0}
    # valid proofs trigger no detections, so their rows are all-zero
    for p, row in zip(corpus, X):
        if p.label == "valid":
            assert not row.any()


# ---------------------------------------------------------------------------
# Table rendering


def test_report_formatting():
    m = MetricsReport(fpsr=0.684, ppc=0.912, mean_edpt=3.25, mean_latency_ms=None,
                      mean_proof_len=10.04)
    text = report([("test", m), ("empty", None)])
    lines = text.splitlines()
    assert lines[0].split("  ")[0].strip() == "Dataset"
    assert "FPSR (%)" in lines[0]
    assert set(lines[1]) <= {"-", " "}
    row = lines[2].split()
    assert row == ["test", "68.4", "91.2", "3.2", "—", "10.0"]
    assert lines[3].split()[0] == "empty"
    assert lines[3].count("—") == 5


def test_report_column_names_exact():
    from proofloop.analysis import REPORT_COLUMNS

    assert REPORT_COLUMNS == (
        "Dataset",
        "FPSR (%)",
        "PPC (%)",
        "EDPT",
        "Latency (ms)",
        "Proof Len (avg)",
    )


# ---------------------------------------------------------------------------
# Properties


vecs = st.lists(st.floats(-10, 10), min_size=EMBED_DIM, max_size=EMBED_DIM)


@settings(max_examples=60)
@given(vecs, vecs)
def test_cosine_bounded(u, v):
    c = cosine(np.asarray(u), np.asarray(v))
    assert -1.0 - 1e-9 <= c <= 1.0 + 1e-9


@settings(max_examples=40)
@given(st.lists(st.booleans(), min_size=1, max_size=50))
def test_fpsr_counts(flags):
    records = [_rec(valid=f) for f in flags]
    assert fpsr(records) == pytest.approx(sum(flags) / len(flags))
