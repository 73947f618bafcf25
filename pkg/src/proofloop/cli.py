"""Command-line pipeline driver.

Subcommands wire the full loop: gen (corpus), split, verify, train, correct,
bench (everything), report. Configuration is a flat sectioned `key = value`
file; all outputs land under a run directory with a fixed layout (corpus/,
checkpoints/, reports/, traces/, manifest). Given the same seed and config,
output bytes are identical across runs; wall-clock timings are printed to the
console (and included in reports only when `timing = on`).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

from .analysis import (
    DEFAULT_TAU,
    calibrate_tau,
    detector_scores,
    metrics,
    mode_frequency_matrix,
    ols_regression,
    pearson,
    report as render_report,
    ReportedSingular,
    RunRecord,
)
from .corpus import (
    AnnotatedProof,
    GenBounds,
    InjectionConfig,
    SplitConfig,
    build_corpus,
    default_library,
    load_corpus,
    save_corpus,
    split as split_corpus,
)
from .corrector import CorrectionConfig, correct_loop
from .policy import (
    PolicyParams,
    TrainConfig,
    curriculum_schedule,
    load_checkpoint,
    save_checkpoint,
    train,
)
from .verifier import VerifierConfig, verify_batch

RUN_DIR_ENV = "PROOFLOOP_RUN_DIR"


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    seed: int = 42
    size: int = 5000
    out_dir: str = "runs/desk"
    workers: int = 1
    timing: bool = False
    tau: Optional[float] = None  # None -> calibrate from train valids
    inject: InjectionConfig = field(default_factory=lambda: InjectionConfig(seed=42))
    split: SplitConfig = field(default_factory=lambda: SplitConfig(seed=42))
    bounds: GenBounds = field(default_factory=GenBounds)
    verify: VerifierConfig = field(default_factory=VerifierConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    correct: CorrectionConfig = field(default_factory=CorrectionConfig)


_BOOL = {"on": True, "off": False, "true": True, "false": False, "yes": True, "no": False}


def _parse_value(text: str):
    text = text.strip()
    if "," in text:
        return tuple(_parse_value(p) for p in text.split(","))
    low = text.lower()
    if low in _BOOL:
        return _BOOL[low]
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        return text


def parse_config_text(text: str) -> RunConfig:
    """Flat sectioned key=value parser; any unknown section or key errors."""
    sections: dict[str, dict[str, object]] = {}
    current = "run"
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            current = line[1:-1].strip()
            sections.setdefault(current, {})
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected `key = value`, got {raw!r}")
        key, _, value = line.partition("=")
        sections.setdefault(current, {})[key.strip()] = _parse_value(value)
    return _build_config(sections)


_SECTION_KEYS = {
    "run": {"seed", "size", "out_dir", "workers", "timing", "tau"},
    "inject": {"flawed_fraction", "mode_weights", "augmentation_factor"},
    "split": {"ratios"},
    "bounds": {"max_depth", "max_value", "max_term_size"},
    "verify": {"timeout_per_proof", "memoize", "approx_skip_threshold"},
    "train": {
        "n_step",
        "gamma",
        "clip",
        "lr",
        "episodes_per_update",
        "max_steps",
        "updates",
    },
    "correct": {"max_candidates", "max_regen_depth", "max_iterations", "trace"},
}


def _build_config(sections: dict[str, dict[str, object]]) -> RunConfig:
    for sec, keys in sections.items():
        if sec not in _SECTION_KEYS:
            raise ConfigError(f"unknown config section: [{sec}]")
        for k in keys:
            if k not in _SECTION_KEYS[sec]:
                raise ConfigError(f"unknown config key: {sec}.{k}")
    run = sections.get("run", {})
    cfg = RunConfig(
        seed=int(run.get("seed", 42)),
        size=int(run.get("size", 5000)),
        out_dir=str(run.get("out_dir", "runs/desk")),
        workers=int(run.get("workers", 1)),
        timing=bool(run.get("timing", False)),
        tau=(float(run["tau"]) if "tau" in run else None),
    )
    try:
        cfg.inject = InjectionConfig(seed=cfg.seed, **sections.get("inject", {}))
        cfg.split = SplitConfig(seed=cfg.seed, **sections.get("split", {}))
        cfg.bounds = GenBounds(**sections.get("bounds", {}))
        cfg.verify = VerifierConfig(**sections.get("verify", {}))
        cfg.train = TrainConfig(seed=cfg.seed, **sections.get("train", {}))
        cfg.correct = CorrectionConfig(**sections.get("correct", {}))
    except (TypeError, ValueError) as e:
        raise ConfigError(str(e)) from e
    return cfg


def load_config(path: str) -> RunConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise IOError(f"cannot read config {path}: {e}") from e
    return parse_config_text(text)


# ---------------------------------------------------------------------------
# Run directory


def run_dir(cfg: RunConfig) -> Path:
    override = os.environ.get(RUN_DIR_ENV)
    return Path(override) if override else Path(cfg.out_dir)


def ensure_layout(root: Path) -> None:
    for sub in ("corpus", "checkpoints", "reports", "traces"):
        (root / sub).mkdir(parents=True, exist_ok=True)


def _corpus_path(root: Path) -> Path:
    return root / "corpus" / "corpus.jsonl"


def _split_path(root: Path) -> Path:
    return root / "corpus" / "corpus_split.jsonl"


def _load_items(root: Path) -> list[AnnotatedProof]:
    path = _split_path(root)
    if not path.exists():
        path = _corpus_path(root)
    if not path.exists():
        raise IOError(f"no corpus found under {root / 'corpus'}; run `gen` first")
    return load_corpus(path)


# ---------------------------------------------------------------------------
# Subcommands


def cmd_gen(cfg: RunConfig) -> int:
    root = run_dir(cfg)
    ensure_layout(root)
    lib = default_library()
    items, manifest = build_corpus(cfg.inject, cfg.bounds, cfg.size, lib)
    save_corpus(items, _corpus_path(root))
    (root / "manifest").write_text(manifest.to_json() + "\n", encoding="utf-8")
    print(f"gen: wrote {len(items)} proofs to {_corpus_path(root)}")
    return 0


def cmd_split(cfg: RunConfig) -> int:
    root = run_dir(cfg)
    ensure_layout(root)
    items = load_corpus(_corpus_path(root))
    assigned, counts = split_corpus(items, cfg.split)
    save_corpus(assigned, _split_path(root))
    manifest_path = root / "manifest"
    if manifest_path.exists():
        data = json.loads(manifest_path.read_text(encoding="utf-8"))
        data["split_counts"] = counts
        manifest_path.write_text(
            json.dumps(data, indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )
    print(f"split: wrote {len(assigned)} proofs to {_split_path(root)}")
    return 0


def cmd_verify(cfg: RunConfig) -> int:
    root = run_dir(cfg)
    ensure_layout(root)
    items = _load_items(root)
    lib = default_library()
    reports, stats = verify_batch(
        [it.tree for it in items],
        lib,
        cfg.verify,
        workers=cfg.workers,
        tree_ids=[it.id for it in items],
    )
    lines = []
    for r in reports:
        rec = {
            "id": r.tree_id,
            "overall_valid": r.overall_valid,
            "failed_node": r.failed_node,
            "valid_nodes": r.valid_node_count(),
            "total_nodes": len(r.verdicts),
        }
        if cfg.timing:
            rec["latency_ms"] = round(r.latency_ms, 3)
        lines.append(json.dumps(rec, sort_keys=True))
    (root / "reports" / "verify.jsonl").write_text(
        "\n".join(lines) + "\n", encoding="utf-8"
    )
    print(stats.summary_line())
    # Cache hit accounting depends on worker interleaving; the summary file
    # keeps only fields that are byte-stable across worker counts.
    summary = f"trees={stats.trees} valid={stats.valid}"
    if cfg.timing:
        summary += f" mean_latency_ms={stats.mean_latency_ms:.3f}"
    (root / "reports" / "verify_summary.txt").write_text(summary + "\n", encoding="utf-8")
    return 0


def cmd_train(cfg: RunConfig) -> int:
    root = run_dir(cfg)
    ensure_layout(root)
    items = _load_items(root)
    lib = default_library()
    pool = [it for it in items if it.split in ("train", "unassigned")]
    schedule = curriculum_schedule(pool)
    if not schedule:
        print("train: no valid training goals in corpus", file=sys.stderr)
        return 1
    goals = [g for _, g in schedule]
    log_lines: list[str] = []

    def log(line: str) -> None:
        log_lines.append(line)
        print(line)

    params, _ = train(goals, lib, cfg.train, log=log)
    save_checkpoint(params, root / "checkpoints" / "policy.json")
    (root / "reports" / "train_log.txt").write_text(
        "\n".join(log_lines) + "\n", encoding="utf-8"
    )
    print(f"train: checkpoint saved to {root / 'checkpoints' / 'policy.json'}")
    return 0


def cmd_correct(cfg: RunConfig) -> int:
    root = run_dir(cfg)
    ensure_layout(root)
    items = _load_items(root)
    lib = default_library()
    ckpt = root / "checkpoints" / "policy.json"
    params = load_checkpoint(ckpt) if ckpt.exists() else PolicyParams.prior()
    targets = [
        it
        for it in items
        if it.label == "flawed" and it.split in ("test", "unassigned")
    ]
    lines = []
    for it in targets:
        out = correct_loop(it.tree, lib, cfg.verify, cfg.correct, params, tree_id=it.id)
        lines.append(
            json.dumps(
                {
                    "id": it.id,
                    "status": out.status,
                    "iterations": out.iterations,
                    "candidate_counts": out.candidate_counts,
                    "edpt": out.edpt,
                },
                sort_keys=True,
            )
        )
        if cfg.correct.trace and out.trace:
            (root / "traces" / f"{it.id}.txt").write_text(
                "\n".join(out.trace) + "\n", encoding="utf-8"
            )
    (root / "reports" / "correct.jsonl").write_text(
        "\n".join(lines) + "\n" if lines else "", encoding="utf-8"
    )
    repaired = sum(1 for l in lines if json.loads(l)["status"] == "Repaired")
    print(f"correct: {repaired}/{len(lines)} flawed test proofs repaired")
    return 0


def _collect_records(
    cfg: RunConfig, root: Path, items: Sequence[AnnotatedProof]
) -> dict[str, list[RunRecord]]:
    lib = default_library()
    corrections = {}
    correct_path = root / "reports" / "correct.jsonl"
    if correct_path.exists():
        for line in correct_path.read_text(encoding="utf-8").splitlines():
            if line.strip():
                rec = json.loads(line)
                corrections[rec["id"]] = rec
    reports, _ = verify_batch(
        [it.tree for it in items],
        lib,
        cfg.verify,
        workers=cfg.workers,
        tree_ids=[it.id for it in items],
    )
    from .corrector import CorrectionOutcome

    slices: dict[str, list[RunRecord]] = {}
    for it, rep in zip(items, reports):
        corr = None
        c = corrections.get(it.id)
        if c is not None:
            corr = CorrectionOutcome(
                status=c["status"], tree=it.tree, iterations=c["iterations"], edpt=c["edpt"]
            )
        record = RunRecord(it.id, it.tree, rep, corr, it.split)
        key = it.split if it.split != "unassigned" else "all"
        slices.setdefault(key, []).append(record)
        slices.setdefault(f"{key}/{it.label}", []).append(record)
    return slices


def cmd_report(cfg: RunConfig) -> int:
    root = run_dir(cfg)
    ensure_layout(root)
    items = _load_items(root)
    lib = default_library()

    slices = _collect_records(cfg, root, items)
    order = [k for k in ("train", "val", "test", "all") if k in slices]
    order += sorted(k for k in slices if "/" in k)
    table_rows = []
    json_lines = []
    for name in order:
        m = metrics(slices[name], include_latency=cfg.timing)
        table_rows.append((name, m))
        json_lines.append(
            json.dumps(
                {
                    "slice": name,
                    "fpsr": m.fpsr,
                    "ppc": m.ppc,
                    "mean_edpt": m.mean_edpt,
                    "mean_latency_ms": m.mean_latency_ms,
                    "mean_proof_len": m.mean_proof_len,
                    "counts": m.counts,
                },
                sort_keys=True,
            )
        )
    table = render_report(table_rows)

    # Statistics block: detector scores, drift correlation, OLS.
    train_valid = [it.tree for it in items if it.split == "train" and it.label == "valid"]
    tau = cfg.tau
    if tau is None:
        tau = calibrate_tau(train_valid) if train_valid else DEFAULT_TAU
    test_items = [it for it in items if it.split in ("test", "unassigned")]
    stats_lines = [f"tau={tau:.6f}"]
    if test_items:
        sc = detector_scores(test_items, lib, tau)
        stats_lines.append(
            f"detector accuracy={sc.accuracy:.4f} macro_recall={sc.macro_recall:.4f}"
        )
        for mode, rec in sorted(sc.per_mode_recall.items()):
            stats_lines.append(f"detector recall[{mode}]={rec:.4f}")
        X, y = mode_frequency_matrix(test_items, lib, tau)
        halluc = X[:, 0]
        if len(set(halluc.tolist())) > 1 and len(set(y.tolist())) > 1:
            r = pearson(halluc.tolist(), y.tolist())
            stats_lines.append(f"pearson hallucination_freq~success r={r:.4f}")
        try:
            ols = ols_regression(X, y)
            stats_lines.append(
                f"ols R2={ols.r_squared:.4f} p={ols.p_value:.3e} n={ols.n}"
            )
        except (ReportedSingular, ValueError) as e:
            stats_lines.append(f"ols skipped: {e}")

    out = table + "\n" + "\n".join(stats_lines) + "\n"
    (root / "reports" / "report.txt").write_text(out, encoding="utf-8")
    (root / "reports" / "report.jsonl").write_text(
        "\n".join(json_lines) + "\n", encoding="utf-8"
    )
    print(out, end="")
    return 0


def cmd_bench(cfg: RunConfig) -> int:
    for step in (cmd_gen, cmd_split, cmd_verify, cmd_train, cmd_correct, cmd_report):
        rc = step(cfg)
        if rc != 0:
            return rc
    return 0


# ---------------------------------------------------------------------------
# Entry point

_COMMANDS = {
    "gen": cmd_gen,
    "split": cmd_split,
    "verify": cmd_verify,
    "train": cmd_train,
    "correct": cmd_correct,
    "bench": cmd_bench,
    "report": cmd_report,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = argparse.ArgumentParser(
        prog="proofloop", description="verify-generate-learn-correct pipeline"
    )
    parser.add_argument("command", choices=sorted(_COMMANDS))
    parser.add_argument("-c", "--config", required=True, help="path to run config file")
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 1
    except IOError as e:
        print(f"io error: {e}", file=sys.stderr)
        return 2
    try:
        return _COMMANDS[args.command](cfg)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 1
    except (IOError, OSError) as e:
        print(f"io error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
