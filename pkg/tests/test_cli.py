"""CLI tests: config parsing and validation, the run-directory layout, the
end-to-end pipeline on a tiny corpus, and byte determinism."""

import json
import os
from pathlib import Path

import pytest

from proofloop.cli import (
    ConfigError,
    RUN_DIR_ENV,
    load_config,
    main,
    parse_config_text,
)

TINY = """
[run]
seed = 11
size = 40
workers = 1
timing = off

[train]
updates = 6
episodes_per_update = 4
max_steps = 16

[correct]
max_iterations = 4
"""


@pytest.fixture
def tiny_cfg(tmp_path, monkeypatch):
    cfg = tmp_path / "tiny.cfg"
    cfg.write_text(TINY)
    monkeypatch.setenv(RUN_DIR_ENV, str(tmp_path / "run"))
    return cfg


# ---------------------------------------------------------------------------
# Config parsing


def test_parse_config_defaults():
    cfg = parse_config_text("")
    assert cfg.seed == 42
    assert cfg.size == 5000
    assert cfg.out_dir == "runs/desk"
    assert cfg.inject.seed == 42
    assert cfg.split.seed == 42
    assert cfg.train.seed == 42


def test_parse_config_values_and_types():
    cfg = parse_config_text(
        """
        [run]
        seed = 7            # inline comment
        timing = on
        tau = 0.2

        [inject]
        mode_weights = 0.4, 0.3, 0.2, 0.1
        flawed_fraction = 0.5

        [verify]
        memoize = off
        """
    )
    assert cfg.seed == 7
    assert cfg.timing is True
    assert cfg.tau == pytest.approx(0.2)
    assert cfg.inject.mode_weights == (0.4, 0.3, 0.2, 0.1)
    assert cfg.inject.flawed_fraction == 0.5
    assert cfg.inject.seed == 7  # seed propagates into every sub-config
    assert cfg.verify.memoize is False


def test_parse_config_unknown_key_names_section():
    with pytest.raises(ConfigError, match=r"run\.sede"):
        parse_config_text("[run]\nsede = 1\n")
    with pytest.raises(ConfigError, match=r"\[mystery\]"):
        parse_config_text("[mystery]\nx = 1\n")
    with pytest.raises(ConfigError, match="key = value"):
        parse_config_text("[run]\njust a line\n")


def test_parse_config_invalid_value_rejected():
    with pytest.raises(ConfigError):
        parse_config_text("[split]\nratios = 0.5, 0.5, 0.5\n")


def test_load_config_missing_file():
    with pytest.raises(IOError):
        load_config("/nonexistent/nope.cfg")


# ---------------------------------------------------------------------------
# Exit codes


def test_main_exit_codes(tmp_path):
    assert main(["gen", "-c", "/nonexistent/nope.cfg"]) == 2
    bad = tmp_path / "bad.cfg"
    bad.write_text("[run]\nbogus_key = 1\n")
    assert main(["gen", "-c", str(bad)]) == 1


def test_verify_before_gen_is_io_error(tiny_cfg):
    assert main(["verify", "-c", str(tiny_cfg)]) == 2


# ---------------------------------------------------------------------------
# Pipeline on a tiny corpus


def test_pipeline_end_to_end(tiny_cfg, monkeypatch, tmp_path, capsys):
    root = Path(os.environ[RUN_DIR_ENV])
    for cmd in ("gen", "split", "verify", "train", "correct", "report"):
        assert main([cmd, "-c", str(tiny_cfg)]) == 0, cmd

    # layout
    assert (root / "corpus" / "corpus.jsonl").exists()
    assert (root / "corpus" / "corpus_split.jsonl").exists()
    assert (root / "manifest").exists()
    assert (root / "checkpoints" / "policy.json").exists()
    for name in (
        "verify.jsonl",
        "verify_summary.txt",
        "train_log.txt",
        "correct.jsonl",
        "report.txt",
        "report.jsonl",
    ):
        assert (root / "reports" / name).exists(), name

    manifest = json.loads((root / "manifest").read_text())
    assert manifest["split_counts"]  # split updated the manifest

    # verify summary has no timing fields with timing off
    summary = (root / "reports" / "verify_summary.txt").read_text()
    assert summary.startswith("trees=")
    assert "latency" not in summary

    # verify.jsonl: one record per proof, verdicts match labels
    corpus_lines = (root / "corpus" / "corpus_split.jsonl").read_text().splitlines()
    labels = {json.loads(l)["id"]: json.loads(l)["label"] for l in corpus_lines}
    verify_lines = (root / "reports" / "verify.jsonl").read_text().splitlines()
    assert len(verify_lines) == len(corpus_lines)
    for line in verify_lines:
        rec = json.loads(line)
        assert rec["overall_valid"] == (labels[rec["id"]] == "valid")
        assert "latency_ms" not in rec

    # report table begins with the exact column header
    report_text = (root / "reports" / "report.txt").read_text()
    assert report_text.splitlines()[0].split("  ")[0].strip() == "Dataset"
    assert "tau=" in report_text

    # correct.jsonl only targets flawed test items
    flawed_test = {
        json.loads(l)["id"]
        for l in corpus_lines
        if json.loads(l)["label"] == "flawed" and json.loads(l)["split"] == "test"
    }
    corrected = {
        json.loads(l)["id"]
        for l in (root / "reports" / "correct.jsonl").read_text().splitlines()
        if l.strip()
    }
    assert corrected == flawed_test


def test_bench_deterministic_bytes(tmp_path, monkeypatch):
    cfg = tmp_path / "tiny.cfg"
    cfg.write_text(TINY)

    def run(into: Path) -> dict[str, bytes]:
        monkeypatch.setenv(RUN_DIR_ENV, str(into))
        assert main(["bench", "-c", str(cfg)]) == 0
        out = {}
        for p in sorted(into.rglob("*")):
            if p.is_file():
                out[str(p.relative_to(into))] = p.read_bytes()
        return out

    a = run(tmp_path / "run_a")
    b = run(tmp_path / "run_b")
    assert a == b


def test_run_dir_env_override(tmp_path, monkeypatch):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("[run]\nsize = 10\nout_dir = should/not/be/used\n")
    target = tmp_path / "override"
    monkeypatch.setenv(RUN_DIR_ENV, str(target))
    assert main(["gen", "-c", str(cfg)]) == 0
    assert (target / "corpus" / "corpus.jsonl").exists()
    assert not Path("should/not/be/used").exists()
