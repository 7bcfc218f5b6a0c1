from pathlib import Path

import pytest

import src.cli as cli
from src.cli import main
from src.errors import EXIT_CHECK_FAILED, EXIT_CONFIG, EXIT_INCOMPLETE_RUN, EXIT_INVARIANT, EXIT_OK
from src.reports import REPORT_COLUMNS, validate_outputs

MINIMAL = str(Path(__file__).resolve().parent.parent / "configs" / "minimal.yaml")


@pytest.fixture(scope="module")
def minimal_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("minimal") / "run"
    assert main(["run", MINIMAL, "--out", str(out), "--log-level", "WARNING"]) == EXIT_OK
    return out


def test_equiv_passes_and_wrong_polarity_fails():
    assert main(["equiv", "--n-seeds", "3"]) == EXIT_OK
    assert main(["equiv", "--n-seeds", "3", "--hard-polarity", "shared_on_one"]) == EXIT_CHECK_FAILED


def test_gradcheck_exit_codes():
    assert main(["gradcheck", "--scope", "ops"]) == EXIT_OK
    assert main(["gradcheck", "--scope", "ops", "--corrupt-op", "matmul"]) == EXIT_CHECK_FAILED


def test_bad_config_exits_with_config_code(tmp_path):
    bad = tmp_path / "bad.yaml"
    bad.write_text("model:\n  width: 3\n", encoding="utf-8")
    assert main(["run", str(bad), "--out", str(tmp_path / "run")]) == EXIT_CONFIG
    assert main(["run", str(tmp_path / "absent.yaml")]) == EXIT_CONFIG


def test_report_on_an_empty_directory(tmp_path):
    assert main(["report", str(tmp_path)]) == EXIT_INCOMPLETE_RUN
    assert main(["export-embeddings", str(tmp_path)]) == EXIT_INCOMPLETE_RUN


def test_unexpected_error_exits_with_invariant_code(tmp_path, monkeypatch, caplog):
    def broken(args):
        raise RuntimeError("disk vanished")

    monkeypatch.setitem(cli.COMMANDS, "report", broken)
    assert main(["report", str(tmp_path)]) == EXIT_INVARIANT
    assert "disk vanished" in caplog.text


def test_minimal_run_writes_every_table(minimal_run):
    for name in REPORT_COLUMNS:
        if name != "separation.csv":
            assert (minimal_run / name).exists(), name
    assert (minimal_run / "summary.md").exists()
    assert (minimal_run / "stage1" / "checkpoint.json").exists()
    assert (minimal_run / "cells" / "ZipperSoft_seed0" / "metrics.csv").exists()
    assert validate_outputs(minimal_run) == []


def test_report_regenerates_identical_tables(minimal_run):
    before = (minimal_run / "comparison.csv").read_bytes()
    assert main(["report", str(minimal_run)]) == EXIT_OK
    assert (minimal_run / "comparison.csv").read_bytes() == before


def test_rerun_is_bit_identical(minimal_run, tmp_path):
    again = tmp_path / "again"
    assert main(["run", MINIMAL, "--out", str(again), "--log-level", "WARNING"]) == EXIT_OK
    for name in ("comparison.csv", "comparison_per_seed.csv", "routing.csv"):
        assert (again / name).read_bytes() == (minimal_run / name).read_bytes(), name
    cell = Path("cells") / "ZipperSoft_seed0" / "metrics.csv"
    assert (again / cell).read_bytes() == (minimal_run / cell).read_bytes()


def test_export_embeddings(minimal_run):
    assert main(["export-embeddings", str(minimal_run)]) == EXIT_OK
    assert (minimal_run / "separation.csv").exists()
    assert (minimal_run / "embeddings_ZipperSoft_seed0.csv").exists()
    assert validate_outputs(minimal_run) == []
