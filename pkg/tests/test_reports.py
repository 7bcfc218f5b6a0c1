import numpy as np
import pandas as pd
import pytest

from app_components.report_render import failed_checks, render_check_table
from src.config import parse_config
from src.reports import (
    REPORT_COLUMNS,
    comparison_table,
    params_table,
    radar_table,
    relative_vs_vanilla,
    separation_statistic,
)


def _per_seed(rows):
    return pd.DataFrame(rows, columns=list(REPORT_COLUMNS["comparison_per_seed.csv"]))


@pytest.fixture
def comparison():
    return comparison_table(_per_seed([
        ("Vanilla", 0, "en", 1.0, 0.8), ("Vanilla", 1, "en", 1.0, 0.6),
        ("Vanilla", 0, "fr", 1.0, 0.5), ("Vanilla", 1, "fr", 1.0, 0.5),
        ("ZipperSoft", 0, "en", 1.0, 0.35), ("ZipperSoft", 1, "en", 1.0, 0.35),
        ("ZipperSoft", 0, "fr", 1.0, 1.5), ("ZipperSoft", 1, "fr", 1.0, 0.5),
    ]))


def test_comparison_is_mean_and_population_std(comparison):
    row = comparison.set_index(["variant", "language"]).loc[("Vanilla", "en")]
    assert row["normalized_error_mean"] == pytest.approx(0.7)
    assert row["normalized_error_std"] == pytest.approx(0.1)
    assert row["n_seeds"] == 2
    assert list(comparison.columns) == list(REPORT_COLUMNS["comparison.csv"])


def test_relative_change_against_vanilla(comparison):
    rel = relative_vs_vanilla(comparison).set_index(["variant", "language"])["relative_change_pct"]
    assert rel[("Vanilla", "en")] == 0.0
    assert rel[("Vanilla", "fr")] == 0.0
    assert rel[("ZipperSoft", "en")] == pytest.approx(50.0)
    assert rel[("ZipperSoft", "fr")] == pytest.approx(-100.0)


def test_relative_is_empty_without_vanilla(comparison):
    rel = relative_vs_vanilla(comparison[comparison["variant"] != "Vanilla"])
    assert rel.empty
    assert list(rel.columns) == list(REPORT_COLUMNS["relative_vs_vanilla.csv"])


def test_radar_scores_are_clipped(comparison):
    radar = radar_table(comparison).set_index(["variant", "language"])["score"]
    assert radar[("Vanilla", "en")] == pytest.approx(0.3)
    assert radar[("ZipperSoft", "fr")] == 0.0
    assert radar.between(0.0, 1.0).all()


def test_params_table_totals():
    cfg = parse_config({"data": {"languages": ["en", "fr", "de"],
                                 "assignment": {"en": "high", "fr": "mid", "de": "low"}}})
    table = params_table(cfg)
    assert list(table.columns) == list(REPORT_COLUMNS["params.csv"])
    totals = table[table["layer"] == "total"].set_index("variant")["trainable_params"]
    for variant, rows in table[table["layer"] != "total"].groupby("variant"):
        assert rows["trainable_params"].sum() == totals[variant]
    assert totals["Independent"] == 3 * totals["Vanilla"]
    assert totals["FlyLoRA"] < totals["Vanilla"] < totals["ZipperSoft"]
    assert totals["ZipperHard"] == totals["ZipperSoft"]


def test_separation_statistic_on_a_square():
    emb = np.array([[0.0, 1.0], [0.0, -1.0], [4.0, 1.0], [4.0, -1.0]])
    stats = separation_statistic(emb, np.array(["en", "en", "fr", "fr"]))
    assert stats == {"inter_centroid": 4.0, "intra_spread": 1.0, "separation": 4.0}


def test_separation_with_a_single_point_per_language():
    stats = separation_statistic(np.array([[0.0], [1.0]]), np.array(["en", "fr"]))
    assert stats["intra_spread"] == 0.0
    assert stats["separation"] == float("inf")


def test_check_table_lists_failures():
    rows = [{"check": "ops.add", "status": "pass", "max_rel_err": 1e-9, "detail": ""},
            {"check": "ops.matmul", "status": "fail", "max_rel_err": 0.5, "detail": "rel err 5.000e-01"}]
    text = render_check_table("gradcheck", rows)
    assert "1 of 2 checks FAILED" in text
    assert "ops.matmul: rel err" in text
    assert failed_checks(rows) == ["ops.matmul"]
    assert "no checks ran" in render_check_table("equiv", [])


def test_soft_is_cheaper_than_independent_on_the_default_config():
    totals = params_table(parse_config({})).query("layer == 'total'").set_index("variant")["trainable_params"]
    assert totals["ZipperSoft"] < totals["Independent"]
