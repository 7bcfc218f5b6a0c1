from pathlib import Path

import pytest
import yaml

from src.config import parse_config
from src.database import RunStore
from src.runner import WARM_LABEL, WARMSTART_COLUMNS, ExperimentRunner, cell_name

MINIMAL = Path(__file__).resolve().parent.parent / "configs" / "minimal.yaml"


def _config(**sections):
    obj = yaml.safe_load(MINIMAL.read_text(encoding="utf-8"))
    obj.update(sections)
    return parse_config(obj)


def test_cells_include_the_warm_start_label():
    cfg = _config(variants=["Vanilla", "ZipperSoft"], seeds=[0, 1], warm_start={"enabled": True})
    cells = ExperimentRunner(cfg, Path("unused")).cells()
    assert cells[-2:] == [(WARM_LABEL, 0), (WARM_LABEL, 1)]
    assert len(cells) == 6
    assert cell_name(WARM_LABEL, 1) == "ZipperSoft+InitialB_seed1"


def test_warm_start_run_writes_comparison(tmp_path):
    cfg = _config(warm_start={"enabled": True, "source_seed": 0})
    summary = ExperimentRunner(cfg, tmp_path).run()
    assert {c["cell"] for c in summary["cells"]} == {"ZipperSoft_seed0", "ZipperSoft+InitialB_seed0"}

    store = RunStore(tmp_path)
    assert store.get_manifest()["status"] == "done"
    store.require_complete()
    table = store.read_table(tmp_path / "warmstart.csv")
    assert tuple(table.columns) == WARMSTART_COLUMNS
    assert table["threshold"].iloc[0] == pytest.approx(1.2 * table["cold_final_mse"].iloc[0])
    assert table["cold_steps"].iloc[0] >= 0


@pytest.mark.slow
def test_parallel_cells_match_sequential(tmp_path):
    cfg = _config(variants=["Vanilla", "ZipperHard"])
    ExperimentRunner(cfg, tmp_path / "seq").run(workers=1)
    ExperimentRunner(cfg, tmp_path / "par").run(workers=2)
    for cell in ("Vanilla_seed0", "ZipperHard_seed0"):
        rel = Path("cells") / cell / "metrics.csv"
        assert (tmp_path / "par" / rel).read_bytes() == (tmp_path / "seq" / rel).read_bytes()
