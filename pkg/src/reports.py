# src/reports.py
"""
Report tables built from a finished run directory.

Every table goes through RunStore.save_table, so each CSV carries the run's
config hash on its first line. Column sets are fixed in REPORT_COLUMNS and
checked by validate_outputs after writing.
"""
import logging
from itertools import combinations
from pathlib import Path
from typing import Any, Dict, List, Tuple, Union

import numpy as np
import pandas as pd

from src.adapters import Variant, count_trainable_params
from src.config import RunConfig, config_hash, load_config
from src.database import RunStore
from src.errors import ArtifactError
from src.runner import SOURCE_COLUMNS, WARMSTART_COLUMNS, build_run_data, cell_name
from src.toymodel import ToyModel
from src.training import METRIC_COLUMNS, final_metrics, routing_weights

logger = logging.getLogger(__name__)

REPORT_COLUMNS: Dict[str, Tuple[str, ...]] = {
    "comparison.csv": ("variant", "language", "normalized_error_mean", "normalized_error_std", "mse_mean", "n_seeds"),
    "comparison_per_seed.csv": ("variant", "seed", "language", "mse", "normalized_error"),
    "relative_vs_vanilla.csv": ("variant", "language", "normalized_error_mean", "vanilla_normalized_error", "relative_change_pct"),
    "radar_data.csv": ("variant", "language", "score"),
    "params.csv": ("variant", "layer", "d_in", "d_out", "trainable_params"),
    "routing.csv": ("variant", "language", "rank", "mean_p", "std_p", "n_seeds"),
    "source_domain.csv": ("variant", "language", "stage1_mse", "mse_mean", "normalized_error_mean", "normalized_error_std", "n_seeds"),
    "separation.csv": ("cell", "variant", "seed", "inter_centroid", "intra_spread", "separation"),
}
CELL_COLUMNS: Dict[str, Tuple[str, ...]] = {
    "metrics.csv": METRIC_COLUMNS,
    "source_metrics.csv": SOURCE_COLUMNS,
}


def open_run(run_dir: Union[str, Path]) -> Tuple[RunStore, RunConfig]:
    """Store and config of a completed run; raises ArtifactError when anything is missing or mixed."""
    store = RunStore(run_dir)
    store.require_complete()
    cfg = load_config(store.root / "config.yaml")
    found = config_hash(cfg)
    if found != store.config_hash:
        raise ArtifactError(f"config.yaml hashes to {found}, manifest records {store.config_hash}")
    return store, cfg


def _cells(store: RunStore) -> List[Tuple[str, int]]:
    """(label, seed) of every Stage-2 cell, from the checkpoints themselves."""
    out = []
    for cell in store.cell_names():
        ckpt = store.load_checkpoint(cell)
        out.append((ckpt["label"], int(ckpt["seed"])))
    return out


# ---------------- Comparison ----------------

def per_seed_table(store: RunStore, cells: List[Tuple[str, int]], last: int = 2) -> pd.DataFrame:
    rows = []
    for label, seed in cells:
        history = store.load_metrics(cell_name(label, seed)).to_dict("records")
        for lang, final in final_metrics(history, last).items():
            rows.append({"variant": label, "seed": seed, "language": lang, **final})
    return pd.DataFrame(rows, columns=list(REPORT_COLUMNS["comparison_per_seed.csv"]))


def comparison_table(per_seed: pd.DataFrame) -> pd.DataFrame:
    """Mean ± std over seeds of the final normalized error per (variant, language)."""
    grouped = per_seed.groupby(["variant", "language"], sort=False)
    out = grouped.agg(
        normalized_error_mean=("normalized_error", "mean"),
        normalized_error_std=("normalized_error", lambda s: float(np.std(s.to_numpy(), ddof=0))),
        mse_mean=("mse", "mean"),
        n_seeds=("seed", "nunique"),
    ).reset_index()
    return out[list(REPORT_COLUMNS["comparison.csv"])]


def relative_vs_vanilla(comparison: pd.DataFrame) -> pd.DataFrame:
    """
    Relative change against Vanilla in percent; positive means lower error than Vanilla.

    Vanilla rows are 0.0. Without a Vanilla column the table is empty.
    """
    columns = list(REPORT_COLUMNS["relative_vs_vanilla.csv"])
    vanilla = comparison[comparison["variant"] == Variant.VANILLA.value].set_index("language")["normalized_error_mean"]
    if vanilla.empty:
        logger.warning("no %s cells in this run; relative_vs_vanilla.csv is empty", Variant.VANILLA.value)
        return pd.DataFrame(columns=columns)
    rows = []
    for rec in comparison.to_dict("records"):
        base = float(vanilla.get(rec["language"], np.nan))
        if rec["variant"] == Variant.VANILLA.value:
            change = 0.0
        elif base == 0.0 or np.isnan(base):
            change = float("nan")
        else:
            change = 100.0 * (base - rec["normalized_error_mean"]) / base
        rows.append({"variant": rec["variant"], "language": rec["language"],
                     "normalized_error_mean": rec["normalized_error_mean"],
                     "vanilla_normalized_error": base, "relative_change_pct": change})
    return pd.DataFrame(rows, columns=columns)


def radar_table(comparison: pd.DataFrame) -> pd.DataFrame:
    """(1 - normalized error) per (variant, language), clipped to [0, 1]."""
    out = comparison[["variant", "language"]].copy()
    out["score"] = np.clip(1.0 - comparison["normalized_error_mean"].to_numpy(), 0.0, 1.0)
    return out.reset_index(drop=True)


# ---------------- Parameters and routing ----------------

def params_table(cfg: RunConfig) -> pd.DataFrame:
    """Closed-form trainable counts per adapted layer, plus a "total" row per variant."""
    mcfg = cfg.model_config()
    n_lang = len(mcfg.languages)
    rows = []
    for variant in cfg.variant_list():
        total = 0
        for layer in mcfg.adapted_layer_names():
            lcfg = mcfg.layer_lora(layer)
            count = count_trainable_params(variant, lcfg, n_lang, mcfg.d_lid)
            total += count
            rows.append({"variant": variant.value, "layer": layer, "d_in": lcfg.d_in, "d_out": lcfg.d_out,
                         "trainable_params": count})
        rows.append({"variant": variant.value, "layer": "total", "d_in": 0, "d_out": 0, "trainable_params": total})
    return pd.DataFrame(rows, columns=list(REPORT_COLUMNS["params.csv"]))


def routing_table(store: RunStore, cells: List[Tuple[str, int]]) -> pd.DataFrame:
    """Router p averaged over adapted layers, then mean/std over seeds, per rank and language."""
    collected: Dict[Tuple[str, str], List[np.ndarray]] = {}
    for label, seed in cells:
        model = ToyModel.from_dict(store.load_checkpoint(cell_name(label, seed)))
        for lang in model.config.languages:
            p = routing_weights(model, lang)
            if p is not None:
                collected.setdefault((label, lang), []).append(p.mean(axis=0))
    rows = []
    for (label, lang), per_seed in collected.items():
        stacked = np.stack(per_seed)
        for i in range(stacked.shape[1]):
            rows.append({"variant": label, "language": lang, "rank": i, "mean_p": float(stacked[:, i].mean()),
                         "std_p": float(stacked[:, i].std()), "n_seeds": stacked.shape[0]})
    return pd.DataFrame(rows, columns=list(REPORT_COLUMNS["routing.csv"]))


def source_domain_table(store: RunStore, cells: List[Tuple[str, int]]) -> pd.DataFrame:
    frames = [store.load_metrics(cell_name(label, seed), "source_metrics.csv") for label, seed in cells]
    columns = list(REPORT_COLUMNS["source_domain.csv"])
    if not frames:
        return pd.DataFrame(columns=columns)
    raw = pd.concat(frames, ignore_index=True)
    out = raw.groupby(["variant", "language"], sort=False).agg(
        stage1_mse=("stage1_mse", "first"),
        mse_mean=("mse", "mean"),
        normalized_error_mean=("normalized_error", "mean"),
        normalized_error_std=("normalized_error", lambda s: float(np.std(s.to_numpy(), ddof=0))),
        n_seeds=("seed", "nunique"),
    ).reset_index()
    return out[columns]


# ---------------- Summary ----------------

def summary_markdown(cfg: RunConfig, comparison: pd.DataFrame, relative: pd.DataFrame,
                     store: RunStore) -> str:
    lines = [
        f"# Run {cfg.name}",
        "",
        f"- config hash: `{store.config_hash}`",
        f"- languages: {', '.join(cfg.data.languages)}",
        f"- seeds: {', '.join(str(s) for s in cfg.seeds)}",
        f"- chunked: {cfg.chunked}",
        f"- hard polarity: {cfg.lora.hard_polarity}",
        f"- router warm start: {cfg.warm_start.load_router if cfg.warm_start.enabled else 'n/a'}",
        "",
        "## Mean normalized error per variant",
        "",
        "| variant | normalized error | vs Vanilla (%) |",
        "|---|---|---|",
    ]
    means = comparison.groupby("variant", sort=False)["normalized_error_mean"].mean()
    rel = relative.groupby("variant", sort=False)["relative_change_pct"].mean() if not relative.empty else pd.Series(dtype=float)
    for variant, value in means.items():
        change = rel.get(variant, np.nan)
        lines.append(f"| {variant} | {value:.4f} | {'n/a' if np.isnan(change) else f'{change:+.2f}'} |")
    if (store.root / "warmstart.csv").exists():
        warm = store.read_table(store.root / "warmstart.csv")
        lines += ["", "## Initial-B warm start", "", "| seed | threshold | cold steps | warm steps |", "|---|---|---|---|"]
        for rec in warm.to_dict("records"):
            lines.append(f"| {rec['seed']} | {rec['threshold']:.4g} | {_steps(rec['cold_steps'])} | {_steps(rec['warm_steps'])} |")
    return "\n".join(lines) + "\n"


def _steps(value: Any) -> str:
    return "not reached" if pd.isna(value) else str(int(value))


def write_report(run_dir: Union[str, Path]) -> Dict[str, pd.DataFrame]:
    """Writes every report table into ``run_dir``; returns them keyed by file name."""
    store, cfg = open_run(run_dir)
    cells = _cells(store)
    per_seed = per_seed_table(store, cells)
    comparison = comparison_table(per_seed)
    relative = relative_vs_vanilla(comparison)
    tables = {
        "comparison.csv": comparison,
        "comparison_per_seed.csv": per_seed,
        "relative_vs_vanilla.csv": relative,
        "radar_data.csv": radar_table(comparison),
        "params.csv": params_table(cfg),
        "routing.csv": routing_table(store, cells),
        "source_domain.csv": source_domain_table(store, cells),
    }
    for name, frame in tables.items():
        store.save_table(name, frame)
    (store.root / "summary.md").write_text(summary_markdown(cfg, comparison, relative, store), encoding="utf-8")
    logger.info("report written to %s (%d cells)", store.root, len(cells))
    return tables


# ---------------- Embeddings ----------------

def separation_statistic(embeddings: np.ndarray, languages: np.ndarray) -> Dict[str, float]:
    """Mean inter-language centroid distance over mean intra-language spread."""
    labels = list(dict.fromkeys(languages.tolist()))
    centroids = {l: embeddings[languages == l].mean(axis=0) for l in labels}
    spreads = [float(np.linalg.norm(embeddings[languages == l] - centroids[l], axis=1).mean()) for l in labels]
    pairs = [float(np.linalg.norm(centroids[a] - centroids[b])) for a, b in combinations(labels, 2)]
    inter = float(np.mean(pairs)) if pairs else 0.0
    intra = float(np.mean(spreads))
    return {"inter_centroid": inter, "intra_spread": intra, "separation": inter / intra if intra > 0 else float("inf")}


def export_embeddings(run_dir: Union[str, Path]) -> pd.DataFrame:
    """
    Frame-mean encoder outputs of every eval utterance for every cell.

    Writes embeddings_<cell>.csv (language, index, e0..e{d-1}) per cell and
    separation.csv; returns the separation table.
    """
    store, cfg = open_run(run_dir)
    evaluation = build_run_data(cfg).evaluation
    chunk_len = max(cfg.model.chunk_lengths) if cfg.chunked else None
    rows = []
    for label, seed in _cells(store):
        cell = cell_name(label, seed)
        model = ToyModel.from_dict(store.load_checkpoint(cell))
        parts, langs, index = [], [], []
        for lang in evaluation.languages:
            xs, _ = evaluation.get(lang)
            parts.append(model.encoder_embeddings(xs, lang, chunk_len))
            langs += [lang] * xs.shape[0]
            index += list(range(xs.shape[0]))
        emb = np.vstack(parts)
        frame = pd.DataFrame(emb, columns=[f"e{i}" for i in range(emb.shape[1])])
        frame.insert(0, "index", index)
        frame.insert(0, "language", langs)
        store.save_table(f"embeddings_{cell}.csv", frame)
        rows.append({"cell": cell, "variant": label, "seed": seed, **separation_statistic(emb, np.asarray(langs))})
        logger.debug("embeddings for %s: %d rows", cell, len(frame))
    table = pd.DataFrame(rows, columns=list(REPORT_COLUMNS["separation.csv"]))
    store.save_table("separation.csv", table)
    logger.info("embeddings exported for %d cells", len(rows))
    return table


# ---------------- Schema validation ----------------

def _header(path: Path) -> Tuple[str, ...]:
    with open(path, "r", encoding="utf-8") as fh:
        fh.readline()
        return tuple(fh.readline().strip().split(","))


def validate_outputs(run_dir: Union[str, Path]) -> List[str]:
    """Header mismatches of every emitted CSV that has a fixed schema; empty when all match."""
    store = RunStore(run_dir)
    problems = []
    expected = dict(REPORT_COLUMNS)
    expected["warmstart.csv"] = WARMSTART_COLUMNS
    for name, columns in expected.items():
        path = store.root / name
        if path.exists() and _header(path) != tuple(columns):
            problems.append(f"{name}: header {list(_header(path))}, expected {list(columns)}")
    for cell in ["stage1"] + store.cell_names():
        for name, columns in CELL_COLUMNS.items():
            path = store.cell_dir(cell) / name
            if path.exists() and _header(path) != tuple(columns):
                problems.append(f"{cell}/{name}: header {list(_header(path))}, expected {list(columns)}")
    return problems
