# src/runner.py
"""
Experiment orchestration: data and teachers, Stage 1 once, then Stage 2 for
every (variant, seed) cell, optionally fanned out over worker processes.
"""
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

from src.adapters import Variant
from src.config import RunConfig, config_hash, parse_config
from src.database import RunStore
from src.errors import ConfigError
from src.router import LidEmbedding, default_similarity, load_similarity, save_lid_embeddings, synth_lid_embeddings
from src.synthdata import (
    Dataset,
    TeacherSpec,
    build_profiles,
    long_tail_sizes,
    make_teachers,
    normalized,
    prediction_mse,
    sample_dataset,
    sample_source_dataset,
    student_init,
)
from src.toymodel import ToyModel
from src.training import (
    METRIC_COLUMNS,
    StageResult,
    WarmStartSource,
    final_metrics,
    steps_to_threshold,
    train_stage1,
    train_stage2,
)

logger = logging.getLogger(__name__)

WARM_LABEL = "ZipperSoft+InitialB"
SOURCE_COLUMNS = ("variant", "seed", "language", "stage1_mse", "mse", "normalized_error")
WARMSTART_COLUMNS = ("seed", "threshold", "cold_steps", "warm_steps", "cold_final_mse", "warm_final_mse")
THRESHOLD_FACTOR = 1.2


def cell_name(label: str, seed: int) -> str:
    return f"{label}_seed{seed}"


@dataclass
class RunData:
    teachers: TeacherSpec
    similarity: np.ndarray
    lid: Dict[str, LidEmbedding]
    train: Dataset
    evaluation: Dataset
    source_train: Dataset
    source_eval: Dataset


def similarity_for(cfg: RunConfig) -> np.ndarray:
    """Target similarity in data.languages order, from file or the built-in default."""
    languages = list(cfg.data.languages)
    if cfg.router.similarity_file is None:
        return default_similarity(languages)
    file_langs, matrix = load_similarity(cfg.router.similarity_file)
    missing = [l for l in languages if l not in file_langs]
    if missing:
        raise ConfigError("similarity file does not cover every language", [f"router.similarity_file: missing {missing}"])
    idx = [file_langs.index(l) for l in languages]
    return matrix[np.ix_(idx, idx)]


def build_run_data(cfg: RunConfig) -> RunData:
    d = cfg.data
    mcfg = cfg.model_config()
    sim = similarity_for(cfg)
    teachers = make_teachers(sim, d.c_sh, d.c_sp, d.seed, config=mcfg, rank=d.teacher_rank,
                             layer_kinds=d.teacher_layers, delta_scale=d.delta_scale, noise_ratio=d.noise_ratio)
    lid = synth_lid_embeddings(sim, mcfg.languages, mcfg.d_lid, d.seed)
    counts = long_tail_sizes(d.profile, {l: d.assignment[l] for l in d.languages})
    profiles = build_profiles(d.languages, counts, d.eval_count, sim)
    source = {l: d.source_train_count for l in d.source_languages}
    source_eval = {l: d.source_eval_count for l in d.source_languages}
    return RunData(
        teachers=teachers,
        similarity=sim,
        lid=lid,
        train=sample_dataset(teachers, profiles, d.seed, "train", d.domain_shift),
        evaluation=sample_dataset(teachers, profiles, d.seed, "eval", d.domain_shift),
        source_train=sample_source_dataset(teachers, source, d.seed, "train", d.domain_shift),
        source_eval=sample_source_dataset(teachers, source_eval, d.seed, "eval", d.domain_shift),
    )


def source_retention(model: ToyModel, stage1: ToyModel, source_eval: Dataset, chunk_len: Optional[int],
                     label: str, seed: int) -> List[Dict[str, Any]]:
    """Source-language error of the adapted model relative to the Stage-1 model."""
    rows = []
    for lang in source_eval.languages:
        before = prediction_mse(stage1, source_eval, lang, chunk_len)
        after = prediction_mse(model, source_eval, lang, chunk_len)
        rows.append({"variant": label, "seed": seed, "language": lang, "stage1_mse": before,
                     "mse": after, "normalized_error": normalized(after, before)})
    return rows


class ExperimentRunner:
    """Runs one configuration into one run directory."""

    def __init__(self, cfg: RunConfig, out_dir: Path):
        self.cfg = cfg
        self.hash = config_hash(cfg)
        self.store = RunStore(out_dir, self.hash)
        self._data: Optional[RunData] = None
        self._stage1: Optional[ToyModel] = None

    @property
    def data(self) -> RunData:
        if self._data is None:
            self._data = build_run_data(self.cfg)
        return self._data

    @property
    def eval_chunk_len(self) -> Optional[int]:
        return max(self.cfg.model.chunk_lengths) if self.cfg.chunked else None

    def cells(self) -> List[Tuple[str, int]]:
        out = [(v.value, s) for v in self.cfg.variant_list() for s in self.cfg.seeds]
        if self.cfg.warm_start.enabled:
            out += [(WARM_LABEL, s) for s in self.cfg.seeds]
        return out

    # ---------------- Stages ----------------

    def stage1_model(self) -> ToyModel:
        if self._stage1 is None:
            self._stage1 = ToyModel.from_dict(self.store.load_checkpoint("stage1"))
        return self._stage1

    def run_stage1(self) -> StageResult:
        d = self.cfg.data
        student = student_init(self.data.teachers, d.align_noise, d.seed)
        result = train_stage1(student, self.data.source_train, self.data.source_eval, self.cfg.stage_config(1), d.seed)
        self.store.save_checkpoint("stage1", result.checkpoint())
        self.store.save_metrics("stage1", result.history, METRIC_COLUMNS)
        self._stage1 = result.model
        return result

    def run_cell(self, label: str, seed: int) -> Dict[str, Any]:
        """Stage 2 for one cell; writes its checkpoint, metrics and source retention."""
        cell = cell_name(label, seed)
        warm = None
        if label == WARM_LABEL:
            ws = self.cfg.warm_start
            source = self.store.load_checkpoint(cell_name(Variant.ZIPPER_SOFT.value, ws.source_seed))
            warm = WarmStartSource(source, ws.load_B_shared, ws.load_B_spec, ws.load_router)
            variant = Variant.ZIPPER_SOFT
        else:
            variant = Variant.parse(label)
        result = train_stage2(self.stage1_model(), self.data.train, self.data.evaluation, self.cfg.stage_config(2),
                              variant, seed, self.data.lid, warm, label)
        checkpoint = result.checkpoint()
        checkpoint["seed"] = seed
        self.store.save_checkpoint(cell, checkpoint)
        self.store.save_metrics(cell, result.history, METRIC_COLUMNS)
        retention = source_retention(result.model, self.stage1_model(), self.data.source_eval,
                                     self.eval_chunk_len, label, seed)
        self.store.save_metrics(cell, retention, SOURCE_COLUMNS, name="source_metrics.csv")
        final = final_metrics(result.history)
        return {
            "cell": cell,
            "label": label,
            "seed": seed,
            "mean_normalized_error": float(np.mean([m["normalized_error"] for m in final.values()])),
            "steps_per_language": result.steps_per_language,
        }

    # ---------------- Whole run ----------------

    def run(self, workers: int = 1) -> Dict[str, Any]:
        cells = self.cells()
        self.store.create_run(self.cfg.to_yaml(), [cell_name(l, s) for l, s in cells])
        save_lid_embeddings(self.store.root / "lid_embeddings.json", self.data.lid)
        self.run_stage1()

        plain = [(l, s) for l, s in cells if l != WARM_LABEL]
        warm = [(l, s) for l, s in cells if l == WARM_LABEL]
        summaries = self._run_cells(plain, workers) + self._run_cells(warm, workers)
        if warm:
            self.store.save_table("warmstart.csv", self.warmstart_table())
        self.store.update_run_status("done")
        logger.info("run %s complete: %d cells", self.store.root, len(summaries))
        return {"config_hash": self.hash, "cells": summaries}

    def _run_cells(self, cells: List[Tuple[str, int]], workers: int) -> List[Dict[str, Any]]:
        summaries = []
        if workers > 1 and len(cells) > 1:
            jobs = [(self.cfg.to_dict(), str(self.store.root), label, seed) for label, seed in cells]
            with ProcessPoolExecutor(max_workers=workers) as pool:
                summaries = list(pool.map(_cell_job, jobs))
        else:
            summaries = [self.run_cell(label, seed) for label, seed in cells]
        for summary in summaries:
            self.store.record_cell(summary["cell"], "done", {"mean_normalized_error": summary["mean_normalized_error"]})
            logger.info("cell %s: mean normalized error %.4f", summary["cell"], summary["mean_normalized_error"])
        return summaries

    def warmstart_table(self) -> pd.DataFrame:
        """Steps to reach θ = 1.2 × cold-start final MSE, cold vs warm, per seed."""
        rows = []
        for seed in self.cfg.seeds:
            cold = self.store.load_metrics(cell_name(Variant.ZIPPER_SOFT.value, seed))
            warm = self.store.load_metrics(cell_name(WARM_LABEL, seed))
            cold_final = float(cold[cold["step"] == cold["step"].max()]["mse"].mean())
            warm_final = float(warm[warm["step"] == warm["step"].max()]["mse"].mean())
            threshold = THRESHOLD_FACTOR * cold_final
            rows.append({
                "seed": seed,
                "threshold": threshold,
                "cold_steps": steps_to_threshold(cold, threshold),
                "warm_steps": steps_to_threshold(warm, threshold),
                "cold_final_mse": cold_final,
                "warm_final_mse": warm_final,
            })
        return pd.DataFrame(rows, columns=list(WARMSTART_COLUMNS))


def _cell_job(job: Tuple[Dict[str, Any], str, str, int]) -> Dict[str, Any]:
    cfg_dict, root, label, seed = job
    runner = ExperimentRunner(parse_config(cfg_dict), Path(root))
    return runner.run_cell(label, seed)
