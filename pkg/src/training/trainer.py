# src/training/trainer.py
"""
Stage 1 (foundation alignment) and Stage 2 (parameter-efficient SFT) loops.

Each step trains on a single-language batch. The language is drawn from its
own stream; batch indices and chunk lengths come from per-language streams,
so a language's sequence of batches does not depend on the other languages.
"""
import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from src.adapters import Variant, init_bank, rebalance_fly_bias
from src.errors import ConfigError, InvariantError
from src.router import LidEmbedding, route_values
from src.synthdata import Dataset, normalized, prediction_mse
from src.tensorcore import ParamScope, Tape, is_finite, rng_stream
from src.toymodel import ToyModel
from src.training.optim import AdamState, optim_step
from src.training.schedule import lr_at
from src.training.stage import StageConfig, trainable_names
from src.training.warmstart import WarmStartSource, initial_b_warmstart

logger = logging.getLogger(__name__)

METRIC_COLUMNS = ("step", "stage", "variant", "language", "mse", "normalized_error", "lr", "mean_p")


@dataclass
class StageResult:
    model: ToyModel
    history: List[Dict[str, Any]]
    optimizer: AdamState
    steps_per_language: Dict[str, int]
    reference: ToyModel
    label: str
    stage: int
    final_loss: Dict[str, float] = field(default_factory=dict)

    def checkpoint(self) -> Dict[str, Any]:
        out = self.model.to_dict(self.stage)
        out["label"] = self.label
        out["optimizer"] = self.optimizer.to_dict()
        out["steps_per_language"] = dict(self.steps_per_language)
        return out


def eval_schedule(total_steps: int, every: float) -> List[int]:
    """Step 0, every ``every`` fraction of the run, and the last step."""
    interval = max(1, int(round(every * total_steps)))
    return sorted(set(range(0, total_steps, interval)) | {total_steps})


def language_probabilities(sizes: Dict[str, int], temperature: float = 1.0) -> Dict[str, float]:
    """p(l) proportional to n_l^(1/temperature); temperature 1 is proportional sampling."""
    weights = {l: float(n) ** (1.0 / temperature) for l, n in sizes.items() if n > 0}
    total = sum(weights.values())
    return {l: w / total for l, w in weights.items()}


def routing_weights(model: ToyModel, language: str) -> Optional[np.ndarray]:
    """Router output p per adapted layer (layers x rank), or None when not routed."""
    if not model.routers or not model.adapters_active:
        return None
    e = model.lid[language]
    return np.stack([route_values(router, e) for router in model.routers.values()])


class StageTrainer:
    """Runs one stage over a model in place."""

    def __init__(self, model: ToyModel, cfg: StageConfig, seed: int, label: str,
                 reference: Optional[ToyModel] = None):
        self.model = model
        self.cfg = cfg.validate()
        self.seed = seed
        self.label = label
        self.reference = reference if reference is not None else model.copy()
        self.names = trainable_names(model, cfg.groups)
        if not self.names:
            raise ConfigError(f"stage {cfg.stage} has no trainable parameters", [f"groups: {list(cfg.groups)}"])
        self.trainable = set(self.names)
        self.frozen = sorted(set(model.named_arrays()) - self.trainable - self._self_updated())
        if cfg.stage == 2:
            leaked = sorted(self.trainable & set(model.encoder_base_names()))
            if leaked:
                raise InvariantError(f"stage 2 selector reaches encoder base weights: {leaked}")
        arrays = model.named_arrays()
        self._frozen_values = {n: arrays[n].copy() for n in self.frozen}
        self.state = AdamState(cfg.beta1, cfg.beta2, cfg.adam_eps)
        self._ref_mse: Dict[str, float] = {}

    def _self_updated(self) -> set:
        # FlyLoRA routing bias moves by load balancing, not by gradient
        return {f"{layer}.lora.fly_bias" for layer, bank in self.model.banks.items() if bank.variant == Variant.FLYLORA}

    # ---------------- Evaluation ----------------

    def evaluate(self, datasets: Dataset, step: int, lr: float, chunk_len: Optional[int]) -> List[Dict[str, Any]]:
        rows = []
        for lang in datasets.languages:
            if lang not in self._ref_mse:
                self._ref_mse[lang] = prediction_mse(self.reference, datasets, lang, chunk_len)
            mse = prediction_mse(self.model, datasets, lang, chunk_len)
            p = routing_weights(self.model, lang)
            rows.append({
                "step": step,
                "stage": self.cfg.stage,
                "variant": self.label,
                "language": lang,
                "mse": mse,
                "normalized_error": normalized(mse, self._ref_mse[lang]),
                "lr": lr,
                "mean_p": float(p.mean()) if p is not None else float("nan"),
            })
        mean_ne = float(np.mean([r["normalized_error"] for r in rows]))
        logger.info("stage %d %s step %d/%d lr %.3g mean normalized error %.4f",
                    self.cfg.stage, self.label, step, self.cfg.steps, lr, mean_ne)
        for r in rows:
            logger.debug("  %s mse %.6g ne %.4f", r["language"], r["mse"], r["normalized_error"])
        return rows

    # ---------------- Training ----------------

    def step(self, xs: np.ndarray, ys: np.ndarray, language: str, chunk_len: Optional[int], lr: float) -> float:
        scope = ParamScope(Tape(), lambda name: name in self.trainable)
        trace: Dict[str, Dict[str, Any]] = {}
        loss = self.model.loss_graph(scope, xs, ys, language, chunk_len, trace)
        grads = scope.tape.backward(loss)
        if not all(is_finite(g) for g in grads.values()):
            raise InvariantError(f"non-finite gradient at stage {self.cfg.stage} ({self.label}, {language})")
        arrays = self.model.named_arrays()
        self.model.assign(optim_step(arrays, grads, self.state, lr))
        for layer, layer_trace in trace.items():
            if "load" in layer_trace:
                rebalance_fly_bias(self.model.banks[layer], layer_trace["load"], self.cfg.fly_bias_rate)
        self._check_frozen(language)
        return float(loss.value[0, 0])

    def _check_frozen(self, language: str) -> None:
        """Every frozen array must be bit-identical to its value at stage start."""
        arrays = self.model.named_arrays()
        moved = [n for n in self.frozen if not np.array_equal(arrays[n], self._frozen_values[n])]
        if moved:
            raise InvariantError(f"stage {self.cfg.stage} step on {language} updated frozen parameters: {moved}")

    def run(self, train: Dataset, evaluation: Dataset, chunk_lengths: Sequence[int], eval_chunk_len: Optional[int]) -> StageResult:
        cfg = self.cfg
        tag = f"stage{cfg.stage}"
        sizes = train.sizes()
        probs = language_probabilities(sizes, cfg.sampling_temperature)
        languages = list(probs)
        weights = np.array([probs[l] for l in languages])
        lang_rng = rng_stream(self.seed, tag, "language")
        batch_rngs = {l: rng_stream(self.seed, tag, "batch", l) for l in languages}
        chunk_rngs = {l: rng_stream(self.seed, tag, "chunk", l) for l in languages}
        frozen_hash = self.model.hash_of(self.frozen)
        checkpoints = set(eval_schedule(cfg.steps, cfg.eval_every))
        steps_per_language = {l: 0 for l in languages}
        history: List[Dict[str, Any]] = []
        logger.info("%s %s: %d steps, %d trainable arrays, languages %s",
                    tag, self.label, cfg.steps, len(self.names), sizes)

        for step in range(cfg.steps):
            if step in checkpoints:
                history.extend(self.evaluate(evaluation, step, lr_at(step, cfg.steps, cfg.base_lr, cfg.warmup_ratio, cfg.schedule), eval_chunk_len))
            lang = languages[int(lang_rng.choice(len(languages), p=weights))]
            xs, ys = train.get(lang)
            idx = batch_rngs[lang].choice(xs.shape[0], size=min(cfg.batch_size, xs.shape[0]), replace=False)
            chunk = int(chunk_rngs[lang].choice(list(chunk_lengths))) if cfg.chunked else None
            lr = lr_at(step + 1, cfg.steps, cfg.base_lr, cfg.warmup_ratio, cfg.schedule)
            self.step(xs[idx], ys[idx], lang, chunk, lr)
            steps_per_language[lang] += 1

        history.extend(self.evaluate(evaluation, cfg.steps, lr_at(cfg.steps, cfg.steps, cfg.base_lr, cfg.warmup_ratio, cfg.schedule), eval_chunk_len))
        if self.model.hash_of(self.frozen) != frozen_hash:
            raise InvariantError(f"frozen parameters changed during stage {cfg.stage} ({self.label})")
        final = {r["language"]: r["mse"] for r in history if r["step"] == cfg.steps}
        return StageResult(self.model, history, self.state, steps_per_language, self.reference,
                           self.label, cfg.stage, final)


def train_stage1(
    model: ToyModel,
    source_train: Dataset,
    source_eval: Dataset,
    cfg: StageConfig,
    seed: int,
) -> StageResult:
    """Foundation alignment on the source languages; encoder adapters must be absent."""
    if cfg.stage != 1:
        raise ConfigError("train_stage1 needs a stage-1 configuration", [f"stage: {cfg.stage}"])
    if model.banks and model.adapters_active:
        raise ConfigError("stage 1 does not train encoder adapters", [f"active adapters on {sorted(model.banks)}"])
    model = model.copy()
    trainer = StageTrainer(model, cfg, seed, label="stage1")
    eval_chunk = max(model.config.chunk_lengths) if cfg.chunked else None
    return trainer.run(source_train, source_eval, model.config.chunk_lengths, eval_chunk)


def train_stage2(
    stage1_model: ToyModel,
    target_train: Dataset,
    target_eval: Dataset,
    cfg: StageConfig,
    variant: Variant,
    seed: int,
    lid: Optional[Dict[str, LidEmbedding]] = None,
    warm: Optional[WarmStartSource] = None,
    label: Optional[str] = None,
) -> StageResult:
    """
    Parameter-efficient SFT on top of a Stage-1 model.

    The Stage-1 model (encoder adapters off) is the normalized-error reference.
    """
    if cfg.stage != 2:
        raise ConfigError("train_stage2 needs a stage-2 configuration", [f"stage: {cfg.stage}"])
    variant = Variant.parse(variant)
    reference = stage1_model.unadapted().copy()
    model = stage1_model.copy().attach_adapters(variant, seed, lid)
    if cfg.reinit_head_lora:
        mcfg = model.config
        model.head_bank = init_bank(Variant.VANILLA, mcfg.head_lora(), mcfg.languages, rng_stream(seed, "head_lora", "stage2"))
    if warm is not None:
        model.banks = initial_b_warmstart(model.banks, warm.load(), warm, model.routers)
    trainer = StageTrainer(model, cfg, seed, label=label or variant.value, reference=reference)
    eval_chunk = max(model.config.chunk_lengths) if cfg.chunked else None
    return trainer.run(target_train, target_eval, model.config.chunk_lengths, eval_chunk)


def final_metrics(history: Sequence[Dict[str, Any]], last: int = 2) -> Dict[str, Dict[str, float]]:
    """Per-language mean of mse / normalized_error over the last ``last`` eval points."""
    out: Dict[str, Dict[str, float]] = {}
    by_lang: Dict[str, List[Dict[str, Any]]] = {}
    for row in history:
        by_lang.setdefault(row["language"], []).append(row)
    for lang, rows in by_lang.items():
        tail = sorted(rows, key=lambda r: r["step"])[-last:]
        out[lang] = {
            "mse": float(np.mean([r["mse"] for r in tail])),
            "normalized_error": float(np.mean([r["normalized_error"] for r in tail])),
        }
    return out
