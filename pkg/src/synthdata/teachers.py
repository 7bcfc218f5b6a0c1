# src/synthdata/teachers.py
"""
Ground-truth teachers with a controlled shared/specific decomposition.

For every teacher layer with base weight W0 (d_out x d_in):

    Δ_shared = P · mat(c_0) · Qᵀ
    Δ_l      = P · mat(Σ_k F_lk c_{k+1}) · Qᵀ
    ΔW*_l    = delta_scale · ‖W0‖_F · (c_sh Δ_shared + c_sp Δ_l)

P, Q have rank_t orthonormal columns, the c_k are orthonormal in R^(rank_t²)
and F Fᵀ is the target similarity, so the Frobenius cosine between Δ_i and Δ_j
equals sim[i, j] and every ΔW*_l has rank at most rank_t.
"""
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from src.errors import StructureError
from src.router import psd_factor
from src.tensorcore import content_hash, rng_stream
from src.toymodel import ModelConfig, ToyModel

logger = logging.getLogger(__name__)

NARROW_TEACHER_LAYERS = ("q", "v", "ffn1", "ffn2")


@dataclass
class TeacherSpec:
    base: ToyModel
    languages: Tuple[str, ...]
    similarity: np.ndarray
    shared_deltas: Dict[str, np.ndarray]
    specific_deltas: Dict[str, Dict[str, np.ndarray]]
    weight_deltas: Dict[str, Dict[str, np.ndarray]]
    c_sh: float
    c_sp: float
    rank: int
    noise_std: float
    seed: int
    _models: Dict[str, ToyModel] = field(default_factory=dict, repr=False)

    @property
    def layers(self) -> List[str]:
        return list(self.shared_deltas)

    def model_for(self, language: str) -> ToyModel:
        """Base model with language l's ground-truth deltas merged into its weights."""
        if language not in self._models:
            deltas = self.weight_deltas.get(language, {})
            self._models[language] = self.base.with_weight_deltas(deltas) if deltas else self.base
        return self._models[language]

    def forward(self, xs: np.ndarray, language: str, chunk_len: Optional[int] = None) -> np.ndarray:
        return self.model_for(language).predict(xs, language, chunk_len)

    def delta_cosines(self) -> np.ndarray:
        """Measured cosine between flattened specific deltas, all layers concatenated."""
        flat = np.stack([
            np.concatenate([self.specific_deltas[l][name].ravel() for name in self.layers])
            for l in self.languages
        ])
        norms = np.linalg.norm(flat, axis=1)
        cos = (flat @ flat.T) / np.outer(norms, norms)
        return (cos + cos.T) / 2.0

    def content_hash(self) -> str:
        arrays = {f"base.{k}": v for k, v in self.base.named_arrays().items()}
        for lang, layers in self.weight_deltas.items():
            arrays.update({f"delta.{lang}.{name}": d for name, d in layers.items()})
        return content_hash(arrays)


def _orthonormal(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    q, _ = np.linalg.qr(rng.standard_normal((rows, cols)))
    return q


def teacher_layer_names(config: ModelConfig, kinds: Optional[Sequence[str]] = None) -> List[str]:
    """Layers that receive ground-truth deltas; the student's adapted set unless ``kinds`` narrows it."""
    if kinds is None:
        return config.adapted_layer_names()
    return [name for name in config.linear_layers() if name.rsplit(".", 1)[-1] in kinds]


def make_teachers(
    sim: np.ndarray,
    c_sh: float,
    c_sp: float,
    seed: int,
    config: Optional[ModelConfig] = None,
    layer_kinds: Optional[Sequence[str]] = None,
    rank: Optional[int] = None,
    delta_scale: float = 0.3,
    noise_ratio: float = 0.01,
) -> TeacherSpec:
    """
    Build the teacher family for ``config.languages`` (ordered like ``sim``).

    Args:
        rank: teacher rank; defaults to the student's LoRA rank. A larger value
            gives the misspecified setting.
        layer_kinds: layer kinds to perturb, e.g. NARROW_TEACHER_LAYERS; defaults
            to every layer the student adapts.
        noise_ratio: target noise std as a fraction of the clean target std.
    """
    config = config or ModelConfig()
    languages = tuple(config.languages)
    rank_t = rank if rank is not None else config.lora.rank
    factor = psd_factor(np.asarray(sim, dtype=np.float64))
    if factor.shape[0] != len(languages):
        raise StructureError(f"similarity has {factor.shape[0]} rows for {len(languages)} languages")
    if rank_t * rank_t < len(languages) + 1:
        raise StructureError(f"teacher rank {rank_t} too small: need rank^2 >= {len(languages) + 1}")

    base = ToyModel.initialize(config, seed)
    shared: Dict[str, np.ndarray] = {}
    specific: Dict[str, Dict[str, np.ndarray]] = {l: {} for l in languages}
    weights: Dict[str, Dict[str, np.ndarray]] = {l: {} for l in languages}
    for name in teacher_layer_names(config, layer_kinds):
        d_out, d_in = config.layer_shape(name)
        if rank_t > min(d_out, d_in):
            raise StructureError(f"teacher rank {rank_t} exceeds layer {name} dims {d_out}x{d_in}")
        rng = rng_stream(seed, "teacher", name)
        p = _orthonormal(rng, d_out, rank_t)
        q = _orthonormal(rng, d_in, rank_t)
        cores = _orthonormal(rng, rank_t * rank_t, len(languages) + 1)
        shared[name] = p @ cores[:, 0].reshape(rank_t, rank_t) @ q.T
        magnitude = delta_scale * np.linalg.norm(base.params[name])
        for i, lang in enumerate(languages):
            core = cores[:, 1:] @ factor[i]
            specific[lang][name] = p @ core.reshape(rank_t, rank_t) @ q.T
            weights[lang][name] = magnitude * (c_sh * shared[name] + c_sp * specific[lang][name])

    spec = TeacherSpec(
        base=base,
        languages=languages,
        similarity=np.asarray(sim, dtype=np.float64),
        shared_deltas=shared,
        specific_deltas=specific,
        weight_deltas=weights,
        c_sh=c_sh,
        c_sp=c_sp,
        rank=rank_t,
        noise_std=0.0,
        seed=seed,
    )
    spec.noise_std = noise_ratio * _clean_target_std(spec, config, seed)
    logger.info("teachers: %d languages, %d layers, rank %d, noise std %.4g",
                len(languages), len(shared), rank_t, spec.noise_std)
    return spec


def _clean_target_std(spec: TeacherSpec, config: ModelConfig, seed: int, n_samples: int = 16) -> float:
    rng = rng_stream(seed, "teacher", "noise_scale")
    ys = [spec.forward(rng.standard_normal((n_samples, config.seq_len, config.d_feat)), l) for l in spec.languages]
    return float(np.std(np.concatenate(ys)))


def student_init(teachers: TeacherSpec, align_noise: float, seed: int) -> ToyModel:
    """
    Stage-1 starting point: the teacher base with relative Gaussian misalignment
    on encoder and projector weights. Head, prompts and head LoRA keep the
    teacher's values.
    """
    if align_noise < 0:
        raise StructureError(f"align_noise must be >= 0, got {align_noise}")
    student = teachers.base.copy()
    for name, w in student.params.items():
        if not (name.startswith("enc.") or name in ("proj.gate", "proj.up", "proj.out")):
            continue
        noise = rng_stream(seed, "student", name).standard_normal(w.shape)
        student.params[name] = w + align_noise * float(np.std(w)) * noise
    return student
