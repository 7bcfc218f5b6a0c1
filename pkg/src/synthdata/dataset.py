# src/synthdata/dataset.py
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from src.errors import ConfigError, LanguageKeyError
from src.synthdata.teachers import TeacherSpec
from src.tensorcore import content_hash, matrix_to_dict, rng_stream

logger = logging.getLogger(__name__)

TIERS = ("high", "mid", "low")
DEFAULT_PROFILE = {"high": 2000, "mid": 500, "low": 2}
DEFAULT_ASSIGNMENT = {
    "de": "high", "es": "high", "fr": "high", "ru": "high",
    "vi": "mid", "it": "mid", "en": "mid", "th": "mid",
    "ar": "low", "ja": "low", "ko": "low", "pt": "low",
}
DEFAULT_SOURCE_LANGUAGES = ("en", "fr", "th")


@dataclass(frozen=True)
class LanguageProfile:
    language: str
    train_count: int
    eval_count: int
    similarity_row: Tuple[float, ...] = ()

    def __post_init__(self) -> None:
        if self.train_count < 1 or self.eval_count < 1:
            raise ConfigError(f"profile for '{self.language}' needs positive counts",
                              [f"train={self.train_count}", f"eval={self.eval_count}"])


@dataclass
class Dataset:
    """Per-language utterances X (n x T x d_feat) and targets Y (n x target_dim)."""
    split: str
    inputs: Dict[str, np.ndarray] = field(default_factory=dict)
    targets: Dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def languages(self) -> List[str]:
        return list(self.inputs)

    def size(self, language: str) -> int:
        return 0 if language not in self.inputs else int(self.inputs[language].shape[0])

    def sizes(self) -> Dict[str, int]:
        return {l: self.size(l) for l in self.inputs}

    @property
    def total(self) -> int:
        return sum(self.sizes().values())

    def get(self, language: str) -> Tuple[np.ndarray, np.ndarray]:
        if language not in self.inputs:
            raise LanguageKeyError(f"{self.split} split has no data for '{language}'")
        return self.inputs[language], self.targets[language]

    def subset(self, languages: Iterable[str]) -> "Dataset":
        languages = list(languages)
        return Dataset(self.split, {l: self.inputs[l] for l in languages}, {l: self.targets[l] for l in languages})

    def scaled_targets(self, factor: float) -> "Dataset":
        return Dataset(self.split, dict(self.inputs), {l: y * factor for l, y in self.targets.items()})

    def content_hash(self) -> str:
        arrays = {}
        for lang in self.inputs:
            arrays[f"{lang}.x"] = self.inputs[lang].reshape(self.inputs[lang].shape[0], -1)
            arrays[f"{lang}.y"] = self.targets[lang]
        return content_hash(arrays)

    def pair_hashes(self) -> set:
        """One hash per (X, Y) record."""
        out = set()
        for lang in self.inputs:
            for x, y in zip(self.inputs[lang], self.targets[lang]):
                out.add(content_hash({"x": x, "y": y.reshape(1, -1)}))
        return out


def long_tail_sizes(profile: Mapping[str, int], assignment: Mapping[str, str]) -> Dict[str, int]:
    """Train count per language from its tier (high / mid / low)."""
    problems = [f"{tier}: count must be >= 1, got {profile.get(tier)}" for tier in TIERS
                if tier in profile and profile[tier] < 1]
    problems += [f"{lang}: unknown tier '{tier}'" for lang, tier in assignment.items() if tier not in profile]
    if problems:
        raise ConfigError("invalid long-tail profile", problems)
    return {lang: int(profile[tier]) for lang, tier in assignment.items()}


def build_profiles(languages: Sequence[str], train_counts: Mapping[str, int], eval_count: int,
                   similarity: Optional[np.ndarray] = None) -> List[LanguageProfile]:
    missing = [l for l in languages if l not in train_counts]
    if missing:
        raise ConfigError("languages without a long-tail tier", missing)
    return [
        LanguageProfile(l, int(train_counts[l]), int(eval_count),
                        tuple(float(v) for v in similarity[i]) if similarity is not None else ())
        for i, l in enumerate(languages)
    ]


def input_scales(seed: int, d_feat: int, domain_shift: float, domain: str) -> np.ndarray:
    """Per-feature input scales exp(shift * z); exactly 1 when shift is 0."""
    if domain_shift == 0:
        return np.ones(d_feat)
    return np.exp(domain_shift * rng_stream(seed, "domain", domain).standard_normal(d_feat))


def _sample_language(forward, language: str, count: int, seq_len: int, d_feat: int, noise_std: float,
                     seed: int, split: str, scales: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    xs = rng_stream(seed, "data", split, language, "x").standard_normal((count, seq_len, d_feat)) * scales
    ys = forward(xs, language)
    if noise_std > 0:
        ys = ys + noise_std * rng_stream(seed, "data", split, language, "noise").standard_normal(ys.shape)
    return xs, ys


def sample_dataset(
    teachers: TeacherSpec,
    profiles: Sequence[LanguageProfile],
    seed: int,
    split: str = "train",
    domain_shift: float = 0.0,
) -> Dataset:
    """
    Inputs are Gaussian frames, targets the language's teacher output plus
    N(0, σ²) noise. Each (split, language) pair draws from its own seed stream.
    """
    cfg = teachers.base.config
    scales = input_scales(seed, cfg.d_feat, domain_shift, "target")
    data = Dataset(split)
    for prof in profiles:
        count = prof.train_count if split == "train" else prof.eval_count
        xs, ys = _sample_language(teachers.forward, prof.language, count, cfg.seq_len, cfg.d_feat,
                                  teachers.noise_std, seed, split, scales)
        data.inputs[prof.language], data.targets[prof.language] = xs, ys
    logger.debug("sampled %s split: %s", split, data.sizes())
    return data


def sample_source_dataset(
    teachers: TeacherSpec,
    counts: Mapping[str, int],
    seed: int,
    split: str = "train",
    domain_shift: float = 0.0,
) -> Dataset:
    """Stage-1 data: the teacher base without language-specific deltas."""
    cfg = teachers.base.config
    scales = input_scales(seed, cfg.d_feat, domain_shift, "source")
    data = Dataset(f"source-{split}")
    for lang, count in counts.items():
        xs, ys = _sample_language(teachers.base.predict, lang, int(count), cfg.seq_len, cfg.d_feat,
                                  teachers.noise_std, seed, f"source-{split}", scales)
        data.inputs[lang], data.targets[lang] = xs, ys
    return data


def export_dataset(dataset: Dataset, directory: Union[str, Path], manifest: Optional[Dict] = None) -> List[Path]:
    """One JSON-lines file per language ({"x": matrix, "y": column}) plus manifest.json."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    written = []
    for lang in dataset.languages:
        path = directory / f"{dataset.split}_{lang}.jsonl"
        xs, ys = dataset.get(lang)
        with open(path, "w", encoding="utf-8") as fh:
            for x, y in zip(xs, ys):
                fh.write(json.dumps({"x": matrix_to_dict(x), "y": matrix_to_dict(y.reshape(-1, 1))}) + "\n")
        written.append(path)
    record = {
        "split": dataset.split,
        "sizes": dataset.sizes(),
        "dataset_hash": dataset.content_hash(),
        **(manifest or {}),
    }
    manifest_path = directory / "manifest.json"
    existing = json.loads(manifest_path.read_text(encoding="utf-8")) if manifest_path.exists() else {}
    existing[dataset.split] = record
    manifest_path.write_text(json.dumps(existing, indent=1, sort_keys=True), encoding="utf-8")
    written.append(manifest_path)
    return written
