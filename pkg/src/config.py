# src/config.py
"""
Run configuration: nested frozen dataclasses loaded from YAML.

Loading is strict. Unknown keys, wrong types and failed invariants are all
collected as "path: message" diagnostics and raised together as one ConfigError.
"""
import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union, get_args, get_origin, get_type_hints

import yaml

from src.adapters import HardPolarity, LoraConfig, Variant
from src.errors import ConfigError
from src.router import DEFAULT_LANGUAGES
from src.synthdata import DEFAULT_ASSIGNMENT, DEFAULT_PROFILE, DEFAULT_SOURCE_LANGUAGES
from src.toymodel import ALL_ADAPTED, ModelConfig
from src.training import STAGE1_GROUPS, STAGE2_GROUPS, StageConfig

RUNS_DIR_ENV = "ZIPPER_RUNS_DIR"
LOG_LEVEL_ENV = "ZIPPER_LOG_LEVEL"
DEFAULT_RUNS_DIR = "runs"

# --reference-hparams: reference-scale rank, alpha, top-k and learning rate
REFERENCE_HPARAMS = {"rank": 32, "alpha": 64.0, "top_k": 8, "base_lr": 2e-5}


@dataclass(frozen=True)
class ModelSection:
    d: int = 32
    d_feat: int = 32
    depth: int = 2
    seq_len: int = 16
    stack: int = 4
    target_dim: int = 16
    ffn_mult: int = 2
    chunk_lengths: Tuple[int, ...] = (2, 4, 8, 16)
    adapted_layers: Tuple[str, ...] = ALL_ADAPTED
    ln_eps: float = 1e-5


@dataclass(frozen=True)
class LoraSection:
    rank: int = 8
    alpha: float = 16.0
    tau: float = 0.5
    top_k: int = 2
    shared_ranks: int = 4
    hard_polarity: str = HardPolarity.SPEC_ON_ONE.value
    fly_density: float = 0.1


@dataclass(frozen=True)
class RouterSection:
    d_lid: int = 16
    similarity_file: Optional[str] = None
    train_lid: bool = False


@dataclass(frozen=True)
class DataSection:
    languages: Tuple[str, ...] = DEFAULT_LANGUAGES
    profile: Dict[str, int] = field(default_factory=lambda: dict(DEFAULT_PROFILE))
    assignment: Dict[str, str] = field(default_factory=lambda: dict(DEFAULT_ASSIGNMENT))
    eval_count: int = 64
    source_languages: Tuple[str, ...] = DEFAULT_SOURCE_LANGUAGES
    source_train_count: int = 1000
    source_eval_count: int = 64
    c_sh: float = 1.0
    c_sp: float = 1.0
    teacher_rank: Optional[int] = None
    teacher_layers: Optional[Tuple[str, ...]] = None
    delta_scale: float = 0.3
    noise_ratio: float = 0.01
    domain_shift: float = 0.0
    align_noise: float = 0.3
    seed: int = 0


@dataclass(frozen=True)
class StageSection:
    steps: int = 600
    batch_size: int = 8
    base_lr: float = 1e-3
    warmup_ratio: float = 0.1
    schedule: str = "cosine"
    eval_every: float = 0.05
    sampling_temperature: float = 1.0
    fly_bias_rate: float = 1e-3
    freeze_shared: bool = False
    reinit_head_lora: bool = False
    trainable: Optional[Tuple[str, ...]] = None


@dataclass(frozen=True)
class WarmStartSection:
    enabled: bool = False
    source_seed: int = 0
    load_B_shared: bool = True
    load_B_spec: bool = True
    load_router: bool = True


@dataclass(frozen=True)
class RunConfig:
    name: str = "zipper"
    variants: Tuple[str, ...] = tuple(v.value for v in Variant)
    seeds: Tuple[int, ...] = (0, 1, 2, 3, 4)
    chunked: bool = True
    output_dir: Optional[str] = None
    model: ModelSection = field(default_factory=ModelSection)
    lora: LoraSection = field(default_factory=LoraSection)
    router: RouterSection = field(default_factory=RouterSection)
    data: DataSection = field(default_factory=DataSection)
    stage1: StageSection = field(default_factory=lambda: StageSection(steps=300))
    stage2: StageSection = field(default_factory=StageSection)
    warm_start: WarmStartSection = field(default_factory=WarmStartSection)

    # ---------------- Derived objects ----------------

    def lora_config(self) -> LoraConfig:
        s = self.lora
        return LoraConfig(rank=s.rank, alpha=s.alpha, tau=s.tau, top_k=s.top_k, shared_ranks=s.shared_ranks,
                          hard_polarity=HardPolarity(s.hard_polarity), fly_density=s.fly_density)

    def model_config(self, languages: Optional[Tuple[str, ...]] = None) -> ModelConfig:
        m = self.model
        return ModelConfig(
            d=m.d, d_feat=m.d_feat, depth=m.depth, seq_len=m.seq_len, stack=m.stack,
            target_dim=m.target_dim, ffn_mult=m.ffn_mult, chunk_lengths=tuple(m.chunk_lengths),
            languages=tuple(languages or self.data.languages), lora=self.lora_config(),
            d_lid=self.router.d_lid, adapted_layers=tuple(m.adapted_layers), ln_eps=m.ln_eps,
        )

    def stage_config(self, stage: int) -> StageConfig:
        s = self.stage1 if stage == 1 else self.stage2
        trainable = s.trainable
        if trainable is None:
            trainable = STAGE1_GROUPS if stage == 1 else STAGE2_GROUPS
            if stage == 2 and self.router.train_lid:
                trainable = trainable + ("lid",)
        return StageConfig(
            stage=stage, steps=s.steps, batch_size=s.batch_size, base_lr=s.base_lr,
            warmup_ratio=s.warmup_ratio, schedule=s.schedule, trainable=tuple(trainable),
            chunked=self.chunked, eval_every=s.eval_every, fly_bias_rate=s.fly_bias_rate,
            sampling_temperature=s.sampling_temperature, freeze_shared=s.freeze_shared,
            reinit_head_lora=s.reinit_head_lora,
        )

    def variant_list(self) -> List[Variant]:
        return [Variant.parse(v) for v in self.variants]

    def resolve_output_dir(self, override: Optional[str] = None) -> Path:
        """--out, then output_dir, then $ZIPPER_RUNS_DIR/<name>, then runs/<name>."""
        if override:
            return Path(override)
        if self.output_dir:
            return Path(self.output_dir)
        return Path(os.getenv(RUNS_DIR_ENV, DEFAULT_RUNS_DIR)) / self.name

    # ---------------- Serialization ----------------

    def to_dict(self) -> Dict[str, Any]:
        return _plain(dataclasses.asdict(self))

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)

    def problems(self) -> List[str]:
        out: List[str] = []
        unknown = [v for v in self.variants if not _known(v)]
        if unknown:
            out.append(f"variants: unknown {unknown}; choose from {[v.value for v in Variant]}")
        if not self.variants:
            out.append("variants: at least one variant is required")
        if not self.seeds:
            out.append("seeds: at least one seed is required")
        if len(set(self.seeds)) != len(self.seeds):
            out.append(f"seeds: duplicates in {list(self.seeds)}")
        if self.lora.hard_polarity not in [p.value for p in HardPolarity]:
            out.append(f"lora.hard_polarity: must be one of {[p.value for p in HardPolarity]}")
        out.extend(f"model.{p}" for p in _model_problems(self))
        d = self.data
        stray = [l for l in d.source_languages if l not in d.languages]
        if stray:
            out.append(f"data.source_languages: {stray} are not among data.languages")
        if self.router.d_lid < len(d.languages):
            out.append(f"router.d_lid: must be >= the language count ({len(d.languages)})")
        missing = [l for l in d.languages if l not in d.assignment]
        if missing:
            out.append(f"data.assignment: no tier for {missing}")
        unknown_tiers = sorted({t for t in d.assignment.values()} - set(d.profile))
        if unknown_tiers:
            out.append(f"data.assignment: unknown tiers {unknown_tiers}; profile has {sorted(d.profile)}")
        if any(n < 1 for n in d.profile.values()):
            out.append(f"data.profile: counts must be >= 1, got {d.profile}")
        if d.eval_count < 1 or d.source_eval_count < 1 or d.source_train_count < 1:
            out.append("data: eval_count, source_train_count and source_eval_count must be >= 1")
        if d.c_sh < 0 or d.c_sp < 0:
            out.append("data: c_sh and c_sp must be >= 0")
        if d.noise_ratio < 0 or d.align_noise < 0 or d.domain_shift < 0:
            out.append("data: noise_ratio, align_noise and domain_shift must be >= 0")
        if d.teacher_layers is not None:
            bad = sorted(set(d.teacher_layers) - set(ALL_ADAPTED))
            if bad or not d.teacher_layers:
                out.append(f"data.teacher_layers: {list(d.teacher_layers)} must be non-empty kinds from {list(ALL_ADAPTED)}")
        for stage in (1, 2):
            out.extend(f"stage{stage}: {p}" for p in self.stage_config(stage).problems())
        if self.warm_start.enabled:
            if Variant.ZIPPER_SOFT not in [Variant.parse(v) for v in self.variants if _known(v)]:
                out.append("warm_start.enabled: needs ZipperSoft among the variants")
            if self.warm_start.source_seed not in self.seeds:
                out.append(f"warm_start.source_seed: {self.warm_start.source_seed} is not in seeds")
        return out

    def validate(self) -> "RunConfig":
        problems = self.problems()
        if problems:
            raise ConfigError("invalid run configuration", problems)
        return self

    def with_overrides(
        self,
        seed: Optional[int] = None,
        reference_hparams: bool = False,
        hard_polarity: Optional[str] = None,
        chunked: Optional[bool] = None,
    ) -> "RunConfig":
        """CLI flags on top of the file."""
        cfg = self
        if seed is not None:
            cfg = replace(cfg, seeds=(seed,), warm_start=replace(cfg.warm_start, source_seed=seed))
        if reference_hparams:
            cfg = replace(
                cfg,
                lora=replace(cfg.lora, rank=REFERENCE_HPARAMS["rank"], alpha=REFERENCE_HPARAMS["alpha"], top_k=REFERENCE_HPARAMS["top_k"]),
                stage1=replace(cfg.stage1, base_lr=REFERENCE_HPARAMS["base_lr"]),
                stage2=replace(cfg.stage2, base_lr=REFERENCE_HPARAMS["base_lr"]),
            )
        if hard_polarity is not None:
            cfg = replace(cfg, lora=replace(cfg.lora, hard_polarity=hard_polarity))
        if chunked is not None:
            cfg = replace(cfg, chunked=chunked)
        return cfg.validate()


def _known(value: Any) -> bool:
    try:
        Variant.parse(value)
        return True
    except ConfigError:
        return False


def _model_problems(cfg: RunConfig) -> List[str]:
    try:
        return cfg.model_config().problems()
    except (TypeError, ValueError) as exc:
        return [str(exc)]


def _plain(value: Any) -> Any:
    if isinstance(value, dict):
        return {k: _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    return value


# ---------------- Strict loading ----------------

def _coerce(value: Any, hint: Any, path: str, diags: List[str]) -> Any:
    origin, args = get_origin(hint), get_args(hint)
    if dataclasses.is_dataclass(hint):
        return _build(hint, value, path, diags)
    if origin is Union:
        if value is None and type(None) in args:
            return None
        inner = [a for a in args if a is not type(None)][0]
        return _coerce(value, inner, path, diags)
    if origin is tuple:
        if not isinstance(value, (list, tuple)):
            diags.append(f"{path}: expected a list, got {type(value).__name__}")
            return ()
        return tuple(_coerce(v, args[0], f"{path}[{i}]", diags) for i, v in enumerate(value))
    if origin is dict:
        if not isinstance(value, dict):
            diags.append(f"{path}: expected a mapping, got {type(value).__name__}")
            return {}
        return {str(k): _coerce(v, args[1], f"{path}.{k}", diags) for k, v in value.items()}
    if hint is bool:
        if not isinstance(value, bool):
            diags.append(f"{path}: expected true/false, got {value!r}")
        return bool(value)
    if hint is int:
        if isinstance(value, bool) or not isinstance(value, int):
            diags.append(f"{path}: expected an integer, got {value!r}")
            return 0
        return value
    if hint is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            diags.append(f"{path}: expected a number, got {value!r}")
            return 0.0
        return float(value)
    if hint is str:
        if not isinstance(value, str):
            diags.append(f"{path}: expected a string, got {value!r}")
            return ""
        return value
    return value


def _build(cls: Any, obj: Any, path: str, diags: List[str]) -> Any:
    if obj is None:
        obj = {}
    if not isinstance(obj, dict):
        diags.append(f"{path or '<root>'}: expected a mapping, got {type(obj).__name__}")
        return cls()
    hints = get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    for key in sorted(set(obj) - names):
        diags.append(f"{path}{'.' if path else ''}{key}: unknown key")
    kwargs = {
        key: _coerce(value, hints[key], f"{path}{'.' if path else ''}{key}", diags)
        for key, value in obj.items() if key in names
    }
    return cls(**kwargs)


def parse_config(obj: Any) -> RunConfig:
    diags: List[str] = []
    cfg = _build(RunConfig, obj, "", diags)
    if diags:
        raise ConfigError("invalid run configuration", diags)
    return cfg.validate()


def load_config(path: Union[str, Path]) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        obj = yaml.safe_load(path.read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        raise ConfigError(f"config file is not valid YAML: {path}", [str(exc)]) from exc
    cfg = parse_config(obj)
    sim_file = cfg.router.similarity_file
    if sim_file is not None and not Path(sim_file).is_absolute():
        # relative similarity files live next to the config that names them
        cfg = replace(cfg, router=replace(cfg.router, similarity_file=str((path.parent / sim_file).resolve())))
    return cfg


def config_hash(cfg: RunConfig) -> str:
    canonical = json.dumps(cfg.to_dict(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]


def default_log_level() -> str:
    return os.getenv(LOG_LEVEL_ENV, "INFO").upper()
