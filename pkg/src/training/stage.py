# src/training/stage.py
from dataclasses import asdict, dataclass, replace
from typing import Any, Dict, List, Tuple

from src.errors import ConfigError
from src.toymodel import ToyModel
from src.training.schedule import SCHEDULES

GROUPS = ("encoder_base", "projector", "prompts", "head_lora", "adapters", "lid")
STAGE1_GROUPS = ("encoder_base", "projector", "prompts", "head_lora")
STAGE2_GROUPS = ("adapters", "projector", "prompts", "head_lora")


@dataclass(frozen=True)
class StageConfig:
    """
    One training stage.

    ``trainable`` lists parameter groups: encoder_base, projector, prompts,
    head_lora, adapters (encoder adapters + routers) and lid.
    """
    stage: int = 2
    steps: int = 600
    batch_size: int = 8
    base_lr: float = 1e-3
    warmup_ratio: float = 0.1
    schedule: str = "cosine"
    trainable: Tuple[str, ...] = STAGE2_GROUPS
    chunked: bool = True
    eval_every: float = 0.05
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    fly_bias_rate: float = 1e-3
    sampling_temperature: float = 1.0
    freeze_shared: bool = False
    reinit_head_lora: bool = False

    @classmethod
    def stage1(cls, **overrides: Any) -> "StageConfig":
        return replace(cls(stage=1, steps=300, trainable=STAGE1_GROUPS), **overrides)

    @classmethod
    def stage2(cls, **overrides: Any) -> "StageConfig":
        return replace(cls(), **overrides)

    @property
    def groups(self) -> Tuple[str, ...]:
        if self.freeze_shared:
            return tuple(g for g in self.trainable if g not in ("projector", "head_lora"))
        return self.trainable

    def problems(self) -> List[str]:
        out = []
        if self.stage not in (1, 2):
            out.append(f"stage must be 1 or 2, got {self.stage}")
        if self.steps < 1:
            out.append(f"steps must be >= 1, got {self.steps}")
        if self.batch_size < 1:
            out.append(f"batch_size must be >= 1, got {self.batch_size}")
        if self.base_lr <= 0:
            out.append(f"base_lr must be positive, got {self.base_lr}")
        if not 0.0 <= self.warmup_ratio <= 1.0:
            out.append(f"warmup_ratio must lie in [0, 1], got {self.warmup_ratio}")
        if self.schedule not in SCHEDULES:
            out.append(f"schedule must be one of {list(SCHEDULES)}, got '{self.schedule}'")
        if not 0.0 < self.eval_every <= 1.0:
            out.append(f"eval_every must lie in (0, 1], got {self.eval_every}")
        if self.sampling_temperature <= 0:
            out.append(f"sampling_temperature must be positive, got {self.sampling_temperature}")
        unknown = sorted(set(self.trainable) - set(GROUPS))
        if unknown:
            out.append(f"unknown trainable groups {unknown}; choose from {list(GROUPS)}")
        if self.stage == 2 and "encoder_base" in self.trainable:
            out.append("stage 2 must keep the encoder base frozen (remove 'encoder_base')")
        if self.stage == 1 and {"adapters", "lid"} & set(self.trainable):
            out.append("stage 1 trains no encoder adapters (remove 'adapters'/'lid')")
        if not self.groups:
            out.append("no trainable parameter groups")
        return out

    def validate(self) -> "StageConfig":
        problems = self.problems()
        if problems:
            raise ConfigError(f"invalid stage-{self.stage} configuration", problems)
        return self

    def to_dict(self) -> Dict[str, Any]:
        out = asdict(self)
        out["trainable"] = list(self.trainable)
        return out


def trainable_names(model: ToyModel, groups: Tuple[str, ...]) -> List[str]:
    names: List[str] = []
    if "encoder_base" in groups:
        names += model.encoder_base_names()
    if "projector" in groups:
        names += model.projector_names()
    if "prompts" in groups:
        names += model.prompt_names()
    if "head_lora" in groups:
        names += model.head_lora_names()
    if "adapters" in groups:
        names += model.adapter_names()
    if "lid" in groups:
        names += [f"lid.{lang}" for lang in model.lid]
    return names
