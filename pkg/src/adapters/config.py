# src/adapters/config.py
from dataclasses import asdict, dataclass, replace
from enum import Enum
from typing import Any, Dict, List

from src.errors import ConfigError


class Variant(str, Enum):
    VANILLA = "Vanilla"
    INDEPENDENT = "Independent"
    FLYLORA = "FlyLoRA"
    ZIPPER_STATIC = "ZipperStatic"
    ZIPPER_HARD = "ZipperHard"
    ZIPPER_SOFT = "ZipperSoft"

    @property
    def routed(self) -> bool:
        """Variants whose merge is driven by the LID router."""
        return self in (Variant.ZIPPER_HARD, Variant.ZIPPER_SOFT)

    @classmethod
    def parse(cls, value: Any) -> "Variant":
        if isinstance(value, cls):
            return value
        for v in cls:
            if str(value).lower() == v.value.lower():
                return v
        raise ConfigError(f"unknown adapter variant '{value}'", [f"choose one of {[v.value for v in cls]}"])


class HardPolarity(str, Enum):
    SPEC_ON_ONE = "spec_on_one"
    SHARED_ON_ONE = "shared_on_one"


@dataclass(frozen=True)
class LoraConfig:
    """
    Per-layer low-rank settings.

    ``shared_ranks`` (r_s) only matters for ZipperStatic; r_p = rank - r_s.
    """
    rank: int = 8
    alpha: float = 16.0
    d_in: int = 32
    d_out: int = 32
    tau: float = 0.5
    top_k: int = 2
    shared_ranks: int = 4
    hard_polarity: HardPolarity = HardPolarity.SPEC_ON_ONE
    fly_density: float = 0.1

    @property
    def scaling(self) -> float:
        return self.alpha / self.rank

    @property
    def specific_ranks(self) -> int:
        return self.rank - self.shared_ranks

    def problems(self) -> List[str]:
        out = []
        if self.rank < 1:
            out.append(f"rank must be >= 1, got {self.rank}")
        if self.alpha <= 0:
            out.append(f"alpha must be positive, got {self.alpha}")
        if self.d_in < 1 or self.d_out < 1:
            out.append(f"d_in/d_out must be positive, got {self.d_in}/{self.d_out}")
        if not 0.0 < self.tau < 1.0:
            out.append(f"tau must lie in (0, 1), got {self.tau}")
        if not 1 <= self.top_k <= self.rank:
            out.append(f"top_k must satisfy 1 <= k <= rank ({self.rank}), got {self.top_k}")
        if not 0 <= self.shared_ranks <= self.rank:
            out.append(f"shared_ranks must lie in [0, rank], got {self.shared_ranks}")
        if not 0.0 < self.fly_density <= 1.0:
            out.append(f"fly_density must lie in (0, 1], got {self.fly_density}")
        return out

    def validate(self) -> "LoraConfig":
        problems = self.problems()
        if problems:
            raise ConfigError("invalid LoRA configuration", problems)
        return self

    def for_layer(self, d_in: int, d_out: int) -> "LoraConfig":
        return replace(self, d_in=d_in, d_out=d_out)

    def to_dict(self) -> Dict[str, Any]:
        out = asdict(self)
        out["hard_polarity"] = self.hard_polarity.value
        return out

    @classmethod
    def from_dict(cls, obj: Dict[str, Any]) -> "LoraConfig":
        obj = dict(obj)
        obj["hard_polarity"] = HardPolarity(obj.get("hard_polarity", HardPolarity.SPEC_ON_ONE.value))
        return cls(**obj)
