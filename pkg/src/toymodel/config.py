# src/toymodel/config.py
from dataclasses import asdict, dataclass, field, replace
from typing import Any, Dict, List, Tuple

from src.adapters import LoraConfig
from src.errors import ConfigError
from src.router import DEFAULT_LANGUAGES

BLOCK_LAYERS = ("q", "k", "v", "o", "ffn1", "ffn2")
ALL_ADAPTED = ("in",) + BLOCK_LAYERS


@dataclass(frozen=True)
class ModelConfig:
    d: int = 32
    d_feat: int = 32
    depth: int = 2
    seq_len: int = 16
    stack: int = 4
    target_dim: int = 16
    ffn_mult: int = 2
    chunk_lengths: Tuple[int, ...] = (2, 4, 8, 16)
    languages: Tuple[str, ...] = DEFAULT_LANGUAGES
    lora: LoraConfig = field(default_factory=LoraConfig)
    d_lid: int = 16
    adapted_layers: Tuple[str, ...] = ALL_ADAPTED
    ln_eps: float = 1e-5

    @property
    def d_ff(self) -> int:
        return self.ffn_mult * self.d

    @property
    def eval_chunk_len(self) -> int:
        return max(self.chunk_lengths)

    def problems(self) -> List[str]:
        out = []
        for name in ("d", "d_feat", "depth", "seq_len", "stack", "target_dim", "ffn_mult", "d_lid"):
            if getattr(self, name) < 1:
                out.append(f"{name} must be >= 1, got {getattr(self, name)}")
        if not self.chunk_lengths or any(c < 1 for c in self.chunk_lengths):
            out.append(f"chunk_lengths must be non-empty positive frame counts, got {list(self.chunk_lengths)}")
        if not self.languages:
            out.append("languages must not be empty")
        if len(set(self.languages)) != len(self.languages):
            out.append(f"languages contain duplicates: {list(self.languages)}")
        unknown = sorted(set(self.adapted_layers) - set(ALL_ADAPTED))
        if unknown:
            out.append(f"adapted_layers has unknown entries {unknown}; choose from {list(ALL_ADAPTED)}")
        if self.ln_eps <= 0:
            out.append(f"ln_eps must be positive, got {self.ln_eps}")
        out.extend(f"lora.{p}" for p in replace(self.lora, d_in=self.d, d_out=self.d).problems())
        return out

    def validate(self) -> "ModelConfig":
        problems = self.problems()
        if problems:
            raise ConfigError("invalid model configuration", problems)
        return self

    # ---------------- Layer inventory ----------------

    def linear_layers(self) -> List[str]:
        """Every encoder linear layer, in forward order."""
        return ["enc.in"] + [f"enc.{i}.{n}" for i in range(self.depth) for n in BLOCK_LAYERS]

    def adapted_layer_names(self) -> List[str]:
        return [name for name in self.linear_layers() if name.rsplit(".", 1)[-1] in self.adapted_layers]

    def layer_shape(self, name: str) -> Tuple[int, int]:
        """(d_out, d_in) of an encoder linear layer."""
        kind = name.rsplit(".", 1)[-1]
        if kind == "in":
            return self.d, self.d_feat
        if kind == "ffn1":
            return self.d_ff, self.d
        if kind == "ffn2":
            return self.d, self.d_ff
        return self.d, self.d

    def layer_lora(self, name: str) -> LoraConfig:
        d_out, d_in = self.layer_shape(name)
        return self.lora.for_layer(d_in, d_out)

    def head_lora(self) -> LoraConfig:
        return self.lora.for_layer(self.d, self.target_dim)

    def to_dict(self) -> Dict[str, Any]:
        out = asdict(self)
        out["chunk_lengths"] = list(self.chunk_lengths)
        out["languages"] = list(self.languages)
        out["adapted_layers"] = list(self.adapted_layers)
        out["lora"] = self.lora.to_dict()
        return out

    @classmethod
    def from_dict(cls, obj: Dict[str, Any]) -> "ModelConfig":
        obj = dict(obj)
        obj["chunk_lengths"] = tuple(obj["chunk_lengths"])
        obj["languages"] = tuple(obj["languages"])
        obj["adapted_layers"] = tuple(obj["adapted_layers"])
        obj["lora"] = LoraConfig.from_dict(obj["lora"])
        return cls(**obj)
