# src/adapters/bank.py
import math
from dataclasses import dataclass, field
from typing import Any, Dict, Iterable, Optional, Tuple

import numpy as np

from src.adapters.config import LoraConfig, Variant
from src.errors import ContractError, LanguageKeyError, ShapeError
from src.tensorcore import ParamScope, Var, matrix_from_dict, matrix_to_dict, rng_stream

# Fields each variant populates.
_FIELDS = {
    Variant.VANILLA: {"A", "B_shared"},
    Variant.INDEPENDENT: {"A_spec", "B_spec"},
    Variant.FLYLORA: {"A", "B_shared", "fly_bias"},
    Variant.ZIPPER_STATIC: {"A", "B_shared", "B_spec"},
    Variant.ZIPPER_HARD: {"A", "B_shared", "B_spec"},
    Variant.ZIPPER_SOFT: {"A", "B_shared", "B_spec"},
}


@dataclass
class AdapterBank:
    """Low-rank parameter set of one adapted linear layer."""
    variant: Variant
    config: LoraConfig
    languages: Tuple[str, ...]
    A: Optional[np.ndarray] = None
    B_shared: Optional[np.ndarray] = None
    B_spec: Dict[str, np.ndarray] = field(default_factory=dict)
    A_spec: Dict[str, np.ndarray] = field(default_factory=dict)
    fly_bias: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        self.variant = Variant.parse(self.variant)
        self.languages = tuple(self.languages)
        self.validate()

    # ---------------- Structure ----------------

    def expected_shapes(self) -> Dict[str, Tuple[int, int]]:
        c = self.config
        r = c.rank
        if self.variant == Variant.ZIPPER_STATIC:
            b_shared, b_spec = (c.d_out, c.shared_ranks), (c.d_out, c.specific_ranks)
        else:
            b_shared, b_spec = (c.d_out, r), (c.d_out, r)
        return {"A": (r, c.d_in), "A_spec": (r, c.d_in), "B_shared": b_shared, "B_spec": b_spec, "fly_bias": (r, 1)}

    def validate(self) -> None:
        wanted = _FIELDS[self.variant]
        present = {
            "A": self.A is not None,
            "B_shared": self.B_shared is not None,
            "B_spec": bool(self.B_spec),
            "A_spec": bool(self.A_spec),
            "fly_bias": self.fly_bias is not None,
        }
        for name, is_present in present.items():
            if is_present != (name in wanted):
                state = "missing" if name in wanted else "not allowed"
                raise ContractError(f"{self.variant.value} bank: field '{name}' {state}")
        shapes = self.expected_shapes()
        for name in ("A", "B_shared", "fly_bias"):
            value = getattr(self, name)
            if value is not None and value.shape != shapes[name]:
                raise ShapeError(f"{self.variant.value} bank: {name} has shape {value.shape}, expected {shapes[name]}")
        for name in ("B_spec", "A_spec"):
            banks = getattr(self, name)
            if not banks:
                continue
            if set(banks) != set(self.languages):
                raise ContractError(f"{name} languages {sorted(banks)} differ from {sorted(self.languages)}")
            for lang, value in banks.items():
                if value.shape != shapes[name]:
                    raise ShapeError(f"{name}[{lang}] has shape {value.shape}, expected {shapes[name]}")

    def check_language(self, lang: str) -> None:
        if lang not in self.languages:
            raise LanguageKeyError(f"language '{lang}' has no adapter in this bank (known: {list(self.languages)})")

    # ---------------- Named arrays ----------------

    def named_arrays(self, prefix: str = "") -> Dict[str, np.ndarray]:
        out: Dict[str, np.ndarray] = {}
        for name in ("A", "B_shared", "fly_bias"):
            value = getattr(self, name)
            if value is not None:
                out[f"{prefix}{name}"] = value
        for lang in self.languages:
            if self.B_spec:
                out[f"{prefix}B_spec.{lang}"] = self.B_spec[lang]
            if self.A_spec:
                out[f"{prefix}A_spec.{lang}"] = self.A_spec[lang]
        return out

    def load_arrays(self, arrays: Dict[str, np.ndarray], prefix: str = "") -> None:
        for name, value in arrays.items():
            if not name.startswith(prefix):
                continue
            key = name[len(prefix):]
            if key in ("A", "B_shared", "fly_bias"):
                setattr(self, key, value)
            elif key.startswith("B_spec."):
                self.B_spec[key[len("B_spec."):]] = value
            elif key.startswith("A_spec."):
                self.A_spec[key[len("A_spec."):]] = value
        self.validate()

    def copy(self) -> "AdapterBank":
        return AdapterBank(
            variant=self.variant,
            config=self.config,
            languages=self.languages,
            A=None if self.A is None else self.A.copy(),
            B_shared=None if self.B_shared is None else self.B_shared.copy(),
            B_spec={k: v.copy() for k, v in self.B_spec.items()},
            A_spec={k: v.copy() for k, v in self.A_spec.items()},
            fly_bias=None if self.fly_bias is None else self.fly_bias.copy(),
        )

    # ---------------- Checkpoint format ----------------

    def to_dict(self) -> Dict[str, Any]:
        def opt(m):
            return None if m is None else matrix_to_dict(m)
        return {
            "variant": self.variant.value,
            "A": opt(self.A),
            "B_shared": opt(self.B_shared),
            "B_spec": {k: matrix_to_dict(v) for k, v in self.B_spec.items()},
            "A_spec": {k: matrix_to_dict(v) for k, v in self.A_spec.items()},
            "fly_bias": opt(self.fly_bias),
            "config": {**self.config.to_dict(), "languages": list(self.languages)},
        }

    @classmethod
    def from_dict(cls, obj: Dict[str, Any]) -> "AdapterBank":
        cfg = dict(obj["config"])
        languages = cfg.pop("languages")

        def opt(m):
            return None if m is None else matrix_from_dict(m)
        return cls(
            variant=Variant.parse(obj["variant"]),
            config=LoraConfig.from_dict(cfg),
            languages=tuple(languages),
            A=opt(obj.get("A")),
            B_shared=opt(obj.get("B_shared")),
            B_spec={k: matrix_from_dict(v) for k, v in (obj.get("B_spec") or {}).items()},
            A_spec={k: matrix_from_dict(v) for k, v in (obj.get("A_spec") or {}).items()},
            fly_bias=opt(obj.get("fly_bias")),
        )


def init_bank(variant: Variant, cfg: LoraConfig, languages: Iterable[str], rng: np.random.Generator) -> AdapterBank:
    """
    Fresh bank for one layer.

    A ~ N(0, 1/d_in); every B bank starts at zero so the initial update is 0.
    FlyLoRA's A is sparse and frozen: ceil(density * d_in) non-zeros per row,
    values +-1/sqrt(nnz).
    """
    variant = Variant.parse(variant)
    cfg.validate()
    languages = tuple(languages)
    r, d_in, d_out = cfg.rank, cfg.d_in, cfg.d_out
    std = 1.0 / math.sqrt(d_in)

    if variant == Variant.VANILLA:
        return AdapterBank(variant, cfg, languages, A=rng.standard_normal((r, d_in)) * std, B_shared=np.zeros((d_out, r)))
    if variant == Variant.INDEPENDENT:
        # per-language streams keep a language's init independent of the language set
        base_seed = int(rng.integers(0, 2**63 - 1))
        return AdapterBank(
            variant, cfg, languages,
            A_spec={l: rng_stream(base_seed, "A_spec", l).standard_normal((r, d_in)) * std for l in languages},
            B_spec={l: np.zeros((d_out, r)) for l in languages},
        )
    if variant == Variant.FLYLORA:
        nnz = max(1, math.ceil(cfg.fly_density * d_in))
        A = np.zeros((r, d_in))
        for i in range(r):
            cols = rng.choice(d_in, size=nnz, replace=False)
            A[i, cols] = rng.choice([-1.0, 1.0], size=nnz) / math.sqrt(nnz)
        return AdapterBank(variant, cfg, languages, A=A, B_shared=np.zeros((d_out, r)), fly_bias=np.zeros((r, 1)))

    A = rng.standard_normal((r, d_in)) * std
    if variant == Variant.ZIPPER_STATIC:
        return AdapterBank(
            variant, cfg, languages, A=A,
            B_shared=np.zeros((d_out, cfg.shared_ranks)),
            B_spec={l: np.zeros((d_out, cfg.specific_ranks)) for l in languages},
        )
    return AdapterBank(
        variant, cfg, languages, A=A,
        B_shared=np.zeros((d_out, r)),
        B_spec={l: np.zeros((d_out, r)) for l in languages},
    )


class BoundBank:
    """
    An AdapterBank bound to a tape through a ParamScope.

    Per-language matrices are bound lazily, so a forward pass for language l
    never places another language's parameters on the tape.
    """

    def __init__(self, bank: AdapterBank, scope: ParamScope, prefix: str = ""):
        self.bank = bank
        self.scope = scope
        self.prefix = prefix

    @property
    def variant(self) -> Variant:
        return self.bank.variant

    @property
    def config(self) -> LoraConfig:
        return self.bank.config

    @property
    def tape(self):
        return self.scope.tape

    @property
    def A(self) -> Var:
        return self.scope.get(self.prefix + "A", self.bank.A)

    @property
    def B_shared(self) -> Var:
        return self.scope.get(self.prefix + "B_shared", self.bank.B_shared)

    @property
    def fly_bias(self) -> np.ndarray:
        # selection-only: never differentiated
        return self.bank.fly_bias

    def B_spec(self, lang: str) -> Var:
        self.bank.check_language(lang)
        return self.scope.get(f"{self.prefix}B_spec.{lang}", self.bank.B_spec[lang])

    def A_spec(self, lang: str) -> Var:
        self.bank.check_language(lang)
        return self.scope.get(f"{self.prefix}A_spec.{lang}", self.bank.A_spec[lang])


def bind_bank(bank: Any, scope: Optional[ParamScope] = None, prefix: str = "") -> BoundBank:
    """Bind ``bank`` (or pass a BoundBank through). Unbound banks get a constant-only scope."""
    if isinstance(bank, BoundBank):
        return bank
    return BoundBank(bank, scope if scope is not None else ParamScope(), prefix)
