# src/adapters/deltas.py
"""
Per-variant weight updates and the adapted linear layer.

All merges are built from tensorcore ops, so they are differentiable when the
bank is bound to a recording tape and plain evaluations otherwise.
"""
from dataclasses import dataclass
from typing import Any, Dict, MutableMapping, Optional

import numpy as np

from src.adapters.bank import AdapterBank, BoundBank, bind_bank
from src.adapters.config import HardPolarity, LoraConfig, Variant
from src.errors import ConfigError, ContractError, ShapeError
from src.tensorcore import (
    Var,
    add,
    affine,
    concat_cols,
    diag_scale_cols,
    hadamard,
    lift_all,
    matmul,
    scale,
    ste_threshold,
)

BankLike = Any  # AdapterBank | BoundBank


@dataclass
class MergedDelta:
    """The update ΔW for one language, plus the mixing vector that produced it."""
    delta: Var
    language: Optional[str] = None
    mixing: Optional[np.ndarray] = None

    @property
    def matrix(self) -> np.ndarray:
        return self.delta.value

    @property
    def shape(self):
        return self.delta.shape


def _require(bank: BoundBank, *variants: Variant) -> None:
    if bank.variant not in variants:
        names = ", ".join(v.value for v in variants)
        raise ContractError(f"operation needs a {names} bank, got {bank.variant.value}")


def _mixing_values(p: Any) -> np.ndarray:
    return np.array(p.value if isinstance(p, Var) else p, dtype=np.float64).reshape(-1)


# ---------------- Whole-matrix deltas ----------------

def vanilla_delta(bank: BankLike, language: Optional[str] = None) -> MergedDelta:
    """(α/r)·B·A, identical for every language."""
    b = bind_bank(bank)
    _require(b, Variant.VANILLA)
    if language is not None:
        b.bank.check_language(language)
    return MergedDelta(scale(matmul(b.B_shared, b.A), b.config.scaling), language)


def independent_delta(bank: BankLike, language: str) -> MergedDelta:
    """(α/r)·B^(l)·A^(l) from the language's own pair."""
    b = bind_bank(bank)
    _require(b, Variant.INDEPENDENT)
    return MergedDelta(scale(matmul(b.B_spec(language), b.A_spec(language)), b.config.scaling), language)


def flylora_scores(bank: BankLike, x: Any) -> np.ndarray:
    """y = A·x + d for every column of x (r x n)."""
    b = bind_bank(bank)
    _require(b, Variant.FLYLORA)
    xv = x.value if isinstance(x, Var) else np.asarray(x, dtype=np.float64)
    return b.bank.A @ xv + b.fly_bias


def flylora_mask(scores: np.ndarray, k: int) -> np.ndarray:
    """
    Binary r x n mask keeping the k largest scores of each column.

    Ties go to the lowest rank index.
    """
    r = scores.shape[0]
    if not 1 <= k <= r:
        raise ConfigError(f"top_k must satisfy 1 <= k <= rank ({r}), got {k}")
    order = np.argsort(-scores, axis=0, kind="stable")
    mask = np.zeros_like(scores)
    np.put_along_axis(mask, order[:k], 1.0, axis=0)
    return mask


def flylora_delta(bank: BankLike, x: Any, language: Optional[str] = None) -> MergedDelta:
    """
    Input-dependent update for a single column x:
    (α/r)·Σ_{i in top-k(Ax + d)} b_i a_iᵀ.
    """
    b = bind_bank(bank)
    _require(b, Variant.FLYLORA)
    cfg = b.config
    if cfg.top_k > cfg.rank:
        raise ConfigError(f"top_k ({cfg.top_k}) exceeds rank ({cfg.rank})")
    scores = flylora_scores(b, x)
    if scores.shape[1] != 1:
        raise ShapeError(f"flylora_delta takes a single input column, got {scores.shape[1]} columns")
    mask = flylora_mask(scores, cfg.top_k)
    merged = diag_scale_cols(b.B_shared, mask)
    return MergedDelta(scale(matmul(merged, b.A), cfg.scaling), language, mask.reshape(-1))


# ---------------- Up-projection merges ----------------

def zipper_static_merge(bank: BankLike, language: str) -> Var:
    """[B_shared | B_spec^(l)], r_s shared columns first."""
    b = bind_bank(bank)
    _require(b, Variant.ZIPPER_STATIC)
    return concat_cols(b.B_shared, b.B_spec(language))


def zipper_hard_mask(p: Any, tau: float) -> Var:
    """s_i = 1 iff p_i >= tau. The backward pass is the identity."""
    return ste_threshold(p, tau)


def zipper_soft_merge(b_shared: Any, b_spec: Any, p: Any) -> Var:
    """B_shared·diag(1-p) + B_spec·diag(p)."""
    _, (b_shared, b_spec, p) = lift_all(b_shared, b_spec, p)
    if b_shared.shape != b_spec.shape:
        raise ShapeError(f"soft merge: banks differ in shape {b_shared.shape} vs {b_spec.shape}")
    if p.value.size != b_shared.shape[1]:
        raise ShapeError(f"soft merge: mixing vector has {p.value.size} entries for {b_shared.shape[1]} ranks")
    return add(diag_scale_cols(b_shared, affine(p, -1.0, 1.0)), diag_scale_cols(b_spec, p))


def zip_merge(b_shared: Any, b_spec: Any, s: Any, polarity: HardPolarity = HardPolarity.SPEC_ON_ONE) -> Var:
    """
    Rank-wise zipper on a binary mask.

    With spec_on_one, column i comes from B_spec where s_i = 1; shared_on_one
    takes it from B_shared instead.
    """
    if HardPolarity(polarity) == HardPolarity.SHARED_ON_ONE:
        b_shared, b_spec = b_spec, b_shared
    return zipper_soft_merge(b_shared, b_spec, s)


def zipper_delta(b_merged: Any, a: Any, cfg: LoraConfig, language: Optional[str] = None,
                 mixing: Optional[Any] = None) -> MergedDelta:
    """(α/r)·B_merged·A."""
    _, (b_merged, a) = lift_all(b_merged, a)
    if b_merged.shape[1] != a.shape[0]:
        raise ShapeError(f"zipper_delta: B_merged {b_merged.shape} does not fit A {a.shape}")
    return MergedDelta(
        scale(matmul(b_merged, a), cfg.scaling),
        language,
        None if mixing is None else _mixing_values(mixing),
    )


def merged_up_projection(bank: BankLike, language: str, router_p: Any = None) -> Var:
    """B_merged^(l) for any Zipper variant."""
    b = bind_bank(bank)
    if b.variant == Variant.ZIPPER_STATIC:
        return zipper_static_merge(b, language)
    _require(b, Variant.ZIPPER_HARD, Variant.ZIPPER_SOFT)
    if router_p is None:
        raise ContractError(f"{b.variant.value} needs router weights p")
    if b.variant == Variant.ZIPPER_HARD:
        s = zipper_hard_mask(router_p, b.config.tau)
        return zip_merge(b.B_shared, b.B_spec(language), s, b.config.hard_polarity)
    return zipper_soft_merge(b.B_shared, b.B_spec(language), router_p)


def delta_for(bank: BankLike, language: str, router_p: Any = None, x: Any = None) -> MergedDelta:
    """Full ΔW^(l) for any variant (FlyLoRA needs a single input column x)."""
    b = bind_bank(bank)
    b.bank.check_language(language)
    v = b.variant
    if v == Variant.VANILLA:
        return vanilla_delta(b, language)
    if v == Variant.INDEPENDENT:
        return independent_delta(b, language)
    if v == Variant.FLYLORA:
        if x is None:
            raise ContractError("FlyLoRA delta depends on the input column x")
        return flylora_delta(b, x, language)
    mixing = None
    if v == Variant.ZIPPER_HARD:
        mixing = (_mixing_values(router_p) >= b.config.tau).astype(np.float64) if router_p is not None else None
    elif v == Variant.ZIPPER_SOFT and router_p is not None:
        mixing = router_p
    return zipper_delta(merged_up_projection(b, language, router_p), b.A, b.config, language, mixing)


# ---------------- Adapted layer ----------------

def _check_router_p(variant: Variant, router_p: Any, rank: int) -> None:
    if variant.routed and router_p is None:
        raise ContractError(f"{variant.value} requires router weights p")
    if not variant.routed and router_p is not None:
        raise ContractError(f"{variant.value} does not take router weights")
    if router_p is not None:
        size = (router_p.value if isinstance(router_p, Var) else np.asarray(router_p)).size
        if size != rank:
            raise ShapeError(f"router weights have {size} entries, rank is {rank}")


def adapted_forward(
    w0: Any,
    bank: BankLike,
    language: str,
    x: Any,
    router_p: Any = None,
    trace: Optional[MutableMapping[str, Any]] = None,
) -> Var:
    """
    W0·x + ΔW^(l)·x, evaluated in factored form (α/r)·B_merged·(A·x).

    Args:
        w0: frozen base weight (d_out x d_in), Var or array.
        bank: AdapterBank or BoundBank for this layer.
        language: language id; must be one of the bank's languages.
        x: input columns (d_in x n).
        router_p: rank vector p, required for ZipperHard/ZipperSoft only.
        trace: optional dict; FlyLoRA adds per-rank selection counts under
            "load", routed variants store the mixing vector under "p".
    """
    b = bind_bank(bank)
    cfg = b.config
    b.bank.check_language(language)
    _check_router_p(b.variant, router_p, cfg.rank)

    tape = x.tape if isinstance(x, Var) else b.tape
    x = x if isinstance(x, Var) else tape.const(x)
    base = matmul(w0 if isinstance(w0, Var) else tape.const(w0), x)
    v = b.variant
    if v == Variant.INDEPENDENT:
        low = matmul(b.B_spec(language), matmul(b.A_spec(language), x))
        return add(base, scale(low, cfg.scaling))

    ax = matmul(b.A, x)
    if v == Variant.VANILLA:
        up = b.B_shared
    elif v == Variant.FLYLORA:
        mask = flylora_mask(flylora_scores(b, x), cfg.top_k)
        if trace is not None:
            trace["load"] = trace.get("load", 0) + mask.sum(axis=1)
        ax = hadamard(ax, mask)
        up = b.B_shared
    else:
        up = merged_up_projection(b, language, router_p)
        if trace is not None and router_p is not None:
            trace["p"] = _mixing_values(router_p)
    return add(base, scale(matmul(up, ax), cfg.scaling))


def gradient_arrays(bank: AdapterBank, prefix: str = "") -> Dict[str, np.ndarray]:
    """Named arrays trained by gradient (FlyLoRA's frozen A and its load-balanced bias are excluded)."""
    arrays = bank.named_arrays(prefix)
    if bank.variant == Variant.FLYLORA:
        arrays.pop(f"{prefix}A", None)
        arrays.pop(f"{prefix}fly_bias", None)
    return arrays


def rebalance_fly_bias(bank: AdapterBank, load: np.ndarray, rate: float) -> None:
    """
    Load balancing without an auxiliary loss: d_i += rate * sign(mean(load) - load_i).

    ``load`` counts how often each rank was selected during the last step.
    """
    if bank.variant != Variant.FLYLORA:
        raise ContractError(f"only FlyLoRA banks carry a routing bias, got {bank.variant.value}")
    load = np.asarray(load, dtype=np.float64).reshape(-1)
    if load.size != bank.config.rank:
        raise ShapeError(f"load has {load.size} entries, rank is {bank.config.rank}")
    bank.fly_bias = bank.fly_bias + rate * np.sign(load.mean() - load).reshape(-1, 1)
