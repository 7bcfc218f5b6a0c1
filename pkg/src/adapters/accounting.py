# src/adapters/accounting.py
from typing import Optional

from src.adapters.config import LoraConfig, Variant


def router_param_count(rank: int, d_lid: int) -> int:
    """W_r (r x d_lid) + b_r (r) + LayerNorm gamma/beta (2 x d_lid)."""
    return rank * d_lid + rank + 2 * d_lid


def count_trainable_params(variant: Variant, cfg: LoraConfig, n_languages: int, d_lid: int = 16) -> int:
    """Closed-form trainable-parameter count of one adapted layer."""
    variant = Variant.parse(variant)
    r, d_in, d_out = cfg.rank, cfg.d_in, cfg.d_out
    if variant == Variant.VANILLA:
        return r * d_in + d_out * r
    if variant == Variant.INDEPENDENT:
        return n_languages * (r * d_in + d_out * r)
    if variant == Variant.FLYLORA:
        return d_out * r + r
    if variant == Variant.ZIPPER_STATIC:
        return r * d_in + d_out * cfg.shared_ranks + n_languages * d_out * cfg.specific_ranks
    return r * d_in + d_out * r + n_languages * d_out * r + router_param_count(r, d_lid)


def soft_vs_independent_crossover(d_in: int, d_out: int, rank: int, d_lid: int, max_languages: int = 10_000) -> Optional[int]:
    """Smallest language count at which ZipperSoft is cheaper than Independent, or None."""
    cfg = LoraConfig(rank=rank, d_in=d_in, d_out=d_out, top_k=1, shared_ranks=0)
    for n in range(1, max_languages + 1):
        soft = count_trainable_params(Variant.ZIPPER_SOFT, cfg, n, d_lid)
        if soft < count_trainable_params(Variant.INDEPENDENT, cfg, n, d_lid):
            return n
    return None
