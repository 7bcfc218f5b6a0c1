from src.adapters.accounting import count_trainable_params, router_param_count, soft_vs_independent_crossover
from src.adapters.bank import AdapterBank, BoundBank, bind_bank, init_bank
from src.adapters.config import HardPolarity, LoraConfig, Variant
from src.adapters.deltas import (
    MergedDelta,
    adapted_forward,
    delta_for,
    flylora_delta,
    flylora_mask,
    flylora_scores,
    gradient_arrays,
    independent_delta,
    merged_up_projection,
    rebalance_fly_bias,
    vanilla_delta,
    zip_merge,
    zipper_delta,
    zipper_hard_mask,
    zipper_soft_merge,
    zipper_static_merge,
)
