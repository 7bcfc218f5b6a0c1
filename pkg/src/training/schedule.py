# src/training/schedule.py
import math

from src.errors import ConfigError, ContractError

SCHEDULES = ("cosine", "constant")


def lr_at(step: int, total_steps: int, base_lr: float, warmup_ratio: float = 0.1, kind: str = "cosine") -> float:
    """
    Learning rate at ``step``.

    cosine: linear ramp 0 -> base_lr over the first warmup_ratio * total_steps
    steps, then (1 + cos(pi * progress)) / 2 decay to 0 at total_steps.
    constant: base_lr everywhere.
    """
    if kind not in SCHEDULES:
        raise ConfigError(f"unknown schedule '{kind}'", [f"choose one of {list(SCHEDULES)}"])
    if not 0 <= step <= total_steps:
        raise ContractError(f"step {step} outside [0, {total_steps}]")
    if not 0.0 <= warmup_ratio <= 1.0:
        raise ConfigError(f"warmup_ratio must lie in [0, 1], got {warmup_ratio}")
    if kind == "constant":
        return base_lr

    warmup = warmup_ratio * total_steps
    if step < warmup:
        return base_lr * step / warmup
    if total_steps <= warmup:
        return base_lr
    progress = (step - warmup) / (total_steps - warmup)
    return base_lr * (1.0 + math.cos(math.pi * progress)) / 2.0
