# src/training/warmstart.py
"""Initial-B warm start: reuse the up-projection banks of a converged ZipperSoft run."""
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Union

import numpy as np
import pandas as pd

from src.adapters import AdapterBank, Variant
from src.errors import CompatibilityError
from src.router import RouterParams
from src.tensorcore import matrix_from_dict

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class WarmStartSource:
    checkpoint: Union[str, Path, Dict[str, Any]]
    load_B_shared: bool = True
    load_B_spec: bool = True
    load_router: bool = True

    @property
    def any_enabled(self) -> bool:
        return self.load_B_shared or self.load_B_spec or self.load_router

    def load(self) -> Dict[str, Any]:
        if isinstance(self.checkpoint, dict):
            return self.checkpoint
        return json.loads(Path(self.checkpoint).read_text(encoding="utf-8"))


def _source_arrays(source: Mapping[str, Any]) -> Dict[str, np.ndarray]:
    return {name: matrix_from_dict(m) for name, m in source["params"].items()}


def compatibility_problems(
    target_banks: Mapping[str, AdapterBank],
    source: Mapping[str, Any],
    flags: WarmStartSource,
    target_routers: Optional[Mapping[str, RouterParams]] = None,
) -> List[str]:
    arrays = _source_arrays(source)
    problems: List[str] = []
    variant = source.get("variant")
    if variant not in (Variant.ZIPPER_SOFT.value, Variant.ZIPPER_HARD.value):
        problems.append(f"source variant must be a routed Zipper checkpoint, got {variant}")
    for layer, bank in target_banks.items():
        if bank.variant not in (Variant.ZIPPER_SOFT, Variant.ZIPPER_HARD):
            problems.append(f"{layer}: target variant {bank.variant.value} has no shared/specific B banks")
            continue
        wanted = {}
        if flags.load_B_shared:
            wanted[f"{layer}.lora.B_shared"] = bank.B_shared
        if flags.load_B_spec:
            wanted.update({f"{layer}.lora.B_spec.{l}": bank.B_spec[l] for l in bank.languages})
        for name, target in wanted.items():
            if name not in arrays:
                problems.append(f"{name}: missing from source")
            elif arrays[name].shape != target.shape:
                problems.append(f"{name}: source shape {arrays[name].shape} != target {target.shape}")
        if flags.load_B_spec:
            src_langs = {n.split(".B_spec.")[1] for n in arrays if n.startswith(f"{layer}.lora.B_spec.")}
            if src_langs and src_langs != set(bank.languages):
                problems.append(f"{layer}: source languages {sorted(src_langs)} != target {sorted(bank.languages)}")
        if flags.load_router and target_routers is not None and layer in target_routers:
            for name, target in target_routers[layer].named_arrays(f"{layer}.router.").items():
                if name not in arrays:
                    problems.append(f"{name}: missing from source")
                elif arrays[name].shape != target.shape:
                    problems.append(f"{name}: source shape {arrays[name].shape} != target {target.shape}")
    return problems


def initial_b_warmstart(
    target_banks: Mapping[str, AdapterBank],
    source: Mapping[str, Any],
    flags: WarmStartSource,
    target_routers: Optional[Dict[str, RouterParams]] = None,
) -> Dict[str, AdapterBank]:
    """
    Copies of ``target_banks`` with B_shared / B_spec taken from ``source``.

    A and every other array keep their fresh initialization. Router arrays are
    copied into ``target_routers`` (in place) when ``flags.load_router`` is set.
    """
    out = {layer: bank.copy() for layer, bank in target_banks.items()}
    if not flags.any_enabled:
        return out
    problems = compatibility_problems(target_banks, source, flags, target_routers)
    if problems:
        raise CompatibilityError(problems)
    arrays = _source_arrays(source)
    for layer, bank in out.items():
        if flags.load_B_shared:
            bank.B_shared = arrays[f"{layer}.lora.B_shared"].copy()
        if flags.load_B_spec:
            bank.B_spec = {l: arrays[f"{layer}.lora.B_spec.{l}"].copy() for l in bank.languages}
        bank.validate()
        if flags.load_router and target_routers is not None and layer in target_routers:
            prefix = f"{layer}.router."
            target_routers[layer].load_arrays({n: a.copy() for n, a in arrays.items() if n.startswith(prefix)}, prefix)
    logger.info("warm start: %d layers (B_shared=%s, B_spec=%s, router=%s)",
                len(out), flags.load_B_shared, flags.load_B_spec, flags.load_router)
    return out


def steps_to_threshold(history: Union[pd.DataFrame, Sequence[Mapping[str, Any]]], threshold: float,
                       column: str = "mse") -> Optional[int]:
    """First eval step at which the language-mean ``column`` is at or below ``threshold``."""
    frame = history if isinstance(history, pd.DataFrame) else pd.DataFrame(list(history))
    curve = frame.groupby("step")[column].mean().sort_index()
    hits = curve[curve <= threshold]
    return None if hits.empty else int(hits.index[0])
