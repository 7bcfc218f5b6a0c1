# src/synthdata/metrics.py
import logging
import math
from typing import Dict, Optional

import numpy as np

from src.errors import ContractError
from src.synthdata.dataset import Dataset
from src.toymodel import ToyModel

logger = logging.getLogger(__name__)


def prediction_mse(model: ToyModel, dataset: Dataset, language: str, chunk_len: Optional[int] = None) -> float:
    xs, ys = dataset.get(language)
    if xs.shape[0] == 0:
        raise ContractError(f"{dataset.split} split for '{language}' is empty")
    pred = model.predict(xs, language, chunk_len)
    return float(np.mean((pred - ys) ** 2))


def normalized(mse: float, reference_mse: float) -> float:
    if reference_mse > 0:
        return mse / reference_mse
    return 0.0 if mse == 0 else math.inf


def eval_metrics(
    model: ToyModel,
    dataset: Dataset,
    language: str,
    chunk_len: Optional[int] = None,
    reference: Optional[ToyModel] = None,
) -> Dict[str, float]:
    """
    MSE and normalized error (MSE over the reference model's MSE).

    ``reference`` defaults to the model with its encoder adapters switched off.
    """
    mse = prediction_mse(model, dataset, language, chunk_len)
    ref = reference if reference is not None else model.unadapted()
    ref_mse = mse if ref is model else prediction_mse(ref, dataset, language, chunk_len)
    if ref_mse == 0:
        logger.warning("reference MSE is zero for '%s'; normalized error degenerates", language)
    return {"mse": mse, "normalized_error": normalized(mse, ref_mse)}
