# src/toymodel/chunking.py
from typing import List, Optional, Tuple

import numpy as np

from src.errors import ConfigError


def chunk_split(total: int, chunk_len: int) -> List[Tuple[int, int]]:
    """Contiguous (start, length) segments covering [0, total); the last may be short."""
    if total < 1 or chunk_len < 1:
        raise ConfigError(f"chunk_split needs total >= 1 and chunk_len >= 1, got {total}, {chunk_len}")
    return [(start, min(chunk_len, total - start)) for start in range(0, total, chunk_len)]


def attention_mask(seq_len: int, n_utterances: int, chunk_len: Optional[int] = None) -> np.ndarray:
    """
    Boolean key x query mask for a batch laid out as consecutive column blocks.

    Frames attend only within their own utterance and chunk segment.
    """
    if chunk_len is not None and chunk_len <= 0:
        raise ConfigError(f"chunk_len must be positive, got {chunk_len}")
    segments = chunk_split(seq_len, chunk_len if chunk_len is not None else seq_len)
    labels = np.empty(seq_len * n_utterances, dtype=np.int64)
    seg_id = 0
    for u in range(n_utterances):
        for start, length in segments:
            offset = u * seq_len + start
            labels[offset:offset + length] = seg_id
            seg_id += 1
    return labels[:, None] == labels[None, :]
