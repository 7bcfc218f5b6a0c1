# src/router/lid.py
"""
Synthetic language-identity embeddings with a prescribed cosine structure.
"""
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Sequence, Tuple, Union

import numpy as np
import yaml

from src.errors import ContractError, ShapeError, StructureError
from src.tensorcore import rng_stream

logger = logging.getLogger(__name__)

MAX_CLIPPED_MASS = 0.05

DEFAULT_LANGUAGES = ("de", "es", "fr", "ru", "vi", "it", "en", "th", "ar", "ja", "ko", "pt")
ROMANCE = ("es", "fr", "it", "pt")


@dataclass
class LidEmbedding:
    language: str
    vector: np.ndarray

    def __post_init__(self) -> None:
        self.vector = np.asarray(self.vector, dtype=np.float64).reshape(-1)
        if not np.linalg.norm(self.vector) > 0:
            raise ContractError(f"LID embedding for '{self.language}' is the zero vector")


def default_similarity(languages: Sequence[str] = DEFAULT_LANGUAGES) -> np.ndarray:
    """
    Default LID target: 0.41 for (ja, ko) and (th, vi), 0.15 inside the Romance
    block and for (de, en), 0.05 for every other pair.
    """
    idx = {l: i for i, l in enumerate(languages)}
    sim = np.full((len(languages), len(languages)), 0.05)
    np.fill_diagonal(sim, 1.0)

    def set_pair(a: str, b: str, v: float) -> None:
        if a in idx and b in idx:
            sim[idx[a], idx[b]] = sim[idx[b], idx[a]] = v

    for i, a in enumerate(ROMANCE):
        for b in ROMANCE[i + 1:]:
            set_pair(a, b, 0.15)
    set_pair("de", "en", 0.15)
    set_pair("ja", "ko", 0.41)
    set_pair("th", "vi", 0.41)
    return sim


def check_similarity(sim: np.ndarray) -> np.ndarray:
    sim = np.asarray(sim, dtype=np.float64)
    if sim.ndim != 2 or sim.shape[0] != sim.shape[1]:
        raise StructureError(f"similarity target must be square, got shape {sim.shape}")
    if not np.allclose(sim, sim.T, rtol=0.0, atol=1e-12):
        raise StructureError("similarity target is not symmetric")
    if not np.allclose(np.diag(sim), 1.0, rtol=0.0, atol=1e-12):
        raise StructureError("similarity target must have a unit diagonal")
    if np.any(np.abs(sim) > 1.0):
        raise StructureError("similarity entries must lie in [-1, 1]")
    return sim


def psd_factor(sim: np.ndarray) -> np.ndarray:
    """
    Rows F_l with F Fᵀ ≈ sim and unit row norms.

    Negative eigenvalues are clipped at 0; more than MAX_CLIPPED_MASS of clipped
    eigenvalue mass means the target cannot be realized.
    """
    sim = check_similarity(sim)
    eigvals, eigvecs = np.linalg.eigh(sim)
    clipped = float(-eigvals[eigvals < 0].sum())
    if clipped > MAX_CLIPPED_MASS:
        raise StructureError(
            f"similarity target is not positive semidefinite: clipped eigenvalue mass {clipped:.4f} > {MAX_CLIPPED_MASS}"
        )
    if clipped > 0:
        logger.debug("psd_factor clipped eigenvalue mass %.3g", clipped)
    factor = eigvecs * np.sqrt(np.clip(eigvals, 0.0, None))
    norms = np.linalg.norm(factor, axis=1, keepdims=True)
    if np.any(norms == 0):
        raise StructureError("similarity target collapses a language to the zero vector")
    return factor / norms


def synth_lid_embeddings(
    target_sim: np.ndarray,
    languages: Sequence[str],
    d_lid: int,
    seed: int,
) -> Dict[str, LidEmbedding]:
    """Unit-norm embeddings whose pairwise cosines reproduce ``target_sim``."""
    n = len(languages)
    target_sim = np.asarray(target_sim, dtype=np.float64)
    if target_sim.shape != (n, n):
        raise ShapeError(f"similarity target {target_sim.shape} does not match {n} languages")
    if d_lid < n:
        raise StructureError(f"d_lid ({d_lid}) must be at least the language count ({n})")
    factor = psd_factor(target_sim)
    rng = rng_stream(seed, "lid")
    basis, _ = np.linalg.qr(rng.standard_normal((d_lid, n)))
    vectors = basis @ factor.T
    return {lang: LidEmbedding(lang, vectors[:, i]) for i, lang in enumerate(languages)}


def _vectors(embeddings: Union[Mapping[str, LidEmbedding], Iterable]) -> List[np.ndarray]:
    items = embeddings.values() if isinstance(embeddings, Mapping) else embeddings
    return [np.asarray(getattr(e, "vector", e), dtype=np.float64).reshape(-1) for e in items]


def cosine_similarity_matrix(embeddings: Union[Mapping[str, LidEmbedding], Iterable]) -> np.ndarray:
    vectors = _vectors(embeddings)
    if len({v.size for v in vectors}) > 1:
        raise ShapeError("embeddings differ in dimension")
    mat = np.stack(vectors)
    norms = np.linalg.norm(mat, axis=1)
    if np.any(norms == 0):
        raise ContractError("cosine similarity of a zero vector is undefined")
    unit = mat / norms[:, None]
    sim = unit @ unit.T
    sim = (sim + sim.T) / 2.0
    np.fill_diagonal(sim, 1.0)
    return sim


# ---------------- Files ----------------

def load_similarity(path: Union[str, Path]) -> Tuple[List[str], np.ndarray]:
    """Read a similarity target: YAML/JSON with "languages" and "matrix"."""
    with open(path, "r", encoding="utf-8") as fh:
        obj = yaml.safe_load(fh)
    if not isinstance(obj, dict) or set(obj) != {"languages", "matrix"}:
        raise StructureError(f"{path}: expected exactly the keys 'languages' and 'matrix'")
    languages = [str(l) for l in obj["languages"]]
    matrix = np.asarray(obj["matrix"], dtype=np.float64)
    if matrix.shape != (len(languages), len(languages)):
        raise StructureError(f"{path}: matrix shape {matrix.shape} does not match {len(languages)} languages")
    return languages, check_similarity(matrix)


def save_similarity(path: Union[str, Path], languages: Sequence[str], matrix: np.ndarray) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        yaml.safe_dump({"languages": list(languages), "matrix": np.asarray(matrix).tolist()}, fh, sort_keys=False)


def save_lid_embeddings(path: Union[str, Path], embeddings: Mapping[str, LidEmbedding]) -> None:
    payload = {lang: [float(v) for v in e.vector] for lang, e in embeddings.items()}
    Path(path).write_text(json.dumps(payload, indent=1, sort_keys=True), encoding="utf-8")


def load_lid_embeddings(path: Union[str, Path]) -> Dict[str, LidEmbedding]:
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    return {lang: LidEmbedding(lang, np.asarray(vec, dtype=np.float64)) for lang, vec in payload.items()}
