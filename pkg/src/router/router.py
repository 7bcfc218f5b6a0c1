# src/router/router.py
import math
from dataclasses import dataclass
from typing import Any, Dict, Optional

import numpy as np

from src.errors import ContractError, ShapeError
from src.tensorcore import ParamScope, Var, add, layernorm, matmul, matrix_from_dict, matrix_to_dict, sigmoid

# LayerNorm epsilon on the LID embedding.
DEFAULT_ROUTER_EPS = 1e-5


@dataclass
class RouterParams:
    """LayerNorm affine + linear map from LID space to rank space."""
    W_r: np.ndarray
    b_r: np.ndarray
    gamma: np.ndarray
    beta: np.ndarray
    eps: float = DEFAULT_ROUTER_EPS

    def __post_init__(self) -> None:
        r, d_lid = self.W_r.shape
        expected = {"b_r": (r, 1), "gamma": (d_lid, 1), "beta": (d_lid, 1)}
        for name, shape in expected.items():
            if getattr(self, name).shape != shape:
                raise ShapeError(f"router {name} has shape {getattr(self, name).shape}, expected {shape}")
        if self.eps <= 0:
            raise ContractError(f"router eps must be positive, got {self.eps}")

    @property
    def rank(self) -> int:
        return self.W_r.shape[0]

    @property
    def d_lid(self) -> int:
        return self.W_r.shape[1]

    def named_arrays(self, prefix: str = "") -> Dict[str, np.ndarray]:
        return {f"{prefix}{n}": getattr(self, n) for n in ("W_r", "b_r", "gamma", "beta")}

    def load_arrays(self, arrays: Dict[str, np.ndarray], prefix: str = "") -> None:
        for n in ("W_r", "b_r", "gamma", "beta"):
            if f"{prefix}{n}" in arrays:
                setattr(self, n, arrays[f"{prefix}{n}"])
        self.__post_init__()

    def copy(self) -> "RouterParams":
        return RouterParams(self.W_r.copy(), self.b_r.copy(), self.gamma.copy(), self.beta.copy(), self.eps)

    def to_dict(self) -> Dict[str, Any]:
        out = {n: matrix_to_dict(a) for n, a in self.named_arrays().items()}
        out["eps"] = self.eps
        return out

    @classmethod
    def from_dict(cls, obj: Dict[str, Any]) -> "RouterParams":
        return cls(
            matrix_from_dict(obj["W_r"]),
            matrix_from_dict(obj["b_r"]),
            matrix_from_dict(obj["gamma"]),
            matrix_from_dict(obj["beta"]),
            float(obj.get("eps", DEFAULT_ROUTER_EPS)),
        )


def init_router(rank: int, d_lid: int, rng: np.random.Generator, eps: float = DEFAULT_ROUTER_EPS) -> RouterParams:
    """W_r ~ N(0, 1/d_lid), b_r = 0, gamma = 1, beta = 0, so p starts near 0.5."""
    return RouterParams(
        W_r=rng.standard_normal((rank, d_lid)) / math.sqrt(d_lid),
        b_r=np.zeros((rank, 1)),
        gamma=np.ones((d_lid, 1)),
        beta=np.zeros((d_lid, 1)),
        eps=eps,
    )


def route(params: RouterParams, e: Any, scope: Optional[ParamScope] = None, prefix: str = "") -> Var:
    """
    p = sigmoid(W_r · LayerNorm(e) + b_r), an r x 1 column in (0, 1).

    ``e`` may be a LidEmbedding, an array, or a Var (to differentiate through it).
    Router arrays are bound through ``scope`` under ``prefix``.
    """
    scope = scope if scope is not None else ParamScope()
    if not isinstance(e, Var):
        vector = getattr(e, "vector", e)
        e = scope.const(np.asarray(vector, dtype=np.float64).reshape(-1, 1))
    if e.shape != (params.d_lid, 1):
        raise ShapeError(f"LID embedding shape {e.shape} does not match router input ({params.d_lid}, 1)")
    gamma = scope.get(prefix + "gamma", params.gamma)
    beta = scope.get(prefix + "beta", params.beta)
    w_r = scope.get(prefix + "W_r", params.W_r)
    b_r = scope.get(prefix + "b_r", params.b_r)
    return sigmoid(add(matmul(w_r, layernorm(e, gamma, beta, params.eps)), b_r))


def route_values(params: RouterParams, e: Any) -> np.ndarray:
    return route(params, e, ParamScope.evaluation()).value.reshape(-1)
