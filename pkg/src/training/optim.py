# src/training/optim.py
from dataclasses import dataclass, field
from typing import Any, Dict, Mapping

import numpy as np

from src.errors import ShapeError
from src.tensorcore import matrix_from_dict, matrix_to_dict


@dataclass
class AdamState:
    """
    Adam moments per parameter name.

    Step counts are kept per parameter: a parameter absent from a step's
    gradients (never bound on that step's tape) is not touched at all.
    """
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)
    steps: Dict[str, int] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "beta1": self.beta1,
            "beta2": self.beta2,
            "eps": self.eps,
            "m": {k: matrix_to_dict(a) for k, a in sorted(self.m.items())},
            "v": {k: matrix_to_dict(a) for k, a in sorted(self.v.items())},
            "steps": dict(sorted(self.steps.items())),
        }

    @classmethod
    def from_dict(cls, obj: Mapping[str, Any]) -> "AdamState":
        return cls(
            beta1=float(obj["beta1"]),
            beta2=float(obj["beta2"]),
            eps=float(obj["eps"]),
            m={k: matrix_from_dict(a) for k, a in obj["m"].items()},
            v={k: matrix_from_dict(a) for k, a in obj["v"].items()},
            steps={k: int(s) for k, s in obj["steps"].items()},
        )


def optim_step(
    params: Mapping[str, np.ndarray],
    grads: Mapping[str, np.ndarray],
    state: AdamState,
    lr: float,
) -> Dict[str, np.ndarray]:
    """
    One bias-corrected Adam update for every parameter named in ``grads``.

    Returns the updated arrays (new objects); ``params`` is left untouched.
    """
    updated: Dict[str, np.ndarray] = {}
    for name, g in grads.items():
        p = params[name]
        if g.shape != p.shape:
            raise ShapeError(f"gradient for {name} has shape {g.shape}, parameter is {p.shape}")
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m, v = np.zeros_like(p), np.zeros_like(p)
        t = state.steps.get(name, 0) + 1
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * (g * g)
        m_hat = m / (1.0 - state.beta1 ** t)
        v_hat = v / (1.0 - state.beta2 ** t)
        updated[name] = p - lr * m_hat / (np.sqrt(v_hat) + state.eps)
        state.m[name], state.v[name], state.steps[name] = m, v, t
    return updated
