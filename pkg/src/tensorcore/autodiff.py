# src/tensorcore/autodiff.py
"""
Reverse-mode automatic differentiation over a closed set of matrix ops.

Every op takes ``Var`` handles (or raw arrays, which become constants on the
tape of the first Var operand) and returns a ``Var``. A ``Tape`` records each
op in execution order; ``Tape.backward`` replays it in reverse and returns the
gradients of every named parameter leaf.

Usage:
    tape = Tape()
    a = tape.param(np.ones((2, 2)), "a")
    loss = sum_all(hadamard(a, a))
    grads = tape.backward(loss)      # {"a": 2 * ones}
"""
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from src.errors import ContractError, ShapeError
from src.tensorcore.matrix import as_matrix

# Sigmoid output is clipped into the open interval (0, 1).
_SIG_LO = np.finfo(np.float64).tiny
_SIG_HI = np.nextafter(1.0, 0.0)


@dataclass
class Node:
    op: str
    inputs: Tuple[int, ...]
    value: np.ndarray
    ctx: Dict[str, Any] = field(default_factory=dict)
    name: Optional[str] = None
    needs_grad: bool = False


class Var:
    """Handle on a tape node. ``value`` is the node's Matrix."""

    __slots__ = ("tape", "index", "value")
    # keep numpy from broadcasting over Var operands
    __array_ufunc__ = None

    def __init__(self, tape: "Tape", index: int, value: np.ndarray):
        self.tape = tape
        self.index = index
        self.value = value

    @property
    def shape(self) -> Tuple[int, int]:
        return self.value.shape

    @property
    def T(self) -> "Var":
        return transpose(self)

    def __add__(self, other): return add(self, other)
    def __radd__(self, other): return add(other, self)
    def __sub__(self, other): return sub(self, other)
    def __rsub__(self, other): return sub(other, self)
    def __neg__(self): return scale(self, -1.0)
    def __matmul__(self, other): return matmul(self, other)
    def __rmatmul__(self, other): return matmul(other, self)

    def __mul__(self, other):
        if np.isscalar(other):
            return scale(self, float(other))
        return hadamard(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __repr__(self) -> str:
        return f"Var(index={self.index}, shape={self.shape})"


Operand = Union[Var, np.ndarray, float, int, Sequence]


class Tape:
    """
    Ordered record of primitive ops.

    Args:
        record: when False the tape keeps no nodes (evaluation only) and
            ``backward`` is unavailable.
    """

    def __init__(self, record: bool = True):
        self.record_enabled = record
        self.nodes: List[Node] = []
        self.adjoints: List[Optional[np.ndarray]] = []
        self.params: Dict[str, int] = {}

    # ---------------- Leaves ----------------

    def param(self, value: Any, name: str) -> Var:
        """Trainable leaf, addressable by ``name`` after backward."""
        if name in self.params:
            raise ContractError(f"parameter '{name}' bound twice on the same tape")
        var = self._push(Node("leaf", (), as_matrix(value, name), name=name, needs_grad=True))
        if self.record_enabled:
            self.params[name] = var.index
        return var

    def const(self, value: Any) -> Var:
        return self._push(Node("const", (), as_matrix(value)))

    # ---------------- Recording ----------------

    def record(self, op: str, inputs: Sequence[Var], value: np.ndarray, **ctx: Any) -> Var:
        needs = any(self.nodes[v.index].needs_grad for v in inputs) if self.record_enabled else False
        return self._push(Node(op, tuple(v.index for v in inputs), value, ctx, needs_grad=needs))

    def _push(self, node: Node) -> Var:
        if not self.record_enabled:
            return Var(self, -1, node.value)
        self.nodes.append(node)
        self.adjoints.append(None)
        return Var(self, len(self.nodes) - 1, node.value)

    # ---------------- Backward ----------------

    def backward(self, loss: Var) -> Dict[str, np.ndarray]:
        """
        Populate adjoints from a scalar loss node.

        Returns:
            Gradient per parameter name; parameters the loss does not depend
            on get an exact zero matrix.
        """
        if not self.record_enabled:
            raise ContractError("backward called on a non-recording tape")
        if loss.tape is not self:
            raise ContractError("loss belongs to a different tape")
        if loss.value.shape != (1, 1):
            raise ContractError(f"backward needs a scalar (1x1) loss, got shape {loss.value.shape}")

        self.adjoints = [None] * len(self.nodes)
        self.adjoints[loss.index] = np.ones((1, 1))
        for i in range(loss.index, -1, -1):
            node = self.nodes[i]
            g = self.adjoints[i]
            if g is None or not node.needs_grad or not node.inputs:
                continue
            input_values = [self.nodes[j].value for j in node.inputs]
            input_grads = _VJP[node.op](g, node, input_values)
            for j, gj in zip(node.inputs, input_grads):
                if gj is None or not self.nodes[j].needs_grad:
                    continue
                prev = self.adjoints[j]
                self.adjoints[j] = gj if prev is None else prev + gj
        return {name: self.adjoint(idx) for name, idx in self.params.items()}

    def adjoint(self, index: int) -> np.ndarray:
        g = self.adjoints[index]
        return np.zeros_like(self.nodes[index].value) if g is None else g

    def grad(self, name: str) -> np.ndarray:
        return self.adjoint(self.params[name])


# ---------------- Operand handling ----------------

def _tape_of(*operands: Any) -> Tape:
    for op in operands:
        if isinstance(op, Var):
            return op.tape
    return Tape()


def _lift(x: Any, tape: Tape) -> Var:
    if isinstance(x, Var):
        if x.tape is not tape:
            raise ContractError("operands live on different tapes")
        return x
    return tape.const(x)


def lift_all(*operands: Any) -> Tuple[Tape, List[Var]]:
    """Put every operand on one tape (the first Var's, or a fresh one)."""
    tape = _tape_of(*operands)
    return tape, [_lift(x, tape) for x in operands]


def _same_shape(kind: str, a: Var, b: Var) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{kind}: shape mismatch {a.shape} vs {b.shape}")


# ---------------- VJP registry ----------------

VjpFn = Callable[[np.ndarray, Node, List[np.ndarray]], Tuple[Optional[np.ndarray], ...]]
_VJP: Dict[str, VjpFn] = {}


def _vjp(op: str) -> Callable[[VjpFn], VjpFn]:
    def register(fn: VjpFn) -> VjpFn:
        _VJP[op] = fn
        return fn
    return register


@contextmanager
def override_vjp(op: str, fn: VjpFn) -> Iterator[None]:
    """Temporarily replace the backward rule of ``op``."""
    if op not in _VJP:
        raise ContractError(f"unknown op '{op}'")
    previous = _VJP[op]
    _VJP[op] = fn
    try:
        yield
    finally:
        _VJP[op] = previous


def registered_ops() -> List[str]:
    return sorted(_VJP)


# ---------------- Linear algebra ----------------

def matmul(a: Operand, b: Operand) -> Var:
    tape, (a, b) = lift_all(a, b)
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    return tape.record("matmul", (a, b), a.value @ b.value)


@_vjp("matmul")
def _matmul_vjp(g, node, xs):
    a, b = xs
    return g @ b.T, a.T @ g


def transpose(a: Operand) -> Var:
    tape, (a,) = lift_all(a)
    return tape.record("transpose", (a,), a.value.T.copy())


@_vjp("transpose")
def _transpose_vjp(g, node, xs):
    return (g.T,)


# ---------------- Elementwise ----------------

def add(a: Operand, b: Operand) -> Var:
    tape, (a, b) = lift_all(a, b)
    _same_shape("add", a, b)
    return tape.record("add", (a, b), a.value + b.value)


@_vjp("add")
def _add_vjp(g, node, xs):
    return g, g


def sub(a: Operand, b: Operand) -> Var:
    tape, (a, b) = lift_all(a, b)
    _same_shape("sub", a, b)
    return tape.record("sub", (a, b), a.value - b.value)


@_vjp("sub")
def _sub_vjp(g, node, xs):
    return g, -g


def hadamard(a: Operand, b: Operand) -> Var:
    tape, (a, b) = lift_all(a, b)
    _same_shape("hadamard", a, b)
    return tape.record("hadamard", (a, b), a.value * b.value)


@_vjp("hadamard")
def _hadamard_vjp(g, node, xs):
    a, b = xs
    return g * b, g * a


def scale(a: Operand, c: float) -> Var:
    tape, (a,) = lift_all(a)
    return tape.record("scale", (a,), a.value * c, c=float(c))


@_vjp("scale")
def _scale_vjp(g, node, xs):
    return (g * node.ctx["c"],)


def affine(a: Operand, mul: float, shift: float) -> Var:
    """mul * a + shift, elementwise."""
    tape, (a,) = lift_all(a)
    return tape.record("affine", (a,), a.value * mul + shift, mul=float(mul))


@_vjp("affine")
def _affine_vjp(g, node, xs):
    return (g * node.ctx["mul"],)


def _sigmoid_values(x: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(x))
    s = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return np.clip(s, _SIG_LO, _SIG_HI)


def sigmoid(a: Operand) -> Var:
    tape, (a,) = lift_all(a)
    s = _sigmoid_values(a.value)
    return tape.record("sigmoid", (a,), s)


@_vjp("sigmoid")
def _sigmoid_vjp(g, node, xs):
    s = node.value
    return (g * s * (1.0 - s),)


def silu(a: Operand) -> Var:
    tape, (a,) = lift_all(a)
    s = _sigmoid_values(a.value)
    return tape.record("silu", (a,), a.value * s, s=s)


@_vjp("silu")
def _silu_vjp(g, node, xs):
    (x,) = xs
    s = node.ctx["s"]
    return (g * s * (1.0 + x * (1.0 - s)),)


def relu(a: Operand) -> Var:
    tape, (a,) = lift_all(a)
    return tape.record("relu", (a,), np.maximum(a.value, 0.0))


@_vjp("relu")
def _relu_vjp(g, node, xs):
    (x,) = xs
    return (g * (x > 0),)


_ELEMENTWISE = {
    "add": add,
    "sub": sub,
    "hadamard": hadamard,
    "scale": scale,
    "sigmoid": sigmoid,
    "silu": silu,
    "relu": relu,
}


def elementwise(kind: str, *operands: Any) -> Var:
    """Dispatch one of add, sub, hadamard, scale, sigmoid, silu, relu."""
    try:
        fn = _ELEMENTWISE[kind]
    except KeyError:
        raise ContractError(f"unknown elementwise kind '{kind}'") from None
    return fn(*operands)


def ste_threshold(p: Operand, tau: float) -> Var:
    """Forward: 1 where p >= tau else 0. Backward: identity (straight-through)."""
    tape, (p,) = lift_all(p)
    return tape.record("ste_threshold", (p,), (p.value >= tau).astype(np.float64), tau=float(tau))


@_vjp("ste_threshold")
def _ste_vjp(g, node, xs):
    return (g,)


# ---------------- Column structure ----------------

def concat_cols(*parts: Operand) -> Var:
    tape, vs = lift_all(*parts)
    rows = {v.shape[0] for v in vs}
    if len(rows) != 1:
        raise ShapeError(f"concat_cols: row mismatch {[v.shape for v in vs]}")
    widths = [v.shape[1] for v in vs]
    return tape.record("concat_cols", vs, np.concatenate([v.value for v in vs], axis=1), widths=widths)


@_vjp("concat_cols")
def _concat_cols_vjp(g, node, xs):
    out, start = [], 0
    for w in node.ctx["widths"]:
        out.append(g[:, start:start + w])
        start += w
    return tuple(out)


def select_cols(a: Operand, start: int, count: int) -> Var:
    tape, (a,) = lift_all(a)
    if start < 0 or count < 0 or start + count > a.shape[1]:
        raise ShapeError(f"select_cols: [{start}, {start + count}) out of range for {a.shape}")
    return tape.record("select_cols", (a,), a.value[:, start:start + count].copy(), start=start, count=count)


@_vjp("select_cols")
def _select_cols_vjp(g, node, xs):
    (a,) = xs
    out = np.zeros_like(a)
    start = node.ctx["start"]
    out[:, start:start + node.ctx["count"]] = g
    return (out,)


def _as_row(w: np.ndarray) -> np.ndarray:
    return w.reshape(1, -1)


def diag_scale_cols(m: Operand, w: Operand) -> Var:
    """Column i of the result is w_i times column i of m (m @ diag(w))."""
    tape, (m, w) = lift_all(m, w)
    if w.value.size != m.shape[1] or 1 not in w.shape:
        raise ShapeError(f"diag_scale_cols: weight shape {w.shape} does not fit {m.shape}")
    return tape.record("diag_scale_cols", (m, w), m.value * _as_row(w.value))


@_vjp("diag_scale_cols")
def _diag_scale_cols_vjp(g, node, xs):
    m, w = xs
    return g * _as_row(w), np.sum(g * m, axis=0).reshape(w.shape)


def add_col(m: Operand, c: Operand) -> Var:
    """Add column vector c to every column of m."""
    tape, (m, c) = lift_all(m, c)
    if c.shape != (m.shape[0], 1):
        raise ShapeError(f"add_col: column shape {c.shape} does not fit {m.shape}")
    return tape.record("add_col", (m, c), m.value + c.value)


@_vjp("add_col")
def _add_col_vjp(g, node, xs):
    return g, np.sum(g, axis=1, keepdims=True)


def stack_frames(a: Operand, f: int) -> Var:
    """
    Stack groups of ``f`` consecutive columns into single columns.

    A d x T input becomes (f*d) x ceil(T/f); the last group is zero-padded.
    """
    if f < 1:
        raise ShapeError(f"stack_frames: factor must be >= 1, got {f}")
    tape, (a,) = lift_all(a)
    d, t = a.shape
    pad = (-t) % f
    padded = np.concatenate([a.value, np.zeros((d, pad))], axis=1) if pad else a.value
    n = (t + pad) // f
    out = padded.T.reshape(n, f * d).T.copy()
    return tape.record("stack_frames", (a,), out, f=f, pad=pad)


@_vjp("stack_frames")
def _stack_frames_vjp(g, node, xs):
    (a,) = xs
    d, t = a.shape
    f, pad = node.ctx["f"], node.ctx["pad"]
    back = g.T.reshape(t + pad, d).T
    return (back[:, :t].copy(),)


# ---------------- Normalization / reductions ----------------

def layernorm(x: Operand, gamma: Operand, beta: Operand, eps: float = 1e-5) -> Var:
    """
    Normalize every column of x to zero mean / unit population variance,
    then apply the affine map gamma * xhat + beta (gamma, beta: d x 1).
    """
    if eps <= 0:
        raise ContractError(f"layernorm: eps must be positive, got {eps}")
    tape, (x, gamma, beta) = lift_all(x, gamma, beta)
    d = x.shape[0]
    if gamma.shape != (d, 1) or beta.shape != (d, 1):
        raise ShapeError(f"layernorm: gamma {gamma.shape} / beta {beta.shape} do not fit input {x.shape}")
    mu = np.mean(x.value, axis=0, keepdims=True)
    centered = x.value - mu
    var = np.mean(centered * centered, axis=0, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv_std
    return tape.record("layernorm", (x, gamma, beta), gamma.value * xhat + beta.value, xhat=xhat, inv_std=inv_std)


@_vjp("layernorm")
def _layernorm_vjp(g, node, xs):
    _, gamma, _ = xs
    xhat, inv_std = node.ctx["xhat"], node.ctx["inv_std"]
    dxhat = g * gamma
    dx = inv_std * (dxhat - np.mean(dxhat, axis=0, keepdims=True)
                    - xhat * np.mean(dxhat * xhat, axis=0, keepdims=True))
    return dx, np.sum(g * xhat, axis=1, keepdims=True), np.sum(g, axis=1, keepdims=True)


def masked_softmax_cols(x: Operand, mask: Optional[np.ndarray] = None) -> Var:
    """
    Softmax down each column. ``mask[i, j]`` False removes entry i from column j.
    """
    tape, (x,) = lift_all(x)
    if mask is None:
        z = x.value
    else:
        if mask.shape != x.shape:
            raise ShapeError(f"masked_softmax_cols: mask {mask.shape} does not fit {x.shape}")
        if not np.all(mask.any(axis=0)):
            raise ContractError("masked_softmax_cols: a column has no admissible entry")
        z = np.where(mask, x.value, -np.inf)
    e = np.exp(z - np.max(z, axis=0, keepdims=True))
    s = e / np.sum(e, axis=0, keepdims=True)
    return tape.record("softmax_cols", (x,), s)


def softmax_cols(x: Operand) -> Var:
    return masked_softmax_cols(x, None)


@_vjp("softmax_cols")
def _softmax_vjp(g, node, xs):
    s = node.value
    return (s * (g - np.sum(s * g, axis=0, keepdims=True)),)


def mean_cols(x: Operand) -> Var:
    """Average over columns: d x n -> d x 1."""
    tape, (x,) = lift_all(x)
    if x.shape[1] == 0:
        raise ShapeError("mean_cols: empty input")
    return tape.record("mean_cols", (x,), np.mean(x.value, axis=1, keepdims=True))


@_vjp("mean_cols")
def _mean_cols_vjp(g, node, xs):
    (x,) = xs
    return (np.repeat(g, x.shape[1], axis=1) / x.shape[1],)


def sum_all(x: Operand) -> Var:
    tape, (x,) = lift_all(x)
    return tape.record("sum_all", (x,), np.sum(x.value).reshape(1, 1))


@_vjp("sum_all")
def _sum_all_vjp(g, node, xs):
    (x,) = xs
    return (np.full(x.shape, g[0, 0]),)


def mse(pred: Operand, target: Operand) -> Var:
    """Mean squared error as a 1x1 node."""
    diff = sub(pred, target)
    return scale(sum_all(hadamard(diff, diff)), 1.0 / diff.value.size)


# ---------------- Finite differences ----------------

def finite_diff_grad(f: Callable[[np.ndarray], float], p: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """
    Central-difference gradient of scalar f at p, one entry at a time.
    """
    if h <= 0:
        raise ContractError(f"finite_diff_grad: step must be positive, got {h}")
    p = as_matrix(p).copy()
    grad = np.zeros_like(p)
    for idx in np.ndindex(p.shape):
        orig = p[idx]
        p[idx] = orig + h
        f_plus = float(f(p))
        p[idx] = orig - h
        f_minus = float(f(p))
        p[idx] = orig
        grad[idx] = (f_plus - f_minus) / (2.0 * h)
    return grad


def relative_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-6) -> float:
    """max |a - b| scaled by the larger of the two max-magnitudes (floored)."""
    denom = max(float(np.max(np.abs(a), initial=0.0)), float(np.max(np.abs(b), initial=0.0)), floor)
    return float(np.max(np.abs(a - b), initial=0.0)) / denom
