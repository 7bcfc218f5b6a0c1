# src/checks/gradcheck.py
"""
Finite-difference gradient suites.

Every check compares tape gradients with central differences and returns a
status row; nothing here raises on a failing comparison.
"""
import logging
from contextlib import ExitStack
from dataclasses import replace
from typing import Any, Callable, Dict, Iterable, List, Mapping, Optional, Sequence

import numpy as np

from src.adapters import AdapterBank, BoundBank, HardPolarity, LoraConfig, Variant, adapted_forward, gradient_arrays, init_bank
from src.errors import ConfigError
from src.router import LidEmbedding, init_router, route, route_values
from src.tensorcore import (
    ParamScope,
    Tape,
    Var,
    add,
    add_col,
    affine,
    concat_cols,
    diag_scale_cols,
    finite_diff_grad,
    hadamard,
    layernorm,
    masked_softmax_cols,
    matmul,
    mean_cols,
    mse,
    override_vjp,
    relative_error,
    relu,
    rng_stream,
    scale,
    select_cols,
    sigmoid,
    silu,
    softmax_cols,
    stack_frames,
    ste_threshold,
    sub,
    sum_all,
    transpose,
)
from src.toymodel import ModelConfig, ToyModel

logger = logging.getLogger(__name__)

SCOPES = ("ops", "adapters", "router", "model")
GRAD_TOL = 1e-4
FD_STEP = 1e-5

Builder = Callable[[ParamScope], Var]


class _PerturbedScope(ParamScope):
    """Evaluation scope that substitutes overridden values for named arrays."""

    def __init__(self, overrides: Mapping[str, np.ndarray]):
        super().__init__(Tape(record=False))
        self.overrides = overrides

    def get(self, name: str, value: np.ndarray) -> Var:
        return super().get(name, self.overrides.get(name, value))


def _row(check: str, ok: bool, err: float, detail: str) -> Dict[str, Any]:
    return {"check": check, "status": "pass" if ok else "fail", "max_rel_err": err, "detail": detail}


def gradient_check(
    check: str,
    build: Builder,
    arrays: Mapping[str, np.ndarray],
    fd_names: Optional[Iterable[str]] = None,
    h: float = FD_STEP,
    tol: float = GRAD_TOL,
) -> Dict[str, Any]:
    """
    Tape gradient vs central differences for every array in ``fd_names``.

    ``build`` must fetch each array through ``scope.get(name, value)``.
    """
    scope = ParamScope(Tape(), lambda name: name in arrays)
    try:
        grads = scope.tape.backward(build(scope))
    except Exception as exc:
        return _row(check, False, float("inf"), f"backward raised {type(exc).__name__}: {exc}")

    worst, worst_name = 0.0, ""
    for name in (fd_names if fd_names is not None else arrays):
        value = arrays[name]

        def f(p: np.ndarray, name: str = name) -> float:
            return float(build(_PerturbedScope({name: p})).value[0, 0])

        numeric = finite_diff_grad(f, value, h)
        err = relative_error(grads.get(name, np.zeros_like(value)), numeric)
        if err >= worst:
            worst, worst_name = err, name
    return _row(check, worst < tol, worst, worst_name)


def _away_from_zero(rng: np.random.Generator, shape) -> np.ndarray:
    x = rng.standard_normal(shape)
    return x + np.where(x >= 0, 0.2, -0.2)


# ---------------- ops ----------------

def _op_cases(rng: np.random.Generator) -> Dict[str, tuple]:
    a, b = rng.standard_normal((4, 3)), rng.standard_normal((3, 5))
    c, d = rng.standard_normal((4, 3)), rng.standard_normal((4, 3))
    col, w = rng.standard_normal((4, 1)), rng.standard_normal((3, 1))
    frames = rng.standard_normal((3, 7))
    mask = np.tril(np.ones((5, 5), dtype=bool))
    scores = rng.standard_normal((5, 5))
    gamma, beta = rng.standard_normal((4, 1)), rng.standard_normal((4, 1))
    kinked = _away_from_zero(rng, (4, 3))
    return {
        "matmul": ({"a": a, "b": b}, lambda s: matmul(s.get("a", a), s.get("b", b))),
        "transpose": ({"a": a}, lambda s: transpose(s.get("a", a))),
        "add": ({"c": c, "d": d}, lambda s: add(s.get("c", c), s.get("d", d))),
        "sub": ({"c": c, "d": d}, lambda s: sub(s.get("c", c), s.get("d", d))),
        "hadamard": ({"c": c, "d": d}, lambda s: hadamard(s.get("c", c), s.get("d", d))),
        "scale": ({"c": c}, lambda s: scale(s.get("c", c), -1.7)),
        "affine": ({"c": c}, lambda s: affine(s.get("c", c), -1.0, 1.0)),
        "sigmoid": ({"c": c}, lambda s: sigmoid(s.get("c", c))),
        "silu": ({"c": c}, lambda s: silu(s.get("c", c))),
        "relu": ({"k": kinked}, lambda s: relu(s.get("k", kinked))),
        "concat_cols": ({"c": c, "col": col}, lambda s: concat_cols(s.get("c", c), s.get("col", col))),
        "select_cols": ({"b": b}, lambda s: select_cols(s.get("b", b), 1, 3)),
        "diag_scale_cols": ({"c": c, "w": w}, lambda s: diag_scale_cols(s.get("c", c), s.get("w", w))),
        "add_col": ({"c": c, "col": col}, lambda s: add_col(s.get("c", c), s.get("col", col))),
        "stack_frames": ({"f": frames}, lambda s: stack_frames(s.get("f", frames), 3)),
        "layernorm": ({"c": c, "gamma": gamma, "beta": beta},
                      lambda s: layernorm(s.get("c", c), s.get("gamma", gamma), s.get("beta", beta))),
        "softmax_cols": ({"x": scores}, lambda s: masked_softmax_cols(s.get("x", scores), mask)),
        "softmax_cols.unmasked": ({"x": scores}, lambda s: softmax_cols(s.get("x", scores))),
        "mean_cols": ({"b": b}, lambda s: mean_cols(s.get("b", b))),
        "sum_all": ({"b": b}, lambda s: sum_all(s.get("b", b))),
        "mse": ({"c": c}, lambda s: mse(s.get("c", c), d)),
    }


def _ste_identity_row(rng: np.random.Generator) -> Dict[str, Any]:
    """ste_threshold passes the upstream gradient through unchanged."""
    p = rng.uniform(0.05, 0.95, (6, 1))
    upstream = rng.standard_normal((6, 1))
    scope = ParamScope(Tape(), lambda name: name == "p")
    grads = scope.tape.backward(sum_all(hadamard(ste_threshold(scope.get("p", p), 0.5), upstream)))
    err = relative_error(grads["p"], upstream)
    return _row("ops.ste_threshold", err == 0.0, err, "identity backward")


def ops_suite(seed: int = 0) -> List[Dict[str, Any]]:
    rows = []
    for name, (arrays, fn) in _op_cases(rng_stream(seed, "gradcheck", "ops")).items():
        weights = rng_stream(seed, "gradcheck", "ops", name)
        out_shape = fn(ParamScope.evaluation()).shape
        w = weights.standard_normal(out_shape)
        rows.append(gradient_check(f"ops.{name}", lambda s, fn=fn, w=w: sum_all(hadamard(fn(s), w)), arrays))
    rows.append(_ste_identity_row(rng_stream(seed, "gradcheck", "ste")))
    return rows


# ---------------- adapters ----------------

def _populated_bank(variant: Variant, cfg: LoraConfig, languages: Sequence[str], rng: np.random.Generator) -> AdapterBank:
    """Fresh bank with non-zero B banks so every path carries gradient."""
    bank = init_bank(variant, cfg, languages, rng)
    updates = {
        name: rng.standard_normal(value.shape) * 0.5
        for name, value in bank.named_arrays().items()
        if name.startswith("B_")
    }
    bank.load_arrays(updates)
    return bank


def adapters_suite(seed: int = 0, polarity: Optional[str] = None) -> List[Dict[str, Any]]:
    rows = []
    languages = ("en", "fr")
    for variant in Variant:
        rng = rng_stream(seed, "gradcheck", "adapters", variant.value)
        cfg = LoraConfig(rank=4, alpha=8.0, d_in=6, d_out=5, top_k=2, shared_ranks=1, fly_density=0.5)
        if polarity is not None:
            cfg = replace(cfg, hard_polarity=HardPolarity(polarity))
        bank = _populated_bank(variant, cfg, languages, rng)
        w0 = rng.standard_normal((5, 6))
        x = rng.standard_normal((6, 3))
        p = rng.uniform(0.1, 0.9, (4, 1))
        weights = rng.standard_normal((5, 3))

        def build(scope: ParamScope, bank=bank, w0=w0, x=x, p=p, weights=weights, variant=variant) -> Var:
            router_p = scope.get("p", p) if variant.routed else None
            out = adapted_forward(w0, BoundBank(bank, scope), "fr", scope.const(x), router_p)
            return sum_all(hadamard(out, weights))

        arrays = dict(gradient_arrays(bank))
        arrays = {n: a for n, a in arrays.items() if not n.endswith(".en")}
        if variant.routed:
            arrays["p"] = p
        fd_names = [n for n in arrays if not (variant == Variant.ZIPPER_HARD and n == "p")]
        rows.append(gradient_check(f"adapters.{variant.value}", build, arrays, fd_names))
        if variant == Variant.ZIPPER_HARD:
            rows.append(_hard_mask_oracle_row(bank, w0, x, p, weights))
    return rows


def _hard_mask_oracle_row(bank: AdapterBank, w0, x, p, weights) -> Dict[str, Any]:
    """dL/dp through the threshold equals dL/ds of the same loss with the binary mask s as a leaf."""
    s = (p >= bank.config.tau).astype(np.float64)
    soft = replace(bank, variant=Variant.ZIPPER_SOFT)
    if bank.config.hard_polarity == HardPolarity.SHARED_ON_ONE:
        soft = replace(soft, B_shared=bank.B_spec["fr"], B_spec={**bank.B_spec, "fr": bank.B_shared})

    def loss(scope: ParamScope, b: AdapterBank, value: np.ndarray) -> Var:
        out = adapted_forward(w0, BoundBank(b, scope), "fr", scope.const(x), scope.get("p", value))
        return sum_all(hadamard(out, weights))

    hard_scope = ParamScope(Tape(), lambda name: name == "p")
    ste_grad = hard_scope.tape.backward(loss(hard_scope, bank, p))["p"]
    leaf_scope = ParamScope(Tape(), lambda name: name == "p")
    oracle = leaf_scope.tape.backward(loss(leaf_scope, soft, s))["p"]
    err = relative_error(ste_grad, oracle)
    return _row("adapters.ZipperHard.ste_oracle", err < 1e-12, err, "identity-gate oracle")


# ---------------- router ----------------

def router_suite(seed: int = 0) -> List[Dict[str, Any]]:
    rng = rng_stream(seed, "gradcheck", "router")
    rank, d_lid = 4, 5
    router = init_router(rank, d_lid, rng)
    router.b_r = rng.standard_normal((rank, 1)) * 0.3
    router.gamma = 1.0 + 0.2 * rng.standard_normal((d_lid, 1))
    router.beta = 0.2 * rng.standard_normal((d_lid, 1))
    e = rng.standard_normal((d_lid, 1))
    rows = []

    arrays = dict(router.named_arrays("router."))
    arrays["e"] = e
    w = rng.standard_normal((rank, 1))
    rows.append(gradient_check("router.route", lambda s: sum_all(hadamard(route(router, s.get("e", e), s, "router."), w)), arrays))

    cfg = LoraConfig(rank=rank, alpha=8.0, d_in=6, d_out=5)
    bank = _populated_bank(Variant.ZIPPER_SOFT, cfg, ("en", "fr"), rng)
    w0, x = rng.standard_normal((5, 6)), rng.standard_normal((6, 3))
    target = rng.standard_normal((5, 3))

    def soft_path(scope: ParamScope) -> Var:
        p = route(router, scope.get("e", e), scope, "router.")
        out = adapted_forward(w0, BoundBank(bank, scope, "lora."), "en", scope.const(x), p)
        return mse(out, target)

    path_arrays = {**arrays, **{n: a for n, a in gradient_arrays(bank, "lora.").items() if not n.endswith(".fr")}}
    rows.append(gradient_check("router.soft_path", soft_path, path_arrays))
    return rows


# ---------------- model ----------------

def tiny_model_config(languages: Sequence[str] = ("en", "fr")) -> ModelConfig:
    return ModelConfig(
        d=6, d_feat=5, depth=1, seq_len=4, stack=2, target_dim=3, ffn_mult=2,
        chunk_lengths=(2, 4), languages=tuple(languages),
        lora=LoraConfig(rank=4, alpha=8.0, top_k=2, shared_ranks=2, fly_density=0.5), d_lid=4,
    )


def _tiny_model(variant: Variant, seed: int) -> ToyModel:
    cfg = tiny_model_config()
    lid_rng = rng_stream(seed, "gradcheck", "lid")
    lid = {l: LidEmbedding(l, lid_rng.standard_normal(cfg.d_lid)) for l in cfg.languages}
    model = ToyModel.initialize(cfg, seed).attach_adapters(variant, seed, lid)
    rng = rng_stream(seed, "gradcheck", "model", variant.value)
    updates = {n: rng.standard_normal(a.shape) * 0.3 for n, a in model.named_arrays().items()
               if ".lora.B_" in n or n.startswith("prompt.")}
    model.assign(updates)
    return model


def _model_ste_oracle_row(model: ToyModel, xs, ys, language: str) -> Dict[str, Any]:
    """Router gradients of a ZipperHard model vs J_routerᵀ·dL/ds with the masks as leaves."""
    masks = {
        layer: (route_values(r, model.lid[language]).reshape(-1, 1) >= model.banks[layer].config.tau).astype(np.float64)
        for layer, r in model.routers.items()
    }

    class _MaskFed(ToyModel):
        def _router_p(self, scope, layer, lang):
            return scope.get(f"{layer}.mask", masks[layer])

    soft_banks = {}
    for layer, bank in model.banks.items():
        soft = replace(bank, variant=Variant.ZIPPER_SOFT)
        if bank.config.hard_polarity == HardPolarity.SHARED_ON_ONE:
            soft = replace(soft, B_shared=bank.B_spec[language], B_spec={**bank.B_spec, language: bank.B_shared})
        soft_banks[layer] = soft
    fed = _MaskFed(model.config, model.params, model.head_bank, soft_banks, model.routers, model.lid)
    mask_scope = ParamScope(Tape(), lambda name: name.endswith(".mask"))
    g_s = mask_scope.tape.backward(fed.loss_graph(mask_scope, xs, ys, language))

    router_names = [n for n in model.named_arrays() if ".router." in n]
    scope = ParamScope(Tape(), lambda name: name in router_names)
    actual = scope.tape.backward(model.loss_graph(scope, xs, ys, language))

    oracle_scope = ParamScope(Tape(), lambda name: name in router_names)
    surrogate = None
    for layer, router in model.routers.items():
        p = route(router, model.lid[language], oracle_scope, f"{layer}.router.")
        term = sum_all(hadamard(p, g_s[f"{layer}.mask"]))
        surrogate = term if surrogate is None else add(surrogate, term)
    oracle = oracle_scope.tape.backward(surrogate)
    err = max(relative_error(actual[n], oracle[n]) for n in router_names)
    return _row("model.ZipperHard.ste_oracle", err < 1e-10, err, "router gradients vs identity-gate oracle")


def model_suite(seed: int = 0, variants: Optional[Iterable[Variant]] = None) -> List[Dict[str, Any]]:
    rows = []
    for variant in (variants or list(Variant)):
        variant = Variant.parse(variant)
        model = _tiny_model(variant, seed)
        cfg = model.config
        rng = rng_stream(seed, "gradcheck", "batch", variant.value)
        xs = rng.standard_normal((2, cfg.seq_len, cfg.d_feat))
        ys = rng.standard_normal((2, cfg.target_dim))
        names = model.adapter_names() + model.prompt_names() + model.head_lora_names() + ["proj.gate_bias"]
        arrays = {n: a for n, a in model.named_arrays().items() if n in names}

        def build(scope: ParamScope, model=model, xs=xs, ys=ys) -> Var:
            return model.loss_graph(scope, xs, ys, "en", chunk_len=2)

        fd_names = [n for n in arrays if not (variant == Variant.ZIPPER_HARD and ".router." in n)]
        rows.append(gradient_check(f"model.{variant.value}", build, arrays, fd_names))
        if variant == Variant.ZIPPER_HARD:
            rows.append(_model_ste_oracle_row(model, xs, ys, "en"))
    return rows


# ---------------- entry ----------------

def _zero_vjp(g, node, xs):
    return tuple(np.zeros_like(x) for x in xs)


def run_gradcheck(scope: str = "ops", seed: int = 0, corrupt_op: Optional[str] = None) -> List[Dict[str, Any]]:
    """
    Run one suite (or "all"). ``corrupt_op`` swaps that op's backward for a
    zero rule first, which must make the suite fail on that op.
    """
    suites = {"ops": ops_suite, "adapters": adapters_suite, "router": router_suite, "model": model_suite}
    chosen = list(SCOPES) if scope == "all" else [scope]
    unknown = [s for s in chosen if s not in suites]
    if unknown:
        raise ConfigError(f"unknown gradcheck scope {unknown}", [f"choose from {list(SCOPES) + ['all']}"])
    rows: List[Dict[str, Any]] = []
    with ExitStack() as stack:
        if corrupt_op is not None:
            stack.enter_context(override_vjp(corrupt_op, _zero_vjp))
            logger.warning("gradcheck: backward of '%s' replaced by a zero rule", corrupt_op)
        for name in chosen:
            suite_rows = suites[name](seed)
            failed = [r["check"] for r in suite_rows if r["status"] != "pass"]
            logger.info("gradcheck %s: %d checks, %d failed", name, len(suite_rows), len(failed))
            rows.extend(suite_rows)
    return rows
