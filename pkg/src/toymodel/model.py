# src/toymodel/model.py
"""
Desk-scale speech-LLM analogue: encoder -> projector -> prompt -> pooling head.

Public methods take and return frames-as-rows arrays (T x d). Internally every
graph function works on column layout: frame t of utterance u is column
u*T + t, so a batch is a row of consecutive column blocks.
"""
import logging
import math
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from src.adapters import AdapterBank, BoundBank, Variant, adapted_forward, gradient_arrays, init_bank
from src.errors import CompatibilityError, ContractError, LanguageKeyError, ShapeError
from src.router import LidEmbedding, RouterParams, init_router, route
from src.tensorcore import (
    ParamScope,
    Var,
    add,
    add_col,
    concat_cols,
    content_hash,
    hadamard,
    layernorm,
    masked_softmax_cols,
    matmul,
    matrix_from_dict,
    matrix_to_dict,
    mean_cols,
    mse,
    rng_stream,
    scale,
    select_cols,
    silu,
    stack_frames,
    transpose,
)
from src.toymodel.chunking import attention_mask
from src.toymodel.config import ModelConfig

logger = logging.getLogger(__name__)

Trace = Dict[str, Dict[str, Any]]


class ToyModel:
    """
    Frozen-backbone model with one adapter slot per encoder linear layer.

    Attributes:
        params: base weights ("enc.*", "proj.*", "head", "prompt.<lang>").
        head_bank: Vanilla LoRA on the head (the LLM-side adapter).
        banks: encoder adapter banks keyed by layer name; empty in Stage 1.
        routers: one RouterParams per adapted layer (routed variants only).
        lid: LID embedding per language (routed variants only).
        adapters_active: False disables every encoder adapter.
    """

    def __init__(
        self,
        config: ModelConfig,
        params: Dict[str, np.ndarray],
        head_bank: AdapterBank,
        banks: Optional[Dict[str, AdapterBank]] = None,
        routers: Optional[Dict[str, RouterParams]] = None,
        lid: Optional[Dict[str, LidEmbedding]] = None,
        adapters_active: bool = True,
    ):
        self.config = config
        self.params = params
        self.head_bank = head_bank
        self.banks = banks if banks is not None else {}
        self.routers = routers if routers is not None else {}
        self.lid = lid if lid is not None else {}
        self.adapters_active = adapters_active

    # ---------------- Construction ----------------

    @classmethod
    def initialize(cls, config: ModelConfig, seed: int) -> "ToyModel":
        """Random base weights, zero prompts, zero-B head LoRA, no encoder adapters."""
        config.validate()
        cfg = config
        params: Dict[str, np.ndarray] = {}
        for name in cfg.linear_layers():
            d_out, d_in = cfg.layer_shape(name)
            params[name] = rng_stream(seed, "base", name).standard_normal((d_out, d_in)) / math.sqrt(d_in)
        stacked = cfg.stack * cfg.d
        params["proj.gate"] = rng_stream(seed, "base", "proj.gate").standard_normal((cfg.d, stacked)) / math.sqrt(stacked)
        params["proj.gate_bias"] = np.zeros((cfg.d, 1))
        params["proj.up"] = rng_stream(seed, "base", "proj.up").standard_normal((cfg.d, stacked)) / math.sqrt(stacked)
        params["proj.out"] = rng_stream(seed, "base", "proj.out").standard_normal((cfg.d, cfg.d)) / math.sqrt(cfg.d)
        params["proj.ln_gamma"] = np.ones((cfg.d, 1))
        params["proj.ln_beta"] = np.zeros((cfg.d, 1))
        params["head"] = rng_stream(seed, "base", "head").standard_normal((cfg.target_dim, cfg.d)) / math.sqrt(cfg.d)
        for lang in cfg.languages:
            params[f"prompt.{lang}"] = np.zeros((cfg.d, 1))
        head_bank = init_bank(Variant.VANILLA, cfg.head_lora(), cfg.languages, rng_stream(seed, "head_lora"))
        return cls(cfg, params, head_bank)

    def attach_adapters(self, variant: Variant, seed: int, lid: Optional[Dict[str, LidEmbedding]] = None) -> "ToyModel":
        """Fresh encoder adapters of ``variant`` on every adapted layer (in place)."""
        variant = Variant.parse(variant)
        cfg = self.config
        self.banks = {
            name: init_bank(variant, cfg.layer_lora(name), cfg.languages, rng_stream(seed, "adapter", name))
            for name in cfg.adapted_layer_names()
        }
        self.routers, self.lid = {}, {}
        if variant.routed:
            missing = [l for l in cfg.languages if lid is None or l not in lid]
            if missing:
                raise LanguageKeyError(f"routed variant {variant.value} needs LID embeddings for {missing}")
            self.lid = {l: lid[l] for l in cfg.languages}
            self.routers = {
                name: init_router(cfg.lora.rank, cfg.d_lid, rng_stream(seed, "router", name))
                for name in self.banks
            }
        self.adapters_active = True
        return self

    @property
    def variant(self) -> Optional[Variant]:
        for bank in self.banks.values():
            return bank.variant
        return None

    def unadapted(self) -> "ToyModel":
        """View sharing all weights, with encoder adapters switched off."""
        return ToyModel(self.config, self.params, self.head_bank, self.banks, self.routers, self.lid, adapters_active=False)

    def copy(self) -> "ToyModel":
        return ToyModel(
            self.config,
            {k: v.copy() for k, v in self.params.items()},
            self.head_bank.copy(),
            {k: b.copy() for k, b in self.banks.items()},
            {k: r.copy() for k, r in self.routers.items()},
            {k: LidEmbedding(e.language, e.vector.copy()) for k, e in self.lid.items()},
            self.adapters_active,
        )

    def with_weight_deltas(self, deltas: Dict[str, np.ndarray]) -> "ToyModel":
        """Copy whose base weights are shifted by ``deltas`` (layer name -> ΔW)."""
        out = self.copy()
        for name, delta in deltas.items():
            if out.params[name].shape != delta.shape:
                raise ShapeError(f"delta for {name} has shape {delta.shape}, weight is {out.params[name].shape}")
            out.params[name] = out.params[name] + delta
        return out

    # ---------------- Named parameters ----------------

    def named_arrays(self) -> Dict[str, np.ndarray]:
        out = dict(self.params)
        out.update(self.head_bank.named_arrays("head.lora."))
        for layer, bank in self.banks.items():
            out.update(bank.named_arrays(f"{layer}.lora."))
        for layer, router in self.routers.items():
            out.update(router.named_arrays(f"{layer}.router."))
        for lang, emb in self.lid.items():
            out[f"lid.{lang}"] = emb.vector.reshape(-1, 1)
        return out

    def assign(self, updates: Dict[str, np.ndarray]) -> None:
        """Replace named arrays; shapes must match the current ones."""
        current = self.named_arrays()
        for name, value in updates.items():
            if name not in current:
                raise ContractError(f"unknown parameter '{name}'")
            if current[name].shape != value.shape:
                raise ShapeError(f"{name}: new shape {value.shape} differs from {current[name].shape}")
            if name in self.params:
                self.params[name] = value
            elif name.startswith("head.lora."):
                self.head_bank.load_arrays({name: value}, "head.lora.")
            elif ".lora." in name:
                layer = name.split(".lora.")[0]
                self.banks[layer].load_arrays({name: value}, f"{layer}.lora.")
            elif ".router." in name:
                layer = name.split(".router.")[0]
                self.routers[layer].load_arrays({name: value}, f"{layer}.router.")
            else:
                lang = name[len("lid."):]
                self.lid[lang] = LidEmbedding(lang, value.reshape(-1))

    def encoder_base_names(self) -> List[str]:
        return [n for n in self.params if n.startswith("enc.")]

    def projector_names(self) -> List[str]:
        return [n for n in self.params if n.startswith("proj.")]

    def prompt_names(self) -> List[str]:
        return [n for n in self.params if n.startswith("prompt.")]

    def head_lora_names(self) -> List[str]:
        return list(self.head_bank.named_arrays("head.lora."))

    def adapter_names(self) -> List[str]:
        """Gradient-trained encoder adapter and router arrays."""
        out: List[str] = []
        for layer, bank in self.banks.items():
            out.extend(gradient_arrays(bank, f"{layer}.lora."))
        for layer, router in self.routers.items():
            out.extend(router.named_arrays(f"{layer}.router."))
        return out

    def hash_of(self, names: Sequence[str]) -> str:
        arrays = self.named_arrays()
        return content_hash({n: arrays[n] for n in names})

    # ---------------- Graph pieces (column layout) ----------------

    def _router_p(self, scope: ParamScope, layer: str, language: str) -> Var:
        if language not in self.lid:
            raise LanguageKeyError(f"no LID embedding for language '{language}'")
        e = scope.get(f"lid.{language}", self.lid[language].vector.reshape(-1, 1))
        return route(self.routers[layer], e, scope, f"{layer}.router.")

    def _linear(self, scope: ParamScope, name: str, x: Var, language: str, trace: Optional[Trace]) -> Var:
        w = scope.get(name, self.params[name])
        bank = self.banks.get(name) if self.adapters_active else None
        if bank is None:
            return matmul(w, x)
        router_p = self._router_p(scope, name, language) if bank.variant.routed else None
        layer_trace = trace.setdefault(name, {}) if trace is not None else None
        return adapted_forward(w, BoundBank(bank, scope, f"{name}.lora."), language, x, router_p, layer_trace)

    def encode_graph(self, scope: ParamScope, x: Var, seq_len: int, language: str,
                     chunk_len: Optional[int] = None, trace: Optional[Trace] = None) -> Var:
        """d_feat x (n*T) input columns -> d x (n*T) encoder states."""
        cfg = self.config
        n = x.shape[1] // seq_len
        mask = attention_mask(seq_len, n, chunk_len)
        ones, zeros = scope.const(np.ones((cfg.d, 1))), scope.const(np.zeros((cfg.d, 1)))
        inv_sqrt_d = 1.0 / math.sqrt(cfg.d)

        h = self._linear(scope, "enc.in", x, language, trace)
        for i in range(cfg.depth):
            hn = layernorm(h, ones, zeros, cfg.ln_eps)
            q = self._linear(scope, f"enc.{i}.q", hn, language, trace)
            k = self._linear(scope, f"enc.{i}.k", hn, language, trace)
            v = self._linear(scope, f"enc.{i}.v", hn, language, trace)
            weights = masked_softmax_cols(scale(matmul(transpose(k), q), inv_sqrt_d), mask)
            h = add(h, self._linear(scope, f"enc.{i}.o", matmul(v, weights), language, trace))
            hn = layernorm(h, ones, zeros, cfg.ln_eps)
            ff = self._linear(scope, f"enc.{i}.ffn1", hn, language, trace)
            h = add(h, self._linear(scope, f"enc.{i}.ffn2", silu(ff), language, trace))
        return h

    def project_graph(self, scope: ParamScope, h: Var, seq_len: int) -> Var:
        """Stack f frames per utterance, SiLU-gate, then post-norm residual output."""
        cfg = self.config
        n = h.shape[1] // seq_len
        parts = [stack_frames(select_cols(h, u * seq_len, seq_len), cfg.stack) for u in range(n)]
        stacked = parts[0] if n == 1 else concat_cols(*parts)
        p = self.params
        gate = add_col(matmul(scope.get("proj.gate", p["proj.gate"]), stacked), scope.get("proj.gate_bias", p["proj.gate_bias"]))
        hidden = hadamard(silu(gate), matmul(scope.get("proj.up", p["proj.up"]), stacked))
        residual = add(hidden, matmul(scope.get("proj.out", p["proj.out"]), hidden))
        return layernorm(residual, scope.get("proj.ln_gamma", p["proj.ln_gamma"]),
                         scope.get("proj.ln_beta", p["proj.ln_beta"]), cfg.ln_eps)

    def prompt_var(self, scope: ParamScope, language: str) -> Var:
        name = f"prompt.{language}"
        if name not in self.params:
            raise LanguageKeyError(f"no prompt for language '{language}'")
        return scope.get(name, self.params[name])

    def pool_graph(self, scope: ParamScope, projected: Var, n: int, language: str) -> Var:
        """Prepend the prompt to each utterance and average its frames: d x n."""
        prompt = self.prompt_var(scope, language)
        t_out = projected.shape[1] // n
        pooled = [mean_cols(concat_cols(prompt, select_cols(projected, u * t_out, t_out))) for u in range(n)]
        return pooled[0] if n == 1 else concat_cols(*pooled)

    def head_graph(self, scope: ParamScope, pooled: Var, language: str) -> Var:
        head = scope.get("head", self.params["head"])
        return adapted_forward(head, BoundBank(self.head_bank, scope, "head.lora."), language, pooled)

    def graph(self, scope: ParamScope, xs: Any, language: str, chunk_len: Optional[int] = None,
              trace: Optional[Trace] = None) -> Var:
        """target_dim x n predictions for a single-language batch."""
        xs = self._check_batch(xs)
        n, seq_len = xs.shape[0], xs.shape[1]
        x = scope.const(np.concatenate([u.T for u in xs], axis=1))
        h = self.encode_graph(scope, x, seq_len, language, chunk_len, trace)
        projected = self.project_graph(scope, h, seq_len)
        return self.head_graph(scope, self.pool_graph(scope, projected, n, language), language)

    def loss_graph(self, scope: ParamScope, xs: Any, ys: np.ndarray, language: str,
                   chunk_len: Optional[int] = None, trace: Optional[Trace] = None) -> Var:
        pred = self.graph(scope, xs, language, chunk_len, trace)
        target = np.asarray(ys, dtype=np.float64).reshape(pred.shape[1], -1).T
        return mse(pred, target)

    def _check_batch(self, xs: Any) -> np.ndarray:
        xs = np.asarray(xs, dtype=np.float64)
        if xs.ndim == 2:
            xs = xs[None]
        if xs.ndim != 3 or xs.shape[2] != self.config.d_feat or xs.shape[1] < 1:
            raise ShapeError(f"expected utterances of shape (T, {self.config.d_feat}), got {xs.shape}")
        if not np.all(np.isfinite(xs)):
            raise ContractError("input frames contain NaN or Inf")
        return xs

    # ---------------- Public evaluation API (frames as rows) ----------------

    def encode(self, X: np.ndarray, language: str, chunk_len: Optional[int] = None) -> np.ndarray:
        xs = self._check_batch(X)
        scope = ParamScope.evaluation()
        x = scope.const(xs[0].T)
        return self.encode_graph(scope, x, xs.shape[1], language, chunk_len).value.T.copy()

    def project(self, H_enc: np.ndarray) -> np.ndarray:
        H_enc = np.asarray(H_enc, dtype=np.float64)
        if H_enc.ndim != 2 or H_enc.shape[0] < 1 or H_enc.shape[1] != self.config.d:
            raise ShapeError(f"expected encoder states of shape (T, {self.config.d}), got {H_enc.shape}")
        scope = ParamScope.evaluation()
        return self.project_graph(scope, scope.const(H_enc.T), H_enc.shape[0]).value.T.copy()

    def prepend_prompt(self, H_proj: np.ndarray, language: str) -> np.ndarray:
        scope = ParamScope.evaluation()
        prompt = self.prompt_var(scope, language)
        return np.vstack([prompt.value.T, np.asarray(H_proj, dtype=np.float64)])

    def forward(self, X: np.ndarray, language: str, chunk_len: Optional[int] = None) -> np.ndarray:
        return self.predict(X, language, chunk_len)[0]

    def predict(self, xs: Any, language: str, chunk_len: Optional[int] = None, batch_size: int = 32) -> np.ndarray:
        """(n, target_dim) predictions."""
        xs = self._check_batch(xs)
        out = []
        for start in range(0, xs.shape[0], batch_size):
            scope = ParamScope.evaluation()
            out.append(self.graph(scope, xs[start:start + batch_size], language, chunk_len).value.T)
        return np.vstack(out)

    def encoder_embeddings(self, xs: Any, language: str, chunk_len: Optional[int] = None, batch_size: int = 32) -> np.ndarray:
        """(n, d) frame-mean of the encoder output per utterance."""
        xs = self._check_batch(xs)
        seq_len = xs.shape[1]
        out = []
        for start in range(0, xs.shape[0], batch_size):
            batch = xs[start:start + batch_size]
            scope = ParamScope.evaluation()
            h = self.encode_graph(scope, scope.const(np.concatenate([u.T for u in batch], axis=1)), seq_len, language, chunk_len)
            out.append(h.value.T.reshape(batch.shape[0], seq_len, -1).mean(axis=1))
        return np.vstack(out)

    # ---------------- Checkpoint format ----------------

    def to_dict(self, stage: int) -> Dict[str, Any]:
        return {
            "stage": stage,
            "variant": None if self.variant is None else self.variant.value,
            "config": self.config.to_dict(),
            "params": {name: matrix_to_dict(value) for name, value in sorted(self.named_arrays().items())},
        }

    @classmethod
    def from_dict(cls, obj: Dict[str, Any]) -> "ToyModel":
        config = ModelConfig.from_dict(obj["config"])
        model = cls.initialize(config, seed=0)
        arrays = {name: matrix_from_dict(m) for name, m in obj["params"].items()}
        if obj.get("variant"):
            lid = {n[len("lid."):]: LidEmbedding(n[len("lid."):], a.reshape(-1)) for n, a in arrays.items() if n.startswith("lid.")}
            model.attach_adapters(Variant.parse(obj["variant"]), seed=0, lid=lid or None)
        expected = set(model.named_arrays())
        if expected != set(arrays):
            diffs = sorted(expected.symmetric_difference(arrays))
            raise CompatibilityError(diffs, "checkpoint parameters do not match the model structure")
        model.assign(arrays)
        return model
