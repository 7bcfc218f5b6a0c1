from dataclasses import replace

import numpy as np
import pytest

from src.adapters import Variant
from src.checks import tiny_model_config
from src.errors import CompatibilityError, ConfigError, LanguageKeyError, ShapeError
from src.tensorcore import ParamScope, rng_stream
from src.toymodel import ModelConfig, ToyModel, attention_mask, chunk_split


def _utterances(cfg, n, seed=0):
    return rng_stream(seed, "tests", "utterances").standard_normal((n, cfg.seq_len, cfg.d_feat))


def test_chunk_split_covers_sequence():
    assert chunk_split(10, 4) == [(0, 4), (4, 4), (8, 2)]
    assert chunk_split(3, 8) == [(0, 3)]
    with pytest.raises(ConfigError):
        chunk_split(4, 0)


def test_attention_mask_blocks():
    mask = attention_mask(4, 2, 2)
    assert mask.shape == (8, 8)
    assert mask[0, 1] and not mask[0, 2]
    assert not mask[3, 4]
    assert np.array_equal(attention_mask(4, 1, None), np.ones((4, 4), dtype=bool))


def test_long_chunks_match_unchunked(tiny_model, tiny_config):
    xs = _utterances(tiny_config, 3)
    full = tiny_model.predict(xs, "en")
    assert np.array_equal(tiny_model.predict(xs, "en", chunk_len=tiny_config.seq_len), full)
    assert np.array_equal(tiny_model.predict(xs, "en", chunk_len=100), full)


def test_chunks_do_not_see_later_frames(tiny_model, tiny_config):
    X = _utterances(tiny_config, 1)[0]
    perturbed = X.copy()
    perturbed[2:] += 5.0
    a = tiny_model.encode(X, "en", chunk_len=2)
    b = tiny_model.encode(perturbed, "en", chunk_len=2)
    assert np.array_equal(a[:2], b[:2])
    assert not np.allclose(a[2:], b[2:])


def test_projection_and_prompt_shapes(tiny_model, tiny_config):
    X = _utterances(tiny_config, 1)[0]
    projected = tiny_model.project(tiny_model.encode(X, "fr"))
    assert projected.shape == (tiny_config.seq_len // tiny_config.stack, tiny_config.d)
    tiny_model.params["prompt.fr"] = np.arange(tiny_config.d, dtype=np.float64).reshape(-1, 1)
    with_prompt = tiny_model.prepend_prompt(projected, "fr")
    assert with_prompt.shape == (projected.shape[0] + 1, tiny_config.d)
    assert np.array_equal(with_prompt[0], np.arange(tiny_config.d))
    assert np.array_equal(with_prompt[1:], projected)


@pytest.mark.parametrize("variant", list(Variant))
def test_fresh_adapters_do_not_change_predictions(tiny_model, tiny_config, tiny_lid, variant):
    xs = _utterances(tiny_config, 2)
    adapted = tiny_model.copy().attach_adapters(variant, seed=3, lid=tiny_lid)
    assert np.array_equal(adapted.predict(xs, "fr"), tiny_model.predict(xs, "fr"))


def test_routed_variant_needs_lid(tiny_model):
    with pytest.raises(LanguageKeyError):
        tiny_model.copy().attach_adapters(Variant.ZIPPER_SOFT, seed=0)


def test_batched_predictions_match_single(tiny_model, tiny_config):
    xs = _utterances(tiny_config, 4)
    batched = tiny_model.predict(xs, "en", chunk_len=2)
    single = np.vstack([tiny_model.predict(x, "en", chunk_len=2) for x in xs])
    assert np.allclose(batched, single, rtol=0, atol=1e-12)
    assert np.array_equal(tiny_model.forward(xs[0], "en"), tiny_model.predict(xs[:1], "en")[0])


def test_checkpoint_round_trip(tiny_model, tiny_config, tiny_lid):
    model = tiny_model.copy().attach_adapters(Variant.ZIPPER_HARD, seed=1, lid=tiny_lid)
    for bank in model.banks.values():
        bank.B_shared = bank.B_shared + 0.1
    restored = ToyModel.from_dict(model.to_dict(stage=2))
    xs = _utterances(tiny_config, 2)
    assert restored.variant == Variant.ZIPPER_HARD
    assert np.array_equal(restored.predict(xs, "en"), model.predict(xs, "en"))


def test_checkpoint_structure_mismatch(tiny_model, tiny_lid):
    payload = tiny_model.copy().attach_adapters(Variant.VANILLA, seed=1).to_dict(stage=2)
    payload["params"].pop(next(n for n in payload["params"] if ".lora." in n and not n.startswith("head.")))
    with pytest.raises(CompatibilityError):
        ToyModel.from_dict(payload)


def test_prompt_gradient_only_for_batch_language(tiny_model, tiny_config):
    scope = ParamScope.all_trainable()
    for name, value in tiny_model.named_arrays().items():
        scope.get(name, value)
    xs = _utterances(tiny_config, 2)
    ys = rng_stream(1, "tests", "targets").standard_normal((2, tiny_config.target_dim))
    grads = scope.tape.backward(tiny_model.loss_graph(scope, xs, ys, "en"))
    assert not np.any(grads["prompt.fr"])
    assert np.any(grads["prompt.en"])


def test_weight_deltas_shift_base(tiny_model):
    name = "enc.in"
    delta = np.ones_like(tiny_model.params[name])
    shifted = tiny_model.with_weight_deltas({name: delta})
    assert np.array_equal(shifted.params[name], tiny_model.params[name] + 1.0)
    with pytest.raises(ShapeError):
        tiny_model.with_weight_deltas({name: np.ones((1, 1))})


def test_bad_input_shape(tiny_model):
    with pytest.raises(ShapeError):
        tiny_model.predict(np.ones((2, 4, 99)), "en")


def test_model_config_rejects_zero_width():
    with pytest.raises(ConfigError):
        ModelConfig(d=0).validate()


def _ln(x, eps):
    centered = x - x.mean(axis=0, keepdims=True)
    return centered / np.sqrt((centered * centered).mean(axis=0, keepdims=True) + eps)


def _silu(x):
    return x / (1.0 + np.exp(-x))


def _reference_projection(model, h):
    cfg, p = model.config, model.params
    stacked = h.T.reshape(-1, cfg.stack * cfg.d).T
    hidden = _silu(p["proj.gate"] @ stacked + p["proj.gate_bias"]) * (p["proj.up"] @ stacked)
    return p["proj.ln_gamma"] * _ln(hidden + p["proj.out"] @ hidden, cfg.ln_eps) + p["proj.ln_beta"]


def _reference_predict(model, X, language):
    """Unchunked forward pass written directly in numpy, frames as columns."""
    cfg, p = model.config, model.params
    h = p["enc.in"] @ X.T
    for i in range(cfg.depth):
        hn = _ln(h, cfg.ln_eps)
        q, k, v = (p[f"enc.{i}.{n}"] @ hn for n in ("q", "k", "v"))
        scores = k.T @ q / np.sqrt(cfg.d)
        weights = np.exp(scores - scores.max(axis=0, keepdims=True))
        weights /= weights.sum(axis=0, keepdims=True)
        h = h + p[f"enc.{i}.o"] @ (v @ weights)
        h = h + p[f"enc.{i}.ffn2"] @ _silu(p[f"enc.{i}.ffn1"] @ _ln(h, cfg.ln_eps))
    projected = _reference_projection(model, h)
    pooled = np.hstack([p[f"prompt.{language}"], projected]).mean(axis=1)
    return p["head"] @ pooled


def test_seed0_forward_matches_numpy_reference(tiny_config):
    model = ToyModel.initialize(tiny_config, seed=0)
    for name in tiny_config.linear_layers():
        d_out, d_in = tiny_config.layer_shape(name)
        expected = rng_stream(0, "base", name).standard_normal((d_out, d_in)) / np.sqrt(d_in)
        assert np.array_equal(model.params[name], expected)
    model.params["prompt.fr"] = np.linspace(-1.0, 1.0, tiny_config.d).reshape(-1, 1)
    xs = _utterances(tiny_config, 3, seed=11)
    got = model.predict(xs, "fr")
    for x, row in zip(xs, got):
        assert np.allclose(row, _reference_predict(model, x, "fr"), rtol=0, atol=1e-10)
    assert np.array_equal(ToyModel.initialize(tiny_config, seed=0).predict(xs, "en"), model.predict(xs, "en"))
    assert not np.allclose(ToyModel.initialize(tiny_config, seed=1).predict(xs, "en"), model.predict(xs, "en"))


@pytest.mark.parametrize("variant", list(Variant))
def test_predictions_ignore_language_order(tiny_lid, variant):
    xs = _utterances(tiny_model_config(), 2)
    models = []
    for order in (("en", "fr"), ("fr", "en")):
        model = ToyModel.initialize(tiny_model_config(order), seed=0).attach_adapters(variant, seed=3, lid=tiny_lid)
        model.assign({n: rng_stream(5, "tests", n).standard_normal(a.shape) * 0.3
                      for n, a in model.named_arrays().items() if ".lora.B_" in n or n.startswith("prompt.")})
        models.append(model)
    for lang in ("en", "fr"):
        assert np.allclose(models[0].predict(xs, lang), models[1].predict(xs, lang), rtol=0, atol=1e-12)


@pytest.mark.parametrize("chunk_len", [None, 2])
def test_constant_input_gives_frame_constant_encoding(tiny_model, tiny_config, tiny_lid, chunk_len):
    frame = rng_stream(2, "tests", "frame").standard_normal(tiny_config.d_feat)
    X = np.tile(frame, (tiny_config.seq_len, 1))
    for model in (tiny_model, tiny_model.copy().attach_adapters(Variant.ZIPPER_SOFT, seed=1, lid=tiny_lid)):
        H = model.encode(X, "en", chunk_len=chunk_len)
        assert np.allclose(H, np.tile(H[0], (tiny_config.seq_len, 1)), rtol=0, atol=1e-12)


def test_saturated_gate_leaves_the_linear_path():
    model = ToyModel.initialize(replace(tiny_model_config(), stack=1), seed=0)
    cfg = model.config
    bias = 40.0
    model.params["proj.gate"] = np.zeros_like(model.params["proj.gate"])
    model.params["proj.gate_bias"] = np.full((cfg.d, 1), bias)
    H = rng_stream(3, "tests", "encoder_states").standard_normal((cfg.seq_len, cfg.d))
    linear = bias * (model.params["proj.up"] @ H.T)
    expected = _ln(linear + model.params["proj.out"] @ linear, cfg.ln_eps).T
    projected = model.project(H)
    assert projected.shape == (cfg.seq_len, cfg.d)
    assert np.allclose(projected, expected, rtol=0, atol=1e-6)
    assert np.allclose(projected, _reference_projection(model, H.T).T, rtol=0, atol=1e-12)
