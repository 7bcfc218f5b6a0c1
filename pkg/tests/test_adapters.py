import numpy as np
import pytest

from src.adapters import (
    AdapterBank,
    HardPolarity,
    LoraConfig,
    Variant,
    adapted_forward,
    bind_bank,
    count_trainable_params,
    delta_for,
    flylora_mask,
    init_bank,
    rebalance_fly_bias,
    soft_vs_independent_crossover,
    vanilla_delta,
    zip_merge,
    zipper_hard_mask,
    zipper_soft_merge,
    zipper_static_merge,
)
from src.errors import ConfigError, ContractError, LanguageKeyError
from src.tensorcore import ParamScope, numerical_rank, rng_stream, sum_all

LANGS = ("en", "fr")


def _cfg(**overrides):
    base = dict(rank=4, alpha=8.0, d_in=5, d_out=3, top_k=2, shared_ranks=2)
    base.update(overrides)
    return LoraConfig(**base)


def _randomized(variant, cfg, seed=0):
    """Bank with non-zero B matrices so updates are visible."""
    rng = rng_stream(seed, "tests", variant.value)
    bank = init_bank(variant, cfg, LANGS, rng)
    if bank.B_shared is not None:
        bank.B_shared = rng.standard_normal(bank.B_shared.shape)
    bank.B_spec = {l: rng.standard_normal(b.shape) for l, b in bank.B_spec.items()}
    return bank


@pytest.mark.parametrize("variant", list(Variant))
def test_zero_b_leaves_base_output(variant):
    cfg = _cfg()
    bank = init_bank(variant, cfg, LANGS, rng_stream(0, "tests", "zero"))
    rng = rng_stream(1, "tests", "zero")
    w0, x = rng.standard_normal((3, 5)), rng.standard_normal((5, 4))
    p = np.full(cfg.rank, 0.7) if variant.routed else None
    out = adapted_forward(w0, bank, "fr", x, router_p=p).value
    assert np.array_equal(out, w0 @ x)


def test_vanilla_rank_one_by_hand():
    cfg = LoraConfig(rank=1, alpha=1.0, d_in=2, d_out=2, top_k=1, shared_ranks=0)
    bank = AdapterBank(Variant.VANILLA, cfg, LANGS, A=np.array([[1.0, 0.0]]), B_shared=np.array([[2.0], [3.0]]))
    out = adapted_forward(np.eye(2), bank, "en", np.array([[1.0], [1.0]])).value
    assert np.array_equal(out, np.array([[3.0], [4.0]]))


def test_vanilla_prefactor_is_alpha_over_rank():
    cfg = LoraConfig(rank=2, alpha=4.0, d_in=2, d_out=2, top_k=1, shared_ranks=0)
    a, b = np.eye(2), np.array([[1.0, 0.0], [0.0, 1.0]])
    bank = AdapterBank(Variant.VANILLA, cfg, LANGS, A=a, B_shared=b)
    assert np.array_equal(vanilla_delta(bank).matrix, 2.0 * np.eye(2))


@pytest.mark.parametrize("variant", [Variant.VANILLA, Variant.INDEPENDENT, Variant.ZIPPER_STATIC, Variant.ZIPPER_SOFT])
def test_delta_rank_is_bounded(variant):
    cfg = _cfg(rank=2, d_in=6, d_out=6, top_k=1, shared_ranks=1)
    bank = _randomized(variant, cfg)
    p = np.array([0.3, 0.9]) if variant.routed else None
    assert numerical_rank(delta_for(bank, "en", p).matrix) <= cfg.rank


def test_independent_language_is_untouched_by_other_banks():
    bank = _randomized(Variant.INDEPENDENT, _cfg())
    before = delta_for(bank, "en").matrix
    bank.B_spec["fr"] = bank.B_spec["fr"] + 10.0
    assert np.array_equal(delta_for(bank, "en").matrix, before)


def test_unknown_language_is_rejected():
    bank = _randomized(Variant.VANILLA, _cfg())
    with pytest.raises(LanguageKeyError):
        delta_for(bank, "de")


def test_flylora_full_top_k_matches_vanilla():
    cfg = _cfg(top_k=4)
    fly = _randomized(Variant.FLYLORA, cfg)
    vanilla = AdapterBank(Variant.VANILLA, cfg, LANGS, A=fly.A.copy(), B_shared=fly.B_shared.copy())
    x = rng_stream(2, "tests", "fly").standard_normal((5, 3))
    w0 = np.zeros((3, 5))
    fly_out = adapted_forward(w0, fly, "en", x).value
    assert np.allclose(fly_out, adapted_forward(w0, vanilla, "en", x).value, atol=1e-12)


def test_flylora_mask_top_one():
    assert np.array_equal(flylora_mask(np.array([[3.0], [1.0], [2.0]]), 1), [[1.0], [0.0], [0.0]])
    assert np.array_equal(flylora_mask(np.array([[1.0], [1.0], [0.0]]), 1), [[1.0], [0.0], [0.0]])
    with pytest.raises(ConfigError):
        flylora_mask(np.zeros((3, 1)), 4)


def test_flylora_trace_counts_selections_and_rebalance():
    cfg = _cfg(top_k=1)
    bank = _randomized(Variant.FLYLORA, cfg)
    x = rng_stream(3, "tests", "fly").standard_normal((5, 6))
    trace = {}
    adapted_forward(np.zeros((3, 5)), bank, "en", x, trace=trace)
    assert trace["load"].sum() == 6
    before = bank.fly_bias.copy()
    rebalance_fly_bias(bank, trace["load"], 0.01)
    moved = bank.fly_bias - before
    assert np.all(moved[trace["load"] > trace["load"].mean()] < 0)


@pytest.mark.parametrize("shared", [0, 4])
def test_static_merge_corners(shared):
    cfg = _cfg(shared_ranks=shared)
    bank = _randomized(Variant.ZIPPER_STATIC, cfg)
    merged = zipper_static_merge(bank, "en").value
    expected = bank.B_spec["en"] if shared == 0 else bank.B_shared
    assert np.array_equal(merged, expected)


def test_static_merge_places_shared_columns_first():
    cfg = LoraConfig(rank=32, alpha=64.0, d_in=4, d_out=3, top_k=8, shared_ranks=16)
    bank = _randomized(Variant.ZIPPER_STATIC, cfg)
    merged = zipper_static_merge(bank, "fr").value
    assert merged.shape == (3, 32)
    assert np.array_equal(merged[:, :16], bank.B_shared)
    assert np.array_equal(merged[:, 16:], bank.B_spec["fr"])


def test_hard_mask_threshold_is_inclusive():
    assert np.array_equal(zipper_hard_mask(np.array([[0.2], [0.8]]), 0.5).value, [[0.0], [1.0]])
    assert zipper_hard_mask(np.array([[0.5]]), 0.5).value[0, 0] == 1.0


@pytest.mark.parametrize("tau", [0.25, 0.5, 0.8])
def test_hard_mask_keeps_one_minus_tau_of_uniform_scores(tau):
    n = 10_000
    p = np.random.default_rng(7).uniform(size=(n, 1))
    s = zipper_hard_mask(p, tau).value
    assert set(np.unique(s)) <= {0.0, 1.0}
    assert abs(s.mean() - (1.0 - tau)) <= 3.0 * np.sqrt(tau * (1.0 - tau) / n)


def test_soft_merge_endpoints_and_midpoint():
    rng = rng_stream(4, "tests", "soft")
    b_sh, b_sp = rng.standard_normal((3, 2)), rng.standard_normal((3, 2))
    assert np.array_equal(zipper_soft_merge(b_sh, b_sp, np.zeros((2, 1))).value, b_sh)
    assert np.array_equal(zipper_soft_merge(b_sh, b_sp, np.ones((2, 1))).value, b_sp)
    half = zipper_soft_merge(b_sh, b_sp, np.full((2, 1), 0.5)).value
    assert np.allclose(half, (b_sh + b_sp) / 2, atol=1e-15)


def test_zip_polarity():
    b_sh, b_sp = np.zeros((2, 2)), np.ones((2, 2))
    s = np.array([[1.0], [0.0]])
    spec_on_one = zip_merge(b_sh, b_sp, s, HardPolarity.SPEC_ON_ONE).value
    shared_on_one = zip_merge(b_sh, b_sp, s, HardPolarity.SHARED_ON_ONE).value
    assert np.array_equal(spec_on_one, [[1.0, 0.0], [1.0, 0.0]])
    assert np.array_equal(shared_on_one, [[0.0, 1.0], [0.0, 1.0]])


def test_routed_variants_need_router_weights():
    bank = _randomized(Variant.ZIPPER_SOFT, _cfg())
    with pytest.raises(ContractError):
        adapted_forward(np.zeros((3, 5)), bank, "en", np.ones((5, 1)))
    vanilla = _randomized(Variant.VANILLA, _cfg())
    with pytest.raises(ContractError):
        adapted_forward(np.zeros((3, 5)), vanilla, "en", np.ones((5, 1)), router_p=np.ones(4))


@pytest.mark.parametrize("variant", [Variant.INDEPENDENT, Variant.ZIPPER_STATIC, Variant.ZIPPER_HARD, Variant.ZIPPER_SOFT])
def test_forward_binds_only_the_active_language(variant):
    cfg = _cfg()
    bank = _randomized(variant, cfg)
    scope = ParamScope.all_trainable()
    x = scope.const(rng_stream(5, "tests", "iso").standard_normal((5, 2)))
    p = np.full(cfg.rank, 0.6) if variant.routed else None
    out = adapted_forward(np.zeros((3, 5)), bind_bank(bank, scope), "en", x, router_p=p)
    grads = scope.tape.backward(sum_all(out))
    assert not any(name.endswith(".fr") for name in grads)
    assert any(name.endswith(".en") for name in grads)


def test_param_counts_closed_form():
    cfg = LoraConfig(rank=32, alpha=64.0, d_in=64, d_out=64, top_k=8, shared_ranks=16)
    assert count_trainable_params(Variant.VANILLA, cfg, 12) == 4096
    assert count_trainable_params(Variant.INDEPENDENT, cfg, 12) == 12 * 4096
    assert count_trainable_params(Variant.FLYLORA, cfg, 12) == 64 * 32 + 32
    assert count_trainable_params(Variant.ZIPPER_STATIC, cfg, 12) == 2048 + 64 * 16 + 12 * 64 * 16
    single = LoraConfig(rank=32, alpha=64.0, d_in=64, d_out=64, top_k=8, shared_ranks=16)
    assert count_trainable_params(Variant.ZIPPER_SOFT, single, 1) > count_trainable_params(Variant.INDEPENDENT, single, 1)


def test_soft_becomes_cheaper_than_independent():
    n = soft_vs_independent_crossover(64, 64, 32, 16)
    assert n == 3
    cfg = LoraConfig(rank=32, alpha=64.0, d_in=64, d_out=64, top_k=8, shared_ranks=16)
    assert count_trainable_params(Variant.ZIPPER_SOFT, cfg, n) < count_trainable_params(Variant.INDEPENDENT, cfg, n)
    assert count_trainable_params(Variant.ZIPPER_SOFT, cfg, n - 1) >= count_trainable_params(Variant.INDEPENDENT, cfg, n - 1)


def test_bank_checkpoint_round_trip():
    bank = _randomized(Variant.ZIPPER_HARD, _cfg())
    restored = AdapterBank.from_dict(bank.to_dict())
    assert restored.variant == Variant.ZIPPER_HARD
    for name, value in bank.named_arrays().items():
        assert np.array_equal(restored.named_arrays()[name], value)


def test_lora_config_rejects_bad_top_k():
    with pytest.raises(ConfigError):
        LoraConfig(rank=4, top_k=5).validate()
