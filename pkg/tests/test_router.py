import numpy as np
import pytest

from src.errors import ContractError, ShapeError, StructureError
from src.router import (
    DEFAULT_LANGUAGES,
    DEFAULT_ROUTER_EPS,
    LidEmbedding,
    RouterParams,
    cosine_similarity_matrix,
    default_similarity,
    init_router,
    load_lid_embeddings,
    load_similarity,
    route,
    route_values,
    save_lid_embeddings,
    save_similarity,
    synth_lid_embeddings,
)
from src.tensorcore import ParamScope, finite_diff_grad, relative_error, rng_stream, sum_all


def _router(rank=4, d_lid=6, seed=0):
    return init_router(rank, d_lid, rng_stream(seed, "tests", "router"))


def _zeroed(rank=4, d_lid=6, bias=0.0):
    return RouterParams(
        W_r=np.zeros((rank, d_lid)),
        b_r=np.full((rank, 1), bias),
        gamma=np.ones((d_lid, 1)),
        beta=np.zeros((d_lid, 1)),
    )


def test_zero_router_outputs_half():
    e = rng_stream(1, "tests", "e").standard_normal(6)
    assert np.array_equal(route_values(_zeroed(), e), np.full(4, 0.5))


def test_large_bias_saturates():
    e = rng_stream(1, "tests", "e").standard_normal(6)
    assert np.all(route_values(_zeroed(bias=10.0), e) > 0.9999)


def test_outputs_lie_strictly_inside_unit_interval():
    params = _router()
    for seed in range(10):
        p = route_values(params, rng_stream(seed, "tests", "many").standard_normal(6) * 5)
        assert np.all((p > 0) & (p < 1))


def test_router_is_nearly_invariant_to_embedding_scale():
    params = _router()
    e = rng_stream(2, "tests", "scale").standard_normal(6)
    assert np.allclose(route_values(params, e), route_values(params, 7.5 * e), rtol=0, atol=1e-4)


def test_near_constant_embedding_does_not_amplify_noise():
    params = _router()
    params.b_r = np.linspace(-1.0, 1.0, 4).reshape(-1, 1)
    e = 1.0 + 1e-9 * rng_stream(3, "tests", "flat").standard_normal(6)
    p = route_values(params, e)
    assert params.eps == DEFAULT_ROUTER_EPS == 1e-5
    assert np.all(np.isfinite(p)) and np.all((p > 0) & (p < 1))
    assert np.allclose(p, 1.0 / (1.0 + np.exp(-params.b_r.ravel())), rtol=0, atol=1e-3)


def test_router_rejects_wrong_embedding_size():
    with pytest.raises(ShapeError):
        route_values(_router(), np.ones(5))


def test_router_gradient_matches_finite_differences():
    params = _router()
    e = rng_stream(3, "tests", "grad").standard_normal(6)

    def loss_of(w):
        p = params.copy()
        p.W_r = w
        return float(np.sum(route_values(p, e) ** 2))

    scope = ParamScope(trainable=lambda name: name == "W_r")
    p = route(params, e, scope)
    grads = scope.tape.backward(sum_all(p * p))
    assert relative_error(grads["W_r"], finite_diff_grad(loss_of, params.W_r)) < 1e-5


def test_synthetic_embeddings_reproduce_anchor_pair():
    sim = default_similarity(("ja", "ko", "en"))
    emb = synth_lid_embeddings(sim, ("ja", "ko", "en"), 8, seed=0)
    got = cosine_similarity_matrix(emb)
    assert got[0, 1] == pytest.approx(0.41, abs=1e-6)
    assert np.allclose(got, sim, atol=1e-6)


def test_identity_target_gives_orthogonal_embeddings():
    langs = ("a", "b", "c")
    emb = synth_lid_embeddings(np.eye(3), langs, 5, seed=4)
    vectors = np.stack([emb[l].vector for l in langs])
    assert np.allclose(vectors @ vectors.T, np.eye(3), atol=1e-10)


def test_default_twelve_language_target_round_trips():
    sim = default_similarity()
    emb = synth_lid_embeddings(sim, DEFAULT_LANGUAGES, 16, seed=0)
    assert np.max(np.abs(cosine_similarity_matrix(emb) - sim)) < 1e-6


def test_embedding_dimension_must_cover_languages():
    with pytest.raises(StructureError):
        synth_lid_embeddings(np.eye(3), ("a", "b", "c"), 2, seed=0)


def test_non_psd_target_is_rejected():
    bad = np.array([[1.0, 0.9, -0.9], [0.9, 1.0, 0.9], [-0.9, 0.9, 1.0]])
    with pytest.raises(StructureError):
        synth_lid_embeddings(bad, ("a", "b", "c"), 4, seed=0)


def test_cosine_of_identical_and_orthogonal_vectors():
    sim = cosine_similarity_matrix([np.array([1.0, 0.0]), np.array([2.0, 0.0]), np.array([0.0, 3.0])])
    assert sim[0, 1] == pytest.approx(1.0)
    assert sim[0, 2] == pytest.approx(0.0)


def test_similarity_and_embedding_files(tmp_path):
    langs = ("de", "en", "fr")
    sim = default_similarity(langs)
    save_similarity(tmp_path / "sim.yaml", langs, sim)
    loaded_langs, loaded = load_similarity(tmp_path / "sim.yaml")
    assert loaded_langs == list(langs)
    assert np.array_equal(loaded, sim)

    emb = synth_lid_embeddings(sim, langs, 4, seed=1)
    save_lid_embeddings(tmp_path / "lid.json", emb)
    back = load_lid_embeddings(tmp_path / "lid.json")
    assert all(np.array_equal(back[l].vector, emb[l].vector) for l in langs)


def test_similarity_file_needs_both_keys(tmp_path):
    path = tmp_path / "sim.yaml"
    path.write_text("languages: [en]\n", encoding="utf-8")
    with pytest.raises(StructureError):
        load_similarity(path)


def test_lid_embedding_rejects_zero_vector():
    with pytest.raises(ContractError):
        LidEmbedding("en", np.zeros(4))
