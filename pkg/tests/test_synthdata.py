import json

import numpy as np
import pytest

from src.adapters import Variant
from src.errors import ConfigError, ContractError, StructureError
from src.router import DEFAULT_LANGUAGES, default_similarity
from src.synthdata import (
    NARROW_TEACHER_LAYERS,
    DEFAULT_ASSIGNMENT,
    DEFAULT_PROFILE,
    build_profiles,
    eval_metrics,
    export_dataset,
    long_tail_sizes,
    make_teachers,
    normalized,
    prediction_mse,
    sample_dataset,
    sample_source_dataset,
    student_init,
    teacher_layer_names,
)


def test_default_long_tail():
    sizes = long_tail_sizes(DEFAULT_PROFILE, DEFAULT_ASSIGNMENT)
    assert set(sizes) == set(DEFAULT_LANGUAGES)
    assert sorted(sizes.values()) == [2] * 4 + [500] * 4 + [2000] * 4
    assert sizes["de"] / sizes["ar"] == 1000


def test_uniform_profile_and_bad_counts():
    assert set(long_tail_sizes({"high": 7, "mid": 7, "low": 7}, DEFAULT_ASSIGNMENT).values()) == {7}
    with pytest.raises(ConfigError):
        long_tail_sizes({"high": 0, "mid": 1, "low": 1}, DEFAULT_ASSIGNMENT)
    with pytest.raises(ConfigError):
        long_tail_sizes({"high": 1}, {"en": "mid"})


def test_sizes_match_generated_cardinality(tiny_data):
    train, evaluation, _, _ = tiny_data
    assert train.sizes() == {"en": 24, "fr": 6}
    assert train.total == 30
    assert evaluation.sizes() == {"en": 6, "fr": 6}


def test_sampling_is_deterministic(tiny_teachers, tiny_config):
    profiles = build_profiles(tiny_config.languages, {"en": 5, "fr": 5}, 3)
    a = sample_dataset(tiny_teachers, profiles, 7, "train")
    b = sample_dataset(tiny_teachers, profiles, 7, "train")
    assert a.content_hash() == b.content_hash()
    assert a.content_hash() != sample_dataset(tiny_teachers, profiles, 8, "train").content_hash()


def test_train_and_eval_are_disjoint(tiny_data):
    train, evaluation, _, _ = tiny_data
    assert not train.pair_hashes() & evaluation.pair_hashes()


def test_identity_similarity_gives_orthogonal_deltas(tiny_config):
    teachers = make_teachers(np.eye(2), 1.0, 1.0, 0, config=tiny_config, rank=2)
    cos = teachers.delta_cosines()
    assert abs(cos[0, 1]) < 0.05
    assert np.allclose(np.diag(cos), 1.0)


def test_delta_cosines_follow_target(tiny_config):
    sim = np.array([[1.0, 0.41], [0.41, 1.0]])
    teachers = make_teachers(sim, 1.0, 1.0, 2, config=tiny_config, rank=2)
    assert teachers.delta_cosines()[0, 1] == pytest.approx(0.41, abs=0.05)


def test_teacher_deltas_cover_every_adapted_layer(tiny_teachers, tiny_config):
    assert tiny_teachers.layers == tiny_config.adapted_layer_names()
    assert "enc.in" in tiny_teachers.layers
    for lang in tiny_config.languages:
        assert set(tiny_teachers.weight_deltas[lang]) == set(tiny_config.adapted_layer_names())


def test_narrow_teacher_layers_are_opt_in(tiny_config):
    narrow = make_teachers(np.eye(2), 1.0, 1.0, 0, config=tiny_config, rank=2, layer_kinds=NARROW_TEACHER_LAYERS)
    assert narrow.layers == teacher_layer_names(tiny_config, NARROW_TEACHER_LAYERS)
    assert not any(name.endswith((".in", ".k", ".o")) for name in narrow.layers)
    assert len(narrow.layers) < len(tiny_config.adapted_layer_names())


def test_teacher_rank_must_fit_languages(tiny_config):
    with pytest.raises(StructureError):
        make_teachers(default_similarity(tiny_config.languages), 1.0, 1.0, 0, config=tiny_config, rank=1)


def test_teacher_is_immutable_across_sampling(tiny_teachers, tiny_config):
    before = tiny_teachers.content_hash()
    sample_dataset(tiny_teachers, build_profiles(tiny_config.languages, {"en": 3, "fr": 3}, 3), 0, "eval")
    assert tiny_teachers.content_hash() == before


def test_noise_free_teacher_has_zero_loss(tiny_config):
    teachers = make_teachers(default_similarity(tiny_config.languages), 1.0, 1.0, 0, config=tiny_config,
                             rank=2, noise_ratio=0.0)
    data = sample_dataset(teachers, build_profiles(tiny_config.languages, {"en": 4, "fr": 4}, 4), 0, "eval")
    for lang in tiny_config.languages:
        assert prediction_mse(teachers.model_for(lang), data, lang) < 1e-12


def test_aligned_student_fits_source_data(tiny_config):
    teachers = make_teachers(default_similarity(tiny_config.languages), 1.0, 1.0, 0, config=tiny_config,
                             rank=2, noise_ratio=0.0)
    student = student_init(teachers, align_noise=0.0, seed=0)
    source = sample_source_dataset(teachers, {"en": 4}, 0, "eval")
    assert prediction_mse(student, source, "en") < 1e-12
    assert student_init(teachers, 0.5, 0).params["enc.in"].tolist() != teachers.base.params["enc.in"].tolist()


def test_student_init_rejects_negative_noise(tiny_teachers):
    with pytest.raises(StructureError):
        student_init(tiny_teachers, -0.1, 0)


def test_unadapted_model_has_unit_normalized_error(tiny_model, tiny_data):
    _, evaluation, _, _ = tiny_data
    assert eval_metrics(tiny_model, evaluation, "fr")["normalized_error"] == 1.0


def test_empty_split_is_a_contract_error(tiny_model, tiny_data):
    train, _, _, _ = tiny_data
    train.inputs["fr"] = train.inputs["fr"][:0]
    with pytest.raises(ContractError):
        prediction_mse(tiny_model, train, "fr")


def test_normalized_error_is_scale_invariant(tiny_model, tiny_lid, tiny_data):
    _, evaluation, _, _ = tiny_data
    model = tiny_model.copy().attach_adapters(Variant.ZIPPER_SOFT, seed=0, lid=tiny_lid)
    for bank in model.banks.values():
        bank.B_shared = bank.B_shared + 0.05
    base = eval_metrics(model, evaluation, "en")["normalized_error"]

    c = 3.0
    scaled = model.copy()
    scaled.params["head"] = scaled.params["head"] * c
    rescaled = eval_metrics(scaled, evaluation.scaled_targets(c), "en")["normalized_error"]
    assert base != 1.0
    assert rescaled == pytest.approx(base, rel=1e-9)
    assert normalized(4.0, 2.0) == normalized(400.0, 200.0) == 2.0
    assert normalized(0.0, 0.0) == 0.0


def test_export_writes_jsonl_and_manifest(tiny_data, tmp_path):
    train, _, _, _ = tiny_data
    written = export_dataset(train, tmp_path, {"seed": 0})
    manifest = json.loads((tmp_path / "manifest.json").read_text(encoding="utf-8"))
    assert manifest["train"]["sizes"] == {"en": 24, "fr": 6}
    assert manifest["train"]["seed"] == 0
    lines = (tmp_path / "train_fr.jsonl").read_text(encoding="utf-8").strip().splitlines()
    assert len(lines) == 6
    assert len(written) == 3


@pytest.mark.slow
def test_base_loss_grows_with_specific_strength(tiny_config):
    sim = default_similarity(tiny_config.languages)
    profiles = build_profiles(tiny_config.languages, {"en": 8, "fr": 8}, 16)
    losses = []
    for c_sp in (0.0, 0.5, 1.0):
        per_seed = []
        for seed in range(5):
            teachers = make_teachers(sim, 1.0, c_sp, seed, config=tiny_config, rank=2, noise_ratio=0.0)
            data = sample_dataset(teachers, profiles, seed, "eval")
            per_seed.append(prediction_mse(teachers.base, data, "fr"))
        losses.append(np.mean(per_seed))
    assert losses[0] < losses[1] < losses[2]
