import numpy as np
import pytest

from src.errors import ContractError, ShapeError
from src.tensorcore import (
    ParamScope,
    Tape,
    concat_cols,
    diag_scale_cols,
    elementwise,
    finite_diff_grad,
    layernorm,
    masked_softmax_cols,
    matmul,
    matrix_from_dict,
    matrix_to_dict,
    numerical_rank,
    override_vjp,
    relative_error,
    rng_stream,
    select_cols,
    sigmoid,
    silu,
    stack_frames,
    sum_all,
)


def test_matmul_hand_arithmetic():
    out = matmul(np.array([[1.0, 2.0], [3.0, 4.0]]), np.array([[1.0], [1.0]])).value
    assert np.array_equal(out, np.array([[3.0], [7.0]]))


def test_matmul_matches_scalar_loop():
    rng = rng_stream(0, "tests", "matmul")
    a, b = rng.standard_normal((5, 7)), rng.standard_normal((7, 3))
    out = matmul(a, b).value
    for i in range(5):
        for j in range(3):
            assert out[i, j] == pytest.approx(sum(a[i, k] * b[k, j] for k in range(7)), abs=1e-12)


def test_matmul_shape_mismatch():
    with pytest.raises(ShapeError):
        matmul(np.ones((2, 3)), np.ones((2, 3)))


def test_elementwise_fixed_points():
    assert sigmoid(np.zeros((1, 1))).value[0, 0] == 0.5
    assert silu(np.zeros((1, 1))).value[0, 0] == 0.0
    with pytest.raises(ContractError):
        elementwise("tanh", np.ones((1, 1)))


def test_concat_and_select_round_trip():
    rng = rng_stream(0, "tests", "concat")
    a, b = rng.standard_normal((4, 2)), rng.standard_normal((4, 3))
    joined = concat_cols(a, b)
    assert joined.shape == (4, 5)
    assert np.array_equal(select_cols(joined, 0, 2).value, a)
    assert np.array_equal(select_cols(joined, 2, 3).value, b)
    assert np.array_equal(concat_cols(a, np.zeros((4, 0))).value, a)


def test_diag_scale_cols_matches_explicit_diag():
    rng = rng_stream(0, "tests", "diag")
    m, w = rng.standard_normal((3, 4)), rng.standard_normal((4, 1))
    assert np.allclose(diag_scale_cols(m, w).value, m @ np.diag(w.ravel()), atol=1e-14)
    assert np.array_equal(diag_scale_cols(m, np.ones((4, 1))).value, m)
    assert not np.any(diag_scale_cols(m, np.zeros((4, 1))).value)


def test_layernorm_edge_cases():
    ones, zeros = np.ones((3, 1)), np.zeros((3, 1))
    assert not np.any(layernorm(np.full((3, 1), 2.5), ones, zeros).value)
    out = layernorm(np.array([[1.0], [-1.0]]), np.ones((2, 1)), np.zeros((2, 1)), eps=1e-12).value
    assert np.allclose(out, [[1.0], [-1.0]], atol=1e-6)


def test_stack_frames_pads_last_group():
    x = np.arange(14, dtype=np.float64).reshape(2, 7)
    out = stack_frames(x, 4).value
    assert out.shape == (8, 2)
    assert np.array_equal(out[:, 0], x[:, :4].T.ravel())
    assert not np.any(out[6:, 1])


def test_masked_softmax_rejects_empty_column():
    mask = np.array([[True, False], [True, False]])
    with pytest.raises(ContractError):
        masked_softmax_cols(np.zeros((2, 2)), mask)


def test_backward_sum_is_all_ones():
    tape = Tape()
    x = tape.param(np.arange(6.0).reshape(2, 3), "x")
    grads = tape.backward(sum_all(x))
    assert np.array_equal(grads["x"], np.ones((2, 3)))


def test_backward_reports_zero_for_unused_params():
    tape = Tape()
    x = tape.param(np.ones((2, 2)), "x")
    tape.param(np.ones((3, 1)), "unused")
    grads = tape.backward(sum_all(x))
    assert np.array_equal(grads["unused"], np.zeros((3, 1)))


def test_low_rank_norm_gradient_matches_finite_differences():
    rng = rng_stream(0, "tests", "bax")
    b, a, x = rng.standard_normal((4, 3)), rng.standard_normal((3, 5)), rng.standard_normal((5, 1))

    def loss_of(a_value):
        y = b @ a_value @ x
        return float(np.sum(y * y))

    tape = Tape()
    av = tape.param(a, "A")
    y = matmul(matmul(b, av), x)
    grads = tape.backward(sum_all(elementwise("hadamard", y, y)))
    assert relative_error(grads["A"], finite_diff_grad(loss_of, a)) < 1e-5


def test_finite_diff_of_quadratic_is_exact():
    p = rng_stream(0, "tests", "quad").standard_normal((3, 2))
    grad = finite_diff_grad(lambda q: float(np.sum(q * q)), p, h=1e-5)
    assert np.allclose(grad, 2 * p, atol=1e-8)


def test_scope_binds_each_name_once():
    scope = ParamScope(Tape(), lambda name: name.startswith("w"))
    w1 = scope.get("w", np.ones((2, 2)))
    assert scope.get("w", np.zeros((2, 2))) is w1
    scope.get("frozen", np.ones((2, 2)))
    assert set(scope.tape.params) == {"w"}


def test_override_vjp_restores_rule():
    def zero(g, node, xs):
        return tuple(np.zeros_like(x) for x in xs)

    def grad_of_matmul():
        tape = Tape()
        a = tape.param(np.ones((2, 2)), "a")
        return tape.backward(sum_all(matmul(a, np.ones((2, 2)))))["a"]

    with override_vjp("matmul", zero):
        assert not np.any(grad_of_matmul())
    assert np.array_equal(grad_of_matmul(), np.full((2, 2), 2.0))


def test_rng_streams_are_reproducible_and_distinct():
    a = rng_stream(3, "teacher").standard_normal(4)
    assert np.array_equal(a, rng_stream(3, "teacher").standard_normal(4))
    assert not np.array_equal(a, rng_stream(3, "student").standard_normal(4))


def test_numerical_rank_and_serialization():
    rng = rng_stream(0, "tests", "rank")
    m = rng.standard_normal((8, 3)) @ rng.standard_normal((3, 8))
    assert numerical_rank(m) == 3
    assert np.array_equal(matrix_from_dict(matrix_to_dict(m)), m)
