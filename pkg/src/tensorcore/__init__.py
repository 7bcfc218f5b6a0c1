from src.tensorcore.autodiff import (
    Tape,
    Var,
    add,
    add_col,
    affine,
    concat_cols,
    diag_scale_cols,
    elementwise,
    finite_diff_grad,
    hadamard,
    layernorm,
    lift_all,
    masked_softmax_cols,
    matmul,
    mean_cols,
    mse,
    override_vjp,
    registered_ops,
    relative_error,
    relu,
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
from src.tensorcore.scope import ParamScope
from src.tensorcore.matrix import (
    Matrix,
    as_matrix,
    column,
    content_hash,
    gaussian,
    identity,
    is_finite,
    matrix_from_dict,
    matrix_to_dict,
    numerical_rank,
    rng_stream,
    zeros,
)
