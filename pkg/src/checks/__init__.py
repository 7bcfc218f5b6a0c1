from src.checks.equiv import EQUIV_TOL, IDENTITIES, run_equiv
from src.checks.gradcheck import (
    GRAD_TOL,
    SCOPES,
    adapters_suite,
    gradient_check,
    model_suite,
    ops_suite,
    router_suite,
    run_gradcheck,
    tiny_model_config,
)
