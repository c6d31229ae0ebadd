from .engine import (
    EvalContext,
    available_cores,
    backend_name,
    call_value,
    primitive_eval,
    run,
)
from .oracle import finite_diff_grad

__all__ = [
    "EvalContext",
    "available_cores",
    "backend_name",
    "call_value",
    "primitive_eval",
    "run",
    "finite_diff_grad",
]
