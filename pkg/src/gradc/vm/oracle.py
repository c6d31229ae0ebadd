"""Finite-difference gradient oracle.

Central differences per float coordinate with a magnitude-scaled step,
computed purely through the interpreter. This is the independent check the
AD test suites compare against; it must never share code with the transform.
"""

from __future__ import annotations

import numpy as np

from ..errors import VMError
from ..values import is_tensor
from .engine import run


def finite_diff_grad(store, gid, args, wrt, eps=1e-4):
    """d(scalar output)/d(args[wrt]) by central differences.

    Step per coordinate: h = eps * (|x| + 1). The result has the structure
    of ``args[wrt]``, which must be a float or a tensor.
    """
    args = list(args)
    base = args[wrt]

    def f_at(v):
        probe = list(args)
        probe[wrt] = v
        out = run(store, gid, probe)
        if not isinstance(out, float):
            raise VMError("finite differences need a scalar-valued function")
        return out

    if isinstance(base, float):
        h = eps * (abs(base) + 1.0)
        return (f_at(base + h) - f_at(base - h)) / (2.0 * h)
    if is_tensor(base):
        grad = np.zeros_like(base)
        flat = grad.ravel()
        src = base.ravel()
        for i in range(src.size):
            h = eps * (abs(float(src[i])) + 1.0)
            plus = base.copy()
            plus.ravel()[i] = src[i] + h
            minus = base.copy()
            minus.ravel()[i] = src[i] - h
            flat[i] = (f_at(plus) - f_at(minus)) / (2.0 * h)
        return grad
    raise VMError("finite differences support float and tensor inputs only")
