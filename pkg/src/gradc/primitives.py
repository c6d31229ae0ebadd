"""Primitive operations: the kernel set exposed to the language.

Each primitive is an interned ``Primitive`` value plus an evaluation kernel.
Scalar float kernels follow IEEE-754 float64 semantics: division by zero and
overflow produce inf/nan instead of trapping; only structural errors (wrong
kind, wrong shape, wrong arity) raise.

Type/shape inference rules live in ``infer``; adjoint constructions live in
``ad``. Both are keyed by the names defined here.
"""

from __future__ import annotations

import math
import operator as _op

import numpy as np

from .errors import VMError
from .values import (
    Primitive,
    SensEnv,
    gadd_value,
    is_tensor,
    zeros_like_value,
)

# arithmetic
ADD = Primitive("add")
SUB = Primitive("sub")
MUL = Primitive("mul")
DIV = Primitive("div")
POW = Primitive("pow")
NEG = Primitive("neg")
LOG = Primitive("log")
# comparisons
LT = Primitive("lt")
GT = Primitive("gt")
LE = Primitive("le")
GE = Primitive("ge")
EQ = Primitive("eq")
NE = Primitive("ne")
# control
SWITCH = Primitive("switch")
# tuples
MAKE_TUPLE = Primitive("make_tuple")
TUPLE_GETITEM = Primitive("tuple_getitem")
TUPLE_SETITEM = Primitive("tuple_setitem")
# tensors
MATMUL = Primitive("matmul")
TRANSPOSE = Primitive("transpose")
REDUCE_SUM = Primitive("reduce_sum")
DISTRIBUTE = Primitive("distribute")
SHAPE_OF = Primitive("shape_of")
# sensitivity plumbing
GADD = Primitive("gadd")
ZEROS_LIKE = Primitive("zeros_like")
ENV_GET = Primitive("env_get")
ENV_SET = Primitive("env_set")
# macro builtin, expanded before execution; the vm also supports it directly
GRAD = Primitive("grad")

ARITHMETIC_NAMES = {"add", "sub", "mul", "div", "pow", "neg", "log"}
COMPARISON_NAMES = {"lt", "gt", "le", "ge", "eq", "ne"}
TUPLE_OP_NAMES = {"make_tuple", "tuple_getitem", "tuple_setitem"}
ENV_OP_NAMES = {"env_get", "env_set"}


def _is_float(v):
    return isinstance(v, float)


def _is_int(v):
    return isinstance(v, int) and not isinstance(v, bool)


def _is_bool(v):
    return isinstance(v, bool)


def _fdiv(a, b):
    if b == 0.0:
        if a == 0.0 or math.isnan(a):
            return math.nan
        return math.copysign(math.inf, a) * math.copysign(1.0, b)
    return a / b


def _fpow(a, b):
    try:
        r = a**b
    except (OverflowError, ZeroDivisionError, ValueError):
        with np.errstate(all="ignore"):
            return float(np.float64(a) ** np.float64(b))
    if isinstance(r, complex):  # negative base, non-integral exponent
        return math.nan
    return float(r)


def _flog(a):
    if a > 0.0:
        return math.log(a)
    if a == 0.0:
        return -math.inf
    return math.nan


def _binary_arith(name, a, b, ffn, ifn, tensor_ok=True):
    if _is_float(a) and _is_float(b):
        return ffn(a, b)
    if _is_int(a) and _is_int(b):
        if ifn is None:
            raise VMError(f"{name}: integer operands not supported")
        return ifn(a, b)
    if tensor_ok and is_tensor(a) and is_tensor(b):
        if a.shape != b.shape:
            raise VMError(f"{name}: elementwise shape mismatch {a.shape} vs {b.shape}")
        with np.errstate(all="ignore"):
            return ffn(a, b)
    raise VMError(f"{name}: bad operand kinds")


def _cmp(name, a, b, op, bool_ok=False):
    if (_is_float(a) and _is_float(b)) or (_is_int(a) and _is_int(b)):
        return op(a, b)
    if bool_ok and _is_bool(a) and _is_bool(b):
        return op(a, b)
    raise VMError(f"{name}: bad operand kinds")


def _k_add(args):
    return _binary_arith("add", args[0], args[1], lambda a, b: a + b, lambda a, b: a + b)


def _k_sub(args):
    return _binary_arith("sub", args[0], args[1], lambda a, b: a - b, lambda a, b: a - b)


def _k_mul(args):
    return _binary_arith("mul", args[0], args[1], lambda a, b: a * b, lambda a, b: a * b)


def _k_div(args):
    a, b = args
    if _is_float(a) and _is_float(b):
        return _fdiv(a, b)
    if is_tensor(a) and is_tensor(b):
        if a.shape != b.shape:
            raise VMError(f"div: elementwise shape mismatch {a.shape} vs {b.shape}")
        with np.errstate(all="ignore"):
            return a / b
    raise VMError("div: bad operand kinds")


def _k_pow(args):
    a, b = args
    if _is_float(a) and _is_float(b):
        return _fpow(a, b)
    raise VMError("pow: scalar float operands required")


def _k_neg(args):
    (a,) = args
    if _is_float(a):
        return -a
    if _is_int(a):
        return -a
    if is_tensor(a):
        return -a
    raise VMError("neg: bad operand kind")


def _k_log(args):
    (a,) = args
    if _is_float(a):
        return _flog(a)
    raise VMError("log: scalar float operand required")


def _k_switch(args):
    c, a, b = args
    if not _is_bool(c):
        raise VMError("switch: condition must be bool")
    return a if c else b


def _k_make_tuple(args):
    return tuple(args)


def _k_tuple_getitem(args):
    t, i = args
    if not isinstance(t, tuple):
        raise VMError("tuple_getitem: not a tuple")
    if not _is_int(i) or not (0 <= i < len(t)):
        raise VMError(f"tuple_getitem: index {i} out of range for arity {len(t)}")
    return t[i]


def _k_tuple_setitem(args):
    t, i, v = args
    if not isinstance(t, tuple):
        raise VMError("tuple_setitem: not a tuple")
    if not _is_int(i) or not (0 <= i < len(t)):
        raise VMError(f"tuple_setitem: index {i} out of range for arity {len(t)}")
    return t[:i] + (v,) + t[i + 1 :]


def _k_matmul(args):
    a, b = args
    if not (is_tensor(a) and is_tensor(b)):
        raise VMError("matmul: tensor operands required")
    if a.ndim != 2 or b.ndim != 2:
        raise VMError("matmul: rank-2 tensors required")
    if a.shape[1] != b.shape[0]:
        raise VMError(f"matmul: inner dimensions disagree {a.shape} vs {b.shape}")
    return a @ b


def _k_transpose(args):
    (a,) = args
    if not is_tensor(a) or a.ndim != 2:
        raise VMError("transpose: rank-2 tensor required")
    return np.ascontiguousarray(a.T)


def _k_reduce_sum(args):
    (a,) = args
    if not is_tensor(a):
        raise VMError("reduce_sum: tensor required")
    return float(a.sum())


def _k_distribute(args):
    s, shape = args
    if not _is_float(s):
        raise VMError("distribute: scalar float required")
    if not isinstance(shape, tuple) or not all(_is_int(d) and d >= 0 for d in shape):
        raise VMError("distribute: shape must be a tuple of non-negative ints")
    return np.full(shape, s, dtype=np.float64)


def _k_shape_of(args):
    (a,) = args
    if not is_tensor(a):
        raise VMError("shape_of: tensor required")
    return tuple(int(d) for d in a.shape)


def _k_gadd(args):
    return gadd_value(args[0], args[1])


def _k_zeros_like(args):
    return zeros_like_value(args[0])


def _k_env_get(args):
    env, key, proto = args
    if not isinstance(env, SensEnv):
        raise VMError("env_get: not a sensitivity env")
    if not _is_int(key):
        raise VMError("env_get: key must be an integer")
    return env.get(key, proto)


def _k_env_set(args):
    env, key, val = args
    if not isinstance(env, SensEnv):
        raise VMError("env_set: not a sensitivity env")
    if not _is_int(key):
        raise VMError("env_set: key must be an integer")
    return env.set(key, val)


KERNELS = {
    "add": _k_add,
    "sub": _k_sub,
    "mul": _k_mul,
    "div": _k_div,
    "pow": _k_pow,
    "neg": _k_neg,
    "log": _k_log,
    "lt": lambda a: _cmp("lt", a[0], a[1], _op.lt),
    "gt": lambda a: _cmp("gt", a[0], a[1], _op.gt),
    "le": lambda a: _cmp("le", a[0], a[1], _op.le),
    "ge": lambda a: _cmp("ge", a[0], a[1], _op.ge),
    "eq": lambda a: _cmp("eq", a[0], a[1], _op.eq, bool_ok=True),
    "ne": lambda a: _cmp("ne", a[0], a[1], _op.ne, bool_ok=True),
    "switch": _k_switch,
    "make_tuple": _k_make_tuple,
    "tuple_getitem": _k_tuple_getitem,
    "tuple_setitem": _k_tuple_setitem,
    "matmul": _k_matmul,
    "transpose": _k_transpose,
    "reduce_sum": _k_reduce_sum,
    "distribute": _k_distribute,
    "shape_of": _k_shape_of,
    "gadd": _k_gadd,
    "zeros_like": _k_zeros_like,
    "env_get": _k_env_get,
    "env_set": _k_env_set,
}

# fixed arity per primitive; None = variadic
ARITY = {
    "add": 2, "sub": 2, "mul": 2, "div": 2, "pow": 2, "neg": 1, "log": 1,
    "lt": 2, "gt": 2, "le": 2, "ge": 2, "eq": 2, "ne": 2,
    "switch": 3,
    "make_tuple": None, "tuple_getitem": 2, "tuple_setitem": 3,
    "matmul": 2, "transpose": 1, "reduce_sum": 1, "distribute": 2, "shape_of": 1,
    "gadd": 2, "zeros_like": 1, "env_get": 3, "env_set": 3,
    "grad": 1,
}

BY_NAME = {name: Primitive(name) for name in ARITY}
