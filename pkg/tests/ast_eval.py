"""Reference big-step evaluator over the surface AST.

Used as the lowering oracle: running a program through parse -> lower -> vm
must agree with running this direct tree-walker over the same AST. It shares
nothing with the graph pipeline except the parser.
"""

from __future__ import annotations

import numpy as np

from gradc import frontend as F


class _Return(Exception):
    def __init__(self, value):
        self.value = value


class Closure:
    def __init__(self, params, body, env, name="<fn>"):
        self.params = params
        self.body = body
        self.env = env
        self.name = name


BUILTINS = {
    "matmul": lambda a, b: a @ b,
    "transpose": lambda a: np.ascontiguousarray(a.T),
    "reduce_sum": lambda a: float(a.sum()),
    "distribute": lambda s, shape: np.full(shape, s, dtype=np.float64),
    "shape_of": lambda a: tuple(int(d) for d in a.shape),
    "zeros_like": lambda v: _zeros(v),
}


def _zeros(v):
    if isinstance(v, bool):
        return False
    if isinstance(v, float):
        return 0.0
    if isinstance(v, int):
        return 0
    if isinstance(v, np.ndarray):
        return np.zeros_like(v)
    if isinstance(v, tuple):
        return tuple(_zeros(x) for x in v)
    raise TypeError(f"zeros_like: {type(v)}")


def run_function(module: F.Module, fn: str, args):
    env = {}
    for name, impl in BUILTINS.items():
        env[name] = impl
    for fd in module.defs:
        env[fd.name] = Closure(fd.params, fd.body, env, fd.name)
    target = env[fn]
    return _call(target, list(args))


def _call(fn, args):
    if callable(fn) and not isinstance(fn, Closure):
        return fn(*args)
    if not isinstance(fn, Closure):
        raise TypeError(f"not callable: {fn!r}")
    if len(args) != len(fn.params):
        raise TypeError(f"{fn.name}: arity mismatch")
    local = dict(zip(fn.params, args))
    frame = _Frame(local, fn.env)
    try:
        _exec_block(fn.body, frame)
    except _Return as r:
        return r.value
    raise RuntimeError(f"{fn.name}: fell off without return")


class _Frame:
    def __init__(self, local, parent):
        self.local = local
        self.parent = parent

    def lookup(self, name):
        frame = self
        while isinstance(frame, _Frame):
            if name in frame.local:
                return frame.local[name]
            frame = frame.parent
        if name in frame:
            return frame[name]
        raise NameError(name)


def _exec_block(stmts, frame):
    for stmt in stmts:
        if isinstance(stmt, F.Return):
            raise _Return(_eval(stmt.value, frame))
        if isinstance(stmt, F.Assign):
            frame.local[stmt.name] = _eval(stmt.value, frame)
        elif isinstance(stmt, F.FunctionDef):
            frame.local[stmt.name] = Closure(stmt.params, stmt.body, frame, stmt.name)
        elif isinstance(stmt, F.If):
            if _eval(stmt.cond, frame):
                _exec_block(stmt.then_body, frame)
            else:
                _exec_block(stmt.else_body or [], frame)
            return  # both branches return
        elif isinstance(stmt, F.While):
            while _eval(stmt.cond, frame):
                _exec_block(stmt.body, frame)
        else:
            raise TypeError(f"statement {type(stmt).__name__}")


_BINOPS = {
    "+": lambda a, b: a + b,
    "-": lambda a, b: a - b,
    "*": lambda a, b: a * b,
    "/": lambda a, b: a / b,
    "<": lambda a, b: a < b,
    ">": lambda a, b: a > b,
    "<=": lambda a, b: a <= b,
    ">=": lambda a, b: a >= b,
    "==": lambda a, b: a == b,
    "!=": lambda a, b: a != b,
}


def _eval(expr, frame):
    if isinstance(expr, F.Lit):
        return expr.value
    if isinstance(expr, F.Name):
        return frame.lookup(expr.id)
    if isinstance(expr, F.BinOp):
        a = _eval(expr.left, frame)
        b = _eval(expr.right, frame)
        if expr.op == "**":
            return a ** (float(b) if isinstance(b, int) else b)
        return _BINOPS[expr.op](a, b)
    if isinstance(expr, F.UnaryOp):
        return -_eval(expr.operand, frame)
    if isinstance(expr, F.Call):
        fn = _eval(expr.fn, frame)
        return _call(fn, [_eval(a, frame) for a in expr.args])
    if isinstance(expr, F.TupleLit):
        return tuple(_eval(e, frame) for e in expr.items)
    if isinstance(expr, F.Index):
        return _eval(expr.value, frame)[expr.index]
    if isinstance(expr, F.Lambda):
        return Closure(expr.params, [F.Return(expr.body, line=expr.line, col=expr.col)],
                       frame, "<lambda>")
    raise TypeError(f"expression {type(expr).__name__}")
