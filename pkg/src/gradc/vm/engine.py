"""Reference interpreter over IR graphs.

Graphs are compiled once per store version into flat step lists (one step per
apply node, in ANF schedule order) and executed by a dispatch core. Two cores
exist: the pure-Python one and an optional Cython build of the same loop; the
compiled one is selected at import unless ``GRADC_PURE_VM=1``.

Evaluation is strict in schedule order. Branching stays cheap because the
front end lowers both branches of a conditional to zero-argument closure
graphs: creating them costs a frame pointer, and only the one selected by
``switch`` is ever called.
"""

from __future__ import annotations

import os

from ..errors import NotCallableError, VMError
from ..ir import GraphStore
from ..primitives import ARITY, KERNELS
from ..values import Closure, GraphRef, Primitive
from . import _evalcore_py

_evalcore = _evalcore_py
if os.environ.get("GRADC_PURE_VM") != "1":
    try:
        from . import _evalcore_cy as _evalcore  # type: ignore[no-redef]
    except ImportError:
        pass

OP_LOCAL = _evalcore_py.OP_LOCAL
OP_CONST = _evalcore_py.OP_CONST
OP_GRAPHREF = _evalcore_py.OP_GRAPHREF
OP_FREE = _evalcore_py.OP_FREE

RECURSION_LIMIT = 100_000


def backend_name() -> str:
    return _evalcore.BACKEND


def available_cores():
    cores = [_evalcore_py]
    try:
        from . import _evalcore_cy

        cores.append(_evalcore_cy)
    except ImportError:
        pass
    return cores


class _Code:
    __slots__ = ("name", "params", "steps", "retop")

    def __init__(self, name, params, steps, retop):
        self.name = name
        self.params = params
        self.steps = steps
        self.retop = retop


class EvalContext:
    """Per-store compilation cache plus the knobs the core loop needs."""

    def __init__(self, store: GraphStore, core=None, schedule_override=None):
        self.store = store
        self.kernels = KERNELS
        self.limit = RECURSION_LIMIT
        self.core = core or _evalcore
        self._schedules = schedule_override or {}
        self._codes: dict = {}
        self._version = None

    def compile(self, gid):
        version = self.store._version
        if version != self._version:
            self._codes.clear()
            self._version = version
        code = self._codes.get(gid)
        if code is None:
            code = self._compile(gid)
            self._codes[gid] = code
        return code

    def _compile(self, gid):
        store = self.store
        g = store.graph(gid)
        if g.return_node is None:
            raise VMError(f"graph {g.name} has no return node", graph=g.name)

        def op_of(nid):
            node = store.node(nid)
            if node.is_constant:
                if isinstance(node.value, GraphRef):
                    return (OP_GRAPHREF, node.value.graph_id)
                return (OP_CONST, node.value)
            if node.owner == gid:
                return (OP_LOCAL, nid)
            return (OP_FREE, nid)

        steps = []
        schedule = self._schedules.get(gid)
        if schedule is None:
            schedule = store.schedule(gid)
        for nid in schedule:
            node = store.node(nid)
            ops = tuple(op_of(i) for i in node.inputs)
            c = ops[0]
            if c[0] == OP_CONST and isinstance(c[1], Primitive):
                want = ARITY.get(c[1].name)
                if want is not None and want != len(ops) - 1:
                    raise VMError(
                        f"{c[1].name} expects {want} arguments, got {len(ops) - 1}",
                        graph=g.name,
                    )
            steps.append((nid, ops))
        return _Code(g.name, list(g.parameters), steps, op_of(g.return_node))

    def special(self, name, args, frame):
        if name == "grad":
            from ..ad import dynamic_grad

            return dynamic_grad(self.store, args[0])
        raise VMError(f"primitive {name} has no kernel")


def run(store: GraphStore, gid, args, *, core=None, schedule_override=None):
    """Evaluate a complete graph on runtime values.

    The graph must be closed (no free variables); use ``call_value`` with a
    closure for anything that captures.
    """
    ctx = EvalContext(store, core=core, schedule_override=schedule_override)
    return ctx.core.run_loop(ctx, gid, list(args), None)


def call_value(store: GraphStore, fn, args, *, core=None):
    """Call a runtime function value: closure, graph reference, or primitive."""
    args = list(args)
    if isinstance(fn, Closure):
        ctx = EvalContext(store, core=core)
        return ctx.core.run_loop(ctx, fn.graph_id, args, fn.frame)
    if isinstance(fn, GraphRef):
        ctx = EvalContext(store, core=core)
        return ctx.core.run_loop(ctx, fn.graph_id, args, None)
    if isinstance(fn, Primitive):
        if fn.name == "grad":
            from ..ad import dynamic_grad

            return dynamic_grad(store, args[0])
        return primitive_eval(fn, args)
    raise NotCallableError(f"value of kind {type(fn).__name__} is not callable")


def primitive_eval(p, args):
    if isinstance(p, str):
        name = p
    elif isinstance(p, Primitive):
        name = p.name
    else:
        raise VMError("primitive_eval: not a primitive")
    kern = KERNELS.get(name)
    if kern is None:
        raise VMError(f"primitive {name} has no kernel")
    want = ARITY.get(name)
    if want is not None and len(args) != want:
        raise VMError(f"{name} expects {want} arguments, got {len(args)}")
    return kern(list(args))
