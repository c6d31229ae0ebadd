"""Pure-Python interpreter core.

The dispatch loop runs over precompiled per-graph step lists with an explicit
activation stack, so deep recursion in interpreted programs never touches the
host stack. ``_evalcore_cy.pyx`` is a line-for-line transliteration of this
module; any semantic change here must be mirrored there.
"""

from ..errors import NotCallableError, RecursionLimitError, VMError
from ..values import Closure, GraphRef, Primitive

OP_LOCAL = 0
OP_CONST = 1
OP_GRAPHREF = 2
OP_FREE = 3

BACKEND = "python"


class Frame:
    __slots__ = ("values", "parent")

    def __init__(self, parent):
        self.values = {}
        self.parent = parent


class _Act:
    __slots__ = ("code", "frame", "ip", "dest")

    def __init__(self, code, frame, dest):
        self.code = code
        self.frame = frame
        self.ip = 0
        self.dest = dest


def _resolve(op, frame):
    tag = op[0]
    if tag == OP_LOCAL:
        return frame.values[op[1]]
    if tag == OP_CONST:
        return op[1]
    if tag == OP_GRAPHREF:
        return Closure(op[1], frame)
    cur = frame
    nid = op[1]
    while cur is not None:
        if nid in cur.values:
            return cur.values[nid]
        cur = cur.parent
    raise VMError(f"unresolved free variable %{nid}")


def run_loop(ctx, gid, args, outer_frame):
    """Evaluate graph ``gid`` on ``args``; ``ctx`` supplies compiled code,
    kernels, the special-form hook, and the activation limit."""
    code = ctx.compile(gid)
    if len(args) != len(code.params):
        raise VMError(
            f"arity mismatch calling {code.name}: got {len(args)}, want {len(code.params)}"
        )
    frame = Frame(outer_frame)
    for p, a in zip(code.params, args):
        frame.values[p] = a
    stack = [_Act(code, frame, None)]
    limit = ctx.limit
    kernels = ctx.kernels

    while stack:
        act = stack[-1]
        code = act.code
        if act.ip >= len(code.steps):
            value = _resolve(code.retop, act.frame)
            stack.pop()
            if act.dest is None:
                if not stack:
                    return value
                raise VMError("corrupt activation stack")
            dframe, dnid = act.dest
            dframe.values[dnid] = value
            continue
        dest, ops = code.steps[act.ip]
        act.ip += 1
        fn = _resolve(ops[0], act.frame)
        argv = [_resolve(ops[i], act.frame) for i in range(1, len(ops))]
        while True:  # unwrap graph refs / dispatch once
            if isinstance(fn, Primitive):
                kern = kernels.get(fn.name)
                if kern is None:
                    act.frame.values[dest] = ctx.special(fn.name, argv, act.frame)
                else:
                    act.frame.values[dest] = kern(argv)
                break
            if isinstance(fn, GraphRef):
                fn = Closure(fn.graph_id, None)
                continue
            if isinstance(fn, Closure):
                if len(stack) >= limit:
                    raise RecursionLimitError(
                        f"recursion limit of {limit} activations exceeded"
                    )
                ccode = ctx.compile(fn.graph_id)
                if len(argv) != len(ccode.params):
                    raise VMError(
                        f"arity mismatch calling {ccode.name}: "
                        f"got {len(argv)}, want {len(ccode.params)}"
                    )
                nframe = Frame(fn.frame)
                for p, a in zip(ccode.params, argv):
                    nframe.values[p] = a
                stack.append(_Act(ccode, nframe, (act.frame, dest)))
                break
            raise NotCallableError(f"value of kind {type(fn).__name__} is not callable")
    raise VMError("empty activation stack")
