# cython: language_level=3, boundscheck=False, wraparound=False
"""Cython build of the interpreter dispatch loop.

Transliteration of ``_evalcore_py``; the algorithm must match it exactly.
The speedup comes from typed activation records and loop bookkeeping, not
from changed semantics: kernels and value types are the shared Python ones.
"""

from ..errors import NotCallableError, RecursionLimitError, VMError
from ..values import Closure, GraphRef, Primitive

OP_LOCAL = 0
OP_CONST = 1
OP_GRAPHREF = 2
OP_FREE = 3

BACKEND = "cython"

cdef int _OP_LOCAL = 0
cdef int _OP_CONST = 1
cdef int _OP_GRAPHREF = 2
cdef int _OP_FREE = 3


cdef class Frame:
    cdef public dict values
    cdef public object parent

    def __init__(self, parent):
        self.values = {}
        self.parent = parent


cdef class _Act:
    cdef public object code
    cdef public Frame frame
    cdef public Py_ssize_t ip
    cdef public object dest

    def __init__(self, code, Frame frame, dest):
        self.code = code
        self.frame = frame
        self.ip = 0
        self.dest = dest


cdef inline object _resolve(tuple op, Frame frame):
    cdef int tag = <int> op[0]
    cdef object cur, vals
    if tag == _OP_LOCAL:
        return frame.values[op[1]]
    if tag == _OP_CONST:
        return op[1]
    if tag == _OP_GRAPHREF:
        return Closure(op[1], frame)
    cur = frame
    nid = op[1]
    while cur is not None:
        vals = cur.values
        if nid in vals:
            return vals[nid]
        cur = cur.parent
    raise VMError(f"unresolved free variable %{nid}")


def run_loop(ctx, gid, args, outer_frame):
    """Evaluate graph ``gid`` on ``args``; see the Python core for the spec."""
    cdef Py_ssize_t i, nops, limit
    cdef _Act act
    cdef Frame frame, nframe
    cdef tuple ops
    cdef list stack, steps, argv

    code = ctx.compile(gid)
    if len(args) != len(code.params):
        raise VMError(
            f"arity mismatch calling {code.name}: got {len(args)}, want {len(code.params)}"
        )
    if outer_frame is not None and not isinstance(outer_frame, Frame):
        outer_frame = _adopt(outer_frame)
    frame = Frame(outer_frame)
    for p, a in zip(code.params, args):
        frame.values[p] = a
    stack = [_Act(code, frame, None)]
    limit = ctx.limit
    kernels = ctx.kernels

    while stack:
        act = <_Act> stack[len(stack) - 1]
        code = act.code
        steps = code.steps
        if act.ip >= len(steps):
            value = _resolve(code.retop, act.frame)
            stack.pop()
            if act.dest is None:
                if not stack:
                    return value
                raise VMError("corrupt activation stack")
            dframe, dnid = act.dest
            dframe.values[dnid] = value
            continue
        dest, ops = <tuple> steps[act.ip]
        act.ip += 1
        fn = _resolve(<tuple> ops[0], act.frame)
        nops = len(ops)
        argv = [None] * (nops - 1)
        for i in range(1, nops):
            argv[i - 1] = _resolve(<tuple> ops[i], act.frame)
        while True:  # unwrap graph refs / dispatch once
            if isinstance(fn, Primitive):
                kern = kernels.get((<object> fn).name)
                if kern is None:
                    act.frame.values[dest] = ctx.special((<object> fn).name, argv, act.frame)
                else:
                    act.frame.values[dest] = kern(argv)
                break
            if isinstance(fn, GraphRef):
                fn = Closure((<object> fn).graph_id, None)
                continue
            if isinstance(fn, Closure):
                if len(stack) >= limit:
                    raise RecursionLimitError(
                        f"recursion limit of {limit} activations exceeded"
                    )
                ccode = ctx.compile((<object> fn).graph_id)
                if len(argv) != len(ccode.params):
                    raise VMError(
                        f"arity mismatch calling {ccode.name}: "
                        f"got {len(argv)}, want {len(ccode.params)}"
                    )
                cframe = (<object> fn).frame
                if cframe is not None and not isinstance(cframe, Frame):
                    cframe = _adopt(cframe)
                nframe = Frame(cframe)
                for p, a in zip(ccode.params, argv):
                    nframe.values[p] = a
                stack.append(_Act(ccode, nframe, (act.frame, dest)))
                break
            raise NotCallableError(f"value of kind {type(fn).__name__} is not callable")
    raise VMError("empty activation stack")


cdef Frame _adopt(outer):
    """Wrap a foreign frame chain (e.g. from the Python core) into cdef frames."""
    cdef Frame f = Frame(None)
    f.values = outer.values
    parent = outer.parent
    if parent is not None and not isinstance(parent, Frame):
        f.parent = _adopt(parent)
    else:
        f.parent = parent
    return f
