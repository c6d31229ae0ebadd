"""Reverse-mode differentiation by source transformation, without a tape.

Every graph ``f`` gets an augmented twin ``f.fwd`` of the same arity. Where
the primal computes ``y = h(a, b)``, the twin computes::

    th = h.fwd(a', b')        # a', b' are the augmented operands
    y' = tuple_getitem(th, 0) # same value the primal produced
    bp = tuple_getitem(th, 1) # backpropagator closure for this call

and finally returns ``(result', @f.bprop)``. The backpropagator ``f.bprop``
is a nested graph taking the output sensitivity. It calls the recorded ``bp``
closures in reverse schedule order, adds up contributions per primal node
with ``gadd``, and returns::

    (env, d_input_0, ..., d_input_{n-1})

where ``env`` maps stable integer keys of the primal's captured nodes to
their sensitivities. A function value's sensitivity *is* such an env (the
empty env for anything closed), which is what lets gradients flow through
closures stored in tuples, passed to higher-order functions, or selected by
``switch``. Unpacking a callee's env back onto the nodes it captured is the
adjoint of closure creation: entries owned by the current graph are added to
its running sensitivities, the rest are forwarded upward in the returned env.

Intermediate values are captured as free variables of the ``bp`` closures,
so the derivative program is ordinary graph code: the optimizer can inline
and collapse it, and the transform can be applied to its own output for
higher-order derivatives.
"""

from __future__ import annotations

import itertools

from .errors import TransformError
from .ir import GraphStore
from .primitives import ARITY, BY_NAME
from .values import EMPTY_ENV, GraphRef, Primitive

_key_counter = itertools.count(1)


class GradContext:
    """Memo for one differentiation session.

    Shared subroutines transform once; env keys are allocated per primal node
    exactly once so producer and consumer graphs always agree on them.
    """

    def __init__(self, store: GraphStore):
        self.store = store
        self.augmented: dict[int, int] = {}  # primal graph -> .fwd graph
        self.fwd_nodes: dict[int, int] = {}  # primal node -> node in .fwd graph
        self.prim_variants: dict = {}
        self.env_keys: dict[int, int] = {}

    def key_of(self, nid: int) -> int:
        key = self.env_keys.get(nid)
        if key is None:
            key = next(_key_counter)
            self.env_keys[nid] = key
        return key


def _prim(store, name):
    return store.constant(BY_NAME[name])


def _getitem(store, gid, node, index, name=None):
    return store.apply(gid, _prim(store, "tuple_getitem"),
                       [node, store.constant(index)], name=name)


# ---------------------------------------------------------------------------
# primitive adjoints


def primitive_augmented(ctx: GradContext, name: str, nargs: int, const_exp=False) -> int:
    """Augmented form of a primitive: returns (value, backpropagator).

    ``pow`` has a second variant for constant exponents whose exponent slot
    is a structural zero, so ``log`` of a possibly non-positive base is never
    emitted for the common ``x ** k`` lowering.
    """
    variant = (name, nargs, const_exp)
    hit = ctx.prim_variants.get(variant)
    if hit is not None:
        return hit
    store = ctx.store
    if name == "grad":
        raise TransformError("grad is expanded before differentiation, not differentiated")

    fg = store.new_graph(f"{name}.fwd")
    fg_obj = store.graph(fg)
    fg_obj.flags.add("ad")
    # shims keep known argument values through specialization: indices and
    # shapes must stay static (tuple ops, distribute), and constants that
    # merely pass through one shim (a shape tuple through make_tuple) must
    # survive to the shim that needs them
    fg_obj.flags.add("static-args")
    ctx.prim_variants[variant] = fg
    params = [store.add_parameter(fg, f"a{i}") for i in range(nargs)]
    value = store.apply(fg, _prim(store, name), params, name="value")

    bg = store.new_graph(f"{name}.bprop")
    store.graph(bg).flags.add("ad")
    d = store.add_parameter(bg, "dout")

    def ap(pname, *args):
        return store.apply(bg, _prim(store, pname), list(args))

    zero_f = store.constant(0.0)
    zero_i = store.constant(0)
    a = params[0] if nargs > 0 else None
    b = params[1] if nargs > 1 else None
    if name == "add":
        slots = [d, d]
    elif name == "sub":
        slots = [d, ap("neg", d)]
    elif name == "mul":
        slots = [ap("mul", d, b), ap("mul", d, a)]
    elif name == "div":
        slots = [ap("div", d, b),
                 ap("neg", ap("div", ap("mul", d, a), ap("mul", b, b)))]
    elif name == "pow":
        da = ap("mul", d, ap("mul", b, ap("pow", a, ap("sub", b, store.constant(1.0)))))
        if const_exp:
            slots = [da, zero_f]
        else:
            slots = [da, ap("mul", d, ap("mul", ap("pow", a, b), ap("log", a)))]
    elif name == "neg":
        slots = [ap("neg", d)]
    elif name == "log":
        slots = [ap("div", d, a)]
    elif name in ("lt", "gt", "le", "ge", "eq", "ne"):
        slots = [ap("zeros_like", a), ap("zeros_like", b)]
    elif name == "switch":
        c, t, f = params
        slots = [ap("zeros_like", c),
                 ap("switch", c, d, ap("zeros_like", t)),
                 ap("switch", c, ap("zeros_like", f), d)]
    elif name == "make_tuple":
        slots = [_getitem(store, bg, d, i) for i in range(nargs)]
    elif name == "tuple_getitem":
        t, i = params
        slots = [ap("tuple_setitem", ap("zeros_like", t), i, d), zero_i]
    elif name == "tuple_setitem":
        t, i, v = params
        slots = [ap("tuple_setitem", d, i, ap("zeros_like", v)), zero_i,
                 ap("tuple_getitem", d, i)]
    elif name == "matmul":
        slots = [ap("matmul", d, ap("transpose", b)),
                 ap("matmul", ap("transpose", a), d)]
    elif name == "transpose":
        slots = [ap("transpose", d)]
    elif name == "reduce_sum":
        slots = [ap("distribute", d, ap("shape_of", a))]
    elif name == "distribute":
        s, shp = params
        slots = [ap("reduce_sum", d), ap("zeros_like", shp)]
    elif name == "shape_of":
        slots = [ap("zeros_like", a)]
    elif name == "gadd":
        slots = [d, d]
    elif name == "zeros_like":
        slots = [ap("zeros_like", a)]
    elif name == "env_get":
        env, key, proto = params
        slots = [ap("env_set", store.constant(EMPTY_ENV), key, d), zero_i,
                 ap("zeros_like", proto)]
    elif name == "env_set":
        env, key, v = params
        zv = ap("zeros_like", v)
        slots = [ap("env_set", d, key, zv), zero_i, ap("env_get", d, key, zv)]
    else:
        raise TransformError(f"no adjoint known for primitive {name}")

    ret_b = store.apply(bg, _prim(store, "make_tuple"),
                        [store.constant(EMPTY_ENV), *slots])
    store.set_return(bg, ret_b)
    ret_f = store.apply(fg, _prim(store, "make_tuple"),
                        [value, store.graph_constant(bg)])
    store.set_return(fg, ret_f)
    return fg


# ---------------------------------------------------------------------------
# graph transform


def augment_graph(ctx: GradContext, gid: int) -> int:
    """Build the (value, backpropagator) twin of ``gid``; memoized."""
    hit = ctx.augmented.get(gid)
    if hit is not None:
        return hit
    store = ctx.store
    g = store.graph(gid)
    if g.return_node is None:
        raise TransformError(f"cannot differentiate incomplete graph {g.name}")

    fg = store.new_graph(f"{g.name}.fwd")
    store.graph(fg).flags.add("ad")
    if "static-args" in g.flags:
        # the twin has the primal's calling convention, including the need
        # for statically known arguments (higher-order transforms hit this)
        store.graph(fg).flags.add("static-args")
    ctx.augmented[gid] = fg
    for p in g.parameters:
        ctx.fwd_nodes[p] = store.add_parameter(fg, store.node(p).name)

    def fwd_ref(nid, callee_of=None):
        got = ctx.fwd_nodes.get(nid)
        if got is not None:
            return got
        node = store.node(nid)
        if node.is_constant:
            value = node.value
            if isinstance(value, GraphRef):
                return store.graph_constant(augment_graph(ctx, value.graph_id))
            if isinstance(value, Primitive):
                nargs = ARITY.get(value.name)
                if callee_of is not None:
                    nargs = len(callee_of.inputs) - 1
                if nargs is None:
                    raise TransformError(f"variadic primitive {value.name} passed as a value")
                const_exp = (
                    value.name == "pow"
                    and callee_of is not None
                    and store.node(callee_of.inputs[2]).is_constant
                )
                return store.graph_constant(
                    primitive_augmented(ctx, value.name, nargs, const_exp))
            return nid  # data constants are their own augmented form
        # a captured node of a graph that was never transformed: reference the
        # primal directly (valid for data; function-valued captures would need
        # their augmented twin and are rejected downstream when called)
        return nid

    schedule = store.schedule(gid)
    bprop_of: dict[int, int] = {}
    for nid in schedule:
        node = store.node(nid)
        callee = fwd_ref(node.inputs[0], callee_of=node)
        args = [fwd_ref(i) for i in node.inputs[1:]]
        call = store.apply(fg, callee, args)
        ctx.fwd_nodes[nid] = _getitem(store, fg, call, 0, name=node.name)
        bprop_of[nid] = _getitem(store, fg, call, 1)

    bg = _build_backprop(ctx, gid, fg, bprop_of)
    ret = store.apply(fg, _prim(store, "make_tuple"),
                      [fwd_ref(g.return_node), store.graph_constant(bg)])
    store.set_return(fg, ret)
    return fg


def _build_backprop(ctx: GradContext, gid: int, fg: int, bprop_of) -> int:
    store = ctx.store
    g = store.graph(gid)
    bg = store.new_graph(f"{g.name}.bprop")
    store.graph(bg).flags.add("ad")
    dout = store.add_parameter(bg, "dout")

    sens: dict[int, int] = {g.return_node: dout}
    consumed: set[int] = set()

    def add_sens(nid, contrib):
        if nid in consumed:
            raise TransformError(
                "captured node receives a contribution after its definition "
                "was already processed; closure referenced before its capture "
                f"is defined (graph {g.name})", graph=g.name)
        prev = sens.get(nid)
        if prev is None:
            sens[nid] = contrib
        else:
            sens[nid] = store.apply(bg, _prim(store, "gadd"), [prev, contrib])

    def fwd_in_bg(nid):
        return ctx.fwd_nodes.get(nid, nid)

    schedule = store.schedule(gid)
    unpack_after: dict[int, list[int]] = {}
    trailing_unpacks: list[int] = []
    seen_consts: set[int] = set()
    for nid in schedule:
        for i in store.node(nid).inputs:
            inode = store.node(i)
            if inode.is_constant and isinstance(inode.value, GraphRef) and i not in seen_consts:
                seen_consts.add(i)
                unpack_after.setdefault(nid, []).append(i)
    rnode = store.node(g.return_node)
    if (rnode.is_constant and isinstance(rnode.value, GraphRef)
            and g.return_node not in seen_consts):
        trailing_unpacks.append(g.return_node)

    def unpack(cnid):
        """Adjoint of closure creation: spread an env over the captured nodes."""
        env_sens = sens.get(cnid)
        if env_sens is None:
            return
        q = store.node(cnid).value.graph_id
        for v in store.free_variables_transitive(q):
            proto = store.apply(bg, _prim(store, "zeros_like"), [fwd_in_bg(v)])
            contrib = store.apply(
                bg, _prim(store, "env_get"),
                [env_sens, store.constant(ctx.key_of(v)), proto])
            add_sens(v, contrib)

    for nid in reversed(schedule):
        node = store.node(nid)
        out_sens = sens.get(nid)
        if out_sens is not None:
            result = store.apply(bg, bprop_of[nid], [out_sens])
            for pos, inp in enumerate(node.inputs):
                inode = store.node(inp)
                if inode.is_constant and not isinstance(inode.value, GraphRef):
                    continue  # gradients with respect to plain constants are unused
                contrib = _getitem(store, bg, result, pos)
                add_sens(inp, contrib)
        consumed.add(nid)
        for cnid in unpack_after.get(nid, ()):
            unpack(cnid)
    for cnid in trailing_unpacks:
        unpack(cnid)

    param_sens = []
    for p in g.parameters:
        s = sens.get(p)
        if s is None:
            s = store.apply(bg, _prim(store, "zeros_like"), [fwd_in_bg(p)])
        param_sens.append(s)

    env_node = store.constant(EMPTY_ENV)
    for v in store.free_variables_transitive(gid):
        s = sens.get(v)
        if s is not None:
            env_node = store.apply(
                bg, _prim(store, "env_set"),
                [env_node, store.constant(ctx.key_of(v)), s])

    ret = store.apply(bg, _prim(store, "make_tuple"), [env_node, *param_sens])
    store.set_return(bg, ret)
    return bg


# ---------------------------------------------------------------------------
# entry points


def grad_graph(store: GraphStore, gid: int, wrt: int = 0, ctx: GradContext | None = None) -> int:
    """Wrapper computing d(output)/d(input ``wrt``) of a scalar-valued graph:
    seed the backpropagator with 1.0 and pick the requested input slot."""
    g = store.graph(gid)
    if not (0 <= wrt < len(g.parameters)):
        raise TransformError(
            f"wrt={wrt} out of range for {g.name} with arity {len(g.parameters)}")
    ctx = ctx or GradContext(store)
    fg = augment_graph(ctx, gid)
    w = store.new_graph(f"{g.name}.grad")
    store.graph(w).flags.add("ad")
    params = [store.add_parameter(w, store.node(p).name) for p in g.parameters]
    call = store.apply(w, store.graph_constant(fg), params)
    bp = _getitem(store, w, call, 1)
    sens = store.apply(w, bp, [store.constant(1.0)])
    store.set_return(w, _getitem(store, w, sens, 1 + wrt))
    return w


def dynamic_grad(store: GraphStore, fn):
    """Runtime form of ``grad`` used by the interpreter for first-class use."""
    from .values import Closure

    if isinstance(fn, Closure):
        return Closure(grad_graph(store, fn.graph_id), fn.frame)
    if isinstance(fn, GraphRef):
        return Closure(grad_graph(store, fn.graph_id), None)
    if isinstance(fn, Primitive):
        nargs = ARITY.get(fn.name)
        if nargs is None:
            raise TransformError(f"grad of variadic primitive {fn.name}")
        shim = store.new_graph(f"{fn.name}.shim")
        params = [store.add_parameter(shim, f"a{i}") for i in range(nargs)]
        store.set_return(shim, store.apply(shim, store.constant(fn), params))
        return Closure(grad_graph(store, shim), None)
    raise TransformError("grad expects a function value")
