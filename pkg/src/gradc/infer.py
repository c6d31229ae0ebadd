"""Type, shape, and constant-value inference with call-site specialization.

Programs arrive untyped. ``infer_root`` clones the entry graph and everything
it calls, once per distinct argument signature, and annotates every node of
the clones with a concrete abstract value, so later stages see monomorphic
code. Function-typed values track the set of graphs or primitives they might
be; calling such a value specializes each referent at the call signature and
joins the results (branch results must agree once known constants are
dropped).

Recursion is resolved by an optimistic fixpoint: a re-entered specialization
temporarily reports bottom, which ``join`` absorbs, and bodies are re-run in
creation order until no result changes. Known constants are widened away at
call boundaries (function references survive) so value-level recursion such
as loop counters cannot spawn unbounded signature sets; the divergence guard
still cuts off genuinely growing signatures, e.g. ever-deeper tuple nesting.

``grad`` is expanded here as a macro: applying it to a statically known
function splices in the gradient wrapper graph built by ``ad``.
"""

from __future__ import annotations

from .errors import (
    InferError,
    ShapeMismatchError,
    SpecializationDivergenceError,
    TypeMismatchError,
)
from .ir import GraphStore
from .values import GraphRef, Primitive, SensEnv, is_tensor

_UNKNOWN = object()

F64 = "f64"
I64 = "i64"
BOOL = "bool"
TENSOR = "tensor"
TUPLE = "tuple"
FUNCTION = "function"
ENV = "env"
BOTTOM = "bottom"


class AV:
    """Abstract value: type tag, optional shape/elements, optional constant."""

    __slots__ = ("tag", "shape", "elems", "known", "fns")

    def __init__(self, tag, shape=None, elems=None, known=_UNKNOWN, fns=None):
        self.tag = tag
        self.shape = shape
        self.elems = elems
        self.known = known
        self.fns = fns

    def key(self):
        if self.tag == TUPLE:
            return (self.tag, tuple(e.key() for e in self.elems))
        if self.tag == TENSOR:
            return (self.tag, self.shape)
        if self.tag == FUNCTION:
            # provenance (the constant node a reference came from) is not part
            # of a function value's identity
            return (self.tag, tuple(sorted({(k, t) for k, t, _ in self.fns})))
        if self.known is not _UNKNOWN:
            return (self.tag, "known", self.known)
        return (self.tag,)

    def __eq__(self, other):
        return isinstance(other, AV) and self.key() == other.key()

    def __hash__(self):
        return hash(self.key())

    def __repr__(self):
        if self.tag == TENSOR:
            return f"t[{','.join(str(d) for d in self.shape)}]"
        if self.tag == TUPLE:
            return "(" + ", ".join(repr(e) for e in self.elems) + ")"
        if self.tag == FUNCTION:
            return f"fn{set(self.fns)}"
        if self.known is not _UNKNOWN:
            return f"{self.tag}={self.known}"
        return self.tag

    def with_known(self, value):
        return AV(self.tag, self.shape, self.elems, value, self.fns)


AV_BOTTOM = AV(BOTTOM)
AV_F64 = AV(F64)
AV_I64 = AV(I64)
AV_BOOL = AV(BOOL)
AV_ENV = AV(ENV)


def av_tensor(shape):
    return AV(TENSOR, shape=tuple(int(d) for d in shape))


def av_tuple(elems):
    return AV(TUPLE, elems=tuple(elems))


def av_function(referents):
    return AV(FUNCTION, fns=frozenset(referents))


def av_of_value(v, keep_known=True, provenance=None) -> AV:
    """Abstract value of a runtime value. Tensor contents never become
    known constants; everything else may. ``provenance`` is the constant
    node a graph reference was read from, kept for callee retargeting."""
    if isinstance(v, bool):
        return AV(BOOL, known=v) if keep_known else AV_BOOL
    if isinstance(v, float):
        return AV(F64, known=v) if keep_known else AV_F64
    if isinstance(v, int):
        return AV(I64, known=v) if keep_known else AV_I64
    if is_tensor(v):
        return av_tensor(v.shape)
    if isinstance(v, tuple):
        return av_tuple(av_of_value(x, keep_known) for x in v)
    if isinstance(v, GraphRef):
        return av_function([("graph", v.graph_id, provenance)])
    if isinstance(v, Primitive):
        return av_function([("prim", v.name, None)])
    if isinstance(v, SensEnv):
        return AV_ENV
    raise InferError(f"value of kind {type(v).__name__} has no abstract form")


def widen(av: AV) -> AV:
    """Drop value-level constants (call-boundary canonicalization); function
    referents and shapes survive."""
    if av.tag == TUPLE:
        return av_tuple(widen(e) for e in av.elems)
    if av.known is _UNKNOWN:
        return av
    return AV(av.tag, av.shape, av.elems, _UNKNOWN, av.fns)


def join(a: AV, b: AV, where="switch") -> AV:
    if a.tag == BOTTOM:
        return b
    if b.tag == BOTTOM:
        return a
    if a.tag != b.tag:
        raise TypeMismatchError(f"{where}: branch types disagree: {a} vs {b}")
    if a.tag == TUPLE:
        if len(a.elems) != len(b.elems):
            raise TypeMismatchError(
                f"{where}: tuple arities disagree: {len(a.elems)} vs {len(b.elems)}")
        return av_tuple(join(x, y, where) for x, y in zip(a.elems, b.elems))
    if a.tag == TENSOR:
        if a.shape != b.shape:
            raise ShapeMismatchError(f"{where}: tensor shapes disagree: {a} vs {b}")
        return a
    if a.tag == FUNCTION:
        return av_function(a.fns | b.fns)
    if a.known is not _UNKNOWN and a.known == b.known:
        return a
    return AV(a.tag)


def sens_structure(av: AV) -> AV:
    """Type of a sensitivity for a value of type ``av`` (functions get envs)."""
    if av.tag == TUPLE:
        return av_tuple(sens_structure(e) for e in av.elems)
    if av.tag == FUNCTION:
        return AV_ENV
    return widen(av)


# ---------------------------------------------------------------------------
# signatures


def parse_signature(text: str) -> list[AV]:
    """CLI signature syntax: ``f64, i64, bool, t[2,3], (f64, t[3])``."""
    pos = 0

    def skip_ws():
        nonlocal pos
        while pos < len(text) and text[pos] in " \t":
            pos += 1

    def fail(msg):
        raise InferError(f"bad signature: {msg} at column {pos + 1}")

    def one() -> AV:
        nonlocal pos
        skip_ws()
        if text.startswith("f64", pos):
            pos += 3
            return AV_F64
        if text.startswith("i64", pos):
            pos += 3
            return AV_I64
        if text.startswith("bool", pos):
            pos += 4
            return AV_BOOL
        if text.startswith("env", pos):
            pos += 3
            return AV_ENV
        if text.startswith("t[", pos):
            pos += 2
            dims = []
            skip_ws()
            while not text.startswith("]", pos):
                start = pos
                while pos < len(text) and text[pos].isdigit():
                    pos += 1
                if pos == start:
                    fail("expected a dimension")
                dims.append(int(text[start:pos]))
                skip_ws()
                if text.startswith(",", pos):
                    pos += 1
                    skip_ws()
            pos += 1
            return av_tensor(dims)
        if text.startswith("(", pos):
            pos += 1
            elems = []
            skip_ws()
            while not text.startswith(")", pos):
                elems.append(one())
                skip_ws()
                if text.startswith(",", pos):
                    pos += 1
                    skip_ws()
            pos += 1
            return av_tuple(elems)
        fail("unknown type")

    out = []
    skip_ws()
    while pos < len(text):
        out.append(one())
        skip_ws()
        if pos < len(text):
            if not text.startswith(",", pos):
                fail("expected ','")
            pos += 1
            skip_ws()
    return out


# ---------------------------------------------------------------------------
# primitive rules


def _want(name, cond, msg, node=None):
    if not cond:
        raise TypeMismatchError(f"{name}: {msg}", node=node)


def _elementwise(name, a, b, node, int_ok=True):
    if a.tag == F64 and b.tag == F64:
        return AV_F64
    if int_ok and a.tag == I64 and b.tag == I64:
        return AV_I64
    if a.tag == TENSOR and b.tag == TENSOR:
        if a.shape != b.shape:
            raise ShapeMismatchError(
                f"{name}: elementwise shape mismatch {a} vs {b}", node=node)
        return a
    raise TypeMismatchError(f"{name}: bad operand types {a}, {b}", node=node)


class Rules:
    """Per-primitive type/shape/known-constant rules."""

    def __init__(self, session):
        self.session = session

    def apply(self, name, args, node):
        fn = getattr(self, f"rule_{name}", None)
        if fn is None:
            raise InferError(f"no inference rule for primitive {name}", node=node)
        if any(a.tag == BOTTOM for a in args) and name != "switch":
            return AV_BOTTOM
        out = fn(args, node)
        return self._propagate_known(name, args, out)

    def _propagate_known(self, name, args, out: AV):
        if out.tag not in (F64, I64, BOOL) or out.known is not _UNKNOWN:
            return out
        if name in ("make_tuple", "switch", "env_get", "env_set", "zeros_like", "gadd"):
            return out
        knowns = []
        for a in args:
            if a.known is _UNKNOWN:
                return out
            knowns.append(a.known)
        from .primitives import KERNELS

        try:
            value = KERNELS[name](knowns)
        except Exception:
            return out
        if isinstance(value, (bool, int, float)):
            return out.with_known(value)
        return out

    def rule_add(self, args, node):
        return _elementwise("add", args[0], args[1], node)

    def rule_sub(self, args, node):
        return _elementwise("sub", args[0], args[1], node)

    def rule_mul(self, args, node):
        return _elementwise("mul", args[0], args[1], node)

    def rule_div(self, args, node):
        return _elementwise("div", args[0], args[1], node, int_ok=False)

    def rule_pow(self, args, node):
        a, b = args
        _want("pow", a.tag == F64 and b.tag == F64, f"scalar floats required, got {a}, {b}", node)
        return AV_F64

    def rule_neg(self, args, node):
        (a,) = args
        _want("neg", a.tag in (F64, I64, TENSOR), f"bad operand {a}", node)
        return AV(a.tag, a.shape)

    def rule_log(self, args, node):
        _want("log", args[0].tag == F64, f"scalar float required, got {args[0]}", node)
        return AV_F64

    def _cmp(self, name, args, node, bool_ok=False):
        a, b = args
        ok = (a.tag == F64 and b.tag == F64) or (a.tag == I64 and b.tag == I64)
        if bool_ok:
            ok = ok or (a.tag == BOOL and b.tag == BOOL)
        _want(name, ok, f"bad operand types {a}, {b}", node)
        return AV_BOOL

    def rule_lt(self, args, node):
        return self._cmp("lt", args, node)

    def rule_gt(self, args, node):
        return self._cmp("gt", args, node)

    def rule_le(self, args, node):
        return self._cmp("le", args, node)

    def rule_ge(self, args, node):
        return self._cmp("ge", args, node)

    def rule_eq(self, args, node):
        return self._cmp("eq", args, node, bool_ok=True)

    def rule_ne(self, args, node):
        return self._cmp("ne", args, node, bool_ok=True)

    def rule_switch(self, args, node):
        c, t, f = args
        if c.tag == BOTTOM:
            return AV_BOTTOM
        _want("switch", c.tag == BOOL, f"condition must be bool, got {c}", node)
        if c.known is not _UNKNOWN:
            return t if c.known else f
        return join(t, f)

    def rule_make_tuple(self, args, node):
        return av_tuple(args)

    def _static_index(self, name, t, i, node):
        _want(name, t.tag == TUPLE, f"not a tuple: {t}", node)
        _want(name, i.tag == I64, f"index must be an integer, got {i}", node)
        if i.known is _UNKNOWN:
            raise InferError(f"{name}: tuple index must be a static constant", node=node)
        idx = i.known
        if not (0 <= idx < len(t.elems)):
            raise InferError(
                f"{name}: index {idx} out of range for arity {len(t.elems)}", node=node)
        return idx

    def rule_tuple_getitem(self, args, node):
        t, i = args
        idx = self._static_index("tuple_getitem", t, i, node)
        return t.elems[idx]

    def rule_tuple_setitem(self, args, node):
        t, i, v = args
        idx = self._static_index("tuple_setitem", t, i, node)
        elems = list(t.elems)
        elems[idx] = v
        return av_tuple(elems)

    def rule_matmul(self, args, node):
        a, b = args
        _want("matmul", a.tag == TENSOR and b.tag == TENSOR, f"tensors required, got {a}, {b}", node)
        _want("matmul", len(a.shape) == 2 and len(b.shape) == 2, "rank-2 tensors required", node)
        if a.shape[1] != b.shape[0]:
            raise ShapeMismatchError(
                f"matmul: inner dimensions disagree {a} vs {b}", node=node)
        return av_tensor((a.shape[0], b.shape[1]))

    def rule_transpose(self, args, node):
        (a,) = args
        _want("transpose", a.tag == TENSOR and len(a.shape) == 2, f"rank-2 tensor required, got {a}", node)
        return av_tensor((a.shape[1], a.shape[0]))

    def rule_reduce_sum(self, args, node):
        _want("reduce_sum", args[0].tag == TENSOR, f"tensor required, got {args[0]}", node)
        return AV_F64

    def rule_distribute(self, args, node):
        s, shp = args
        _want("distribute", s.tag == F64, f"scalar float required, got {s}", node)
        _want("distribute", shp.tag == TUPLE, f"shape tuple required, got {shp}", node)
        dims = []
        for e in shp.elems:
            _want("distribute", e.tag == I64, "shape entries must be integers", node)
            if e.known is _UNKNOWN:
                raise InferError("distribute: shape must be statically known", node=node)
            dims.append(e.known)
        return av_tensor(dims)

    def rule_shape_of(self, args, node):
        (a,) = args
        _want("shape_of", a.tag == TENSOR, f"tensor required, got {a}", node)
        return av_tuple(AV(I64, known=int(d)) for d in a.shape)

    def rule_gadd(self, args, node):
        a, b = args
        return join(widen(a), widen(b), where="gadd")

    def rule_zeros_like(self, args, node):
        return sens_structure(args[0])

    def rule_env_get(self, args, node):
        env, key, proto = args
        _want("env_get", env.tag == ENV, f"env required, got {env}", node)
        _want("env_get", key.tag == I64, "key must be an integer", node)
        return widen(proto)

    def rule_env_set(self, args, node):
        env, key, v = args
        _want("env_set", env.tag == ENV, f"env required, got {env}", node)
        _want("env_set", key.tag == I64, "key must be an integer", node)
        return AV_ENV


def primitive_rule(name: str, args: list[AV], node=None) -> AV:
    """Standalone rule evaluation (no session side effects)."""
    return Rules(None).apply(name, list(args), node)


# ---------------------------------------------------------------------------
# the specialization session


MAX_SIGNATURES = 100
MAX_ROUNDS = 64


class _Entry:
    __slots__ = ("origin", "sig", "spec", "result", "in_progress", "reentered", "inplace")

    def __init__(self, origin, sig, spec, inplace):
        self.origin = origin
        self.sig = sig
        self.spec = spec
        self.result = AV_BOTTOM
        self.in_progress = True
        self.reentered = False
        self.inplace = inplace


class InferSession:
    def __init__(self, store: GraphStore):
        self.store = store
        self.rules = Rules(self)
        self.entries: dict = {}       # (gid, sig key) -> _Entry
        self.order: list = []         # entries in creation order
        self.av: dict[int, AV] = {}   # node -> abstract value
        self.private: set[int] = set()
        self.inplace_sig: dict[int, tuple] = {}
        self.sig_seen: dict[int, set] = {}
        self.origin_of: dict[int, int] = {}
        self._gradctx = None

    # -- helpers -----------------------------------------------------------

    def _origin(self, gid) -> int:
        while gid in self.origin_of:
            gid = self.origin_of[gid]
        return gid

    def node_av(self, nid) -> AV:
        got = self.av.get(nid)
        if got is not None:
            return got
        node = self.store.node(nid)
        if node.is_constant:
            av = av_of_value(node.value, provenance=nid)
            self.av[nid] = av
            return av
        raise InferError(
            f"node %{nid} has no abstract value yet (inference order violated)")

    infer_node = node_av

    # -- specialization ----------------------------------------------------

    def specialize(self, gid: int, sig: tuple) -> _Entry:
        g = self.store.graph(gid)
        if "static-args" not in g.flags:
            sig = tuple(widen(a) for a in sig)
        else:
            sig = tuple(sig)
        if len(sig) != len(g.parameters):
            raise InferError(
                f"{g.name} expects {len(g.parameters)} arguments, got {len(sig)}",
                graph=g.name)
        key = (gid, tuple(a.key() for a in sig))
        entry = self.entries.get(key)
        if entry is not None:
            if entry.in_progress:
                entry.reentered = True
            return entry

        # static-args shims are non-recursive leaves whose signature count is
        # bounded by the number of call-site shapes; only real functions can
        # diverge (their signatures grow through recursion)
        if "static-args" not in g.flags:
            origin = self._origin(gid)
            seen = self.sig_seen.setdefault(origin, set())
            seen.add(key[1])
            if len(seen) > MAX_SIGNATURES:
                raise SpecializationDivergenceError(
                    f"specialization divergence: {self.store.graph(origin).name} "
                    f"accumulated more than {MAX_SIGNATURES} signatures",
                    graph=self.store.graph(origin).name)

        if gid in self.private and gid not in self.inplace_sig:
            # fresh private clone: annotate it in place, no second copy
            self.inplace_sig[gid] = key[1]
            entry = _Entry(gid, sig, gid, inplace=True)
        else:
            spec = self.store.clone_graph(gid, name_suffix="")
            self.store.graph(spec).flags.add("specialized")
            self.origin_of[spec] = gid
            for fam in self.store.clone_family(spec):
                self.private.add(fam)
            entry = _Entry(gid, sig, spec, inplace=False)
            # calls reaching the clone directly resolve to the same entry
            self.entries[(spec, key[1])] = entry
            self.inplace_sig[spec] = key[1]
        self.entries[key] = entry
        self.order.append(entry)
        self._run_body(entry)
        entry.in_progress = False
        return entry

    def _run_body(self, entry: _Entry) -> bool:
        """(Re-)infer one specialized body; returns True if its result moved."""
        store = self.store
        g = store.graph(entry.spec)
        for nid in store.schedule(entry.spec):
            self.av.pop(nid, None)
        for p, av in zip(g.parameters, entry.sig):
            self.av[p] = av
        for nid in store.schedule(entry.spec):
            self.av[nid] = self._infer_apply(nid)
        result = self.node_av(g.return_node)
        moved = result != entry.result
        entry.result = result
        return moved

    def _infer_apply(self, nid) -> AV:
        store = self.store
        node = store.node(nid)
        callee = self.node_av(node.inputs[0])
        args = [self.node_av(i) for i in node.inputs[1:]]
        if callee.tag == BOTTOM:
            return AV_BOTTOM
        if callee.tag != FUNCTION:
            raise TypeMismatchError(
                f"value of type {callee} is not callable", node=nid)
        by_target: dict = {}
        for kind, target, prov in callee.fns:
            by_target.setdefault((kind, target), []).append(prov)
        result = None
        for (kind, target), provs in sorted(by_target.items(), key=lambda kv: kv[0]):
            out = self._apply_referent(kind, target, provs, args, nid)
            result = out if result is None else join(result, out, where="call")
        if result is None:
            raise InferError("call through a function value with no referents", node=nid)
        return result

    def _apply_referent(self, kind, target, provs, args, nid) -> AV:
        if kind == "prim":
            if target == "grad":
                return self._expand_grad(args, nid)
            return self.rules.apply(target, args, nid)
        entry = self.specialize(target, tuple(args))
        if not entry.inplace and entry.spec != target:
            self._retarget(target, provs, entry.spec, nid)
        return entry.result

    def _retarget(self, target, provs, spec, nid):
        """Make the call site reach the specialized clone.

        A direct graph-constant callee gets its edge swapped (per call site,
        so one function may specialize differently per site). A reference
        that flowed through data is retargeted at its origin constant, which
        is sound only while that constant belongs to this specialization's
        private clones.
        """
        store = self.store
        callee_input = store.node(nid).inputs[0]
        cnode = store.node(callee_input)
        if (cnode.is_constant and isinstance(cnode.value, GraphRef)
                and cnode.value.graph_id == target):
            store.set_input(nid, 0, store.graph_constant(spec))
            return
        retargeted = False
        for prov in provs:
            if prov is None or not store.has_node(prov):
                continue
            pnode = store.node(prov)
            if not (pnode.is_constant and isinstance(pnode.value, GraphRef)):
                continue
            if pnode.value.graph_id == spec:
                retargeted = True  # an earlier round already moved it
                continue
            if pnode.value.graph_id != target:
                continue
            if all(store.node(u).owner in self.private
                   for u, _ in store.users(prov)):
                store.retarget_graph_constant(prov, spec)
                self.av[prov] = av_of_value(GraphRef(spec), provenance=prov)
                retargeted = True
        if not retargeted:
            raise InferError(
                "a function value that flowed through data is used at a second "
                "signature; calls like this need a direct reference", node=nid)

    def _expand_grad(self, args, nid) -> AV:
        from .ad import GradContext, grad_graph

        (fn,) = args
        if fn.tag == BOTTOM:
            return AV_BOTTOM
        if fn.tag != FUNCTION:
            raise TypeMismatchError(f"grad expects a function, got {fn}", node=nid)
        graphs = sorted({t for k, t, _ in fn.fns if k == "graph"})
        if len({(k, t) for k, t, _ in fn.fns}) != 1 or not graphs:
            raise InferError("grad needs exactly one statically known function", node=nid)
        if self._gradctx is None:
            self._gradctx = GradContext(self.store)
        wrapper = grad_graph(self.store, graphs[0], 0, self._gradctx)
        wrapper_const = self.store.graph_constant(wrapper)
        self.store.replace_node(nid, wrapper_const)
        return av_of_value(GraphRef(wrapper))

    # -- driver -------------------------------------------------------------

    def infer_root(self, gid: int, sig) -> tuple[int, AV]:
        root = self.specialize(gid, tuple(sig))
        for _ in range(MAX_ROUNDS):
            moved = False
            for entry in list(self.order):
                if self._run_body(entry):
                    moved = True
            if not moved:
                break
        else:
            raise InferError("inference did not stabilize within the round bound")
        if root.result.tag == BOTTOM:
            raise InferError(
                f"recursion in {self.store.graph(root.origin).name} never reaches "
                "a base case (result stayed undetermined)")
        self.store.types.update(self.av)
        return root.spec, root.result


def infer_root(store: GraphStore, gid: int, sig) -> tuple[int, AV]:
    return InferSession(store).infer_root(gid, sig)
