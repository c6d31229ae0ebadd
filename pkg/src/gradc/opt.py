"""Equilibrium graph rewriting.

The pass schedule per round is: inline, tuple/env rules, constant folding,
algebraic identities, common-subexpression elimination, dead-code
elimination. Rounds repeat until a full round changes nothing (or the bound
trips). Inlining non-recursive calls first exposes the tuple packing and env
plumbing the gradient transform emits, which the local rules then erase; on
gradient wrappers the survivors are just the arithmetic a person would have
written.

Rules are local and exact: no floating-point reassociation, identity and
annihilator rewrites only, so optimized programs reproduce unoptimized
results bit for bit (constant folding evaluates the same kernels the
interpreter runs).
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .errors import OptError, VMError
from .ir import GraphStore
from .values import EMPTY_ENV, GraphRef, Primitive, SensEnv
from .vm import primitive_eval

TENSOR_FOLD_LIMIT = 256  # elements; folding must not embed big tensors


@dataclass
class OptConfig:
    rules: set = field(default_factory=lambda: set(ALL_RULES))
    inline_enabled: bool = True
    inline_threshold: int | None = None  # node count; None = always
    fold_enabled: bool = True
    cse_enabled: bool = True
    dce_enabled: bool = True
    max_rounds: int = 1000
    audit: bool = False
    trace: list | None = None
    dump_after: str | None = None
    dump_sink: dict | None = None


def level_config(level: int) -> OptConfig:
    if level <= 0:
        return OptConfig(rules=set(), inline_enabled=False, fold_enabled=False,
                         cse_enabled=False, dce_enabled=False, max_rounds=1)
    if level == 1:
        return OptConfig(rules=set(TUPLE_RULES), inline_enabled=False,
                         cse_enabled=False)
    return OptConfig()


def _trace(cfg, rule, nid):
    if cfg.trace is not None:
        cfg.trace.append(f"RULE {rule} @%{nid}")


def _callee_prim(store, nid):
    node = store.node(nid)
    if not node.is_apply:
        return None
    callee = store.node(node.inputs[0])
    if callee.is_constant and isinstance(callee.value, Primitive):
        return callee.value.name
    return None


def _const(store, nid):
    node = store.node(nid)
    if node.is_constant and not isinstance(node.value, GraphRef):
        return node.value
    return None


def _is_zero(store, nid):
    node = store.node(nid)
    if node.is_constant:
        v = node.value
        if isinstance(v, bool):
            return v is False
        if isinstance(v, float):
            return v == 0.0
        if isinstance(v, int):
            return v == 0
        if isinstance(v, SensEnv):
            return not v.entries
        return False
    return _callee_prim(store, nid) == "zeros_like"


# ---------------------------------------------------------------------------
# local rules: fn(store, nid) -> replacement node id or None


def rule_tuple_getitem(store, nid):
    if _callee_prim(store, nid) != "tuple_getitem":
        return None
    src, idx = store.node(nid).inputs[1:]
    i = _const(store, idx)
    if not isinstance(i, int) or isinstance(i, bool):
        return None
    inner = _callee_prim(store, src)
    if inner == "make_tuple":
        elems = store.node(src).inputs[1:]
        if 0 <= i < len(elems):
            return elems[i]
    if inner == "tuple_setitem":
        t, j, v = store.node(src).inputs[1:]
        jv = _const(store, j)
        if isinstance(jv, int) and not isinstance(jv, bool):
            if jv == i:
                return v
            return store.apply(store.node(nid).owner,
                               store.node(nid).inputs[0], [t, idx])
    return None


def rule_env_get(store, nid):
    if _callee_prim(store, nid) != "env_get":
        return None
    env, key, proto = store.node(nid).inputs[1:]
    k = _const(store, key)
    envnode = store.node(env)
    if envnode.is_constant and isinstance(envnode.value, SensEnv) and not envnode.value.entries:
        return proto
    if _callee_prim(store, env) == "env_set":
        e2, key2, v = store.node(env).inputs[1:]
        k2 = _const(store, key2)
        if isinstance(k, int) and isinstance(k2, int):
            if k == k2:
                return v
            return store.apply(store.node(nid).owner,
                               store.node(nid).inputs[0], [e2, key, proto])
    return None


def rule_gadd_zero(store, nid):
    if _callee_prim(store, nid) != "gadd":
        return None
    a, b = store.node(nid).inputs[1:]
    if _is_zero(store, b):
        return a
    if _is_zero(store, a):
        return b
    return None


def rule_arith_identity(store, nid):
    name = _callee_prim(store, nid)
    node = store.node(nid)
    if name == "mul":
        a, b = node.inputs[1:]
        if _const(store, b) == 1.0:
            return a
        if _const(store, a) == 1.0:
            return b
        # exact-zero annihilator: total in this pure language (spec'd rule;
        # deliberately collapses 0*inf to 0 like any symbolic simplifier)
        if _const(store, b) == 0.0 or _const(store, a) == 0.0:
            return store.constant(0.0)
    elif name == "add":
        a, b = node.inputs[1:]
        if _const(store, b) == 0.0:
            return a
        if _const(store, a) == 0.0:
            return b
    elif name == "sub":
        a, b = node.inputs[1:]
        if _const(store, b) == 0.0:
            return a
    elif name == "div":
        a, b = node.inputs[1:]
        if _const(store, b) == 1.0:
            return a
    elif name == "pow":
        a, b = node.inputs[1:]
        if _const(store, b) == 1.0:
            return a
    elif name == "neg":
        (a,) = node.inputs[1:]
        if _callee_prim(store, a) == "neg":
            return store.node(a).inputs[1]
    elif name == "transpose":
        (a,) = node.inputs[1:]
        if _callee_prim(store, a) == "transpose":
            return store.node(a).inputs[1]
    return None


def rule_switch_const(store, nid):
    if _callee_prim(store, nid) != "switch":
        return None
    c, t, f = store.node(nid).inputs[1:]
    cv = _const(store, c)
    if cv is True:
        return t
    if cv is False:
        return f
    return None


TUPLE_RULES = {
    "tuple_getitem": rule_tuple_getitem,
    "env_get": rule_env_get,
    "gadd_zero": rule_gadd_zero,
    "switch_const": rule_switch_const,
}

ALGEBRAIC_RULES = {
    "arith_identity": rule_arith_identity,
}

ALL_RULES = {**TUPLE_RULES, **ALGEBRAIC_RULES}


# ---------------------------------------------------------------------------
# passes


def _reachable_applies(store, roots):
    nodes, graphs = store.reachable(roots)
    out = []
    for gid in sorted(graphs):
        if gid in store._graphs and store.graph(gid).return_node is not None:
            out.extend(store.schedule(gid))
    return out


def apply_rule(rule_name, rule_fn, store, roots, cfg) -> bool:
    """Apply one rule to equilibrium. Rewrites are applied in bulk per
    snapshot: the rule re-reads the store at each site, so earlier rewrites
    in the same sweep are already visible to later ones."""
    changed = False
    while True:
        hits = 0
        for nid in _reachable_applies(store, roots):
            if not store.has_node(nid):
                continue
            replacement = rule_fn(store, nid)
            if replacement is not None and replacement != nid:
                store.replace_node(nid, replacement)
                _trace(cfg, rule_name, nid)
                hits += 1
        if hits == 0:
            return changed
        changed = True


def run_rules(store, roots, cfg, names) -> bool:
    changed = False
    for name in names:
        if name in cfg.rules:
            if apply_rule(name, ALL_RULES[name], store, roots, cfg):
                changed = True
    return changed


def constant_fold(store, roots, cfg=None) -> bool:
    cfg = cfg or OptConfig()
    any_change = False
    while True:
        hits = 0
        for nid in _reachable_applies(store, roots):
            if not store.has_node(nid):
                continue
            name = _callee_prim(store, nid)
            if name is None or name == "grad":
                continue
            inputs = store.node(nid).inputs[1:]
            values = []
            ok = True
            for i in inputs:
                inode = store.node(i)
                if inode.is_constant and not isinstance(inode.value, GraphRef):
                    values.append(inode.value)
                else:
                    ok = False
                    break
            if not ok:
                continue
            if name == "div" and len(values) == 2 and values[1] == 0.0:
                _trace(cfg, "fold_skipped_div_by_zero", nid)
                continue
            try:
                result = primitive_eval(name, values)
            except VMError:
                _trace(cfg, "fold_skipped_error", nid)
                continue
            if hasattr(result, "size") and result.size > TENSOR_FOLD_LIMIT:
                continue
            store.replace_node(nid, store.constant(result))
            _trace(cfg, "constant_fold", nid)
            hits += 1
        if hits == 0:
            return any_change
        any_change = True


def cse(store, roots, cfg=None) -> bool:
    """Merge structurally identical applies within one graph (never across
    graph boundaries: that would change capture sets)."""
    cfg = cfg or OptConfig()
    changed = False
    nodes, graphs = store.reachable(roots)
    for gid in sorted(graphs):
        if store.graph(gid).return_node is None:
            continue
        progress = True
        while progress:
            progress = False
            seen = {}
            for nid in store.schedule(gid):
                if not store.has_node(nid):
                    continue
                key = tuple(store.node(nid).inputs)
                first = seen.get(key)
                if first is None:
                    seen[key] = nid
                elif first != nid:
                    store.replace_node(nid, first)
                    _trace(cfg, "cse", nid)
                    changed = True
                    progress = True
                    # merged nodes may unify downstream keys; one more sweep
    return changed


def dce(store, roots, cfg=None) -> bool:
    cfg = cfg or OptConfig()
    live_nodes, live_graphs = store.reachable(roots)
    changed = False
    # delete dead applies users-first with a worklist; deleting a node may
    # free its inputs
    dead = [nid for nid, node in store._nodes.items()
            if node.is_apply and nid not in live_nodes]
    queue = [nid for nid in dead if not store._uses.get(nid)]
    dead_set = set(dead)
    while queue:
        nid = queue.pop()
        node = store._nodes.get(nid)
        if node is None or store._uses.get(nid):
            continue
        inputs = list(node.inputs)
        store.delete_node(nid)
        _trace(cfg, "dce", nid)
        changed = True
        for i in inputs:
            if i in dead_set and store.has_node(i) and not store._uses.get(i):
                queue.append(i)
    for gid in list(store._graphs):
        if gid not in live_graphs:
            g = store.graph(gid)
            keep = any(store._uses.get(p) for p in g.parameters)
            if not keep:
                store.delete_graph(gid)
                _trace(cfg, "dce_graph", gid)
                changed = True
    for nid in list(store._nodes):
        node = store._nodes.get(nid)
        if node is None or not node.is_constant:
            continue
        if nid not in live_nodes and not store._uses.get(nid):
            store.delete_node(nid)
            changed = True
    return changed


def inline(store, call_site, cfg=None) -> bool:
    """Inline one call whose callee is a non-recursive graph constant."""
    cfg = cfg or OptConfig()
    node = store.node(call_site)
    callee_node = store.node(node.inputs[0])
    if not (callee_node.is_constant and isinstance(callee_node.value, GraphRef)):
        return False
    target = callee_node.value.graph_id
    if target not in store._graphs:
        return False
    g = store.graph(target)
    if g.return_node is None:
        return False
    if len(g.parameters) != len(node.inputs) - 1:
        return False
    if store.is_recursive(target):
        return False  # recursive callees stay as calls
    if cfg.inline_threshold is not None and "ad" not in g.flags:
        if len(store.schedule(target)) > cfg.inline_threshold:
            return False
    caller = node.owner
    subst = dict(zip(g.parameters, node.inputs[1:]))
    clone = store.clone_graph(target, substitutions=subst)
    cg = store.graph(clone)
    for moved in store.schedule(clone):
        store.change_owner(moved, caller)
    ret = cg.return_node
    store.delete_graph(clone)
    store.replace_node(call_site, ret)
    store.delete_node(call_site)
    _trace(cfg, "inline", call_site)
    return True


def inline_pass(store, roots, cfg) -> bool:
    if not cfg.inline_enabled:
        return False
    changed = False
    while True:
        hits = 0
        for nid in _reachable_applies(store, roots):
            if not store.has_node(nid):
                continue
            if inline(store, nid, cfg):
                hits += 1
        if hits == 0:
            return changed
        changed = True


PASS_ORDER = ("inline", "tuple", "fold", "algebraic", "cse", "dce")


def optimize(store: GraphStore, roots, cfg: OptConfig | None = None) -> int:
    """Run passes to equilibrium; returns the number of rounds executed."""
    cfg = cfg or OptConfig()

    def after(pass_name):
        if cfg.dump_after == pass_name and cfg.dump_sink is not None:
            from .irtext import dump_text

            cfg.dump_sink[pass_name] = dump_text(store, roots)

    rounds = 0
    while True:
        if rounds >= cfg.max_rounds:
            raise OptError(
                f"optimizer did not reach equilibrium within {cfg.max_rounds} rounds")
        rounds += 1
        changed = False
        changed |= inline_pass(store, roots, cfg)
        after("inline")
        changed |= run_rules(store, roots, cfg, TUPLE_RULES)
        after("tuple")
        if cfg.fold_enabled:
            changed |= constant_fold(store, roots, cfg)
        after("fold")
        changed |= run_rules(store, roots, cfg, ALGEBRAIC_RULES)
        after("algebraic")
        if cfg.cse_enabled:
            changed |= cse(store, roots, cfg)
        after("cse")
        if cfg.dce_enabled:
            changed |= dce(store, roots, cfg)
        after("dce")
        if cfg.audit:
            store.audit()
        if not changed:
            break
    return rounds
