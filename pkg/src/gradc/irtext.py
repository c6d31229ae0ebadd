"""Textual IR: deterministic ANF-style dump and its parser.

One block per graph:

    graph f(%x) {
      %a = pow(%x, 3.0);
      return %a
    }

Bindings appear in depth-first ANF schedule order. Constants print as value
literals, primitives by bare name, graph references as ``@name``. Node names
are unique across the whole dump so a nested graph can reference a node of an
enclosing graph directly (that reference *is* a free variable).

Value literal syntax (shared with the CLI): ``2.0``, ``true``, ``7i``,
``t[2,2](1.0,2.0,3.0,4.0)`` row-major, ``(a, b)`` tuples, ``env{3: 1.0}``.
"""

from __future__ import annotations

import re

from .errors import IRError, ParseError
from .ir import GraphStore
from .primitives import ARITY, BY_NAME
from .values import GraphRef, Primitive, SensEnv, is_tensor, make_tensor

_NAME_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_.]*")


# ---------------------------------------------------------------------------
# value literals


def format_value(v, float_repr=repr) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return float_repr(v)
    if isinstance(v, int):
        return f"{v}i"
    if is_tensor(v):
        dims = ",".join(str(d) for d in v.shape)
        data = ",".join(float_repr(float(x)) for x in v.ravel())
        return f"t[{dims}]({data})"
    if isinstance(v, tuple):
        if not v:
            return "()"
        if len(v) == 1:
            return f"({format_value(v[0], float_repr)},)"
        return "(" + ", ".join(format_value(x, float_repr) for x in v) + ")"
    if isinstance(v, SensEnv):
        inner = ", ".join(
            f"{k}: {format_value(val, float_repr)}" for k, val in sorted(v.entries.items())
        )
        return f"env{{{inner}}}"
    if isinstance(v, Primitive):
        return v.name
    raise IRError(f"value of kind {type(v).__name__} has no literal form")


def format_result(v) -> str:
    """CLI result printing: floats with 17 significant digits."""

    def f17(x):
        s = f"{x:.17g}"
        if not any(c in s for c in ".en"):  # keep a float marker
            s += ".0"
        return s

    return format_value(v, float_repr=f17)


class _Scanner:
    def __init__(self, text: str, what="value"):
        self.text = text
        self.pos = 0
        self.what = what

    def error(self, msg):
        line = self.text.count("\n", 0, self.pos) + 1
        col = self.pos - (self.text.rfind("\n", 0, self.pos) + 1) + 1
        raise ParseError(f"{self.what}: {msg}", line=line, col=col)

    def skip_ws(self):
        while self.pos < len(self.text) and self.text[self.pos] in " \t\r\n":
            self.pos += 1

    def peek(self):
        self.skip_ws()
        return self.text[self.pos] if self.pos < len(self.text) else ""

    def eat(self, ch):
        self.skip_ws()
        if not self.text.startswith(ch, self.pos):
            self.error(f"expected {ch!r}")
        self.pos += len(ch)

    def try_eat(self, ch):
        self.skip_ws()
        if self.text.startswith(ch, self.pos):
            self.pos += len(ch)
            return True
        return False

    def name(self):
        self.skip_ws()
        m = _NAME_RE.match(self.text, self.pos)
        if not m:
            self.error("expected a name")
        self.pos = m.end()
        return m.group()

    def number(self):
        self.skip_ws()
        m = re.match(
            r"-?(?:inf|nan|\d+\.\d*(?:[eE][-+]?\d+)?|\d+[eE][-+]?\d+|\.\d+(?:[eE][-+]?\d+)?|\d+)",
            self.text[self.pos :],
        )
        if not m:
            self.error("expected a number")
        tok = m.group()
        self.pos += m.end()
        if self.text.startswith("i", self.pos) and not tok.startswith(("inf", "-inf")):
            self.pos += 1
            return int(tok)
        if any(c in tok for c in ".eE") or "inf" in tok or "nan" in tok:
            return float(tok)
        return float(tok)  # bare integer-looking literal is a float

    def at_end(self):
        self.skip_ws()
        return self.pos >= len(self.text)


def _scan_value(s: _Scanner):
    ch = s.peek()
    if ch == "(":
        s.eat("(")
        if s.try_eat(")"):
            return ()
        items = [_scan_value(s)]
        trailing = False
        while s.try_eat(","):
            if s.peek() == ")":
                trailing = True
                break
            items.append(_scan_value(s))
        s.eat(")")
        if len(items) == 1 and not trailing:
            s.error("tuples need a comma: use (x,)")
        return tuple(items)
    if ch == "t" and s.text.startswith("t[", s.pos):
        s.eat("t[")
        dims = []
        if not s.try_eat("]"):
            while True:
                n = s.number()
                if isinstance(n, float) and not n.is_integer():
                    s.error("tensor dims must be integers")
                dims.append(int(n))
                if not s.try_eat(","):
                    break
            s.eat("]")
        s.eat("(")
        data = []
        if not s.try_eat(")"):
            while True:
                data.append(float(s.number()))
                if not s.try_eat(","):
                    break
            s.eat(")")
        size = 1
        for d in dims:
            size *= d
        if len(data) != size:
            s.error(f"tensor literal: {len(data)} values for shape {tuple(dims)}")
        return make_tensor(tuple(dims), data)
    if ch == "e" and s.text.startswith("env{", s.pos):
        s.eat("env{")
        entries = {}
        if not s.try_eat("}"):
            while True:
                k = s.number()
                if isinstance(k, float):
                    if not k.is_integer():
                        s.error("env keys are integers")
                    k = int(k)
                s.eat(":")
                entries[k] = _scan_value(s)
                if not s.try_eat(","):
                    break
            s.eat("}")
        return SensEnv(entries)
    if ch.isdigit() or ch in "-.":
        return s.number()
    word = s.name()
    if word == "true":
        return True
    if word == "false":
        return False
    if word in ("inf", "nan"):
        return float(word)
    s.error(f"unknown value literal {word!r}")


def parse_value(text: str):
    s = _Scanner(text)
    v = _scan_value(s)
    if not s.at_end():
        s.error("trailing input after value")
    return v


# ---------------------------------------------------------------------------
# dump


def _sanitize(name: str) -> str:
    out = re.sub(r"[^A-Za-z0-9_.]", "_", name or "")
    if not out or not (out[0].isalpha() or out[0] == "_"):
        out = "g" + out
    return out


class _Namer:
    def __init__(self):
        self.taken = set()

    def fresh(self, base):
        base = _sanitize(base)
        if base not in self.taken:
            self.taken.add(base)
            return base
        i = 2
        while f"{base}.{i}" in self.taken:
            i += 1
        name = f"{base}.{i}"
        self.taken.add(name)
        return name


def _dump_order(store: GraphStore, roots) -> list[int]:
    """Roots first, then referenced graphs, parents before children."""
    seen = []
    seen_set = set()
    for r in roots:
        for g in store.graph_family(r):
            if g not in seen_set:
                seen_set.add(g)
                seen.append(g)
    depth = {}

    def depth_of(g):
        if g not in depth:
            p = store.nesting_parent(g)
            depth[g] = 0 if p is None or p not in seen_set else depth_of(p) + 1
        return depth[g]

    return sorted(seen, key=lambda g: (depth_of(g), seen.index(g)))


def dump_text(store: GraphStore, roots) -> str:
    for r in roots:
        g = store.graph(r)
        if g.return_node is None:
            raise IRError(f"return node unset for graph {g.name}", graph=g.name)
    order = _dump_order(store, roots)
    gnames = _Namer()
    graph_name = {g: gnames.fresh(store.graph(g).name) for g in order}
    nnames = _Namer()
    node_name: dict[int, str] = {}

    def assign_names(gid):
        g = store.graph(gid)
        for p in g.parameters:
            node_name[p] = nnames.fresh(store.node(p).name or f"p{store.node(p).index}")
        counter = 0
        for nid in store.schedule(gid):
            node = store.node(nid)
            if node.name:
                node_name[nid] = nnames.fresh(node.name)
            else:
                node_name[nid] = nnames.fresh(f"t{counter}")
                counter += 1

    for gid in order:
        assign_names(gid)

    def ref(nid) -> str:
        node = store.node(nid)
        if node.is_constant:
            v = node.value
            if isinstance(v, GraphRef):
                if v.graph_id not in graph_name:
                    raise IRError("dump: reference to graph outside the dumped set")
                return "@" + graph_name[v.graph_id]
            return format_value(v)
        if nid not in node_name:
            raise IRError("dump: free variable points outside the dumped graphs")
        return "%" + node_name[nid]

    lines = []
    for gid in order:
        g = store.graph(gid)
        params = ", ".join("%" + node_name[p] for p in g.parameters)
        lines.append(f"graph {graph_name[gid]}({params}) {{")
        for nid in store.schedule(gid):
            node = store.node(nid)
            callee = ref(node.inputs[0])
            args = ", ".join(ref(i) for i in node.inputs[1:])
            lines.append(f"  %{node_name[nid]} = {callee}({args});")
        lines.append(f"  return {ref(g.return_node)}")
        lines.append("}")
        lines.append("")
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# parse


def parse_text(text: str) -> tuple[GraphStore, dict[str, int]]:
    """Parse a dump back into a fresh store. Returns (store, name -> graph)."""
    store = GraphStore()
    s = _Scanner(text, what="ir")
    blocks = []
    while not s.at_end():
        s.eat("graph")
        name = s.name()
        s.eat("(")
        params = []
        if not s.try_eat(")"):
            while True:
                s.eat("%")
                params.append(s.name())
                if not s.try_eat(","):
                    break
            s.eat(")")
        s.eat("{")
        stmts = []
        while True:
            if s.try_eat("return"):
                ret = _scan_operand(s)
                s.eat("}")
                break
            s.eat("%")
            dest = s.name()
            s.eat("=")
            callee = _scan_operand(s)
            s.eat("(")
            args = []
            if not s.try_eat(")"):
                while True:
                    args.append(_scan_operand(s))
                    if not s.try_eat(","):
                        break
                s.eat(")")
            s.eat(";")
            stmts.append((dest, callee, args))
        blocks.append((name, params, stmts, ret))

    graphs: dict[str, int] = {}
    for name, params, _, _ in blocks:
        if name in graphs:
            raise ParseError(f"duplicate graph name {name}")
        graphs[name] = store.new_graph(name)
    nodes: dict[str, int] = {}
    for name, params, _, _ in blocks:
        for p in params:
            if p in nodes:
                raise ParseError(f"duplicate node name %{p}")
            nodes[p] = store.add_parameter(graphs[name], p)

    def resolve(op):
        kind, payload = op
        if kind == "node":
            if payload not in nodes:
                return None
            return nodes[payload]
        if kind == "graphref":
            if payload not in graphs:
                raise ParseError(f"reference to unknown graph @{payload}")
            return store.graph_constant(graphs[payload])
        return store.constant(payload)

    pending = list(blocks)
    while pending:
        progressed = False
        deferred = []
        for name, params, stmts, ret in pending:
            ok = True
            for dest, callee, args in stmts:
                for op in [callee, *args]:
                    if op[0] == "node" and op[1] not in nodes:
                        name_missing = op[1]
                        local = any(d == name_missing for d, _, _ in stmts)
                        if not local:
                            ok = False
            if ret[0] == "node" and ret[1] not in nodes:
                if not any(d == ret[1] for d, _, _ in stmts):
                    ok = False
            if not ok:
                deferred.append((name, params, stmts, ret))
                continue
            gid = graphs[name]
            for dest, callee, args in stmts:
                cid = resolve(callee)
                aids = [resolve(a) for a in args]
                if cid is None or any(a is None for a in aids):
                    raise ParseError(f"graph {name}: use of undefined node")
                if dest in nodes:
                    raise ParseError(f"duplicate node name %{dest}")
                nodes[dest] = store.apply(gid, cid, aids, name=dest)
            rid = resolve(ret)
            if rid is None:
                raise ParseError(f"graph {name}: return of undefined node")
            store.set_return(gid, rid)
            progressed = True
        pending = deferred
        if pending and not progressed:
            bad = ", ".join(b[0] for b in pending)
            raise ParseError(f"unresolvable cross-graph references in: {bad}")
    return store, graphs


def _scan_operand(s: _Scanner):
    ch = s.peek()
    if ch == "%":
        s.eat("%")
        return ("node", s.name())
    if ch == "@":
        s.eat("@")
        return ("graphref", s.name())
    if ch.isdigit() or ch in "-.(":
        return ("const", _scan_value(s))
    if s.text.startswith("t[", s.pos) or s.text.startswith("env{", s.pos):
        return ("const", _scan_value(s))
    word = s.name()
    if word in ("true", "false", "inf", "nan"):
        return ("const", {"true": True, "false": False, "inf": float("inf"), "nan": float("nan")}[word])
    if word in BY_NAME:
        return ("const", BY_NAME[word])
    s.error(f"unknown operand {word!r}")


def arity_of(name: str):
    return ARITY.get(name)
