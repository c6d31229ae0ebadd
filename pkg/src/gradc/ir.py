"""Graph intermediate representation.

A program unit is a ``GraphStore`` holding graphs and nodes. A graph is an
ordered list of parameter nodes plus a single return node; multiple results
are expressed with tuples. A node is one of:

* apply     - an ordered list of incoming edges, callee at position 0
* constant  - a value and no incoming edges; constants belong to no graph
* parameter - owned by a graph, identified by its position

Edges are kept bidirectional: the store maintains a reverse-use index that is
always the exact transpose of the ``inputs`` lists, so rewriting passes can
walk either direction. All mutation goes through store methods that update
the index atomically per edit.

Free variables are direct references to nodes owned by other graphs; the
nesting relation between graphs is *derived* from them (innermost referenced
scope wins) rather than stored.
"""

from __future__ import annotations

import itertools

from .errors import IRError, IRInvariantError
from .values import GraphRef, Primitive, SensEnv, is_tensor

NodeId = int
GraphId = int

APPLY = "apply"
CONSTANT = "const"
PARAMETER = "param"

_ids = itertools.count(1)  # session-wide: ids are never reused


class Node:
    __slots__ = ("id", "kind", "inputs", "value", "owner", "index", "name")

    def __init__(self, id, kind, inputs=(), value=None, owner=None, index=None, name=None):
        self.id = id
        self.kind = kind
        self.inputs = list(inputs)
        self.value = value
        self.owner = owner
        self.index = index
        self.name = name

    @property
    def is_apply(self):
        return self.kind == APPLY

    @property
    def is_constant(self):
        return self.kind == CONSTANT

    @property
    def is_parameter(self):
        return self.kind == PARAMETER

    def __repr__(self):
        return f"<{self.kind} %{self.id}{' ' + self.name if self.name else ''}>"


class Graph:
    __slots__ = ("id", "name", "parameters", "return_node", "flags")

    def __init__(self, id, name):
        self.id = id
        self.name = name
        self.parameters: list[NodeId] = []
        self.return_node: NodeId | None = None
        self.flags: set[str] = set()

    def __repr__(self):
        return f"<graph #{self.id} {self.name}>"


def _intern_key(value):
    """Structural-equality key for constant interning; None = do not intern.

    Tensors are deliberately not interned (comparison cost); floats are keyed
    by repr so 0.0 and -0.0 stay distinct. Graph references are not interned
    either: each reference site owns its constant node, so specialization can
    retarget one closure reference without affecting unrelated ones.
    """
    if isinstance(value, bool):
        return ("bool", value)
    if isinstance(value, float):
        return ("f64", repr(value))
    if isinstance(value, int):
        return ("i64", value)
    if isinstance(value, Primitive):
        return ("prim", value.name)
    if isinstance(value, SensEnv) and not value.entries:
        return ("env0",)
    return None


class GraphStore:
    """All graphs and nodes of one program unit. Single writer."""

    def __init__(self):
        self._nodes: dict[NodeId, Node] = {}
        self._graphs: dict[GraphId, Graph] = {}
        self._uses: dict[NodeId, set[tuple[NodeId, int]]] = {}
        self._interned: dict = {}
        self.types: dict[NodeId, object] = {}  # filled by inference
        self._version = 0
        self._cache: dict = {}
        # incrementally maintained edge summaries (cheap derived views the
        # schedulers and cloning machinery consult constantly):
        #   _refcount[(user_graph, target_graph)] = #constant references
        #   _captures[owner][user_graph][node] = #cross-graph uses
        self._refcount: dict[tuple[GraphId, GraphId], int] = {}
        self._captures: dict[GraphId, dict[GraphId, dict[NodeId, int]]] = {}

    # -- bookkeeping ------------------------------------------------------

    def _mutated(self):
        self._version += 1
        if self._cache:
            self._cache.clear()

    def _edge_added(self, user: Node, input_nid: NodeId):
        uowner = user.owner
        if uowner is None:
            return
        inode = self._nodes[input_nid]
        if inode.kind == CONSTANT and isinstance(inode.value, GraphRef):
            key = (uowner, inode.value.graph_id)
            self._refcount[key] = self._refcount.get(key, 0) + 1
        elif inode.kind == APPLY and inode.owner != uowner:
            per = self._captures.setdefault(inode.owner, {}).setdefault(uowner, {})
            per[input_nid] = per.get(input_nid, 0) + 1

    def _edge_removed(self, user: Node, input_nid: NodeId):
        uowner = user.owner
        if uowner is None:
            return
        inode = self._nodes[input_nid]
        if inode.kind == CONSTANT and isinstance(inode.value, GraphRef):
            key = (uowner, inode.value.graph_id)
            left = self._refcount.get(key, 0) - 1
            if left > 0:
                self._refcount[key] = left
            else:
                self._refcount.pop(key, None)
        elif inode.kind == APPLY and inode.owner != uowner:
            per = self._captures.get(inode.owner, {}).get(uowner)
            if per is not None:
                left = per.get(input_nid, 0) - 1
                if left > 0:
                    per[input_nid] = left
                else:
                    per.pop(input_nid, None)
                    if not per:
                        self._captures[inode.owner].pop(uowner, None)
                        if not self._captures[inode.owner]:
                            self._captures.pop(inode.owner, None)

    def node(self, nid: NodeId) -> Node:
        try:
            return self._nodes[nid]
        except KeyError:
            raise IRError(f"unknown node id {nid}") from None

    def graph(self, gid: GraphId) -> Graph:
        try:
            return self._graphs[gid]
        except KeyError:
            raise IRError(f"unknown graph id {gid}") from None

    def has_node(self, nid) -> bool:
        return nid in self._nodes

    def graphs(self):
        return list(self._graphs)

    # -- construction -----------------------------------------------------

    def new_graph(self, name: str) -> GraphId:
        gid = next(_ids)
        self._graphs[gid] = Graph(gid, name)
        self._mutated()
        return gid

    def add_parameter(self, gid: GraphId, name: str) -> NodeId:
        g = self.graph(gid)
        nid = next(_ids)
        node = Node(nid, PARAMETER, owner=gid, index=len(g.parameters), name=name)
        self._nodes[nid] = node
        self._uses[nid] = set()
        g.parameters.append(nid)
        self._mutated()
        return nid

    def apply(self, gid: GraphId, callee: NodeId, args, name=None) -> NodeId:
        self.graph(gid)
        inputs = [callee, *args]
        for i in inputs:
            self.node(i)
        nid = next(_ids)
        node = Node(nid, APPLY, inputs=inputs, owner=gid, name=name)
        self._nodes[nid] = node
        self._uses[nid] = set()
        for pos, i in enumerate(inputs):
            self._uses[i].add((nid, pos))
            self._edge_added(node, i)
        self._mutated()
        return nid

    def constant(self, value) -> NodeId:
        key = _intern_key(value)
        if key is not None:
            hit = self._interned.get(key)
            if hit is not None:
                return hit
        nid = next(_ids)
        self._nodes[nid] = Node(nid, CONSTANT, value=value)
        self._uses[nid] = set()
        if key is not None:
            self._interned[key] = nid
        self._mutated()
        return nid

    def graph_constant(self, gid: GraphId) -> NodeId:
        self.graph(gid)
        return self.constant(GraphRef(gid))

    def set_return(self, gid: GraphId, nid: NodeId):
        g = self.graph(gid)
        self.node(nid)
        g.return_node = nid
        self._mutated()

    def retarget_graph_constant(self, nid: NodeId, gid: GraphId):
        """Point an (un-interned) graph-reference constant at another graph."""
        node = self.node(nid)
        if not (node.is_constant and isinstance(node.value, GraphRef)):
            raise IRError(f"%{nid} is not a graph-reference constant")
        self.graph(gid)
        users = [(self._nodes[u], nid) for u, _ in self._uses[nid]]
        for user, i in users:
            self._edge_removed(user, i)
        node.value = GraphRef(gid)
        for user, i in users:
            self._edge_added(user, i)
        self._mutated()

    # -- mutation ---------------------------------------------------------

    def set_input(self, nid: NodeId, pos: int, new: NodeId):
        node = self.node(nid)
        self.node(new)
        old = node.inputs[pos]
        if old == new:
            return
        self._edge_removed(node, old)
        node.inputs[pos] = new
        self._uses[old].discard((nid, pos))
        self._uses[new].add((nid, pos))
        self._edge_added(node, new)
        self._mutated()

    def replace_node(self, old: NodeId, new: NodeId):
        """Redirect every use of ``old`` (edges and return pointers) to ``new``."""
        self.node(new)
        for user, pos in list(self._uses.get(old, ())):
            self.set_input(user, pos, new)
        for g in self._graphs.values():
            if g.return_node == old:
                g.return_node = new
        self._mutated()

    def delete_node(self, nid: NodeId):
        node = self.node(nid)
        if self._uses.get(nid):
            raise IRError(f"cannot delete node %{nid}: still in use")
        for pos, i in enumerate(node.inputs):
            self._uses[i].discard((nid, pos))
            self._edge_removed(node, i)
        if node.is_parameter:
            g = self._graphs.get(node.owner)
            if g and nid in g.parameters:
                raise IRError(f"cannot delete parameter %{nid} of live graph")
        if node.is_constant:
            key = _intern_key(node.value)
            if key is not None and self._interned.get(key) == nid:
                del self._interned[key]
        del self._nodes[nid]
        del self._uses[nid]
        self.types.pop(nid, None)
        self._mutated()

    def delete_graph(self, gid: GraphId):
        g = self.graph(gid)
        for p in g.parameters:
            node = self._nodes.get(p)
            if node is not None:
                if self._uses.get(p):
                    raise IRError(
                        f"cannot delete graph {g.name}: parameter %{p} still in use")
                del self._nodes[p]
                self._uses.pop(p, None)
        del self._graphs[gid]
        self._mutated()

    def change_owner(self, nid: NodeId, gid: GraphId):
        node = self.node(nid)
        if not node.is_apply:
            raise IRError("only apply nodes can be re-owned")
        self.graph(gid)
        # edge summaries depend on both endpoint owners: detach, move, reattach
        for i in node.inputs:
            self._edge_removed(node, i)
        incoming = [(self._nodes[u], i) for u, _ in self._uses[nid]
                    for i in [nid]]
        for user, i in incoming:
            self._edge_removed(user, i)
        node.owner = gid
        for i in node.inputs:
            self._edge_added(node, i)
        for user, i in incoming:
            self._edge_added(user, i)
        self._mutated()

    # -- queries ----------------------------------------------------------

    def users(self, nid: NodeId) -> set[tuple[NodeId, int]]:
        self.node(nid)
        return set(self._uses[nid])

    def _capture_pairs(self) -> dict[GraphId, dict[GraphId, dict[NodeId, int]]]:
        """captures[owner][user_graph] = owner's nodes that user_graph's body
        references directly. Maintained incrementally with the edges."""
        return self._captures

    def _ref_adjacency(self) -> dict[GraphId, set[GraphId]]:
        key = ("refadj",)
        hit = self._cache.get(key)
        if hit is None:
            hit = {}
            for (ugid, target), _count in self._refcount.items():
                hit.setdefault(ugid, set()).add(target)
            for g in self._graphs.values():
                if g.return_node is not None:
                    ret = self._nodes.get(g.return_node)
                    if ret is not None and ret.kind == CONSTANT and isinstance(ret.value, GraphRef):
                        hit.setdefault(g.id, set()).add(ret.value.graph_id)
            self._cache[key] = hit
        return hit

    def _ref_family(self, gid: GraphId) -> frozenset:
        """Graphs structurally reachable from ``gid`` through graph-reference
        constants (raw edges; works on incomplete graphs)."""
        key = ("reffam", gid)
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        edges = self._ref_adjacency()
        seen = set()
        stack = [gid]
        while stack:
            g = stack.pop()
            if g in seen or g not in self._graphs:
                continue
            seen.add(g)
            stack.extend(edges.get(g, ()))
        result = frozenset(seen)
        self._cache[key] = result
        return result

    def schedule(self, gid: GraphId) -> list[NodeId]:
        """Apply nodes of ``gid`` in ANF order: depth-first from the return
        node, inputs visited left to right, dependencies before users.

        A graph-reference constant depends on the nodes of this graph that
        the referenced closure (or anything it can reach) captures, so those
        values exist in the frame by the time the closure can be called.
        """
        key = ("sched", gid)
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        g = self.graph(gid)
        if g.return_node is None:
            raise IRError(f"return node unset for graph {g.name}", graph=g.name)
        captured_here = self._captures.get(gid, {})

        def closure_deps(target: GraphId) -> list[NodeId]:
            if not captured_here:
                return []
            deps = set()
            for r in self._ref_family(target):
                deps.update(captured_here.get(r, ()))
            return sorted(deps)

        out: list[NodeId] = []
        state: dict[NodeId, int] = {}
        stack: list[tuple[NodeId, int]] = [(g.return_node, 0)]
        while stack:
            nid, phase = stack.pop()
            if phase == 0:
                if state.get(nid):
                    continue
                node = self.node(nid)
                if node.is_constant and isinstance(node.value, GraphRef):
                    state[nid] = 2
                    for dep in reversed(closure_deps(node.value.graph_id)):
                        if state.get(dep) is None:
                            stack.append((dep, 0))
                    continue
                if not (node.is_apply and node.owner == gid):
                    state[nid] = 2
                    continue
                state[nid] = 1
                stack.append((nid, 1))
                for i in reversed(node.inputs):
                    if state.get(i) is None:
                        stack.append((i, 0))
            else:
                state[nid] = 2
                out.append(nid)
        # capture dependencies are placement hints and may contradict real
        # data edges through recursive closures; a stable topological pass
        # over the true input edges restores definition-before-use
        out = self._stable_topo(gid, out)
        self._cache[key] = out
        return out

    def _stable_topo(self, gid, order: list[NodeId]) -> list[NodeId]:
        position = {nid: i for i, nid in enumerate(order)}
        indeg = {nid: 0 for nid in order}
        dependents: dict[NodeId, list[NodeId]] = {nid: [] for nid in order}
        for nid in order:
            for i in self.node(nid).inputs:
                if i in position and i != nid:
                    indeg[nid] += 1
                    dependents[i].append(nid)
        import heapq

        ready = [position[n] for n in order if indeg[n] == 0]
        heapq.heapify(ready)
        result = []
        while ready:
            pos = heapq.heappop(ready)
            nid = order[pos]
            result.append(nid)
            for dep in dependents[nid]:
                indeg[dep] -= 1
                if indeg[dep] == 0:
                    heapq.heappush(ready, position[dep])
        if len(result) != len(order):
            raise IRError(f"data cycle among nodes of graph {self.graph(gid).name}")
        return result

    def _reference_stream(self, gid: GraphId):
        """All node references made by ``gid``'s own body, in schedule order."""
        g = self.graph(gid)
        for nid in self.schedule(gid):
            yield from self.node(nid).inputs
        yield g.return_node

    def free_variables(self, gid: GraphId) -> list[NodeId]:
        """Nodes owned by other graphs that this graph's body references,
        in first-use order (deterministic; the AD transform relies on it)."""
        key = ("fv", gid)
        hit = self._cache.get(key)
        if hit is not None:
            return list(hit)
        out = []
        seen = set()
        for ref in self._reference_stream(gid):
            node = self.node(ref)
            if node.owner is not None and node.owner != gid and ref not in seen:
                seen.add(ref)
                out.append(ref)
        self._cache[key] = out
        return list(out)

    def graph_references(self, gid: GraphId) -> list[GraphId]:
        """Graphs referenced by constants in this graph's body, in order."""
        out = []
        seen = set()
        for ref in self._reference_stream(gid):
            node = self.node(ref)
            if node.is_constant and isinstance(node.value, GraphRef):
                target = node.value.graph_id
                if target not in seen:
                    seen.add(target)
                    out.append(target)
        return out

    def _scope_sets(self) -> dict[GraphId, set[GraphId]]:
        """For each graph, the set of graphs it points into, directly or via
        referenced graphs (fixpoint; recursion makes this cyclic data)."""
        key = ("scopes",)
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        scopes = {gid: set() for gid in self._graphs}
        refs = {}
        for gid in self._graphs:
            g = self._graphs[gid]
            if g.return_node is None:
                refs[gid] = []
                continue
            for fv in self.free_variables(gid):
                scopes[gid].add(self.node(fv).owner)
            refs[gid] = [t for t in self.graph_references(gid) if t in self._graphs]
        changed = True
        while changed:
            changed = False
            for gid in self._graphs:
                for t in refs[gid]:
                    extra = scopes[t] - scopes[gid] - {gid}
                    if extra:
                        scopes[gid] |= extra
                        changed = True
        self._cache[key] = scopes
        return scopes

    def _ancestor_sets(self) -> dict[GraphId, set[GraphId]]:
        key = ("ancestors",)
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        scopes = self._scope_sets()
        ancestors: dict[GraphId, set[GraphId]] = {}

        def compute(g, trail):
            if g in ancestors:
                return ancestors[g]
            if g in trail:
                raise IRError("cycle in nesting relation", graph=self.graph(g).name)
            trail = trail | {g}
            acc = set(scopes[g])
            for p in scopes[g]:
                acc |= compute(p, trail)
            acc.discard(g)
            ancestors[g] = acc
            return acc

        for g in self._graphs:
            compute(g, frozenset())
        self._cache[key] = ancestors
        return ancestors

    def nesting_parent(self, gid: GraphId) -> GraphId | None:
        """Innermost graph this one is nested in, or None for top level."""
        self.graph(gid)
        ancestors = self._ancestor_sets()
        mine = ancestors[gid]
        if not mine:
            return None
        # innermost: the candidate all other candidates enclose
        for cand in mine:
            if mine - {cand} <= ancestors[cand]:
                return cand
        raise IRError(
            f"ambiguous nesting for graph {self.graph(gid).name}",
            graph=self.graph(gid).name,
        )

    def nesting_chain(self, gid: GraphId) -> list[GraphId]:
        chain = []
        cur = self.nesting_parent(gid)
        while cur is not None:
            chain.append(cur)
            cur = self.nesting_parent(cur)
        return chain

    def graph_family(self, gid: GraphId) -> list[GraphId]:
        """``gid`` plus every graph reachable from it through graph constants."""
        out = []
        seen = set()
        stack = [gid]
        while stack:
            g = stack.pop()
            if g in seen or g not in self._graphs:
                continue
            seen.add(g)
            out.append(g)
            if self._graphs[g].return_node is not None:
                stack.extend(reversed(self.graph_references(g)))
        return out

    def nested_graphs(self, gid: GraphId) -> list[GraphId]:
        """Graphs nested within ``gid`` (their ancestor set contains it)."""
        ancestors = self._ancestor_sets()
        return [g for g in self._graphs if g != gid and gid in ancestors[g]]

    def free_variables_transitive(self, gid: GraphId) -> list[NodeId]:
        """Externally-visible captures of ``gid``: its own free variables plus
        those escaping from every graph it references, minus anything this
        graph itself owns.

        This is the key set a backpropagator's sensitivity env can mention.
        The fixpoint handles recursion: a self-referencing family never hides
        captures owned by enclosing scopes, while nodes owned by ``gid`` stay
        internal (its backpropagator accounts for them directly).
        """
        key = ("fvt",)
        table = self._cache.get(key)
        if table is None:
            complete = [g for g in self._graphs if self._graphs[g].return_node is not None]
            fv = {g: set(self.free_variables(g)) for g in complete}
            refs = {g: [r for r in self.graph_references(g) if r in self._graphs]
                    for g in complete}
            table = {g: set() for g in complete}
            changed = True
            while changed:
                changed = False
                for g in complete:
                    acc = set(fv[g])
                    for r in refs[g]:
                        acc |= table.get(r, set())
                    acc = {n for n in acc if self.node(n).owner != g}
                    if acc != table[g]:
                        table[g] = acc
                        changed = True
            self._cache[key] = table
        if gid not in table:
            self.graph(gid)
            return []
        return sorted(table[gid])

    def is_recursive(self, gid: GraphId) -> bool:
        """True when the graph can reach a reference to itself (raw edges,
        so switch-guarded self-calls count too)."""
        key = ("recursive", gid)
        hit = self._cache.get(key)
        if hit is None:
            edges = self._ref_adjacency()
            seen = set()
            stack = list(edges.get(gid, ()))
            hit = False
            while stack:
                g = stack.pop()
                if g == gid:
                    hit = True
                    break
                if g in seen or g not in self._graphs:
                    continue
                seen.add(g)
                stack.extend(edges.get(g, ()))
            self._cache[key] = hit
        return hit

    # -- cloning ----------------------------------------------------------

    def clone_family(self, gid: GraphId) -> list[GraphId]:
        """``gid`` plus every graph nested within it, i.e. graphs whose
        derived ancestor set contains ``gid``.

        The ancestor fixpoint runs only over graphs reachable from ``gid``
        through references (a closure that must move with its scope is always
        reachable from it in transform-generated code), which keeps cloning
        cheap on stores with many unrelated graphs."""
        candidates = sorted(g for g in self._ref_family(gid)
                            if self._graphs[g].return_node is not None)
        cset = set(candidates)
        base = {}
        refs = {}
        for q in candidates:
            base[q] = {self.node(fv).owner for fv in self.free_variables(q)}
            refs[q] = [r for r in self.graph_references(q) if r in cset]
        ancestors = {q: set(base[q]) for q in candidates}
        changed = True
        while changed:
            changed = False
            for q in candidates:
                acc = set(ancestors[q])
                for r in refs[q]:
                    acc |= ancestors[r]
                for m in list(acc):
                    if m in ancestors:
                        acc |= ancestors[m]
                acc.discard(q)
                if acc != ancestors[q]:
                    ancestors[q] = acc
                    changed = True
        return [gid] + [q for q in candidates if q != gid and gid in ancestors[q]]

    def clone_graph(self, gid: GraphId, substitutions=None, name_suffix="") -> GraphId:
        """Deep-copy ``gid`` and every graph nested within it.

        Nodes in ``substitutions`` are replaced by their images; free
        variables not in the map keep pointing at the original nodes. The
        original graphs are untouched.
        """
        subst = dict(substitutions or {})
        for target in subst.values():
            self.node(target)
        family = self.clone_family(gid)
        graph_map: dict[GraphId, GraphId] = {}
        node_map: dict[NodeId, NodeId] = {}
        for g in family:
            src = self.graph(g)
            new_gid = self.new_graph(src.name + name_suffix)
            self.graph(new_gid).flags = set(src.flags)
            graph_map[g] = new_gid
            for p in src.parameters:
                node_map[p] = self.add_parameter(new_gid, self.node(p).name)

        def image(nid):
            if nid in subst:
                return subst[nid]
            if nid in node_map:
                return node_map[nid]
            node = self.node(nid)
            if node.is_constant and isinstance(node.value, GraphRef):
                # every clone owns its reference constants so they can be
                # retargeted independently later
                target = node.value.graph_id
                node_map[nid] = self.graph_constant(graph_map.get(target, target))
                return node_map[nid]
            return nid

        for g in family:
            for nid in self.schedule(g):
                node = self.node(nid)
                new_inputs = [image(i) for i in node.inputs]
                node_map[nid] = self.apply(
                    graph_map[g], new_inputs[0], new_inputs[1:], name=node.name
                )
        for g in family:
            src = self.graph(g)
            self.set_return(graph_map[g], image(src.return_node))
        return graph_map[gid]

    # -- reachability / audit ----------------------------------------------

    def reachable(self, roots) -> tuple[set[NodeId], set[GraphId]]:
        """Nodes and graphs reachable from the roots' return nodes, following
        input edges and graph-reference constants."""
        nodes: set[NodeId] = set()
        graphs: set[GraphId] = set()
        stack = []
        for gid in roots:
            graphs.add(gid)
            g = self.graph(gid)
            if g.return_node is not None:
                stack.append(g.return_node)
            stack.extend(g.parameters)
        while stack:
            nid = stack.pop()
            if nid in nodes:
                continue
            nodes.add(nid)
            node = self.node(nid)
            stack.extend(i for i in node.inputs if i not in nodes)
            if node.is_constant and isinstance(node.value, GraphRef):
                target = node.value.graph_id
                if target in self._graphs and target not in graphs:
                    graphs.add(target)
                    g = self.graph(target)
                    if g.return_node is not None:
                        stack.append(g.return_node)
                    stack.extend(g.parameters)
        return nodes, graphs

    def audit(self):
        """Full-store structural check; raises IRInvariantError on violation."""
        for nid, node in self._nodes.items():
            if node.id != nid:
                raise IRInvariantError(f"node id mismatch %{nid}")
            if node.is_constant:
                if node.inputs:
                    raise IRInvariantError(f"constant %{nid} has inputs")
                if node.owner is not None:
                    raise IRInvariantError(f"constant %{nid} has an owner")
            if node.is_apply:
                if not node.inputs:
                    raise IRInvariantError(f"apply %{nid} lacks a callee")
                if node.owner not in self._graphs:
                    raise IRInvariantError(f"apply %{nid} has no live owner")
            if node.is_parameter:
                g = self._graphs.get(node.owner)
                if g is None:
                    raise IRInvariantError(f"parameter %{nid} has no live owner")
                if g.parameters.count(nid) != 1:
                    raise IRInvariantError(f"parameter %{nid} not listed exactly once")
                if g.parameters[node.index] != nid:
                    raise IRInvariantError(f"parameter %{nid} position index wrong")
            for pos, i in enumerate(node.inputs):
                if i not in self._nodes:
                    raise IRInvariantError(f"%{nid} input {pos} references dead node")
                if (nid, pos) not in self._uses[i]:
                    raise IRInvariantError(f"missing reverse edge %{i} -> (%{nid},{pos})")
        for nid, uses in self._uses.items():
            if nid not in self._nodes:
                raise IRInvariantError(f"use entry for dead node %{nid}")
            for user, pos in uses:
                unode = self._nodes.get(user)
                if unode is None or len(unode.inputs) <= pos or unode.inputs[pos] != nid:
                    raise IRInvariantError(f"stale reverse edge %{nid} -> (%{user},{pos})")
        for gid, g in self._graphs.items():
            for idx, p in enumerate(g.parameters):
                node = self._nodes.get(p)
                if node is None or not node.is_parameter:
                    raise IRInvariantError(f"graph {g.name} parameter {idx} invalid")
                if node.owner != gid or node.index != idx:
                    raise IRInvariantError(f"graph {g.name} parameter {idx} mislinked")
            if g.return_node is not None and g.return_node not in self._nodes:
                raise IRInvariantError(f"graph {g.name} return node is dead")
        refcount: dict = {}
        captures: dict = {}
        for nid, node in self._nodes.items():
            for i in node.inputs:
                if node.owner is None:
                    continue
                inode = self._nodes[i]
                if inode.kind == CONSTANT and isinstance(inode.value, GraphRef):
                    key = (node.owner, inode.value.graph_id)
                    refcount[key] = refcount.get(key, 0) + 1
                elif inode.kind == APPLY and inode.owner != node.owner:
                    per = captures.setdefault(inode.owner, {}).setdefault(node.owner, {})
                    per[i] = per.get(i, 0) + 1
        if refcount != self._refcount:
            raise IRInvariantError("graph-reference edge summary is stale")
        if captures != self._captures:
            raise IRInvariantError("cross-graph capture summary is stale")
        for gid, g in self._graphs.items():
            if g.return_node is not None:
                self.nesting_parent(gid)  # raises on nesting cycles
