import numpy as np
import pytest

from conftest import grad_pipeline, run_pipeline, sig_of
from fuzz import corpus
from gradc import vm
from gradc.frontend import compile_source
from gradc.infer import InferSession
from gradc.ir import GraphStore
from gradc.irtext import dump_text
from gradc.opt import (
    OptConfig,
    cse,
    constant_fold,
    dce,
    inline,
    level_config,
    optimize,
)
from gradc.primitives import (
    ADD,
    ARITHMETIC_NAMES,
    DIV,
    ENV_OP_NAMES,
    MAKE_TUPLE,
    MUL,
    POW,
    SUB,
    SWITCH,
    TUPLE_GETITEM,
    TUPLE_OP_NAMES,
)
from gradc.values import GraphRef, Primitive, values_equal


def _counts(store, roots):
    """(tuple ops, env ops, closure calls, arithmetic nodes) over live code."""
    nodes, graphs = store.reachable(roots)
    tuple_ops = env_ops = closure_calls = arith = 0
    for gid in graphs:
        if store.graph(gid).return_node is None:
            continue
        for nid in store.schedule(gid):
            callee = store.node(store.node(nid).inputs[0])
            if callee.is_constant and isinstance(callee.value, Primitive):
                name = callee.value.name
                if name in TUPLE_OP_NAMES:
                    tuple_ops += 1
                elif name in ENV_OP_NAMES:
                    env_ops += 1
                elif name in ARITHMETIC_NAMES:
                    arith += 1
            else:
                closure_calls += 1
    return tuple_ops, env_ops, closure_calls, arith


def test_getitem_of_make_tuple():
    s = GraphStore()
    g = s.new_graph("f")
    a = s.add_parameter(g, "a")
    b = s.add_parameter(g, "b")
    t = s.apply(g, s.constant(MAKE_TUPLE), [a, b])
    got = s.apply(g, s.constant(TUPLE_GETITEM), [t, s.constant(1)])
    s.set_return(g, got)
    optimize(s, [g], OptConfig())
    assert s.graph(g).return_node == b


@pytest.mark.parametrize("src,arg,expected_body", [
    ("def f(x):\n    return x * 1.0\n", 3.0, "return %x"),
    ("def f(x):\n    return 1.0 * x\n", 3.0, "return %x"),
    ("def f(x):\n    return x + 0.0\n", 3.0, "return %x"),
    ("def f(x):\n    return x - 0.0\n", 3.0, "return %x"),
    ("def f(x):\n    return x / 1.0\n", 3.0, "return %x"),
    ("def f(x):\n    return x ** 1\n", 3.0, "return %x"),
    ("def f(x):\n    return x * 0.0\n", 3.0, "return 0.0"),
    ("def f(x):\n    return -(-x)\n", 3.0, "return %x"),
])
def test_algebraic_identities(src, arg, expected_body):
    store, spec = run_pipeline(src, "f", [arg])
    assert expected_body in dump_text(store, [spec])


def test_switch_constant_condition_pruned():
    src = """def f(x):
    if True:
        return x * 2.0
    else:
        return x * 3.0
"""
    store, spec = run_pipeline(src, "f", [4.0])
    assert vm.run(store, spec, [4.0]) == 8.0
    nodes, graphs = store.reachable([spec])
    assert len(graphs) == 1  # both thunks gone, selected body inlined


def test_constant_fold_basics():
    store, spec = run_pipeline("def f():\n    return 2.0 * 3.0\n", "f", [])
    assert "return 6.0" in dump_text(store, [spec])


def test_constant_fold_chain_enables_pow_rule():
    src = "def f(x):\n    return x ** (3.0 - 1.0)\n"
    store, spec = run_pipeline(src, "f", [5.0])
    text = dump_text(store, [spec])
    assert "pow(%x, 2.0)" in text
    assert vm.run(store, spec, [5.0]) == 25.0


def test_fold_leaves_division_by_zero_with_diagnostic():
    s = GraphStore()
    g = s.new_graph("f")
    s.set_return(g, s.apply(g, s.constant(DIV), [s.constant(1.0), s.constant(0.0)]))
    cfg = OptConfig(trace=[])
    constant_fold(s, [g], cfg)
    assert any("div_by_zero" in line for line in cfg.trace)
    callee = s.node(s.node(s.graph(g).return_node).inputs[0])
    assert callee.value is DIV  # still a division at runtime


def test_inline_identity_call():
    src = "def id(x):\n    return x\n\ndef f(y):\n    return id(y)\n"
    store, spec = run_pipeline(src, "f", [7.0])
    text = dump_text(store, [spec])
    assert "return %y" in text


def test_inline_skips_recursive_callee():
    s = GraphStore()
    fact = s.new_graph("fact")
    n = s.add_parameter(fact, "n")
    callsite = s.apply(fact, s.graph_constant(fact), [n])
    s.set_return(fact, callsite)
    assert inline(s, callsite) is False


def test_inline_loop_helpers_left_as_calls():
    src = """def f(x):
    i = 0.0
    while i < 3.0:
        i = i + x
    return i
"""
    store, spec = run_pipeline(src, "f", [1.0])
    nodes, graphs = store.reachable([spec])
    assert len(graphs) > 1  # the recursive loop family survives
    assert vm.run(store, spec, [1.0]) == 3.0


def test_dce_removes_unused_chain_and_orphan_graphs():
    src = """def f(x):
    unused = x * 2.0 + 41.0
    def helper():
        return unused
    return x + 1.0
"""
    store, graphs = compile_source(src)
    helper = next(g for g in store.graphs() if store.graph(g).name == "helper")
    n_nodes_before = len(store._nodes)
    dce(store, [graphs["f"]])
    assert len(store._nodes) < n_nodes_before  # dangling 41.0 chain dropped
    assert helper not in store.graphs()
    assert "41.0" not in dump_text(store, [graphs["f"]])
    assert vm.run(store, graphs["f"], [1.0]) == 2.0


def test_dce_keeps_fully_live_graph():
    src = "def f(x):\n    a = x * 2.0\n    return a + x\n"
    store, spec = run_pipeline(src, "f", [1.0], opt=False)
    before = dump_text(store, [spec])
    dce(store, [spec])
    assert dump_text(store, [spec]) == before


def test_cse_merges_within_graph():
    s = GraphStore()
    g = s.new_graph("f")
    x = s.add_parameter(g, "x")
    p1 = s.apply(g, s.constant(POW), [x, s.constant(2.0)])
    p2 = s.apply(g, s.constant(POW), [x, s.constant(2.0)])
    total = s.apply(g, s.constant(ADD), [p1, p2])
    s.set_return(g, total)
    cse(s, [g])
    ret = s.node(s.graph(g).return_node)
    assert ret.inputs[1] == ret.inputs[2]
    assert len(s.users(ret.inputs[1])) == 2


def test_cse_not_across_graphs():
    src = """def f(x):
    def g():
        return x * x
    return g() + x * x
"""
    store, graphs = compile_source(src)
    spec, _ = InferSession(store).infer_root(graphs["f"], sig_of([2.0]))
    cfg = OptConfig(inline_enabled=False)
    optimize(store, [spec], cfg)
    muls = 0
    for gid in store.reachable([spec])[1]:
        for nid in store.schedule(gid):
            callee = store.node(store.node(nid).inputs[0])
            if callee.is_constant and callee.value is MUL:
                muls += 1
    assert muls == 2  # one per graph, not merged across the closure boundary


def test_cse_shrinks_ad_output():
    src = "def f(x):\n    return x * x\n"
    store, graphs = compile_source(src)
    from gradc.ad import grad_graph

    w = grad_graph(store, graphs["f"])
    spec, _ = InferSession(store).infer_root(w, sig_of([3.0]))
    no_cse = OptConfig(cse_enabled=False)
    optimize(store, [spec], no_cse)
    without = len(store.schedule(spec))
    store2, spec2 = grad_pipeline(src, "f", [3.0])
    assert len(store2.schedule(spec2)) <= without
    assert vm.run(store2, spec2, [3.0]) == 6.0


def test_optimize_is_idempotent():
    store, spec = grad_pipeline("def f(x):\n    a = x ** 3\n    return a\n", "f", [2.0])
    before = dump_text(store, [spec])
    rounds = optimize(store, [spec], OptConfig())
    assert rounds == 1  # a single no-change round
    assert dump_text(store, [spec]) == before


def test_fig1_end_state():
    store, spec = grad_pipeline("def f(x):\n    a = x ** 3\n    return a\n", "f", [2.0])
    tuple_ops, env_ops, closure_calls, arith = _counts(store, [spec])
    assert tuple_ops == 0 and env_ops == 0 and closure_calls == 0
    assert arith <= 4
    assert vm.run(store, spec, [2.0]) == 12.0


def test_opt_levels():
    src = "def f(x):\n    a = x ** 3\n    return a\n"
    for level in (0, 1, 2):
        store, graphs = compile_source(src)
        from gradc.ad import grad_graph

        w = grad_graph(store, graphs["f"])
        spec, _ = InferSession(store).infer_root(w, sig_of([2.0]))
        optimize(store, [spec], level_config(level))
        assert vm.run(store, spec, [2.0]) == 12.0


def test_opt_trace_format():
    src = "def f(x):\n    return x * 1.0\n"
    store, graphs = compile_source(src)
    spec, _ = InferSession(store).infer_root(graphs["f"], sig_of([2.0]))
    cfg = OptConfig(trace=[])
    optimize(store, [spec], cfg)
    assert any(line.startswith("RULE arith_identity @%") for line in cfg.trace)


def test_semantics_preserved_on_fuzz_bit_equal():
    for prog in corpus(80):
        store, graphs = compile_source(prog.source)
        spec, _ = InferSession(store).infer_root(graphs[prog.fn], sig_of(prog.args))
        before = vm.run(store, spec, prog.args)
        optimize(store, [spec], OptConfig())
        after = vm.run(store, spec, prog.args)
        assert values_equal(before, after), prog.source


def test_gradient_preserved_by_optimization():
    for prog in corpus(20):
        store, spec = grad_pipeline(prog.source, prog.fn, prog.args,
                                    wrt=prog.wrt, opt=False)
        before = vm.run(store, spec, prog.args)
        rounds = optimize(store, [spec], OptConfig())
        after = vm.run(store, spec, prog.args)
        if isinstance(before, float):
            assert abs(before - after) <= 1e-12 * max(abs(before), 1.0), prog.source
        else:
            assert np.allclose(before, after, rtol=1e-12), prog.source


def test_audit_after_every_round():
    for prog in corpus(12):
        store, spec = grad_pipeline(prog.source, prog.fn, prog.args,
                                    wrt=prog.wrt, opt=False)
        optimize(store, [spec], OptConfig(audit=True))
        store.audit()
