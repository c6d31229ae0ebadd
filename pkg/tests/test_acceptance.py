"""Acceptance criteria, one test per criterion, each printing a PASS line.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the report.
"""

import time

import numpy as np
import pytest

from conftest import grad_pipeline, run_pipeline, sig_of
from fuzz import FEATURES, corpus
from gradc import vm
from gradc.ad import GradContext, grad_graph
from gradc.errors import ForbiddenStatementError, ShapeMismatchError
from gradc.frontend import compile_source, parse
from gradc.infer import InferSession, av_tensor, parse_signature
from gradc.irtext import dump_text, format_result
from gradc.opt import OptConfig, optimize
from gradc.primitives import ARITHMETIC_NAMES, ENV_OP_NAMES, TUPLE_OP_NAMES
from gradc.values import Primitive, is_tensor, values_equal

CUBE = "def f(x):\n    a = x ** 3\n    return a\n"


def _report(n, ok, detail):
    status = "PASS" if ok else "FAIL"
    print(f"ACCEPTANCE {n} {status}: {detail}")
    assert ok, detail


def _residual_counts(store, roots):
    nodes, graphs = store.reachable(roots)
    tuple_ops = env_ops = closure_calls = arith = 0
    for gid in graphs:
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


def test_acceptance_1_fig1_reproduction(capsys=None):
    t0 = time.time()
    store, spec = grad_pipeline(CUBE, "f", [2.0])
    value = vm.run(store, spec, [2.0])
    printed = format_result(value)
    tuple_ops, env_ops, closure_calls, arith = _residual_counts(store, [spec])
    elapsed = time.time() - t0
    ok = (printed == "12.0" and value == 3.0 * 2.0**2
          and tuple_ops == 0 and env_ops == 0 and closure_calls == 0
          and arith <= 4 and elapsed < 1.0)
    _report(1, ok,
            f"grad(x**3)(2.0) prints {printed}; residual ops: tuple={tuple_ops} "
            f"env={env_ops} calls={closure_calls} arith={arith}; {elapsed:.2f}s")


def test_acceptance_2_gradient_fuzz_suite():
    t0 = time.time()
    programs = corpus(200)
    assert {p.feature for p in programs} == set(FEATURES)
    worst = 0.0
    for prog in programs:
        store, graphs = compile_source(prog.source)
        fd = vm.finite_diff_grad(store, graphs[prog.fn], prog.args, prog.wrt,
                                 eps=1e-4)
        store2, spec = grad_pipeline(prog.source, prog.fn, prog.args, wrt=prog.wrt)
        ad = vm.run(store2, spec, prog.args)
        if is_tensor(fd):
            err = float(np.max(np.abs(np.asarray(ad) - fd)
                               / np.maximum(np.abs(fd), 1.0)))
        else:
            err = abs(ad - fd) / max(abs(fd), 1.0)
        assert err <= 1e-4, f"{prog.feature} seed program:\n{prog.source}"
        worst = max(worst, err)
    elapsed = time.time() - t0
    ok = elapsed < 60.0
    _report(2, ok, f"200 fuzzed programs gradcheck at tol 1e-4 "
                   f"(worst {worst:.2e}) in {elapsed:.1f}s")


def test_acceptance_3_reverse_over_reverse():
    # per case: derivatives of order 1, 2, 3 at the given point
    cases = [
        (CUBE, "f", 2.0, [12.0, 12.0, 6.0]),
        ("def f(x):\n    return x * x * x\n", "f", 2.0, [12.0, 12.0, 6.0]),
        # closure-capturing polynomial: g captures x; f = x^3 + 2x^2 + x
        ("""def f(x):
    def g(c):
        return c * x * x
    return x * g(1.0) + 2.0 * g(1.0) + x
""", "f", 1.5, [3 * 1.5**2 + 4 * 1.5 + 1, 6 * 1.5 + 4, 6.0]),
    ]
    worst = 0.0
    for src, fn, x, expected in cases:
        for order, want in enumerate(expected, start=1):
            store, spec = grad_pipeline(src, fn, [x], order=order)
            got = vm.run(store, spec, [x])
            err = abs(got - want) / max(abs(want), 1.0)
            worst = max(worst, err)
            assert err <= 1e-9, f"order {order} of {src}: {got} vs {want}"
    _report(3, True, f"2nd/3rd derivatives analytic to 1e-9 (worst {worst:.2e})")


def test_acceptance_4_recursion_and_control_flow():
    src = """def pow_rec(x, n):
    if n == 0:
        return 1.0
    else:
        return x * pow_rec(x, n - 1)
"""
    store, spec = grad_pipeline(src, "pow_rec", [2.0, 5])
    got = vm.run(store, spec, [2.0, 5])
    ok_rec = abs(got - 80.0) <= 1e-9 * 80.0

    zero_iter = """def f(x):
    s = x
    while s > 100.0:
        s = s * 2.0
    return s
"""
    store2, spec2 = grad_pipeline(zero_iter, "f", [1.5])
    identity_grad = vm.run(store2, spec2, [1.5])

    zero_const = """def f(x):
    s = 1.0
    while x > 100.0:
        s = s * x
    return s
"""
    store3, spec3 = grad_pipeline(zero_const, "f", [1.5])
    zero_grad = vm.run(store3, spec3, [1.5])
    ok_loops = identity_grad == 1.0 and zero_grad == 0.0
    _report(4, ok_rec and ok_loops,
            f"grad pow_rec(2,5)={got} (want 80); zero-iteration loop grads: "
            f"identity={identity_grad} zero={zero_grad} (exact)")


def test_acceptance_5_optimization_soundness():
    t0 = time.time()
    n = 500
    for prog in corpus(n):
        store, graphs = compile_source(prog.source)
        spec, _ = InferSession(store).infer_root(graphs[prog.fn], sig_of(prog.args))
        before = vm.run(store, spec, prog.args)
        rounds = optimize(store, [spec], OptConfig())
        after = vm.run(store, spec, prog.args)
        assert values_equal(before, after), prog.source  # expected bit-equal
        assert rounds < 1000
    _report(5, True,
            f"{n} fuzzed typed programs bit-equal pre/post optimization; "
            f"all reached equilibrium ({time.time()-t0:.1f}s)")


def test_acceptance_6_specialization():
    src = """def double(v):
    return v + v

def main(x, t):
    return (double(x), double(t))
"""
    store, graphs = compile_source(src)
    sess = InferSession(store)
    spec, res = sess.infer_root(graphs["main"], parse_signature("f64, t[3]"))
    doubles = {e.spec for e in sess.order
               if store.graph(e.origin).name == "double"}
    out = vm.run(store, spec, [2.0, np.ones(3)])
    ok_poly = (len(doubles) == 2 and out[0] == 4.0
               and np.array_equal(out[1], 2.0 * np.ones(3)))

    mm = "def f(a, b):\n    return matmul(a, b)\n"
    store2, graphs2 = compile_source(mm)
    _, mm_res = InferSession(store2).infer_root(
        graphs2["f"], parse_signature("t[2,3], t[3,4]"))
    ok_shape = mm_res == av_tensor((2, 4))

    store3, graphs3 = compile_source(mm)
    rejected = False
    try:
        InferSession(store3).infer_root(graphs3["f"], parse_signature("t[2,3], t[5,4]"))
    except ShapeMismatchError:
        rejected = True  # before any execution
    _report(6, ok_poly and ok_shape and rejected,
            f"polymorphic double -> {len(doubles)} specializations; "
            f"matmul(t[2,3],t[3,4]) -> {mm_res}; bad inner dims rejected "
            "prior to execution")


def test_acceptance_7_ir_invariant_audits():
    t0 = time.time()
    checked = 0
    for prog in corpus(200):
        store, graphs = compile_source(prog.source)
        store.audit()  # after lowering
        w = grad_graph(store, graphs[prog.fn], prog.wrt, GradContext(store))
        store.audit()  # after the AD transform
        spec, _ = InferSession(store).infer_root(w, sig_of(prog.args))
        optimize(store, [spec], OptConfig(audit=True))  # after every round
        store.audit()
        checked += 1
    _report(7, True,
            f"bidirectionality/ownership/nesting audits green after lowering, "
            f"AD, and every optimizer round on {checked} programs "
            f"({time.time()-t0:.1f}s)")


def test_acceptance_8_purity_gate():
    with pytest.raises(ForbiddenStatementError) as e1:
        parse("def f(x):\n    x[0] = 1.0\n    return x\n")
    with pytest.raises(ForbiddenStatementError) as e2:
        parse("def f(x, y):\n    x += y\n    return x\n")
    ok = (e1.value.line == 2 and "index assignment" in str(e1.value)
          and e2.value.line == 2 and "augmented assignment" in str(e2.value))
    _report(8, ok, "x[i] = v and x += y rejected with located diagnostics "
                   f"(lines {e1.value.line}, {e2.value.line})")
