import os
import sys

sys.path.insert(0, os.path.dirname(__file__))

import pytest

from gradc import vm
from gradc.ad import grad_graph
from gradc.frontend import compile_source
from gradc.infer import InferSession, av_of_value


@pytest.fixture
def compile_run():
    """Compile source and evaluate a function on the untyped lowered graphs."""

    def go(source, fn, args):
        store, graphs = compile_source(source)
        return vm.run(store, graphs[fn], list(args))

    return go


def sig_of(args):
    return [av_of_value(v, keep_known=False) for v in args]


def grad_pipeline(source, fn, args, wrt=0, order=1, opt=True):
    """Full differentiation pipeline, returns (store, specialized graph)."""
    from gradc.opt import OptConfig, optimize

    store, graphs = compile_source(source)
    w = graphs[fn]
    for _ in range(order):
        w = grad_graph(store, w, wrt)
    spec, _ = InferSession(store).infer_root(w, sig_of(args))
    if opt:
        optimize(store, [spec], OptConfig())
    return store, spec


def run_pipeline(source, fn, args, opt=True):
    from gradc.opt import OptConfig, optimize

    store, graphs = compile_source(source)
    spec, _ = InferSession(store).infer_root(graphs[fn], sig_of(args))
    if opt:
        optimize(store, [spec], OptConfig())
    return store, spec
