"""Command-line driver: parse -> lower -> specialize -> (grad) -> optimize -> run.

    gradc run       file.gd fn [values...]
    gradc grad      file.gd fn [values...] [--wrt K] [--order N]
    gradc gradcheck file.gd fn [values...] [--wrt K] [--eps E] [--tol T]
    gradc dump      file.gd fn [--stage S] [--args-sig SIG]

Values use the literal syntax ``2.0``, ``7i``, ``true``, ``t[2,2](1,2,3,4)``,
``(a, b)``. Results print to stdout; diagnostics go to stderr tagged with the
stage that raised them. Exit codes: 0 ok, 1 user/program error, 2 gradient
check failure, 3 internal invariant violation.
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from . import vm
from .ad import grad_graph
from .errors import CLIError, GradcError, IRInvariantError
from .frontend import compile_source
from .infer import InferSession, av_of_value, parse_signature
from .irtext import dump_text, format_result, parse_value
from .opt import OptConfig, level_config, optimize
from .values import is_tensor

STAGES = ("ast", "lowered", "specialized", "ad", "optimized")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gradc", description=__doc__,
                                formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, values=True):
        sp.add_argument("file", help="source file (.gd)")
        sp.add_argument("fn", help="entry function name")
        if values:
            sp.add_argument("values", nargs="*", help="argument values")
        sp.add_argument("--opt-level", type=int, default=2, choices=(0, 1, 2))
        sp.add_argument("--args-sig", default=None,
                        help="argument signature, e.g. 'f64, t[2,3]'")
        sp.add_argument("--dump-after", default=None, metavar="PASS",
                        help="print IR after the named optimizer pass")
        sp.add_argument("--opt-trace", action="store_true",
                        help="log 'RULE name @%%node' per rewrite to stderr")
        sp.add_argument("--seed", type=int, default=None,
                        help="reserved for fuzzing harnesses")

    sp = sub.add_parser("run", help="evaluate a function")
    common(sp)

    sp = sub.add_parser("grad", help="evaluate a derivative")
    common(sp)
    sp.add_argument("--wrt", type=int, default=0)
    sp.add_argument("--order", type=int, default=1)

    sp = sub.add_parser("gradcheck", help="compare the derivative against finite differences")
    common(sp)
    sp.add_argument("--wrt", type=int, default=None,
                    help="check one input (default: all float/tensor inputs)")
    sp.add_argument("--eps", type=float, default=1e-4)
    sp.add_argument("--tol", type=float, default=1e-4)

    sp = sub.add_parser("dump", help="print IR at a pipeline stage")
    common(sp, values=False)
    sp.add_argument("--stage", default="lowered", choices=STAGES)
    sp.add_argument("--wrt", type=int, default=0)
    return p


def _load(path: str):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return fh.read()
    except OSError as e:
        raise CLIError(f"cannot read {path}: {e}") from None


def _entry(graphs: dict, fn: str):
    if fn not in graphs:
        raise CLIError(f"unknown function {fn!r}; file defines: {', '.join(sorted(graphs))}")
    return graphs[fn]


def _parse_args(tokens):
    return [parse_value(t) for t in tokens]


def _signature(ns, args=None):
    if ns.args_sig is not None:
        return parse_signature(ns.args_sig)
    if args is None:
        raise CLIError("this stage needs argument values or --args-sig")
    return [av_of_value(v, keep_known=False) for v in args]


def _opt_config(ns) -> OptConfig:
    cfg = level_config(ns.opt_level)
    if ns.opt_trace:
        cfg.trace = []
    if ns.dump_after:
        cfg.dump_after = ns.dump_after
        cfg.dump_sink = {}
    return cfg


def _finish_opt(ns, cfg: OptConfig):
    if cfg.trace:
        for line in cfg.trace:
            print(line, file=sys.stderr)
    if cfg.dump_sink:
        for name, text in cfg.dump_sink.items():
            print(f";; after {name}", file=sys.stderr)
            print(text, file=sys.stderr)


def _specialized(store, gid, sig):
    return InferSession(store).infer_root(gid, sig)


def cmd_run(ns) -> int:
    store, graphs = compile_source(_load(ns.file))
    gid = _entry(graphs, ns.fn)
    args = _parse_args(ns.values)
    sig = _signature(ns, args)
    spec, _ = _specialized(store, gid, sig)
    cfg = _opt_config(ns)
    optimize(store, [spec], cfg)
    _finish_opt(ns, cfg)
    print(format_result(vm.run(store, spec, args)))
    return 0


def _grad_pipeline(store, gid, sig, wrt, order, ns):
    base, base_av = _specialized(store, gid, sig)
    if order > 0 and base_av.tag != "f64":
        raise CLIError(f"grad needs a scalar-valued function, result is {base_av}")
    w = gid
    for _ in range(order):
        w = grad_graph(store, w, wrt)
    spec, _ = _specialized(store, w, sig)
    cfg = _opt_config(ns)
    optimize(store, [spec], cfg)
    _finish_opt(ns, cfg)
    return spec


def cmd_grad(ns) -> int:
    store, graphs = compile_source(_load(ns.file))
    gid = _entry(graphs, ns.fn)
    args = _parse_args(ns.values)
    sig = _signature(ns, args)
    spec = _grad_pipeline(store, gid, sig, ns.wrt, ns.order, ns)
    print(format_result(vm.run(store, spec, args)))
    return 0


def _rel_err(a, b) -> float:
    scale = max(abs(a), abs(b), 1.0)
    return abs(a - b) / scale


def cmd_gradcheck(ns) -> int:
    source = _load(ns.file)
    store, graphs = compile_source(source)
    gid = _entry(graphs, ns.fn)
    args = _parse_args(ns.values)
    sig = _signature(ns, args)
    indices = ([ns.wrt] if ns.wrt is not None else
               [i for i, v in enumerate(args) if isinstance(v, float) or is_tensor(v)])
    if not indices:
        raise CLIError("no float or tensor inputs to check")
    fd_vals = {wrt: vm.finite_diff_grad(store, gid, args, wrt, eps=ns.eps)
               for wrt in indices}
    worst = 0.0
    for wrt in indices:
        # fresh store per direction: the optimizer reaps everything that is
        # not reachable from the wrapper, including the primal
        store, graphs = compile_source(source)
        gid = _entry(graphs, ns.fn)
        spec = _grad_pipeline(store, gid, sig, wrt, 1, ns)
        ad_val = vm.run(store, spec, args)
        fd_val = fd_vals[wrt]
        if isinstance(ad_val, float):
            err = _rel_err(ad_val, fd_val)
            print(f"arg {wrt}: ad={format_result(ad_val)} fd={format_result(fd_val)} "
                  f"rel_err={err:.3e}")
        else:
            err = 0.0
            a = np.asarray(ad_val).ravel()
            b = np.asarray(fd_val).ravel()
            for i, (x, y) in enumerate(zip(a, b)):
                e = _rel_err(float(x), float(y))
                err = max(err, e)
                print(f"arg {wrt}[{i}]: ad={float(x):.12g} fd={float(y):.12g} rel_err={e:.3e}")
        worst = max(worst, err)
    print(f"max rel err {worst:.3e} (tol {ns.tol:g})")
    if worst <= ns.tol:
        print("PASS")
        return 0
    print("FAIL")
    return 2


def cmd_dump(ns) -> int:
    source = _load(ns.file)
    if ns.stage == "ast":
        from .frontend import parse

        print(parse(source))
        return 0
    store, graphs = compile_source(source)
    gid = _entry(graphs, ns.fn)
    if ns.stage == "lowered":
        print(dump_text(store, [gid]))
        return 0
    sig = _signature(ns)
    if ns.stage == "specialized":
        spec, _ = _specialized(store, gid, sig)
        print(dump_text(store, [spec]))
        return 0
    w = grad_graph(store, gid, ns.wrt)
    spec, _ = _specialized(store, w, sig)
    if ns.stage == "optimized":
        cfg = _opt_config(ns)
        optimize(store, [spec], cfg)
        _finish_opt(ns, cfg)
    print(dump_text(store, [spec]))
    return 0


COMMANDS = {
    "run": cmd_run,
    "grad": cmd_grad,
    "gradcheck": cmd_gradcheck,
    "dump": cmd_dump,
}


def main(argv=None) -> int:
    ns = build_parser().parse_args(argv)
    try:
        return COMMANDS[ns.command](ns)
    except IRInvariantError as e:
        print(f"error: {e.diagnostic()}", file=sys.stderr)
        return 3
    except GradcError as e:
        print(f"error: {e.diagnostic()}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
