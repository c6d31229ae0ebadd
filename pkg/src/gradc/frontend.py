"""Surface language front end: lexer, parser, and lowering to graph IR.

The language is a small pure, indentation-structured subset of Python-like
syntax (files use the ``.gd`` extension):

    def f(x):
        a = x ** 3
        return a

Statements are single-assignment; mutating statements (``x[i] = v``,
``x += y``) are rejected outright. Conditionals lower to a ``switch`` over
two zero-argument branch graphs, of which only the selected one is called.
While loops lower to a recursive helper graph so the IR needs no loop
construct: the helper receives the carried variables, and its body either
tail-calls itself through the true branch or returns them through the false
branch.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .errors import ForbiddenStatementError, LoweringError, ParseError
from .ir import GraphStore
from .primitives import BY_NAME, MAKE_TUPLE, SWITCH, TUPLE_GETITEM

KEYWORDS = {"def", "return", "if", "else", "while", "lambda", "True", "False"}

BINOPS = {
    "+": "add", "-": "sub", "*": "mul", "/": "div", "**": "pow",
    "<": "lt", ">": "gt", "<=": "le", ">=": "ge", "==": "eq", "!=": "ne",
}

AUGMENTED = ("+=", "-=", "*=", "/=", "**=")

# names surface programs may use without defining them
BUILTIN_PRIMS = (
    "matmul", "transpose", "reduce_sum", "distribute", "shape_of",
    "zeros_like", "grad",
)


# ---------------------------------------------------------------------------
# tokens


@dataclass
class Token:
    kind: str  # NAME INT FLOAT OP NEWLINE INDENT DEDENT EOF
    text: str
    line: int
    col: int


_OPS = [
    "**=", "**", "+=", "-=", "*=", "/=", "<=", ">=", "==", "!=",
    "+", "-", "*", "/", "<", ">", "=", "(", ")", "[", "]", ",", ":",
]


def tokenize(source: str) -> list[Token]:
    tokens: list[Token] = []
    indents = [0]
    lines = source.split("\n")
    for lineno, raw in enumerate(lines, start=1):
        stripped = raw.split("#", 1)[0].rstrip()
        if not stripped.strip():
            continue
        indent = len(stripped) - len(stripped.lstrip(" "))
        if "\t" in raw[:indent]:
            raise ParseError("tabs are not allowed in indentation", line=lineno, col=1)
        if indent % 4 != 0:
            raise ParseError("indentation must be a multiple of 4 spaces", line=lineno, col=1)
        if indent > indents[-1]:
            if indent != indents[-1] + 4:
                raise ParseError("unexpected indent", line=lineno, col=1)
            indents.append(indent)
            tokens.append(Token("INDENT", "", lineno, 1))
        while indent < indents[-1]:
            indents.pop()
            tokens.append(Token("DEDENT", "", lineno, 1))
        if indent != indents[-1]:
            raise ParseError("unindent does not match any outer level", line=lineno, col=1)
        pos = indent
        text = stripped
        while pos < len(text):
            ch = text[pos]
            if ch == " ":
                pos += 1
                continue
            col = pos + 1
            if ch.isdigit() or (ch == "." and pos + 1 < len(text) and text[pos + 1].isdigit()):
                start = pos
                seen_dot = False
                seen_exp = False
                while pos < len(text):
                    c = text[pos]
                    if c.isdigit():
                        pos += 1
                    elif c == "." and not seen_dot and not seen_exp:
                        seen_dot = True
                        pos += 1
                    elif c in "eE" and not seen_exp and pos > start:
                        nxt = text[pos + 1 : pos + 2]
                        if nxt.isdigit() or nxt in "+-":
                            seen_exp = True
                            pos += 1
                            if text[pos : pos + 1] in "+-":
                                pos += 1
                        else:
                            break
                    else:
                        break
                lit = text[start:pos]
                kind = "FLOAT" if (seen_dot or seen_exp) else "INT"
                tokens.append(Token(kind, lit, lineno, col))
                continue
            if ch.isalpha() or ch == "_":
                start = pos
                while pos < len(text) and (text[pos].isalnum() or text[pos] == "_"):
                    pos += 1
                tokens.append(Token("NAME", text[start:pos], lineno, col))
                continue
            for op in _OPS:
                if text.startswith(op, pos):
                    tokens.append(Token("OP", op, lineno, col))
                    pos += len(op)
                    break
            else:
                raise ParseError(f"unexpected character {ch!r}", line=lineno, col=col)
        tokens.append(Token("NEWLINE", "", lineno, len(stripped) + 1))
    while len(indents) > 1:
        indents.pop()
        tokens.append(Token("DEDENT", "", len(lines), 1))
    tokens.append(Token("EOF", "", len(lines) + 1, 1))
    return tokens


# ---------------------------------------------------------------------------
# AST


@dataclass
class AstNode:
    line: int = field(default=0, kw_only=True)
    col: int = field(default=0, kw_only=True)


@dataclass
class Module(AstNode):
    defs: list


@dataclass
class FunctionDef(AstNode):
    name: str
    params: list[str]
    body: list


@dataclass
class Assign(AstNode):
    name: str
    value: AstNode


@dataclass
class Return(AstNode):
    value: AstNode


@dataclass
class If(AstNode):
    cond: AstNode
    then_body: list
    else_body: list | None


@dataclass
class While(AstNode):
    cond: AstNode
    body: list


@dataclass
class Lit(AstNode):
    value: object


@dataclass
class Name(AstNode):
    id: str


@dataclass
class BinOp(AstNode):
    op: str
    left: AstNode
    right: AstNode


@dataclass
class UnaryOp(AstNode):
    op: str
    operand: AstNode


@dataclass
class Call(AstNode):
    fn: AstNode
    args: list


@dataclass
class TupleLit(AstNode):
    items: list


@dataclass
class Index(AstNode):
    value: AstNode
    index: int


@dataclass
class Lambda(AstNode):
    params: list[str]
    body: AstNode


class _Parser:
    def __init__(self, tokens: list[Token]):
        self.tokens = tokens
        self.pos = 0

    def peek(self) -> Token:
        return self.tokens[self.pos]

    def advance(self) -> Token:
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def check(self, kind, text=None) -> bool:
        tok = self.peek()
        return tok.kind == kind and (text is None or tok.text == text)

    def expect(self, kind, text=None) -> Token:
        tok = self.peek()
        if not self.check(kind, text):
            want = text or kind
            got = tok.text or tok.kind
            raise ParseError(f"expected {want!r}, got {got!r}", line=tok.line, col=tok.col)
        return self.advance()

    def expect_name(self) -> Token:
        tok = self.expect("NAME")
        if tok.text in KEYWORDS:
            raise ParseError(f"{tok.text!r} is a keyword", line=tok.line, col=tok.col)
        return tok

    # statements ----------------------------------------------------------

    def parse_module(self) -> Module:
        first = self.peek()
        defs = []
        while not self.check("EOF"):
            if not self.check("NAME", "def"):
                tok = self.peek()
                raise ParseError("only function definitions are allowed at top level",
                                 line=tok.line, col=tok.col)
            defs.append(self.parse_fundef())
        if not defs:
            raise ParseError("empty program", line=first.line, col=first.col)
        return Module(defs, line=first.line, col=first.col)

    def parse_fundef(self) -> FunctionDef:
        start = self.expect("NAME", "def")
        name = self.expect_name()
        self.expect("OP", "(")
        params = []
        if not self.check("OP", ")"):
            while True:
                params.append(self.expect_name().text)
                if self.check("OP", ","):
                    self.advance()
                    continue
                break
        self.expect("OP", ")")
        self.expect("OP", ":")
        body = self.parse_block()
        if len(set(params)) != len(params):
            raise ParseError(f"duplicate parameter in {name.text!r}",
                             line=start.line, col=start.col)
        return FunctionDef(name.text, params, body, line=start.line, col=start.col)

    def parse_block(self) -> list:
        self.expect("NEWLINE")
        self.expect("INDENT")
        stmts = []
        while not self.check("DEDENT"):
            stmts.append(self.parse_statement())
        self.expect("DEDENT")
        return stmts

    def parse_statement(self):
        tok = self.peek()
        if tok.kind != "NAME":
            raise ParseError(f"unexpected {tok.text or tok.kind!r}", line=tok.line, col=tok.col)
        if tok.text == "def":
            return self.parse_fundef()
        if tok.text == "return":
            self.advance()
            value = self.parse_expr()
            self.expect("NEWLINE")
            return Return(value, line=tok.line, col=tok.col)
        if tok.text == "if":
            self.advance()
            cond = self.parse_expr()
            self.expect("OP", ":")
            then_body = self.parse_block()
            else_body = None
            if self.check("NAME", "else"):
                self.advance()
                self.expect("OP", ":")
                else_body = self.parse_block()
            return If(cond, then_body, else_body, line=tok.line, col=tok.col)
        if tok.text == "while":
            self.advance()
            cond = self.parse_expr()
            self.expect("OP", ":")
            body = self.parse_block()
            return While(cond, body, line=tok.line, col=tok.col)
        # assignment-like statement
        name = self.expect_name()
        nxt = self.peek()
        if nxt.kind == "OP" and nxt.text in AUGMENTED:
            raise ForbiddenStatementError(
                f"forbidden statement: augmented assignment ({name.text} {nxt.text} ...)",
                line=tok.line, col=tok.col)
        if nxt.kind == "OP" and nxt.text == "[":
            # scan past the subscript; '=' after it is index assignment
            save = self.pos
            depth = 0
            while not self.check("NEWLINE"):
                t = self.advance()
                if t.kind == "OP" and t.text in ("[", "("):
                    depth += 1
                elif t.kind == "OP" and t.text in ("]", ")"):
                    depth -= 1
                elif t.kind == "OP" and t.text == "=" and depth == 0:
                    raise ForbiddenStatementError(
                        "forbidden statement: index assignment (x[i] = v)",
                        line=tok.line, col=tok.col)
            self.pos = save
            raise ParseError("an expression is not a statement", line=tok.line, col=tok.col)
        if not (nxt.kind == "OP" and nxt.text == "="):
            raise ParseError(f"expected '=' after {name.text!r}", line=nxt.line, col=nxt.col)
        self.advance()
        value = self.parse_expr()
        self.expect("NEWLINE")
        return Assign(name.text, value, line=tok.line, col=tok.col)

    # expressions ---------------------------------------------------------

    def parse_expr(self):
        tok = self.peek()
        if tok.kind == "NAME" and tok.text == "lambda":
            self.advance()
            params = []
            if not self.check("OP", ":"):
                while True:
                    params.append(self.expect_name().text)
                    if self.check("OP", ","):
                        self.advance()
                        continue
                    break
            self.expect("OP", ":")
            body = self.parse_expr()
            if len(set(params)) != len(params):
                raise ParseError("duplicate lambda parameter", line=tok.line, col=tok.col)
            return Lambda(params, body, line=tok.line, col=tok.col)
        return self.parse_comparison()

    def parse_comparison(self):
        left = self.parse_additive()
        tok = self.peek()
        if tok.kind == "OP" and tok.text in ("<", ">", "<=", ">=", "==", "!="):
            self.advance()
            right = self.parse_additive()
            return BinOp(tok.text, left, right, line=tok.line, col=tok.col)
        return left

    def parse_additive(self):
        left = self.parse_multiplicative()
        while True:
            tok = self.peek()
            if tok.kind == "OP" and tok.text in ("+", "-"):
                self.advance()
                right = self.parse_multiplicative()
                left = BinOp(tok.text, left, right, line=tok.line, col=tok.col)
            else:
                return left

    def parse_multiplicative(self):
        left = self.parse_unary()
        while True:
            tok = self.peek()
            if tok.kind == "OP" and tok.text in ("*", "/"):
                self.advance()
                right = self.parse_unary()
                left = BinOp(tok.text, left, right, line=tok.line, col=tok.col)
            else:
                return left

    def parse_unary(self):
        tok = self.peek()
        if tok.kind == "OP" and tok.text == "-":
            self.advance()
            operand = self.parse_unary()
            return UnaryOp("-", operand, line=tok.line, col=tok.col)
        return self.parse_power()

    def parse_power(self):
        base = self.parse_postfix()
        tok = self.peek()
        if tok.kind == "OP" and tok.text == "**":
            self.advance()
            exponent = self.parse_unary()  # right-assoc, allows 2 ** -k
            return BinOp("**", base, exponent, line=tok.line, col=tok.col)
        return base

    def parse_postfix(self):
        value = self.parse_atom()
        while True:
            tok = self.peek()
            if tok.kind == "OP" and tok.text == "(":
                self.advance()
                args = []
                if not self.check("OP", ")"):
                    while True:
                        args.append(self.parse_expr())
                        if self.check("OP", ","):
                            self.advance()
                            continue
                        break
                self.expect("OP", ")")
                value = Call(value, args, line=tok.line, col=tok.col)
            elif tok.kind == "OP" and tok.text == "[":
                self.advance()
                idx = self.expect("INT")
                self.expect("OP", "]")
                value = Index(value, int(idx.text), line=tok.line, col=tok.col)
            else:
                return value

    def parse_atom(self):
        tok = self.peek()
        if tok.kind == "FLOAT":
            self.advance()
            return Lit(float(tok.text), line=tok.line, col=tok.col)
        if tok.kind == "INT":
            self.advance()
            return Lit(int(tok.text), line=tok.line, col=tok.col)
        if tok.kind == "NAME":
            if tok.text == "True":
                self.advance()
                return Lit(True, line=tok.line, col=tok.col)
            if tok.text == "False":
                self.advance()
                return Lit(False, line=tok.line, col=tok.col)
            if tok.text == "lambda":
                return self.parse_expr()
            if tok.text in KEYWORDS:
                raise ParseError(f"unexpected keyword {tok.text!r}", line=tok.line, col=tok.col)
            self.advance()
            return Name(tok.text, line=tok.line, col=tok.col)
        if tok.kind == "OP" and tok.text == "(":
            self.advance()
            first = self.parse_expr()
            if self.check("OP", ","):
                items = [first]
                while self.check("OP", ","):
                    self.advance()
                    if self.check("OP", ")"):
                        break
                    items.append(self.parse_expr())
                self.expect("OP", ")")
                return TupleLit(items, line=tok.line, col=tok.col)
            self.expect("OP", ")")
            return first
        raise ParseError(f"unexpected {tok.text or tok.kind!r}", line=tok.line, col=tok.col)


def parse(source: str) -> Module:
    return _Parser(tokenize(source)).parse_module()


# ---------------------------------------------------------------------------
# lowering


class Scope:
    """Lexical environment mapping surface names to IR nodes.

    Looking a name up through an enclosing graph's scope yields that graph's
    node directly, which is exactly how free variables are represented.
    """

    def __init__(self, parent=None):
        self.parent = parent
        self.bindings: dict[str, int] = {}

    def lookup(self, name):
        scope = self
        while scope is not None:
            if name in scope.bindings:
                return scope.bindings[name]
            scope = scope.parent
        return None

    def bind(self, name, nid, stmt=None):
        if name in self.bindings:
            raise LoweringError(
                f"name {name!r} is already bound in this scope (single assignment)",
                line=getattr(stmt, "line", None), col=getattr(stmt, "col", None))
        self.bindings[name] = nid

    def rebind(self, name, nid):
        self.bindings[name] = nid


def _assigned_names(stmts) -> list[str]:
    out = []
    for stmt in stmts:
        if isinstance(stmt, Assign) and stmt.name not in out:
            out.append(stmt.name)
        elif isinstance(stmt, While):
            for n in _assigned_names(stmt.body):
                if n not in out:
                    out.append(n)
        elif isinstance(stmt, If):
            for n in _assigned_names(stmt.then_body) + _assigned_names(stmt.else_body or []):
                if n not in out:
                    out.append(n)
    return out


class Lowerer:
    def __init__(self, store: GraphStore):
        self.store = store
        self._gensym = 0

    def fresh(self, base):
        self._gensym += 1
        return f"{base}{self._gensym}"

    def prim(self, name):
        return self.store.constant(BY_NAME[name])

    def lower_module(self, module: Module) -> dict[str, int]:
        root = Scope()
        for name in BUILTIN_PRIMS:
            root.bindings[name] = self.prim(name)
        graphs: dict[str, int] = {}
        # two passes so top-level functions can be mutually recursive
        for fd in module.defs:
            if fd.name in graphs:
                raise LoweringError(f"duplicate function {fd.name!r}",
                                    line=fd.line, col=fd.col)
            graphs[fd.name] = self.store.new_graph(fd.name)
            root.bindings[fd.name] = self.store.graph_constant(graphs[fd.name])
        for fd in module.defs:
            self._lower_function_body(graphs[fd.name], fd, root)
        return graphs

    def _lower_function_body(self, gid, fd: FunctionDef, outer: Scope):
        scope = Scope(outer)
        for p in fd.params:
            scope.bind(p, self.store.add_parameter(gid, p), fd)
        ret = self.lower_block(gid, fd.body, scope)
        self.store.set_return(gid, ret)

    def lower_block(self, gid, stmts, scope) -> int:
        """Lower a statement list; returns the node the block evaluates to."""
        for i, stmt in enumerate(stmts):
            last = i == len(stmts) - 1
            if isinstance(stmt, Return):
                if not last:
                    nxt = stmts[i + 1]
                    raise LoweringError("unreachable code after return",
                                        line=nxt.line, col=nxt.col)
                return self.lower_expr(gid, stmt.value, scope)
            if isinstance(stmt, Assign):
                node = self.lower_expr(gid, stmt.value, scope)
                named = self.store.node(node)
                if named.is_apply and named.name is None:
                    named.name = stmt.name
                scope.bind(stmt.name, node, stmt)
                continue
            if isinstance(stmt, FunctionDef):
                sub = self.store.new_graph(stmt.name)
                scope.bind(stmt.name, self.store.graph_constant(sub), stmt)
                self._lower_function_body(sub, stmt, scope)
                continue
            if isinstance(stmt, If):
                if not last:
                    raise LoweringError(
                        "an if/else must be the last statement of its block "
                        "(both branches return)", line=stmt.line, col=stmt.col)
                return self.lower_if(gid, stmt, scope)
            if isinstance(stmt, While):
                self.lower_while(gid, stmt, scope)
                continue
            raise LoweringError(f"cannot lower {type(stmt).__name__}",
                                line=stmt.line, col=stmt.col)
        tail = stmts[-1] if stmts else None
        raise LoweringError("block falls off without return",
                            line=getattr(tail, "line", None),
                            col=getattr(tail, "col", None))

    def lower_if(self, gid, stmt: If, scope) -> int:
        if stmt.else_body is None:
            raise LoweringError("if without else: branch falls off without return",
                                line=stmt.line, col=stmt.col)
        cond = self.lower_expr(gid, stmt.cond, scope)
        branches = []
        for tag, body in (("if_true", stmt.then_body), ("if_false", stmt.else_body)):
            bg = self.store.new_graph(self.fresh(tag))
            ret = self.lower_block(bg, body, Scope(scope))
            self.store.set_return(bg, ret)
            branches.append(self.store.graph_constant(bg))
        sel = self.store.apply(gid, self.prim("switch"), [cond, *branches])
        return self.store.apply(gid, sel, [])

    def lower_while(self, gid, stmt: While, scope):
        assigned = _assigned_names(stmt.body)
        carried = [n for n in assigned if scope.lookup(n) is not None]
        for name in _names_read(stmt.cond):
            if name in assigned and name not in carried:
                raise LoweringError(
                    f"loop variable {name!r} used in the condition has no value "
                    "before the loop", line=stmt.line, col=stmt.col)

        helper = self.store.new_graph(self.fresh("while"))
        helper_ref = self.store.graph_constant(helper)
        hscope = Scope(scope)
        for name in carried:
            hscope.rebind(name, self.store.add_parameter(helper, name))
        cond = self.lower_expr(helper, stmt.cond, hscope)

        # the body scope is a child of the helper scope, so assignments to
        # carried names shadow the parameters rather than re-binding them
        body_graph = self.store.new_graph(self.fresh("while_body"))
        bscope = Scope(hscope)
        self._lower_loop_body(body_graph, stmt.body, bscope, stmt)
        next_args = [bscope.lookup(n) if bscope.lookup(n) is not None else hscope.lookup(n)
                     for n in carried]
        self.store.set_return(
            body_graph, self.store.apply(body_graph, helper_ref, next_args))

        exit_graph = self.store.new_graph(self.fresh("while_exit"))
        self.store.set_return(exit_graph, self._pack(exit_graph, [hscope.lookup(n) for n in carried]))

        sel = self.store.apply(
            helper, self.prim("switch"),
            [cond, self.store.graph_constant(body_graph), self.store.graph_constant(exit_graph)])
        self.store.set_return(helper, self.store.apply(helper, sel, []))

        init = [scope.lookup(n) for n in carried]
        result = self.store.apply(gid, helper_ref, init)
        if len(carried) == 1:
            scope.rebind(carried[0], result)
        else:
            for i, name in enumerate(carried):
                item = self.store.apply(
                    gid, self.prim("tuple_getitem"), [result, self.store.constant(i)],
                    name=name)
                scope.rebind(name, item)

    def _pack(self, gid, nodes):
        if len(nodes) == 1:
            return nodes[0]
        if not nodes:
            return self.store.constant(0.0)  # degenerate loop carries nothing
        return self.store.apply(gid, self.prim("make_tuple"), nodes)

    def _lower_loop_body(self, gid, stmts, scope, where):
        """Loop bodies: assignments, nested defs and loops; no return/if-exit."""
        for stmt in stmts:
            if isinstance(stmt, Assign):
                node = self.lower_expr(gid, stmt.value, scope)
                named = self.store.node(node)
                if named.is_apply and named.name is None:
                    named.name = stmt.name
                scope.bind(stmt.name, node, stmt)
            elif isinstance(stmt, FunctionDef):
                sub = self.store.new_graph(stmt.name)
                scope.bind(stmt.name, self.store.graph_constant(sub), stmt)
                self._lower_function_body(sub, stmt, scope)
            elif isinstance(stmt, While):
                self.lower_while(gid, stmt, scope)
            elif isinstance(stmt, Return):
                raise LoweringError("return inside a while body is not supported",
                                    line=stmt.line, col=stmt.col)
            elif isinstance(stmt, If):
                raise LoweringError(
                    "if inside a while body is not supported; call a helper "
                    "function that returns from both branches",
                    line=stmt.line, col=stmt.col)
            else:
                raise LoweringError(f"cannot lower {type(stmt).__name__} in a loop",
                                    line=stmt.line, col=stmt.col)

    def lower_expr(self, gid, expr, scope) -> int:
        if isinstance(expr, Lit):
            if isinstance(expr.value, bool):
                return self.store.constant(expr.value)
            if isinstance(expr.value, int):
                return self.store.constant(expr.value)
            return self.store.constant(float(expr.value))
        if isinstance(expr, Name):
            node = scope.lookup(expr.id)
            if node is None:
                raise LoweringError(f"unbound name {expr.id!r}",
                                    line=expr.line, col=expr.col)
            return node
        if isinstance(expr, UnaryOp):
            v = expr.operand.value if isinstance(expr.operand, Lit) else None
            if isinstance(v, (int, float)) and not isinstance(v, bool):
                return self.store.constant(-v if isinstance(v, int) else -float(v))
            operand = self.lower_expr(gid, expr.operand, scope)
            return self.store.apply(gid, self.prim("neg"), [operand])
        if isinstance(expr, BinOp):
            left = self.lower_expr(gid, expr.left, scope)
            if expr.op == "**":
                exponent = self._pow_exponent(gid, expr.right, scope)
                return self.store.apply(gid, self.prim("pow"), [left, exponent])
            right = self.lower_expr(gid, expr.right, scope)
            return self.store.apply(gid, self.prim(BINOPS[expr.op]), [left, right])
        if isinstance(expr, Call):
            fn = self.lower_expr(gid, expr.fn, scope)
            args = [self.lower_expr(gid, a, scope) for a in expr.args]
            fn_node = self.store.node(fn)
            if fn_node.is_constant and hasattr(fn_node.value, "graph_id"):
                want = len(self.store.graph(fn_node.value.graph_id).parameters)
                have = len(args)
                target = self.store.graph(fn_node.value.graph_id)
                if target.parameters or target.return_node is not None:
                    if want != have:
                        raise LoweringError(
                            f"{target.name} takes {want} arguments, got {have}",
                            line=expr.line, col=expr.col)
            return self.store.apply(gid, fn, args)
        if isinstance(expr, TupleLit):
            items = [self.lower_expr(gid, item, scope) for item in expr.items]
            return self.store.apply(gid, self.prim("make_tuple"), items)
        if isinstance(expr, Index):
            value = self.lower_expr(gid, expr.value, scope)
            return self.store.apply(
                gid, self.prim("tuple_getitem"), [value, self.store.constant(expr.index)])
        if isinstance(expr, Lambda):
            sub = self.store.new_graph(self.fresh("lambda"))
            lscope = Scope(scope)
            for p in expr.params:
                lscope.bind(p, self.store.add_parameter(sub, p), expr)
            self.store.set_return(sub, self.lower_expr(sub, expr.body, lscope))
            return self.store.graph_constant(sub)
        raise LoweringError(f"cannot lower {type(expr).__name__}",
                            line=getattr(expr, "line", None), col=getattr(expr, "col", None))

    def _pow_exponent(self, gid, expr, scope) -> int:
        # integer-constant exponents become float constants so pow stays the
        # single scalar power primitive
        if isinstance(expr, Lit) and isinstance(expr.value, int) and not isinstance(expr.value, bool):
            return self.store.constant(float(expr.value))
        if (isinstance(expr, UnaryOp) and isinstance(expr.operand, Lit)
                and isinstance(expr.operand.value, int)):
            return self.store.constant(-float(expr.operand.value))
        return self.lower_expr(gid, expr, scope)


def _names_read(expr) -> set[str]:
    out = set()
    stack = [expr]
    while stack:
        e = stack.pop()
        if isinstance(e, Name):
            out.add(e.id)
        elif isinstance(e, BinOp):
            stack += [e.left, e.right]
        elif isinstance(e, UnaryOp):
            stack.append(e.operand)
        elif isinstance(e, Call):
            stack.append(e.fn)
            stack += e.args
        elif isinstance(e, TupleLit):
            stack += e.items
        elif isinstance(e, Index):
            stack.append(e.value)
        elif isinstance(e, Lambda):
            stack.append(e.body)
    return out


def lower(module: Module, store: GraphStore | None = None):
    """Lower a parsed module; returns (store, {function name: graph id})."""
    store = store or GraphStore()
    graphs = Lowerer(store).lower_module(module)
    return store, graphs


def compile_source(source: str, store: GraphStore | None = None):
    return lower(parse(source), store)
