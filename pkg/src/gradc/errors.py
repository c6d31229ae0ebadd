"""Exception hierarchy shared by every pipeline stage.

Each error carries the stage it was raised in plus optional graph/node/source
coordinates so the CLI can print a single consistent diagnostic line.
"""

from __future__ import annotations


class GradcError(Exception):
    """Base class for all user-facing errors."""

    stage = "internal"

    def __init__(self, message, *, graph=None, node=None, line=None, col=None):
        super().__init__(message)
        self.message = message
        self.graph = graph
        self.node = node
        self.line = line
        self.col = col

    def diagnostic(self) -> str:
        where = []
        if self.line is not None:
            loc = f"line {self.line}"
            if self.col is not None:
                loc += f":{self.col}"
            where.append(loc)
        if self.graph is not None:
            where.append(f"graph {self.graph}")
        if self.node is not None:
            where.append(f"node %{self.node}")
        suffix = f" ({', '.join(where)})" if where else ""
        return f"[{self.stage}] {self.message}{suffix}"


class IRError(GradcError):
    stage = "ir"


class IRInvariantError(IRError):
    """A full-store audit found a broken structural invariant."""


class ParseError(GradcError):
    stage = "parse"


class ForbiddenStatementError(ParseError):
    """Mutating statement (index / augmented assignment) in the source."""


class LoweringError(GradcError):
    stage = "lower"


class InferError(GradcError):
    stage = "infer"


class TypeMismatchError(InferError):
    pass


class ShapeMismatchError(InferError):
    pass


class SpecializationDivergenceError(InferError):
    pass


class TransformError(GradcError):
    stage = "ad"


class OptError(GradcError):
    stage = "opt"


class VMError(GradcError):
    stage = "vm"


class NotCallableError(VMError):
    pass


class RecursionLimitError(VMError):
    pass


class CLIError(GradcError):
    stage = "cli"
