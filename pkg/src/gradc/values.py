"""Runtime values.

Scalars map onto native Python types (float / int / bool), dense tensors onto
row-major float64 numpy arrays, and tuples onto Python tuples. The remaining
kinds get small dedicated classes:

* ``Primitive``  - an interned operation tag, callable at callee position.
* ``GraphRef``   - a reference to a graph, which evaluates to a closure.
* ``Closure``    - a graph paired with the frame it was created in.
* ``SensEnv``    - keyed sensitivity collection used by the reverse-mode
                   transform; a missing key means "zero of the right shape".
"""

from __future__ import annotations

import math

import numpy as np

from .errors import VMError


class Primitive:
    """Interned operation tag. One instance per primitive name."""

    __slots__ = ("name",)
    _registry: dict = {}

    def __new__(cls, name: str):
        inst = cls._registry.get(name)
        if inst is None:
            inst = super().__new__(cls)
            inst.name = name
            cls._registry[name] = inst
        return inst

    def __repr__(self):
        return f"<prim {self.name}>"


class GraphRef:
    """First-class reference to a graph (before closure capture)."""

    __slots__ = ("graph_id",)

    def __init__(self, graph_id: int):
        self.graph_id = graph_id

    def __eq__(self, other):
        return isinstance(other, GraphRef) and other.graph_id == self.graph_id

    def __hash__(self):
        return hash(("graphref", self.graph_id))

    def __repr__(self):
        return f"<graph #{self.graph_id}>"


class Closure:
    """A graph plus the frame chain that resolves its free variables."""

    __slots__ = ("graph_id", "frame")

    def __init__(self, graph_id: int, frame):
        self.graph_id = graph_id
        self.frame = frame

    def __repr__(self):
        return f"<closure #{self.graph_id}>"


class SensEnv:
    """Immutable keyed sensitivity collection; absent key == zero."""

    __slots__ = ("entries",)

    def __init__(self, entries=None):
        self.entries = dict(entries) if entries else {}

    def get(self, key, default):
        return self.entries.get(key, default)

    def set(self, key, value) -> "SensEnv":
        new = dict(self.entries)
        new[key] = value
        return SensEnv(new)

    def __eq__(self, other):
        if not isinstance(other, SensEnv):
            return NotImplemented
        if set(self.entries) != set(other.entries):
            return False
        return all(values_equal(v, other.entries[k]) for k, v in self.entries.items())

    def __hash__(self):
        raise TypeError("SensEnv is not hashable")

    def __repr__(self):
        inner = ", ".join(f"{k}: {v!r}" for k, v in sorted(self.entries.items()))
        return f"env{{{inner}}}"


EMPTY_ENV = SensEnv()


def is_tensor(v) -> bool:
    return isinstance(v, np.ndarray)


def make_tensor(shape, data) -> np.ndarray:
    arr = np.asarray(data, dtype=np.float64).reshape(shape)
    return np.ascontiguousarray(arr)


def is_function_value(v) -> bool:
    return isinstance(v, (Closure, Primitive, GraphRef))


def values_equal(a, b) -> bool:
    """Exact structural equality (bitwise on floats, used by tests)."""
    if isinstance(a, bool) or isinstance(b, bool):
        return type(a) is type(b) and a == b
    if isinstance(a, float) and isinstance(b, float):
        if math.isnan(a) and math.isnan(b):
            return True
        return a == b and math.copysign(1.0, a) == math.copysign(1.0, b)
    if isinstance(a, int) and isinstance(b, int):
        return a == b
    if is_tensor(a) and is_tensor(b):
        return a.shape == b.shape and bool(np.array_equal(a, b, equal_nan=True))
    if isinstance(a, tuple) and isinstance(b, tuple):
        return len(a) == len(b) and all(values_equal(x, y) for x, y in zip(a, b))
    if isinstance(a, SensEnv) and isinstance(b, SensEnv):
        return a == b
    if isinstance(a, Closure) and isinstance(b, Closure):
        return a.graph_id == b.graph_id
    return type(a) is type(b) and a == b


def zeros_like_value(v):
    """Additive identity with the structure of ``v``.

    Function-shaped values (closures, primitives, graph refs) have the empty
    sensitivity env as their zero, which is what makes function sensitivities
    routable through data paths.
    """
    if isinstance(v, bool):
        return False
    if isinstance(v, float):
        return 0.0
    if isinstance(v, int):
        return 0
    if is_tensor(v):
        return np.zeros_like(v)
    if isinstance(v, tuple):
        return tuple(zeros_like_value(x) for x in v)
    if is_function_value(v):
        return EMPTY_ENV
    if isinstance(v, SensEnv):
        return EMPTY_ENV
    raise VMError(f"zeros_like: unsupported value {type(v).__name__}")


def gadd_value(a, b):
    """Structural addition of two sensitivities of the same shape."""
    if isinstance(a, SensEnv) or isinstance(b, SensEnv):
        # Function-valued slots may legitimately mix an env with a function
        # value's zero (the empty env), never with data.
        if not isinstance(a, SensEnv) or not isinstance(b, SensEnv):
            raise VMError(f"gadd: env mixed with {type(b).__name__}")
        merged = dict(a.entries)
        for k, v in b.entries.items():
            if k in merged:
                merged[k] = gadd_value(merged[k], v)
            else:
                merged[k] = v
        return SensEnv(merged)
    if isinstance(a, bool) and isinstance(b, bool):
        return a or b
    if isinstance(a, float) and isinstance(b, float):
        return a + b
    if isinstance(a, int) and isinstance(b, int):
        return a + b
    if is_tensor(a) and is_tensor(b):
        if a.shape != b.shape:
            raise VMError(f"gadd: tensor shapes differ {a.shape} vs {b.shape}")
        return a + b
    if isinstance(a, tuple) and isinstance(b, tuple):
        if len(a) != len(b):
            raise VMError(f"gadd: tuple lengths differ {len(a)} vs {len(b)}")
        return tuple(gadd_value(x, y) for x, y in zip(a, b))
    raise VMError(f"gadd: structure mismatch {type(a).__name__} vs {type(b).__name__}")


def value_kind(v) -> str:
    if isinstance(v, bool):
        return "bool"
    if isinstance(v, float):
        return "f64"
    if isinstance(v, int):
        return "i64"
    if is_tensor(v):
        return "tensor"
    if isinstance(v, tuple):
        return "tuple"
    if isinstance(v, Closure):
        return "closure"
    if isinstance(v, GraphRef):
        return "graphref"
    if isinstance(v, Primitive):
        return "primitive"
    if isinstance(v, SensEnv):
        return "env"
    raise VMError(f"not a runtime value: {type(v).__name__}")
