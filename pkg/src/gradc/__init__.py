"""gradc: a compiler for a small pure functional array language.

Pipeline: parse -> lower to graph IR -> type/shape/value specialization ->
(optional reverse-mode gradient transform) -> equilibrium optimization ->
interpretation. The gradient transform is tape-free: every call returns its
value plus a backpropagator closure, and sensitivities for captured variables
travel in keyed envs, so the adjoint program is ordinary code that the
optimizer can collapse.
"""

__version__ = "0.1.0"
