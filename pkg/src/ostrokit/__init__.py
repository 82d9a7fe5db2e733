"""Higher-order Lagrangian mechanics toolkit.

Builds Euler-Lagrange equations, Ostrogradsky momenta and Hamiltonians
for Lagrangians depending on time derivatives up to any finite order,
embeds them into a constrained first-order variational problem, and
integrates every formulation numerically so the routes can be checked
against each other.
"""

from .expr import (
    EvaluationError,
    Expression,
    ExpressionError,
    JetDomainError,
    JetSymbol,
    ParseError,
    coordinate,
    evaluate,
    free_symbols,
    momentum,
    parameter,
    parse,
    partial,
    simplify,
    substitute,
    to_text,
    total_time_derivative,
    velocity,
)

__version__ = "0.1.0"

__all__ = [
    "EvaluationError",
    "Expression",
    "ExpressionError",
    "JetDomainError",
    "JetSymbol",
    "ParseError",
    "coordinate",
    "evaluate",
    "free_symbols",
    "momentum",
    "parameter",
    "parse",
    "partial",
    "simplify",
    "substitute",
    "to_text",
    "total_time_derivative",
    "velocity",
    "__version__",
]
