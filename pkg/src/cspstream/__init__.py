"""Single-pass sublinear-space estimation of Max-CSP value."""

from .core import (
    Constraint,
    Instance,
    Predicate,
    PredicateRegistry,
    brute_force_val,
    degree,
    evaluate,
    pad_arity,
    recombine_estimate,
    split_trivial,
    subsample_constraints,
)
from .tape import RandomTape

__all__ = [
    "Constraint",
    "Instance",
    "Predicate",
    "PredicateRegistry",
    "RandomTape",
    "brute_force_val",
    "degree",
    "evaluate",
    "pad_arity",
    "recombine_estimate",
    "split_trivial",
    "subsample_constraints",
]

__version__ = "0.1.0"
