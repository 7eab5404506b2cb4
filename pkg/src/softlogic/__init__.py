"""Differentiable-logic losses, property-driven training, and desk-scale
verification of dense ReLU classifiers against the same constraints."""

from .formulas import (
    INF,
    BigSoftAnd,
    BigSoftOr,
    Formula,
    FormulaError,
    Implies,
    LabelVar,
    LinAnd,
    LinOr,
    Literal,
    Not,
    OutputVar,
    SoftAnd,
    SoftOr,
    Valuation,
    connective_eval,
    eval_additive,
    eval_boolean,
    export_formula,
    parse_formula,
    to_nnf,
)
from .backends import Backend, backend_eval, backend_name, ground_atom, parse_backend, stl_nary
from .constraints import (
    ClassificationRobustness,
    ConstraintSpec,
    ExactlyOne,
    GroupExclusion,
    NotBoth,
    StrongClassificationRobustness,
    build_constraint,
    constraint_satisfied,
    parse_constraint,
)
from .models import Network, forward, init_network, load_network, save_network

__version__ = "0.1.0"
