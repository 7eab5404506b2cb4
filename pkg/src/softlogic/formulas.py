"""Formula language and its two semantics over the extended reals.

Values live in [-inf, +inf] with the reversed reading: lower numbers are
more true, -inf is maximally true and +inf is maximally false.  The soft
connectives are log-sum-exp families indexed by a hardness p in (0, inf];
at p = inf they are exact max/min.  The linear connectives are addition,
with the two mixed-infinity sums fixed by convention (-inf + +inf is +inf
for the conjunctive sum and -inf for the disjunctive one) because IEEE
arithmetic would make them NaN.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence, Union

import numpy as np

INF = math.inf

__all__ = [
    "INF",
    "Formula",
    "OutputVar",
    "LabelVar",
    "Literal",
    "Not",
    "SoftAnd",
    "SoftOr",
    "LinAnd",
    "LinOr",
    "Implies",
    "BigSoftAnd",
    "BigSoftOr",
    "Valuation",
    "FormulaError",
    "check_hardness",
    "soft_and",
    "soft_or",
    "lin_and",
    "lin_or",
    "neg",
    "implies",
    "connective_eval",
    "eval_additive",
    "eval_boolean",
    "to_nnf",
    "formula_depth",
    "export_formula",
    "parse_formula",
]


class FormulaError(ValueError):
    """Raised for malformed formulas, bad hardness values, or bad indices."""


def check_hardness(p: float) -> float:
    """Validate a hardness value: a positive real or inf."""
    if not (p > 0):
        raise FormulaError(f"hardness must be positive, got {p!r}")
    return float(p)


# ---------------------------------------------------------------------------
# Connectives on extended reals
# ---------------------------------------------------------------------------

def soft_and(a: float, b: float, p: float) -> float:
    """Conjunctive soft connective: (1/p) * log(exp(p*a) + exp(p*b)).

    At p = inf this is max(a, b).  Overflow-safe for any finite inputs via
    max-shifting; an infinite operand follows the two-sided limit.
    """
    if a == INF or b == INF:
        return INF
    if a == -INF:
        return b
    if b == -INF:
        return a
    if p == INF:
        return max(a, b)
    m = a if a >= b else b
    return m + math.log(math.exp(p * (a - m)) + math.exp(p * (b - m))) / p


def soft_or(a: float, b: float, p: float) -> float:
    """Disjunctive soft connective: -(1/p) * log(exp(-p*a) + exp(-p*b)).

    At p = inf this is min(a, b).
    """
    if a == -INF or b == -INF:
        return -INF
    if a == INF:
        return b
    if b == INF:
        return a
    if p == INF:
        return min(a, b)
    m = a if a <= b else b
    return m - math.log(math.exp(-p * (a - m)) + math.exp(-p * (b - m))) / p


def lin_and(a: float, b: float) -> float:
    """Conjunctive linear connective: a + b with -inf + +inf := +inf."""
    if (a == -INF and b == INF) or (a == INF and b == -INF):
        return INF
    return a + b


def lin_or(a: float, b: float) -> float:
    """Disjunctive linear connective: a + b with -inf + +inf := -inf."""
    if (a == -INF and b == INF) or (a == INF and b == -INF):
        return -INF
    return a + b


def neg(a: float) -> float:
    """Order-reversing involution a -> -a."""
    return -a


def implies(a: float, b: float) -> float:
    """Implication neg(a) disjunctively-plus b; on finite values b - a.

    A +inf antecedent therefore yields -inf (maximally true) for every
    consequent, which is the ex-falso reading of the disjunctive sum.
    """
    return lin_or(neg(a), b)


_SOFT_KINDS = {"soft_and", "soft_or"}
_CONNECTIVES = {
    "soft_and": soft_and,
    "soft_or": soft_or,
    "lin_and": lambda a, b, p: lin_and(a, b),
    "lin_or": lambda a, b, p: lin_or(a, b),
}


def connective_eval(kind: str, a: float, b: float, p: float = INF) -> float:
    """Evaluate one binary connective by name.

    kind is one of soft_and, soft_or, lin_and, lin_or; p is only consulted
    by the soft kinds.
    """
    try:
        fn = _CONNECTIVES[kind]
    except KeyError:
        raise FormulaError(f"unknown connective kind {kind!r}") from None
    if kind in _SOFT_KINDS:
        return fn(a, b, check_hardness(p))
    return fn(a, b, p)


# ---------------------------------------------------------------------------
# Formula AST
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class OutputVar:
    """Model output logit y_i."""

    i: int


@dataclass(frozen=True)
class LabelVar:
    """Label logit for class i (the hat-variable of a data point)."""

    i: int


@dataclass(frozen=True)
class Literal:
    """A real constant; -inf and +inf encode the two logical constants."""

    r: float


@dataclass(frozen=True)
class Not:
    child: "Formula"


@dataclass(frozen=True)
class SoftAnd:
    left: "Formula"
    right: "Formula"


@dataclass(frozen=True)
class SoftOr:
    left: "Formula"
    right: "Formula"


@dataclass(frozen=True)
class LinAnd:
    left: "Formula"
    right: "Formula"


@dataclass(frozen=True)
class LinOr:
    left: "Formula"
    right: "Formula"


@dataclass(frozen=True)
class Implies:
    left: "Formula"
    right: "Formula"


def _as_tuple(items: Iterable["Formula"]) -> tuple:
    t = tuple(items)
    if not t:
        raise FormulaError("n-ary fold over an empty list")
    return t


@dataclass(frozen=True)
class BigSoftAnd:
    """Finitary soft conjunction, reduced in a fixed balanced tree order."""

    items: tuple

    def __init__(self, items: Iterable["Formula"]):
        object.__setattr__(self, "items", _as_tuple(items))


@dataclass(frozen=True)
class BigSoftOr:
    """Finitary soft disjunction, reduced in a fixed balanced tree order."""

    items: tuple

    def __init__(self, items: Iterable["Formula"]):
        object.__setattr__(self, "items", _as_tuple(items))


Formula = Union[
    OutputVar, LabelVar, Literal, Not,
    SoftAnd, SoftOr, LinAnd, LinOr, Implies,
    BigSoftAnd, BigSoftOr,
]

_BINARY = (SoftAnd, SoftOr, LinAnd, LinOr, Implies)
_NARY = (BigSoftAnd, BigSoftOr)


@dataclass(frozen=True)
class Valuation:
    """Point at which formulas are evaluated.

    label_logits holds the hat-variables, output_logits the model outputs;
    both have length n.  Label logits may be infinite (class guards use
    +inf for "not this class"); output logits are finite model outputs.
    """

    label_logits: tuple
    output_logits: tuple

    def __init__(self, label_logits: Sequence[float], output_logits: Sequence[float]):
        object.__setattr__(self, "label_logits", tuple(float(v) for v in label_logits))
        object.__setattr__(self, "output_logits", tuple(float(v) for v in output_logits))
        if len(self.label_logits) != len(self.output_logits):
            raise FormulaError(
                f"label/output logit lengths differ: "
                f"{len(self.label_logits)} vs {len(self.output_logits)}"
            )

    @property
    def n(self) -> int:
        return len(self.output_logits)


def _check_index(i: int, n: int, what: str) -> None:
    if not (0 <= i < n):
        raise FormulaError(f"{what} index {i} out of bounds for {n} labels")


def formula_depth(phi: Formula) -> int:
    """Connective nesting depth; atoms have depth 0."""
    if isinstance(phi, (OutputVar, LabelVar, Literal)):
        return 0
    if isinstance(phi, Not):
        return 1 + formula_depth(phi.child)
    if isinstance(phi, _BINARY):
        return 1 + max(formula_depth(phi.left), formula_depth(phi.right))
    if isinstance(phi, _NARY):
        return 1 + max(formula_depth(c) for c in phi.items)
    raise FormulaError(f"not a formula: {phi!r}")


def _balanced_fold(op, values: Sequence[float]) -> float:
    if len(values) == 1:
        return values[0]
    mid = len(values) // 2
    return op(_balanced_fold(op, values[:mid]), _balanced_fold(op, values[mid:]))


def eval_additive(phi: Formula, v: Valuation, p: float) -> float:
    """Real-valued semantics of a formula at hardness p."""
    check_hardness(p)
    n = v.n

    def go(f: Formula) -> float:
        if isinstance(f, OutputVar):
            _check_index(f.i, n, "output variable")
            return v.output_logits[f.i]
        if isinstance(f, LabelVar):
            _check_index(f.i, n, "label variable")
            return v.label_logits[f.i]
        if isinstance(f, Literal):
            return float(f.r)
        if isinstance(f, Not):
            return neg(go(f.child))
        if isinstance(f, SoftAnd):
            return soft_and(go(f.left), go(f.right), p)
        if isinstance(f, SoftOr):
            return soft_or(go(f.left), go(f.right), p)
        if isinstance(f, LinAnd):
            return lin_and(go(f.left), go(f.right))
        if isinstance(f, LinOr):
            return lin_or(go(f.left), go(f.right))
        if isinstance(f, Implies):
            return implies(go(f.left), go(f.right))
        if isinstance(f, BigSoftAnd):
            return _balanced_fold(lambda x, y: soft_and(x, y, p), [go(c) for c in f.items])
        if isinstance(f, BigSoftOr):
            return _balanced_fold(lambda x, y: soft_or(x, y, p), [go(c) for c in f.items])
        raise FormulaError(f"not a formula: {f!r}")

    return go(phi)


def eval_boolean(phi: Formula, v: Valuation) -> bool:
    """Crisp satisfaction of a formula.

    Atoms hold when their value is <= 0, negation when the negated formula's
    hard (p = inf) value is >= 0, and implication when the consequent's hard
    value is <= the antecedent's.  Linear conjunction/disjunction are
    grounded like their soft counterparts.
    """
    n = v.n

    def go(f: Formula) -> bool:
        if isinstance(f, OutputVar):
            _check_index(f.i, n, "output variable")
            return v.output_logits[f.i] <= 0.0
        if isinstance(f, LabelVar):
            _check_index(f.i, n, "label variable")
            return v.label_logits[f.i] <= 0.0
        if isinstance(f, Literal):
            return f.r <= 0.0
        if isinstance(f, Not):
            return eval_additive(f.child, v, INF) >= 0.0
        if isinstance(f, (SoftAnd, LinAnd)):
            return go(f.left) and go(f.right)
        if isinstance(f, (SoftOr, LinOr)):
            return go(f.left) or go(f.right)
        if isinstance(f, Implies):
            return eval_additive(f.right, v, INF) <= eval_additive(f.left, v, INF)
        if isinstance(f, BigSoftAnd):
            return all(go(c) for c in f.items)
        if isinstance(f, BigSoftOr):
            return any(go(c) for c in f.items)
        raise FormulaError(f"not a formula: {f!r}")

    return go(phi)


# ---------------------------------------------------------------------------
# Negation normal form
# ---------------------------------------------------------------------------

def to_nnf(phi: Formula) -> Formula:
    """Push negations down to atoms.

    Uses the De Morgan duals (soft and linear), double-negation elimination,
    Not(Implies(a, b)) = Implies(b, a), and Not(Literal(r)) = Literal(-r).
    The additive semantics is preserved exactly at every hardness (the
    linear mixed-infinity conventions are dual to each other).  The Boolean
    semantics is preserved exactly as long as no negation scopes over a
    linear connective: a linear connective's crisp reading is the
    conjunction/disjunction of its operands' readings while its value is a
    sum, and the negation clause reads the value, so the two disagree on
    mixed-sign operands under a negation.
    """
    if isinstance(phi, (OutputVar, LabelVar, Literal)):
        return phi
    if isinstance(phi, SoftAnd):
        return SoftAnd(to_nnf(phi.left), to_nnf(phi.right))
    if isinstance(phi, SoftOr):
        return SoftOr(to_nnf(phi.left), to_nnf(phi.right))
    if isinstance(phi, LinAnd):
        return LinAnd(to_nnf(phi.left), to_nnf(phi.right))
    if isinstance(phi, LinOr):
        return LinOr(to_nnf(phi.left), to_nnf(phi.right))
    if isinstance(phi, Implies):
        return Implies(to_nnf(phi.left), to_nnf(phi.right))
    if isinstance(phi, BigSoftAnd):
        return BigSoftAnd(tuple(to_nnf(c) for c in phi.items))
    if isinstance(phi, BigSoftOr):
        return BigSoftOr(tuple(to_nnf(c) for c in phi.items))
    if isinstance(phi, Not):
        c = phi.child
        if isinstance(c, (OutputVar, LabelVar)):
            return phi
        if isinstance(c, Literal):
            return Literal(-c.r)
        if isinstance(c, Not):
            return to_nnf(c.child)
        if isinstance(c, SoftAnd):
            return SoftOr(to_nnf(Not(c.left)), to_nnf(Not(c.right)))
        if isinstance(c, SoftOr):
            return SoftAnd(to_nnf(Not(c.left)), to_nnf(Not(c.right)))
        if isinstance(c, LinAnd):
            return LinOr(to_nnf(Not(c.left)), to_nnf(Not(c.right)))
        if isinstance(c, LinOr):
            return LinAnd(to_nnf(Not(c.left)), to_nnf(Not(c.right)))
        if isinstance(c, Implies):
            return Implies(to_nnf(c.right), to_nnf(c.left))
        if isinstance(c, BigSoftAnd):
            return BigSoftOr(tuple(to_nnf(Not(x)) for x in c.items))
        if isinstance(c, BigSoftOr):
            return BigSoftAnd(tuple(to_nnf(Not(x)) for x in c.items))
    raise FormulaError(f"not a formula: {phi!r}")


# ---------------------------------------------------------------------------
# Textual prefix format
# ---------------------------------------------------------------------------
#
# Grammar (whitespace-separated, one parenthesized group per node):
#   formula := (y INT) | (yhat INT) | (lit NUM) | (not formula)
#            | (and formula formula+) | (or formula formula+)
#            | (land formula formula) | (lor formula formula)
#            | (implies formula formula)
#   NUM     := floating literal, or inf / -inf
#
# `and`/`or` with exactly two operands parse to the binary connectives;
# with three or more they parse to the n-ary folds.  n-ary folds export
# flattened, nested binary applications export nested.

def _num_repr(r: float) -> str:
    if r == INF:
        return "inf"
    if r == -INF:
        return "-inf"
    return repr(float(r))


def export_formula(phi: Formula) -> str:
    """Serialize a formula to the documented prefix notation."""
    if isinstance(phi, OutputVar):
        return f"(y {phi.i})"
    if isinstance(phi, LabelVar):
        return f"(yhat {phi.i})"
    if isinstance(phi, Literal):
        return f"(lit {_num_repr(phi.r)})"
    if isinstance(phi, Not):
        return f"(not {export_formula(phi.child)})"
    if isinstance(phi, SoftAnd):
        return f"(and {export_formula(phi.left)} {export_formula(phi.right)})"
    if isinstance(phi, SoftOr):
        return f"(or {export_formula(phi.left)} {export_formula(phi.right)})"
    if isinstance(phi, LinAnd):
        return f"(land {export_formula(phi.left)} {export_formula(phi.right)})"
    if isinstance(phi, LinOr):
        return f"(lor {export_formula(phi.left)} {export_formula(phi.right)})"
    if isinstance(phi, Implies):
        return f"(implies {export_formula(phi.left)} {export_formula(phi.right)})"
    if isinstance(phi, BigSoftAnd):
        return "(and " + " ".join(export_formula(c) for c in phi.items) + ")"
    if isinstance(phi, BigSoftOr):
        return "(or " + " ".join(export_formula(c) for c in phi.items) + ")"
    raise FormulaError(f"not a formula: {phi!r}")


def _tokenize(text: str) -> list:
    return text.replace("(", " ( ").replace(")", " ) ").split()


def parse_formula(text: str, max_depth: int = 64) -> Formula:
    """Parse the prefix notation; inverse of export_formula.

    max_depth bounds connective nesting to keep recursion in check.
    """
    tokens = _tokenize(text)
    pos = 0

    def expect(tok: str) -> None:
        nonlocal pos
        if pos >= len(tokens) or tokens[pos] != tok:
            got = tokens[pos] if pos < len(tokens) else "<end>"
            raise FormulaError(f"expected {tok!r}, got {got!r}")
        pos += 1

    def parse_num() -> float:
        nonlocal pos
        if pos >= len(tokens):
            raise FormulaError("expected a number, got end of input")
        tok = tokens[pos]
        pos += 1
        try:
            return float(tok)
        except ValueError:
            raise FormulaError(f"not a number: {tok!r}") from None

    def parse_int() -> int:
        nonlocal pos
        if pos >= len(tokens):
            raise FormulaError("expected an index, got end of input")
        tok = tokens[pos]
        pos += 1
        try:
            return int(tok)
        except ValueError:
            raise FormulaError(f"not an index: {tok!r}") from None

    def node(depth: int) -> Formula:
        nonlocal pos
        if depth > max_depth:
            raise FormulaError(f"formula deeper than the cap of {max_depth}")
        expect("(")
        if pos >= len(tokens):
            raise FormulaError("unexpected end of input")
        head = tokens[pos]
        pos += 1
        if head == "y":
            out = OutputVar(parse_int())
        elif head == "yhat":
            out = LabelVar(parse_int())
        elif head == "lit":
            out = Literal(parse_num())
        elif head == "not":
            out = Not(node(depth + 1))
        elif head in ("and", "or", "land", "lor", "implies"):
            args = []
            while pos < len(tokens) and tokens[pos] == "(":
                args.append(node(depth + 1))
            if head in ("land", "lor", "implies"):
                if len(args) != 2:
                    raise FormulaError(f"{head} takes exactly two operands, got {len(args)}")
                cls = {"land": LinAnd, "lor": LinOr, "implies": Implies}[head]
                out = cls(args[0], args[1])
            else:
                if len(args) < 2:
                    raise FormulaError(f"{head} takes at least two operands, got {len(args)}")
                if len(args) == 2:
                    out = (SoftAnd if head == "and" else SoftOr)(args[0], args[1])
                else:
                    out = (BigSoftAnd if head == "and" else BigSoftOr)(tuple(args))
        else:
            raise FormulaError(f"unknown node head {head!r}")
        expect(")")
        return out

    result = node(0)
    if pos != len(tokens):
        raise FormulaError(f"trailing input after formula: {' '.join(tokens[pos:])!r}")
    return result


# ---------------------------------------------------------------------------
# Vectorized connectives (shared by tests, backends, and training heads)
# ---------------------------------------------------------------------------

def soft_and_vec(a: np.ndarray, b: np.ndarray, p: float) -> np.ndarray:
    """Elementwise soft conjunction on arrays of finite values."""
    if p == INF:
        return np.maximum(a, b)
    m = np.maximum(a, b)
    return m + np.log(np.exp(p * (a - m)) + np.exp(p * (b - m))) / p


def soft_or_vec(a: np.ndarray, b: np.ndarray, p: float) -> np.ndarray:
    """Elementwise soft disjunction on arrays of finite values."""
    if p == INF:
        return np.minimum(a, b)
    m = np.minimum(a, b)
    return m - np.log(np.exp(-p * (a - m)) + np.exp(-p * (b - m))) / p
