"""Builders for the five supported output constraints.

Each constraint exists in two forms.  The full form guards every possible
true class c with the implication "label c is the true one implies ...",
so one formula covers the whole dataset; grounding the label logits with
the one-hot encoding (0 for the true class, +inf for the rest) collapses
it exactly to the guard-free simplified form for that class, at every
hardness.  The simplified form takes the known true class directly and is
the one fed to backends without an implication connective.

Comparisons between logits are encoded so that "the logit of c is at
least the logit of i" is the implication from y_c to y_i, whose crisp
reading is value(y_i) <= value(y_c).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .formulas import (
    INF,
    BigSoftAnd,
    Formula,
    Implies,
    LabelVar,
    Literal,
    Not,
    OutputVar,
    SoftAnd,
    SoftOr,
    Valuation,
    eval_boolean,
)

__all__ = [
    "ConstraintSpec",
    "ConstraintError",
    "StrongClassificationRobustness",
    "ClassificationRobustness",
    "GroupExclusion",
    "NotBoth",
    "ExactlyOne",
    "parse_constraint",
    "constraint_name",
    "build_constraint",
    "one_hot_label_logits",
    "constraint_satisfied",
]


class ConstraintError(ValueError):
    """Raised for invalid constraint parameters or modes."""


def _label_tuple(labels) -> tuple:
    t = tuple(sorted(int(i) for i in labels))
    if len(set(t)) != len(t):
        raise ConstraintError(f"duplicate labels in {labels}")
    if any(i < 0 for i in t):
        raise ConstraintError(f"negative label in {labels}")
    return t


def _pair_tuple(pairs) -> tuple:
    out = []
    seen = set()
    for i, j in pairs:
        i, j = int(i), int(j)
        if i == j:
            raise ConstraintError(f"pair ({i}, {j}) is not a pair of distinct labels")
        if i in seen or j in seen:
            raise ConstraintError("pairs must be disjoint")
        seen.update((i, j))
        out.append((i, j))
    if not out:
        raise ConstraintError("need at least one label pair")
    return tuple(out)


@dataclass(frozen=True)
class StrongClassificationRobustness:
    """The true-class logit must sit at the threshold-implication margin."""

    delta: float
    labels: tuple

    def __init__(self, delta: float, labels):
        object.__setattr__(self, "delta", float(delta))
        object.__setattr__(self, "labels", _label_tuple(labels))


@dataclass(frozen=True)
class ClassificationRobustness:
    """The true-class logit must be the largest."""

    labels: tuple

    def __init__(self, labels):
        object.__setattr__(self, "labels", _label_tuple(labels))


@dataclass(frozen=True)
class GroupExclusion:
    """The true class's logit must exceed every logit of the other group."""

    group_c: tuple
    group_f: tuple

    def __init__(self, group_c, group_f):
        c, f = _label_tuple(group_c), _label_tuple(group_f)
        if set(c) & set(f):
            raise ConstraintError("the two groups must be disjoint")
        object.__setattr__(self, "group_c", c)
        object.__setattr__(self, "group_f", f)


@dataclass(frozen=True)
class NotBoth:
    """For each label pair, never predict both members at once."""

    pairs: tuple

    def __init__(self, pairs):
        object.__setattr__(self, "pairs", _pair_tuple(pairs))


@dataclass(frozen=True)
class ExactlyOne:
    """For each label pair, predict exactly one member."""

    pairs: tuple

    def __init__(self, pairs):
        object.__setattr__(self, "pairs", _pair_tuple(pairs))


ConstraintSpec = (StrongClassificationRobustness | ClassificationRobustness
                  | GroupExclusion | NotBoth | ExactlyOne)

_MULTILABEL = (NotBoth, ExactlyOne)


def parse_constraint(text: str) -> ConstraintSpec:
    """Parse a constraint string.

    Examples: ``scr:delta=0.7,labels=0-9``, ``cr:labels=0-2``,
    ``groups:C=0,2,3,4,6;F=5,7,9``, ``notboth:P=(1,6)(2,5)(3,4)``,
    ``exactlyone:P=(0,1)``.
    """
    name, _, argstr = text.strip().partition(":")
    name = name.strip().lower()

    def parse_labels(val: str) -> list:
        out = []
        for part in val.split(","):
            part = part.strip()
            if "-" in part[1:]:
                lo, hi = part.split("-")
                out.extend(range(int(lo), int(hi) + 1))
            elif part:
                out.append(int(part))
        return out

    def parse_pairs(val: str) -> list:
        pairs = []
        for chunk in val.replace(")(", ");(").split(";"):
            chunk = chunk.strip().strip("()")
            if chunk:
                i, j = chunk.split(",")
                pairs.append((int(i), int(j)))
        return pairs

    args = {}
    if argstr:
        for part in argstr.split(";"):
            key, eq, val = part.partition("=")
            if not eq:
                raise ConstraintError(f"bad constraint argument {part!r}")
            args[key.strip().lower()] = val.strip()
    try:
        if name == "scr":
            delta = float(args.get("delta", 0.0))
            labels = parse_labels(args.get("labels", "0-9"))
            return StrongClassificationRobustness(delta, labels)
        if name == "cr":
            return ClassificationRobustness(parse_labels(args.get("labels", "0-9")))
        if name == "groups":
            return GroupExclusion(parse_labels(args["c"]), parse_labels(args["f"]))
        if name == "notboth":
            return NotBoth(parse_pairs(args["p"]))
        if name == "exactlyone":
            return ExactlyOne(parse_pairs(args["p"]))
    except (KeyError, ValueError) as e:
        raise ConstraintError(f"cannot parse constraint {text!r}: {e}") from None
    raise ConstraintError(f"unknown constraint {name!r}")


def constraint_name(spec: ConstraintSpec) -> str:
    def labels_str(labels):
        return ",".join(str(i) for i in labels)

    if isinstance(spec, StrongClassificationRobustness):
        return f"scr:delta={spec.delta};labels={labels_str(spec.labels)}"
    if isinstance(spec, ClassificationRobustness):
        return f"cr:labels={labels_str(spec.labels)}"
    if isinstance(spec, GroupExclusion):
        return f"groups:C={labels_str(spec.group_c)};F={labels_str(spec.group_f)}"
    pairs = "".join(f"({i},{j})" for i, j in spec.pairs)
    if isinstance(spec, NotBoth):
        return f"notboth:P={pairs}"
    return f"exactlyone:P={pairs}"


def _conj(items) -> Formula:
    items = list(items)
    return items[0] if len(items) == 1 else BigSoftAnd(items)


def _dominates(c: int, others) -> Formula:
    return _conj(Implies(OutputVar(c), OutputVar(i)) for i in others)


def build_constraint(spec: ConstraintSpec, mode: str = "full",
                     true_class: int | None = None) -> Formula:
    """Emit the constraint formula.

    mode "full" produces the label-guarded form; mode "simplified" needs
    the known true class and drops the guards.  The pairwise constraints
    have no guard, so both modes coincide for them.
    """
    if mode not in ("full", "simplified"):
        raise ConstraintError(f"mode must be full or simplified, got {mode!r}")
    simplified = mode == "simplified"
    if simplified and not isinstance(spec, _MULTILABEL) and true_class is None:
        raise ConstraintError("simplified mode needs the true class")

    if isinstance(spec, StrongClassificationRobustness):
        def body(c):
            return Implies(Literal(spec.delta), OutputVar(c))
        if simplified:
            if true_class not in spec.labels:
                raise ConstraintError(f"class {true_class} not in {spec.labels}")
            return body(true_class)
        return _conj(Implies(LabelVar(c), body(c)) for c in spec.labels)

    if isinstance(spec, ClassificationRobustness):
        if simplified:
            if true_class not in spec.labels:
                raise ConstraintError(f"class {true_class} not in {spec.labels}")
            return _dominates(true_class, spec.labels)
        return _conj(Implies(LabelVar(c), _dominates(c, spec.labels))
                     for c in spec.labels)

    if isinstance(spec, GroupExclusion):
        def body(c):
            others = spec.group_f if c in spec.group_c else spec.group_c
            return _dominates(c, others)
        if simplified:
            if true_class not in spec.group_c + spec.group_f:
                return Literal(0.0)  # vacuously satisfied outside both groups
            return body(true_class)
        return SoftAnd(
            _conj(Implies(LabelVar(c), body(c)) for c in spec.group_c),
            _conj(Implies(LabelVar(c), body(c)) for c in spec.group_f),
        )

    if isinstance(spec, NotBoth):
        return _conj(SoftOr(Not(OutputVar(i)), Not(OutputVar(j)))
                     for i, j in spec.pairs)

    if isinstance(spec, ExactlyOne):
        return _conj(
            SoftAnd(
                SoftOr(Not(OutputVar(i)), Not(OutputVar(j))),
                SoftOr(OutputVar(i), OutputVar(j)),
            )
            for i, j in spec.pairs
        )

    raise ConstraintError(f"not a constraint spec: {spec!r}")


def one_hot_label_logits(true_class: int, n: int) -> np.ndarray:
    """Label logits encoding "the true class is c": 0 there, +inf elsewhere.

    +inf marks "maximally false" in the reversed value order, which makes
    every guard for a wrong class collapse exactly (its implication
    evaluates to -inf and drops out of soft conjunctions at any hardness).
    """
    if not (0 <= true_class < n):
        raise ConstraintError(f"true class {true_class} out of range for {n} labels")
    v = np.full(n, INF)
    v[true_class] = 0.0
    return v


def constraint_satisfied(spec: ConstraintSpec, true_class_or_labels,
                         output_logits) -> bool:
    """Crisp ground truth used by every metric.

    For the class-guarded constraints pass the true class index; for the
    pairwise ones the argument is ignored (the formula has no guard).
    Boundary comparisons are non-strict.
    """
    out = np.asarray(output_logits, dtype=float)
    n = out.shape[0]
    if isinstance(spec, _MULTILABEL):
        phi = build_constraint(spec, "full")
        v = Valuation(np.zeros(n), out)
    else:
        c = int(true_class_or_labels)
        phi = build_constraint(spec, "simplified", true_class=c)
        v = Valuation(one_hot_label_logits(c, n), out)
    return eval_boolean(phi, v)
