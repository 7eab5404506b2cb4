"""Sound-and-complete (up to budget) verification of constraints over
input boxes, and the three satisfaction metrics built on it.

Certification is interval-based: output bounds come from interval
propagation through the layers (exact for a single affine layer), output
differences y_i - y_c are tightened by pushing the weight-row difference
through the last hidden layer's bounds, and the formula is judged by a
three-valued recursion (certainly true / certainly false / unknown).
Undecided boxes split along their longest edge, depth first, until a node
budget runs out; the budget is a node count so "unknown" is reproducible.

Falsification witnesses are always concrete inputs re-checked with the
crisp semantics, so a Falsified verdict is sound by construction; a
Verified verdict is sound because every interval step over-approximates.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .backends import Backend
from .constraints import (
    ConstraintSpec,
    ExactlyOne,
    NotBoth,
    build_constraint,
    constraint_satisfied,
    one_hot_label_logits,
)
from .formulas import (
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
)
from .models import Network, forward, layer_slices, save_network
from .rng import stream
from .training import Box, ConstraintObjective, make_box, pgd_attack_batch

__all__ = [
    "Verdict",
    "VerdictCounts",
    "interval_bounds",
    "decide_box",
    "c_sat",
    "c_sec",
    "c_acc",
    "export_problem",
]

VERIFIED = "verified"
FALSIFIED = "falsified"
UNKNOWN = "unknown"


@dataclass(frozen=True)
class Verdict:
    kind: str                      # verified | falsified | unknown
    witness: np.ndarray | None = None
    nodes_used: int = 0


@dataclass
class VerdictCounts:
    verified: int = 0
    falsified: int = 0
    unknown: int = 0
    per_sample: list = field(default_factory=list)

    @property
    def total(self) -> int:
        return self.verified + self.falsified + self.unknown

    def rate(self, kind: str) -> float:
        return 100.0 * getattr(self, kind) / self.total if self.total else 0.0


# ---------------------------------------------------------------------------
# Interval propagation
# ---------------------------------------------------------------------------

class _NetBounds:
    """Layer-wise interval state for one network on one box."""

    def __init__(self, net: Network, box: Box):
        lo, hi = box.lower.astype(float), box.upper.astype(float)
        layers = list(layer_slices(net.sizes))
        last = len(layers) - 1
        for li, (i, o, wsl, bsl) in enumerate(layers):
            w = net.params[wsl].reshape(o, i)
            b = net.params[bsl]
            if li == last:
                self.hidden_lo, self.hidden_hi = lo, hi
                self.w_last, self.b_last = w, b
                mid = (lo + hi) / 2.0
                rad = (hi - lo) / 2.0
                center = w @ mid + b
                spread = np.abs(w) @ rad
                self.out_lo, self.out_hi = center - spread, center + spread
            else:
                mid = (lo + hi) / 2.0
                rad = (hi - lo) / 2.0
                center = w @ mid + b
                spread = np.abs(w) @ rad
                lo = np.maximum(center - spread, 0.0)
                hi = np.maximum(center + spread, 0.0)

    def output(self, i: int):
        return self.out_lo[i], self.out_hi[i]

    def output_difference(self, i: int, c: int):
        """Bounds on y_i - y_c, exact in the shared last-layer inputs."""
        if i == c:
            return 0.0, 0.0
        w = self.w_last[i] - self.w_last[c]
        b = self.b_last[i] - self.b_last[c]
        mid = (self.hidden_lo + self.hidden_hi) / 2.0
        rad = (self.hidden_hi - self.hidden_lo) / 2.0
        center = float(w @ mid + b)
        spread = float(np.abs(w) @ rad)
        return center - spread, center + spread


def interval_bounds(net: Network, box: Box):
    """Sound componentwise output bounds over the box; exact when the
    network is a single affine layer."""
    nb = _NetBounds(net, box)
    return nb.out_lo.copy(), nb.out_hi.copy()


# ---------------------------------------------------------------------------
# Three-valued formula judgement over intervals
# ---------------------------------------------------------------------------

def _value_interval(phi: Formula, nb: _NetBounds, labels):
    if isinstance(phi, OutputVar):
        return nb.output(phi.i)
    if isinstance(phi, LabelVar):
        v = float(labels[phi.i])
        return v, v
    if isinstance(phi, Literal):
        return float(phi.r), float(phi.r)
    if isinstance(phi, Not):
        lo, hi = _value_interval(phi.child, nb, labels)
        return -hi, -lo
    if isinstance(phi, (SoftAnd, BigSoftAnd, SoftOr, BigSoftOr)):
        items = phi.items if isinstance(phi, (BigSoftAnd, BigSoftOr)) else (phi.left, phi.right)
        ivals = [_value_interval(c, nb, labels) for c in items]
        if isinstance(phi, (SoftAnd, BigSoftAnd)):
            return max(l for l, _ in ivals), max(h for _, h in ivals)
        return min(l for l, _ in ivals), min(h for _, h in ivals)
    if isinstance(phi, (LinAnd, LinOr)):
        la, ha = _value_interval(phi.left, nb, labels)
        lb, hb = _value_interval(phi.right, nb, labels)
        return la + lb, ha + hb
    if isinstance(phi, Implies):
        if isinstance(phi.left, OutputVar) and isinstance(phi.right, OutputVar):
            return nb.output_difference(phi.right.i, phi.left.i)
        la, ha = _value_interval(phi.left, nb, labels)
        lb, hb = _value_interval(phi.right, nb, labels)
        return lb - ha, hb - la
    raise FormulaError(f"not a formula: {phi!r}")


def _judge(phi: Formula, nb: _NetBounds, labels):
    """True / False when the crisp value is constant over the whole box,
    None when the intervals cannot tell."""
    if isinstance(phi, (OutputVar, LabelVar, Literal)):
        lo, hi = _value_interval(phi, nb, labels)
        return True if hi <= 0.0 else (False if lo > 0.0 else None)
    if isinstance(phi, Not):
        lo, hi = _value_interval(phi.child, nb, labels)
        return True if lo >= 0.0 else (False if hi < 0.0 else None)
    if isinstance(phi, (SoftAnd, LinAnd, BigSoftAnd)):
        items = phi.items if isinstance(phi, BigSoftAnd) else (phi.left, phi.right)
        results = [_judge(c, nb, labels) for c in items]
        if any(r is False for r in results):
            return False
        return True if all(r is True for r in results) else None
    if isinstance(phi, (SoftOr, LinOr, BigSoftOr)):
        items = phi.items if isinstance(phi, BigSoftOr) else (phi.left, phi.right)
        results = [_judge(c, nb, labels) for c in items]
        if any(r is True for r in results):
            return True
        return False if all(r is False for r in results) else None
    if isinstance(phi, Implies):
        lo, hi = _value_interval(phi, nb, labels)
        return True if hi <= 0.0 else (False if lo > 0.0 else None)
    raise FormulaError(f"not a formula: {phi!r}")


# ---------------------------------------------------------------------------
# Branch and bound
# ---------------------------------------------------------------------------

def _grounded_formula(spec: ConstraintSpec, true_class, n: int):
    if isinstance(spec, (NotBoth, ExactlyOne)):
        return build_constraint(spec, "full"), np.zeros(n)
    return (build_constraint(spec, "simplified", true_class=int(true_class)),
            one_hot_label_logits(int(true_class), n))


def decide_box(net: Network, box: Box, spec: ConstraintSpec, true_class,
               budget: int) -> Verdict:
    """Branch-and-bound over the input box.

    Verified means the crisp constraint holds at every point of the box;
    Falsified carries a concrete witness (always re-checked); Unknown
    means the node budget ran out first.
    """
    if budget < 1:
        raise ValueError("budget must be at least 1")
    phi, labels = _grounded_formula(spec, true_class, net.n_outputs)
    stack = [box]
    nodes = 0
    while stack:
        if nodes >= budget:
            return Verdict(UNKNOWN, nodes_used=nodes)
        b = stack.pop()
        nodes += 1
        verdict = _judge(phi, _NetBounds(net, b), labels)
        if verdict is True:
            continue
        center = (b.lower + b.upper) / 2.0
        if not constraint_satisfied(spec, true_class, forward(net, center)):
            return Verdict(FALSIFIED, witness=center, nodes_used=nodes)
        if verdict is False:
            # sound bounds say the whole box violates, yet the center
            # passed the exact check: impossible unless the bounds are
            # broken, so fail loudly rather than report nonsense
            raise AssertionError("interval judgement contradicts the exact check")
        widths = b.upper - b.lower
        axis = int(np.argmax(widths))
        mid = (b.lower[axis] + b.upper[axis]) / 2.0
        left_hi = b.upper.copy()
        left_hi[axis] = mid
        right_lo = b.lower.copy()
        right_lo[axis] = mid
        stack.append(Box(right_lo, b.upper.copy()))
        stack.append(Box(b.lower.copy(), left_hi))
    return Verdict(VERIFIED, nodes_used=nodes)


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------

def _true_class_of(labels_row):
    arr = np.asarray(labels_row)
    return None if arr.ndim else int(arr)


def c_sat(net: Network, inputs: np.ndarray, labels: np.ndarray,
          spec: ConstraintSpec, eps: float, budget: int,
          lower: float = 0.0, upper: float = 1.0) -> VerdictCounts:
    """Per-sample box verification over the eps-cube around each input."""
    counts = VerdictCounts()
    for i in range(len(inputs)):
        box = make_box(inputs[i], eps, lower, upper)
        v = decide_box(net, box, spec, _true_class_of(labels[i]), budget)
        if v.kind == VERIFIED:
            counts.verified += 1
        elif v.kind == FALSIFIED:
            counts.falsified += 1
        else:
            counts.unknown += 1
        counts.per_sample.append(v)
    return counts


def c_sec(net: Network, inputs: np.ndarray, labels: np.ndarray,
          spec: ConstraintSpec, eps: float, steps: int, restarts: int,
          step_size: float, seed: int, oracle_backend: Backend,
          lower: float = 0.0, upper: float = 1.0):
    """Share of samples where the attack finds no violation.

    The attack maximizes the oracle backend's loss of the constraint
    formula; a sample counts as secure iff the crisp constraint still
    holds at the attack's output.  Returns (percentage, per-sample flags).
    """
    multilabel = isinstance(spec, (NotBoth, ExactlyOne))
    objective = ConstraintObjective(net.sizes, oracle_backend, spec)
    lo = np.clip(inputs - eps, lower, upper)
    hi = np.clip(inputs + eps, lower, upper)
    classes = None if multilabel else np.asarray(labels, dtype=int)
    rng = stream(seed, "attack")
    adv = pgd_attack_batch(
        inputs, lo, hi,
        lambda Z: objective.evaluate(net.params, Z, classes)[:2],
        steps, restarts, step_size, rng)
    outs = forward(net, adv)
    flags = [constraint_satisfied(spec, _true_class_of(labels[i]), outs[i])
             for i in range(len(inputs))]
    return 100.0 * float(np.mean(flags)) if len(flags) else 0.0, flags


def c_acc(net: Network, inputs: np.ndarray, labels: np.ndarray,
          spec: ConstraintSpec, eps: float, n: int, seed: int,
          lower: float = 0.0, upper: float = 1.0):
    """Mean fraction of n uniform box samples satisfying the constraint.

    Returns (percentage, per-point fractions).
    """
    if n < 1:
        raise ValueError("need at least one sample per point")
    fractions = []
    for i in range(len(inputs)):
        box = make_box(inputs[i], eps, lower, upper)
        rng = stream(seed, "cacc", i)
        pts = rng.uniform(box.lower, box.upper, size=(n, box.dim))
        outs = forward(net, pts)
        ok = [constraint_satisfied(spec, _true_class_of(labels[i]), outs[j])
              for j in range(n)]
        fractions.append(float(np.mean(ok)))
    pct = 100.0 * float(np.mean(fractions)) if fractions else 0.0
    return pct, fractions


def export_problem(net: Network, box: Box, phi: Formula, prefix: str) -> list:
    """Write the (network, box, formula) triple as text files; returns the
    paths written."""
    from .formulas import export_formula

    net_path = f"{prefix}.network.txt"
    box_path = f"{prefix}.box.txt"
    phi_path = f"{prefix}.formula.txt"
    save_network(net, net_path)
    with open(box_path, "w") as f:
        f.write("box v1\n")
        f.write("lower " + " ".join(repr(float(v)) for v in box.lower) + "\n")
        f.write("upper " + " ".join(repr(float(v)) for v in box.upper) + "\n")
    with open(phi_path, "w") as f:
        f.write(export_formula(phi) + "\n")
    return [net_path, box_path, phi_path]
