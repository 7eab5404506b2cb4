"""Reverse-mode autodiff on an append-only scalar tape.

Nodes are scalar operations; evaluating a tape over a batch runs the same
scalar graph elementwise over the batch axis, so batch elements stay
independent (values are (batch,) arrays).  Subgradient choices are fixed:
relu'(0) = 0 and max2/min2 break ties toward the first operand.
"""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np

__all__ = [
    "Tape",
    "forward_eval",
    "gradient",
    "backward",
    "grad_check",
    "tape_soft_and",
    "tape_soft_or",
    "tape_softplus",
    "tape_logsumexp",
]

# op codes
INPUT, CONST, ADD, SUB, MUL, DIV, EXP, LOG, MAX2, MIN2, RELU, LOGISTIC = range(12)

_OP_NAMES = {
    INPUT: "input", CONST: "constant", ADD: "add", SUB: "sub", MUL: "mul",
    DIV: "div", EXP: "exp", LOG: "log", MAX2: "max2", MIN2: "min2",
    RELU: "relu", LOGISTIC: "logistic",
}


class Tape:
    """Append-only computation graph; operand ids always precede a node's id."""

    def __init__(self):
        self.ops: list[int] = []
        self.arg_a: list[int] = []
        self.arg_b: list[int] = []
        self.aux: list[float] = []
        self.n_slots = 0

    def __len__(self) -> int:
        return len(self.ops)

    def _push(self, op: int, a: int = -1, b: int = -1, aux: float = 0.0) -> int:
        nid = len(self.ops)
        if a >= nid or b >= nid:
            raise ValueError("operand ids must precede the node id")
        self.ops.append(op)
        self.arg_a.append(a)
        self.arg_b.append(b)
        self.aux.append(aux)
        return nid

    def input(self, slot: int) -> int:
        if slot < 0:
            raise ValueError(f"bad input slot {slot}")
        self.n_slots = max(self.n_slots, slot + 1)
        return self._push(INPUT, aux=float(slot))

    def const(self, value: float) -> int:
        return self._push(CONST, aux=float(value))

    def add(self, a: int, b: int) -> int:
        return self._push(ADD, a, b)

    def sub(self, a: int, b: int) -> int:
        return self._push(SUB, a, b)

    def mul(self, a: int, b: int) -> int:
        return self._push(MUL, a, b)

    def div(self, a: int, b: int) -> int:
        return self._push(DIV, a, b)

    def exp(self, a: int) -> int:
        return self._push(EXP, a)

    def log(self, a: int) -> int:
        return self._push(LOG, a)

    def max2(self, a: int, b: int) -> int:
        return self._push(MAX2, a, b)

    def min2(self, a: int, b: int) -> int:
        return self._push(MIN2, a, b)

    def relu(self, a: int) -> int:
        return self._push(RELU, a)

    def logistic(self, a: int) -> int:
        return self._push(LOGISTIC, a)

    def cmul(self, a: int, c: float) -> int:
        return self.mul(a, self.const(c))

    def neg(self, a: int) -> int:
        return self.sub(self.const(0.0), a)


def _as_batch(inputs) -> tuple[np.ndarray, bool]:
    arr = np.asarray(inputs, dtype=float)
    if arr.ndim == 1:
        return arr[:, None], True
    if arr.ndim == 2:
        return arr, False
    raise ValueError("inputs must be a vector of slot values or a (slots, batch) matrix")


def _forward_values(tape: Tape, inputs: np.ndarray) -> list:
    if inputs.shape[0] < tape.n_slots:
        raise ValueError(f"tape needs {tape.n_slots} input slots, got {inputs.shape[0]}")
    batch = inputs.shape[1]
    vals: list = [None] * len(tape.ops)
    ops, aa, ab, aux = tape.ops, tape.arg_a, tape.arg_b, tape.aux
    for i, op in enumerate(ops):
        if op == INPUT:
            vals[i] = inputs[int(aux[i])]
        elif op == CONST:
            vals[i] = np.full(batch, aux[i])
        elif op == ADD:
            vals[i] = vals[aa[i]] + vals[ab[i]]
        elif op == SUB:
            vals[i] = vals[aa[i]] - vals[ab[i]]
        elif op == MUL:
            vals[i] = vals[aa[i]] * vals[ab[i]]
        elif op == DIV:
            vals[i] = vals[aa[i]] / vals[ab[i]]
        elif op == EXP:
            vals[i] = np.exp(vals[aa[i]])
        elif op == LOG:
            vals[i] = np.log(vals[aa[i]])
        elif op == MAX2:
            vals[i] = np.maximum(vals[aa[i]], vals[ab[i]])
        elif op == MIN2:
            vals[i] = np.minimum(vals[aa[i]], vals[ab[i]])
        elif op == RELU:
            vals[i] = np.maximum(vals[aa[i]], 0.0)
        elif op == LOGISTIC:
            x = vals[aa[i]]
            vals[i] = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                               np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
        else:
            raise ValueError(f"unknown op code {op}")
    return vals


def forward_eval(tape: Tape, inputs, root: int | None = None):
    """Evaluate the tape; returns the root value (the last node by default).

    inputs is a vector of slot values (scalar result) or a (slots, batch)
    matrix (batched result).
    """
    arr, scalar = _as_batch(inputs)
    vals = _forward_values(tape, arr)
    out = vals[len(tape.ops) - 1 if root is None else root]
    return float(out[0]) if scalar else out


def backward(tape: Tape, vals: list, seeds: dict) -> np.ndarray:
    """Reverse sweep from seeded cotangents; returns per-slot gradients.

    seeds maps node id -> cotangent array; every node is visited once in
    reverse topological order.
    """
    batch = vals[0].shape[0] if vals else 1
    adj: list = [None] * len(tape.ops)
    for nid, seed in seeds.items():
        s = np.broadcast_to(np.asarray(seed, dtype=float), (batch,)).copy()
        adj[nid] = s if adj[nid] is None else adj[nid] + s
    grads = np.zeros((tape.n_slots, batch))
    ops, aa, ab, aux = tape.ops, tape.arg_a, tape.arg_b, tape.aux

    def acc(j: int, g) -> None:
        if adj[j] is None:
            adj[j] = np.array(g, dtype=float, copy=True)
        else:
            adj[j] += g

    for i in range(len(ops) - 1, -1, -1):
        g = adj[i]
        if g is None:
            continue
        op = ops[i]
        if op == INPUT:
            grads[int(aux[i])] += g
        elif op == CONST:
            pass
        elif op == ADD:
            acc(aa[i], g)
            acc(ab[i], g)
        elif op == SUB:
            acc(aa[i], g)
            acc(ab[i], -g)
        elif op == MUL:
            acc(aa[i], g * vals[ab[i]])
            acc(ab[i], g * vals[aa[i]])
        elif op == DIV:
            b = vals[ab[i]]
            acc(aa[i], g / b)
            acc(ab[i], -g * vals[aa[i]] / (b * b))
        elif op == EXP:
            acc(aa[i], g * vals[i])
        elif op == LOG:
            acc(aa[i], g / vals[aa[i]])
        elif op == MAX2:
            mask = vals[aa[i]] >= vals[ab[i]]
            acc(aa[i], g * mask)
            acc(ab[i], g * (~mask))
        elif op == MIN2:
            mask = vals[aa[i]] <= vals[ab[i]]
            acc(aa[i], g * mask)
            acc(ab[i], g * (~mask))
        elif op == RELU:
            acc(aa[i], g * (vals[aa[i]] > 0))
        elif op == LOGISTIC:
            s = vals[i]
            acc(aa[i], g * s * (1.0 - s))
    return grads


def gradient(tape: Tape, inputs, root: int | None = None):
    """Partials of the root with respect to every input slot."""
    arr, scalar = _as_batch(inputs)
    vals = _forward_values(tape, arr)
    r = len(tape.ops) - 1 if root is None else root
    grads = backward(tape, vals, {r: np.ones(arr.shape[1])})
    return grads[:, 0] if scalar else grads


def _branch_signature(tape: Tape, inputs: np.ndarray) -> list:
    vals = _forward_values(tape, inputs)
    sig = []
    for i, op in enumerate(tape.ops):
        if op == MAX2:
            sig.append(vals[tape.arg_a[i]] >= vals[tape.arg_b[i]])
        elif op == MIN2:
            sig.append(vals[tape.arg_a[i]] <= vals[tape.arg_b[i]])
        elif op == RELU:
            sig.append(vals[tape.arg_a[i]] > 0)
    return sig


def grad_check(tape: Tape, inputs, h: float = 1e-5, tol: float = 1e-4,
               root: int | None = None) -> bool:
    """Compare analytic partials against central finite differences.

    Inputs whose +/-h perturbation flips a relu/max2/min2 branch are
    skipped (the kink makes the central difference meaningless there).
    """
    x = np.asarray(inputs, dtype=float)
    if x.ndim != 1:
        raise ValueError("grad_check expects a single input vector")
    analytic = gradient(tape, x, root=root)
    r = len(tape.ops) - 1 if root is None else root
    for i in range(tape.n_slots):
        xp, xm = x.copy(), x.copy()
        xp[i] += h
        xm[i] -= h
        sig_p = _branch_signature(tape, xp[:, None])
        sig_m = _branch_signature(tape, xm[:, None])
        if any(bool(np.any(a != b)) for a, b in zip(sig_p, sig_m)):
            continue
        fd = (forward_eval(tape, xp, root=r) - forward_eval(tape, xm, root=r)) / (2 * h)
        if not math.isfinite(fd):
            continue
        err = abs(analytic[i] - fd) / max(1.0, abs(analytic[i]), abs(fd))
        if err > tol:
            return False
    return True


# ---------------------------------------------------------------------------
# Composite builders
# ---------------------------------------------------------------------------

def tape_soft_and(t: Tape, x: int, y: int, p: float) -> int:
    """Max-shifted (1/p) log(e^(px) + e^(py)); exp arguments stay <= 0."""
    if p == math.inf:
        return t.max2(x, y)
    m = t.max2(x, y)
    s = t.add(t.exp(t.cmul(t.sub(x, m), p)), t.exp(t.cmul(t.sub(y, m), p)))
    return t.add(m, t.cmul(t.log(s), 1.0 / p))


def tape_soft_or(t: Tape, x: int, y: int, p: float) -> int:
    """Min-shifted -(1/p) log(e^(-px) + e^(-py))."""
    if p == math.inf:
        return t.min2(x, y)
    m = t.min2(x, y)
    s = t.add(t.exp(t.cmul(t.sub(x, m), -p)), t.exp(t.cmul(t.sub(y, m), -p)))
    return t.sub(m, t.cmul(t.log(s), 1.0 / p))


def tape_softplus(t: Tape, x: int) -> int:
    return tape_soft_and(t, x, t.const(0.0), 1.0)


def tape_logsumexp(t: Tape, nodes: Sequence[int]) -> int:
    """Balanced-tree fold of pairwise log-sum-exp; exact n-ary LSE."""
    nodes = list(nodes)
    if not nodes:
        raise ValueError("logsumexp over no nodes")
    if len(nodes) == 1:
        return nodes[0]
    mid = len(nodes) // 2
    return tape_soft_and(t, tape_logsumexp(t, nodes[:mid]),
                         tape_logsumexp(t, nodes[mid:]), 1.0)
