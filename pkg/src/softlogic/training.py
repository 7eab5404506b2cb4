"""Property-driven training: combined objective, PGD inner maximization,
gradient-norm balancing, and the decoupled-weight-decay optimizer.

Per batch, the prediction loss is the mean cross-entropy on the clean
inputs, the logical loss is the backend's formula loss at the worst input
PGD finds in each sample's box, and the two gradients are combined as
g_pred + lambda * g_cons with lambda chosen so the constraint gradient's
norm is a fixed fraction of the prediction gradient's.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tape, _forward_values, backward
from .backends import Backend, backend_loss_batch
from .constraints import ConstraintSpec, NotBoth, ExactlyOne, build_constraint
from .data import Dataset
from .formulas import Literal
from .models import Network, param_count, tape_forward
from .rng import stream

__all__ = [
    "Box",
    "make_box",
    "TrainConfig",
    "cross_entropy",
    "prediction_loss_batch",
    "balance_lambda",
    "adamw_step",
    "AdamState",
    "NetTape",
    "ConstraintObjective",
    "pgd_attack",
    "pgd_attack_batch",
    "train",
    "train_accuracy",
]

LAMBDA_CAP = 1e6


# ---------------------------------------------------------------------------
# Boxes
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Box:
    """Axis-aligned input region, componentwise lower <= upper."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        if self.lower.shape != self.upper.shape or self.lower.ndim != 1:
            raise ValueError("box bounds must be matching vectors")
        if np.any(self.lower > self.upper):
            raise ValueError("box has lower > upper")

    @property
    def dim(self) -> int:
        return self.lower.shape[0]

    def clip(self, x: np.ndarray) -> np.ndarray:
        return np.clip(x, self.lower, self.upper)

    def contains(self, x: np.ndarray, slack: float = 0.0) -> bool:
        return bool(np.all(x >= self.lower - slack) and np.all(x <= self.upper + slack))


def make_box(x_hat: np.ndarray, eps: float, lower: float = 0.0, upper: float = 1.0) -> Box:
    """The radius-eps sup-norm cube around x_hat, intersected with the
    valid input range."""
    x_hat = np.asarray(x_hat, dtype=float)
    return Box(np.clip(x_hat - eps, lower, upper), np.clip(x_hat + eps, lower, upper))


# ---------------------------------------------------------------------------
# Losses and the optimizer
# ---------------------------------------------------------------------------

def cross_entropy(logits, cls: int) -> float:
    """Negative log softmax probability of cls, max-shifted."""
    z = np.asarray(logits, dtype=float)
    m = z.max()
    return float(m + math.log(np.sum(np.exp(z - m))) - z[cls])


def prediction_loss_batch(outputs: np.ndarray, labels: np.ndarray):
    """Mean-able prediction losses and their output gradients.

    Integer labels give softmax cross-entropy; multi-hot labels give the
    per-label logistic loss oriented so that a present label drives its
    logit negative (the crisp atom reading).
    """
    z = np.asarray(outputs, dtype=float)
    if labels.ndim == 1:
        m = z.max(axis=1, keepdims=True)
        ez = np.exp(z - m)
        sez = ez.sum(axis=1, keepdims=True)
        lse = m[:, 0] + np.log(sez[:, 0])
        idx = np.arange(len(z))
        loss = lse - z[idx, labels]
        grad = ez / sez
        grad[idx, labels] -= 1.0
        return loss, grad
    # multi-hot: present labels want z <= 0, absent want z >= 0
    sign = np.where(labels > 0, 1.0, -1.0)
    t = sign * z
    loss = (np.maximum(t, 0.0) + np.log1p(np.exp(-np.abs(t)))).sum(axis=1)
    sig = np.where(t >= 0, 1.0 / (1.0 + np.exp(-np.abs(t))),
                   np.exp(-np.abs(t)) / (1.0 + np.exp(-np.abs(t))))
    return loss, sign * sig


def balance_lambda(grad_pred_norm: float, grad_constraint_norm: float, alpha: float) -> float:
    """alpha * |g_pred| / |g_cons|, zero on a vanished constraint gradient,
    capped at 1e6."""
    if grad_constraint_norm == 0.0:
        return 0.0
    return min(alpha * grad_pred_norm / grad_constraint_norm, LAMBDA_CAP)


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, n: int) -> "AdamState":
        return cls(np.zeros(n), np.zeros(n), 0)


def adamw_step(params: np.ndarray, grads: np.ndarray, state: AdamState,
               lr: float, weight_decay: float, beta1: float = 0.9,
               beta2: float = 0.999, eps: float = 1e-8):
    """One decoupled-weight-decay Adam update with bias-corrected moments."""
    if params.shape != grads.shape:
        raise ValueError("parameter/gradient shape mismatch")
    t = state.t + 1
    m = beta1 * state.m + (1.0 - beta1) * grads
    v = beta2 * state.v + (1.0 - beta2) * grads * grads
    m_hat = m / (1.0 - beta1 ** t)
    v_hat = v / (1.0 - beta2 ** t)
    new_params = params - lr * m_hat / (np.sqrt(v_hat) + eps) - lr * weight_decay * params
    return new_params, AdamState(m, v, t)


# ---------------------------------------------------------------------------
# Differentiable objectives over the compiled network tape
# ---------------------------------------------------------------------------

class NetTape:
    """The network forward pass compiled once; parameters and features are
    input slots so one reverse sweep yields both gradients."""

    def __init__(self, sizes):
        self.sizes = tuple(sizes)
        self.n_params = param_count(self.sizes)
        self.n_in = self.sizes[0]
        self.n_out = self.sizes[-1]
        t = Tape()
        theta = [t.input(i) for i in range(self.n_params)]
        xs = [t.input(self.n_params + i) for i in range(self.n_in)]
        self.out_nodes = tape_forward(t, self.sizes, theta, xs)
        self.tape = t

    def forward(self, params: np.ndarray, X: np.ndarray):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        batch = X.shape[0]
        inputs = np.empty((self.n_params + self.n_in, batch))
        inputs[: self.n_params] = params[:, None]
        inputs[self.n_params:] = X.T
        vals = _forward_values(self.tape, inputs)
        outputs = np.stack([vals[o] for o in self.out_nodes], axis=1)
        return vals, outputs

    def backward(self, vals, dout: np.ndarray):
        seeds = {o: dout[:, i] for i, o in enumerate(self.out_nodes)}
        grads = backward(self.tape, vals, seeds)
        dtheta = grads[: self.n_params].sum(axis=1)
        dX = grads[self.n_params:].T
        return dtheta, dX


class ConstraintObjective:
    """Backend loss of a constraint over a network, differentiable in both
    the inputs (for attacks) and the parameters (for the outer step).

    For the class-guarded constraints each sample uses the simplified
    formula of its own class; formulas are built once per class.
    """

    def __init__(self, sizes, backend: Backend, spec: ConstraintSpec,
                 net_tape: NetTape | None = None):
        self.nt = net_tape if net_tape is not None else NetTape(sizes)
        self.backend = backend
        self.spec = spec
        n = self.nt.n_out
        if isinstance(spec, (NotBoth, ExactlyOne)):
            self._shared = build_constraint(spec, "full")
        else:
            self._shared = None
            self._by_class = {}
            for c in range(n):
                try:
                    phi = build_constraint(spec, "simplified", true_class=c)
                except Exception:
                    continue  # class outside the constraint's label set
                if phi != Literal(0.0):  # skip vacuously-true classes
                    self._by_class[c] = phi

    def _groups(self, classes: np.ndarray | None):
        if self._shared is not None:
            return [(slice(None), self._shared)]
        if classes is None:
            raise ValueError("class-guarded constraint needs per-sample classes")
        classes = np.asarray(classes)
        return [(np.flatnonzero(classes == c), self._by_class[c])
                for c in np.unique(classes) if c in self._by_class]

    def evaluate(self, params: np.ndarray, X: np.ndarray, classes=None):
        """Returns (loss (B,), dX (B, m), dtheta (P,))."""
        vals, outs = self.nt.forward(params, X)
        loss = np.zeros(outs.shape[0])
        dout = np.zeros_like(outs)
        for rows, phi in self._groups(classes):
            l, g = backend_loss_batch(self.backend, phi, outs[rows])
            loss[rows] = l
            dout[rows] = g
        dtheta, dX = self.nt.backward(vals, dout)
        return loss, dX, dtheta

    def losses(self, params: np.ndarray, X: np.ndarray, classes=None) -> np.ndarray:
        _, outs = self.nt.forward(params, X)
        loss = np.zeros(outs.shape[0])
        for rows, phi in self._groups(classes):
            loss[rows], _ = backend_loss_batch(self.backend, phi, outs[rows])
        return loss


# ---------------------------------------------------------------------------
# PGD
# ---------------------------------------------------------------------------

def pgd_attack_batch(x_hat: np.ndarray, lower: np.ndarray, upper: np.ndarray,
                     loss_and_grad, steps: int, restarts: int, step_size: float,
                     rng: np.random.Generator) -> np.ndarray:
    """Sign-gradient ascent with box projection, batched over rows.

    The first restart starts from the (clipped) clean points, later ones
    from uniform draws in the box; the returned iterate per row is the one
    with the highest loss seen anywhere.
    """
    x0 = np.clip(x_hat, lower, upper)
    best_x = x0.copy()
    best_loss = np.full(len(x0), -np.inf)

    def consider(x, loss):
        nonlocal best_x, best_loss
        better = loss > best_loss
        best_loss = np.where(better, loss, best_loss)
        best_x[better] = x[better]

    for r in range(max(restarts, 1)):
        x = x0.copy() if r == 0 else rng.uniform(lower, upper)
        for _ in range(steps):
            loss, grad = loss_and_grad(x)
            consider(x, loss)
            x = np.clip(x + step_size * np.sign(grad), lower, upper)
        loss, _ = loss_and_grad(x)
        consider(x, loss)
    return best_x


def pgd_attack(net: Network, x_hat: np.ndarray, box: Box, objective,
               steps: int, restarts: int, step_size: float, seed: int,
               true_class: int | None = None) -> np.ndarray:
    """Single-sample attack; objective is a ConstraintObjective (or any
    object with an evaluate(params, X, classes) method)."""
    def lg(X):
        loss, dX, _ = objective.evaluate(net.params, X, None if true_class is None
                                         else np.array([true_class]))
        return loss, dX

    rng = stream(seed, "pgd-single")
    out = pgd_attack_batch(np.asarray(x_hat, dtype=float)[None, :],
                           box.lower[None, :], box.upper[None, :],
                           lg, steps, restarts, step_size, rng)
    return out[0]


# ---------------------------------------------------------------------------
# The training loop
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TrainConfig:
    epochs: int
    batch_size: int
    learning_rate: float = 1e-3
    weight_decay: float = 1e-4
    alpha: float = 0.5
    eps: float = 0.1
    pgd_steps: int = 5
    pgd_restarts: int = 1
    pgd_step_size: float | None = None  # defaults to 2.5 * eps / steps
    seed: int = 0
    backend: Backend = field(default_factory=lambda: Backend("baseline"))
    constraint: ConstraintSpec | None = None

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch size must be positive")
        if not (0.0 < self.alpha <= 1.0):
            raise ValueError(f"alpha must be in (0, 1], got {self.alpha}")
        if self.eps < 0 or self.pgd_steps < 0 or self.pgd_restarts < 1:
            raise ValueError("bad attack configuration")
        if self.learning_rate <= 0 or self.weight_decay < 0:
            raise ValueError("bad optimizer configuration")

    @property
    def step_size(self) -> float:
        if self.pgd_step_size is not None:
            return self.pgd_step_size
        return 2.5 * self.eps / max(self.pgd_steps, 1)


def train_accuracy(net: Network, data: Dataset) -> float:
    from .models import forward
    outs = forward(net, data.inputs)
    if data.multilabel:
        pred = outs <= 0.0
        return float(np.mean(np.all(pred == (data.labels > 0), axis=1)))
    return float(np.mean(np.argmax(outs, axis=1) == data.labels))


def train(net: Network, data: Dataset, cfg: TrainConfig):
    """Property-driven training; returns the trained network and a
    per-epoch log (loss_pred, loss_constraint, lambda, train_acc means).

    Fully deterministic for a fixed config and seed: batch order, restart
    noise, and the optimizer trajectory all derive from seeded streams.
    """
    params = net.params.copy()
    state = AdamState.zeros(params.size)
    nt = NetTape(net.sizes)
    use_constraint = cfg.backend.kind != "baseline" and cfg.constraint is not None
    objective = (ConstraintObjective(net.sizes, cfg.backend, cfg.constraint, net_tape=nt)
                 if use_constraint else None)
    n = len(data)
    log = []
    for epoch in range(cfg.epochs):
        order = stream(cfg.seed, "shuffle", epoch).permutation(n)
        sums = np.zeros(3)  # loss_pred, loss_cons, lambda
        batches = 0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            X = data.inputs[idx]
            y = data.labels[idx]

            vals, outs = nt.forward(params, X)
            ploss, pdout = prediction_loss_batch(outs, y)
            g_pred, _ = nt.backward(vals, pdout / len(idx))
            loss_pred = float(ploss.mean())

            lam = 0.0
            loss_cons = 0.0
            if use_constraint:
                lo = np.clip(X - cfg.eps, data.lower, data.upper)
                hi = np.clip(X + cfg.eps, data.lower, data.upper)
                rng = stream(cfg.seed, "pgd", epoch, batches)
                x_adv = pgd_attack_batch(
                    X, lo, hi,
                    lambda Z: objective.evaluate(params, Z, y)[:2],
                    cfg.pgd_steps, cfg.pgd_restarts, cfg.step_size, rng)
                closs, _, g_cons = objective.evaluate(params, x_adv, y)
                g_cons = g_cons / len(idx)
                loss_cons = float(closs.mean())
                lam = balance_lambda(float(np.linalg.norm(g_pred)),
                                     float(np.linalg.norm(g_cons)), cfg.alpha)
                grad = g_pred + lam * g_cons
            else:
                grad = g_pred

            params, state = adamw_step(params, grad, state, cfg.learning_rate,
                                       cfg.weight_decay)
            sums += (loss_pred, loss_cons, lam)
            batches += 1
        trained = Network(net.sizes, params)
        log.append({
            "epoch": epoch,
            "loss_pred": sums[0] / batches,
            "loss_constraint": sums[1] / batches,
            "lambda": sums[2] / batches,
            "train_acc": train_accuracy(trained, data),
        })
    return Network(net.sizes, params), log
