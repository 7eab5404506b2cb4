"""Loss semantics over the shared formula language.

Seven backends map a formula and a valuation to a scalar training loss:

* ``qll:p=P``   additive log-sum-exp semantics (lower is truer, 0 = boundary)
* ``dl2``       non-negative losses: conjunction adds, disjunction multiplies
* ``stl:nu=N``  robustness semantics with non-associative n-ary aggregation
* ``godel`` / ``lukasiewicz`` / ``product`` / ``yager:r=R``
                fuzzy truth degrees in [0, 1]; the loss is 1 - degree
* ``baseline``  sentinel: no logical loss at all

Atoms are grounded from margins: the raw value of a variable, or the
difference consequent-minus-antecedent for an implication between terms.
QLL and STL keep the margin as is, DL2 clamps it at zero, and the fuzzy
backends squash it through a logistic with temperature tau so that a
margin of 0 lands on degree 0.5.

Every backend also has a batched evaluation that returns the loss and its
gradient with respect to the output logits, which is how training and
attacks differentiate through formulas whose semantics branch (fuzzy
implications, the STL aggregator).
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass

import numpy as np

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
    check_hardness,
    eval_additive,
    to_nnf,
)

__all__ = [
    "Backend",
    "BackendError",
    "parse_backend",
    "backend_name",
    "ground_atom",
    "backend_eval",
    "backend_loss_batch",
    "tape_qll_formula",
    "stl_nary",
    "godel_ops",
    "lukasiewicz_ops",
    "product_ops",
    "yager_ops",
]

_FUZZY = ("godel", "lukasiewicz", "product", "yager")
_KINDS = ("qll", "dl2", "stl", "baseline") + _FUZZY


class BackendError(ValueError):
    """Raised for invalid backend parameters or inexpressible formulas."""


@dataclass(frozen=True)
class Backend:
    """A choice of loss semantics plus its parameters.

    p is the soft-connective hardness (qll), nu the aggregation sharpness
    (stl), r the fuzzy family exponent (yager, r >= 1), and tau the
    logistic temperature used to turn margins into fuzzy truth degrees.
    """

    kind: str
    p: float = INF
    nu: float = 1.0
    r: float = 2.0
    tau: float = 1.0

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise BackendError(f"unknown backend kind {self.kind!r}")
        if self.kind == "qll" and not self.p > 0:
            raise BackendError(f"hardness must be positive, got {self.p}")
        if self.kind == "stl" and not self.nu > 0:
            raise BackendError(f"stl sharpness must be positive, got {self.nu}")
        if self.kind == "yager" and not self.r >= 1:
            raise BackendError(f"yager exponent must be >= 1, got {self.r}")
        if not self.tau > 0:
            raise BackendError(f"atom temperature must be positive, got {self.tau}")


def parse_backend(text: str) -> Backend:
    """Parse a backend selection string, e.g. ``qll:p=5`` or ``yager:r=2``."""
    name, _, argstr = text.strip().partition(":")
    name = name.strip().lower()
    args = {}
    if argstr:
        for part in argstr.split(","):
            key, eq, val = part.partition("=")
            if not eq:
                raise BackendError(f"bad backend argument {part!r} in {text!r}")
            try:
                args[key.strip()] = float(val)
            except ValueError:
                raise BackendError(f"bad backend argument value in {text!r}") from None
    try:
        if name == "qll":
            return Backend("qll", p=args.pop("p", 1.0), tau=args.pop("tau", 1.0), **args)
        if name == "stl":
            return Backend("stl", nu=args.pop("nu", 1.0), tau=args.pop("tau", 1.0), **args)
        if name == "yager":
            return Backend("yager", r=args.pop("r", 2.0), tau=args.pop("tau", 1.0), **args)
        if name in ("dl2", "godel", "lukasiewicz", "product", "baseline"):
            return Backend(name, tau=args.pop("tau", 1.0), **args)
    except TypeError:
        raise BackendError(f"unexpected arguments for backend {name!r}: {args}") from None
    raise BackendError(f"unknown backend {name!r}")


def _num(x: float) -> str:
    return str(int(x)) if float(x).is_integer() and math.isfinite(x) else repr(float(x))


def backend_name(b: Backend) -> str:
    """Canonical selection string for a backend."""
    if b.kind == "qll":
        return f"qll:p={'inf' if b.p == INF else _num(b.p)}"
    if b.kind == "stl":
        return f"stl:nu={_num(b.nu)}"
    if b.kind == "yager":
        return f"yager:r={_num(b.r)}"
    return b.kind


# ---------------------------------------------------------------------------
# Atom grounding
# ---------------------------------------------------------------------------

def _logistic(x):
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    enx = np.exp(x[~pos])
    out[~pos] = enx / (1.0 + enx)
    return out


def ground_atom(backend: Backend, margin: float) -> float:
    """Turn an atomic margin into the backend's native value.

    The margin is negative when the atom is satisfied.  QLL/STL keep it,
    DL2 clamps it at zero, the fuzzy backends map it to the truth degree
    sigmoid(-margin / tau).
    """
    if backend.kind in ("qll", "stl"):
        return float(margin)
    if backend.kind == "dl2":
        return max(float(margin), 0.0)
    if backend.kind in _FUZZY:
        return float(_logistic(np.array([-margin / backend.tau]))[0])
    raise BackendError(f"backend {backend.kind!r} does not ground atoms")


# ---------------------------------------------------------------------------
# STL n-ary aggregation
# ---------------------------------------------------------------------------
#
# The primitive is a soft minimum M over robustness values (positive =
# satisfied), with three branches on the sign of the worst value.  Both
# loss-side folds reduce to it: values here are losses (negative =
# satisfied), so conj(values) = -M(-values) and disj(values) = M(values).

def _stl_soft_min(rho: np.ndarray, nu: float, want_grad: bool):
    """Soft minimum over axis 0 of a (k, B) array, plus its Jacobian.

    Branches on the sign of the minimum; the zero branch is the constant 0
    with zero gradient.  Ties for the minimum go to the first operand.
    """
    k, batch = rho.shape
    m = np.min(rho, axis=0)
    amin = np.argmin(rho, axis=0)
    neg, pos = m < 0, m > 0
    safe_m = np.where(m == 0, 1.0, m)
    u = rho / safe_m - 1.0  # (rho_i - m) / m, <= 0 on neg branch, >= 0 on pos

    value = np.zeros(batch)
    grad = np.zeros_like(rho) if want_grad else None

    if np.any(neg):
        un = np.where(neg, u, 0.0)  # keep exp arguments benign off-branch
        s = np.exp((1.0 + nu) * un)
        sw = np.exp(nu * un)
        ss_sum = np.sum(s, axis=0)
        sw_sum = np.sum(sw, axis=0)
        value = np.where(neg, m * ss_sum / sw_sum, value)
        if want_grad:
            # d(value)/d(rho_j) via the chain through u and through m
            dN = 1.0 / sw_sum
            dSw = -(m * ss_sum) / (sw_sum * sw_sum)
            dm = dN * ss_sum
            dSs = dN * m
            du = dSs * s * (1.0 + nu) + dSw * sw * nu
            drho = du / safe_m
            dm = dm + np.sum(du * (-rho / (safe_m * safe_m)), axis=0)
            g = drho.copy()
            g[amin, np.arange(batch)] += dm
            grad = np.where(neg, g, grad)

    if np.any(pos):
        up = np.where(pos, u, 0.0)
        w = np.exp(-nu * up)
        w_sum = np.sum(w, axis=0)
        p_sum = np.sum(rho * w, axis=0)
        value = np.where(pos, p_sum / w_sum, value)
        if want_grad:
            dP = 1.0 / w_sum
            dSw = -p_sum / (w_sum * w_sum)
            drho = dP * w
            dw = dP * rho + dSw
            du = dw * w * (-nu)
            drho = drho + du / safe_m
            dm = np.sum(du * (-rho / (safe_m * safe_m)), axis=0)
            g = drho.copy()
            g[amin, np.arange(batch)] += dm
            grad = np.where(pos, g, grad)

    return value, grad


def _stl_fold(kind: str, values: np.ndarray, nu: float, want_grad: bool):
    # conj(v) = -softmin(-v) and disj(v) = softmin(v); the two sign flips
    # in the conjunction cancel in the gradient.
    if kind == "conj":
        val, g = _stl_soft_min(-values, nu, want_grad)
        return 0.0 - val, g  # 0.0 - x rather than -x keeps the zero branch at +0.0
    if kind == "disj":
        return _stl_soft_min(values, nu, want_grad)
    raise BackendError(f"stl fold kind must be conj or disj, got {kind!r}")


def stl_nary(kind: str, values, nu: float) -> float:
    """Non-associative n-ary STL aggregation of loss values.

    Singleton lists return their element exactly; the aggregation is
    permutation invariant but not associative.
    """
    if not nu > 0:
        raise BackendError(f"stl sharpness must be positive, got {nu}")
    arr = np.asarray(values, dtype=float)
    if arr.ndim != 1 or arr.size == 0:
        raise BackendError("stl_nary takes a non-empty flat list of values")
    val, _ = _stl_fold(kind, arr[:, None], nu, want_grad=False)
    return float(val[0])


# ---------------------------------------------------------------------------
# Fuzzy connective tables
# ---------------------------------------------------------------------------
#
# Each table provides value-and-gradient pairs on degree arrays.  Gradients
# at clamp boundaries are taken from the interior (unclamped) branch; ties
# in min/max go to the first operand.  The discontinuous negations have
# zero gradient everywhere.

def _pow(x, e):
    with np.errstate(divide="ignore"):
        return np.power(x, e)


class _FuzzyOps:
    name = ""

    @staticmethod
    def t_norm(a, b):  # linear conjunction value
        raise NotImplementedError

    @staticmethod
    def t_conorm(a, b):
        raise NotImplementedError

    @staticmethod
    def neg(a):
        raise NotImplementedError

    @staticmethod
    def impl(a, b):
        raise NotImplementedError


class godel_ops(_FuzzyOps):
    name = "godel"

    @staticmethod
    def t_norm(a, b):
        v = np.minimum(a, b)
        mask = a <= b
        return v, (1.0 * mask, 1.0 * ~mask)

    @staticmethod
    def t_conorm(a, b):
        v = np.maximum(a, b)
        mask = a >= b
        return v, (1.0 * mask, 1.0 * ~mask)

    @staticmethod
    def neg(a):
        return np.where(a == 0, 1.0, 0.0), np.zeros_like(a)

    @staticmethod
    def impl(a, b):
        hold = a <= b
        v = np.where(hold, 1.0, b)
        return v, (np.zeros_like(a), 1.0 * ~hold)


class lukasiewicz_ops(_FuzzyOps):
    name = "lukasiewicz"

    @staticmethod
    def t_norm(a, b):
        t = a + b - 1.0
        live = t >= 0
        return np.maximum(t, 0.0), (1.0 * live, 1.0 * live)

    @staticmethod
    def t_conorm(a, b):
        t = a + b
        live = t <= 1
        return np.minimum(t, 1.0), (1.0 * live, 1.0 * live)

    @staticmethod
    def neg(a):
        return 1.0 - a, -np.ones_like(a)

    @staticmethod
    def impl(a, b):
        t = 1.0 - a + b
        live = t <= 1
        return np.minimum(t, 1.0), (-1.0 * live, 1.0 * live)


class product_ops(_FuzzyOps):
    name = "product"

    @staticmethod
    def t_norm(a, b):
        return a * b, (b, a)

    @staticmethod
    def t_conorm(a, b):
        return a + b - a * b, (1.0 - b, 1.0 - a)

    @staticmethod
    def neg(a):
        return np.where(a == 0, 1.0, 0.0), np.zeros_like(a)

    @staticmethod
    def impl(a, b):
        hold = a <= b
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = b / a
            da = np.where(hold, 0.0, -b / (a * a))
        v = np.where(hold, 1.0, ratio)
        db = np.where(hold, 0.0, np.where(a == 0, 0.0, 1.0 / a))
        return v, (np.where(np.isfinite(da), da, 0.0), db)


class yager_ops(_FuzzyOps):
    """Yager family; r = 1 coincides with Lukasiewicz, r -> inf with Godel."""

    name = "yager"

    def __init__(self, r: float):
        self.r = float(r)

    def t_norm(self, a, b):
        r = self.r
        with np.errstate(divide="ignore", invalid="ignore"):
            root = _pow(_pow(1.0 - a, r) + _pow(1.0 - b, r), 1.0 / r)
            t = 1.0 - root
            live = t >= 0
            coeff = _pow(root, 1.0 - r)
            da = coeff * _pow(1.0 - a, r - 1.0) * live
            db = coeff * _pow(1.0 - b, r - 1.0) * live
        v = np.maximum(t, 0.0)
        return v, (np.nan_to_num(da), np.nan_to_num(db))

    def t_conorm(self, a, b):
        r = self.r
        with np.errstate(divide="ignore", invalid="ignore"):
            root = _pow(_pow(a, r) + _pow(b, r), 1.0 / r)
            live = root <= 1
            coeff = _pow(root, 1.0 - r)
            da = coeff * _pow(a, r - 1.0) * live
            db = coeff * _pow(b, r - 1.0) * live
        v = np.minimum(root, 1.0)
        return v, (np.nan_to_num(da), np.nan_to_num(db))

    def neg(self, a):
        r = self.r
        with np.errstate(divide="ignore", invalid="ignore"):
            v = _pow(1.0 - _pow(a, r), 1.0 / r)
            da = -_pow(v, 1.0 - r) * _pow(a, r - 1.0)
        return v, np.nan_to_num(da)

    def impl(self, a, b):
        r = self.r
        hold = a <= b
        with np.errstate(divide="ignore", invalid="ignore"):
            inner = _pow(1.0 - b, r) - _pow(1.0 - a, r)
            inner = np.maximum(inner, 0.0)
            root = _pow(inner, 1.0 / r)
            coeff = _pow(root, 1.0 - r)
            da = np.where(hold, 0.0, -coeff * _pow(1.0 - a, r - 1.0))
            db = np.where(hold, 0.0, coeff * _pow(1.0 - b, r - 1.0))
        v = np.where(hold, 1.0, 1.0 - root)
        return v, (np.nan_to_num(da), np.nan_to_num(db))


def _fuzzy_table(backend: Backend) -> _FuzzyOps:
    if backend.kind == "godel":
        return godel_ops
    if backend.kind == "lukasiewicz":
        return lukasiewicz_ops
    if backend.kind == "product":
        return product_ops
    if backend.kind == "yager":
        return yager_ops(backend.r)
    raise BackendError(f"{backend.kind!r} is not a fuzzy backend")


# ---------------------------------------------------------------------------
# Batched structural evaluation
# ---------------------------------------------------------------------------
#
# Each head recursively evaluates a formula over a batched valuation and
# returns (value (B,), vjp) where vjp(cotangent) accumulates the gradient
# with respect to the output logits into a shared (B, n) array.

_TERMS = (OutputVar, LabelVar, Literal)


class _Ctx:
    def __init__(self, outputs: np.ndarray, labels: np.ndarray | None):
        self.out = outputs
        self.lab = labels
        self.batch = outputs.shape[0]
        self.n = outputs.shape[1]
        self.dout = np.zeros_like(outputs)

    def term_value(self, f: Formula) -> np.ndarray:
        if isinstance(f, OutputVar):
            if not (0 <= f.i < self.n):
                raise FormulaError(f"output variable index {f.i} out of bounds")
            return self.out[:, f.i]
        if isinstance(f, LabelVar):
            if self.lab is None:
                raise FormulaError("formula uses label variables but no labels given")
            if not (0 <= f.i < self.n):
                raise FormulaError(f"label variable index {f.i} out of bounds")
            return self.lab[:, f.i]
        if isinstance(f, Literal):
            return np.full(self.batch, float(f.r))
        raise FormulaError(f"not a term: {f!r}")

    def term_vjp(self, f: Formula, cot: np.ndarray) -> None:
        if isinstance(f, OutputVar):
            self.dout[:, f.i] += cot


def _nop(cot):  # vjp of constants
    return None


def _qll_head(ctx: _Ctx, phi: Formula, p: float):
    def go(f):
        if isinstance(f, _TERMS):
            v = ctx.term_value(f)
            return v, (lambda c, f=f: ctx.term_vjp(f, c))
        if isinstance(f, Not):
            v, vj = go(f.child)
            return -v, (lambda c: vj(-c))
        if isinstance(f, Implies):
            va, ja = go(f.left)
            vb, jb = go(f.right)
            return vb - va, (lambda c: (jb(c), ja(-c)))
        if isinstance(f, (LinAnd, LinOr)):
            va, ja = go(f.left)
            vb, jb = go(f.right)
            return va + vb, (lambda c: (ja(c), jb(c)))
        if isinstance(f, SoftAnd):
            return _combine(go(f.left), go(f.right), conj=True)
        if isinstance(f, SoftOr):
            return _combine(go(f.left), go(f.right), conj=False)
        if isinstance(f, BigSoftAnd):
            return _fold([go(c) for c in f.items], conj=True)
        if isinstance(f, BigSoftOr):
            return _fold([go(c) for c in f.items], conj=False)
        raise FormulaError(f"not a formula: {f!r}")

    def _combine(left, right, conj: bool):
        va, ja = left
        vb, jb = right
        if p == INF:
            mask = (va >= vb) if conj else (va <= vb)
            v = np.where(mask, va, vb)
            return v, (lambda c: (ja(c * mask), jb(c * ~mask)))
        sign = 1.0 if conj else -1.0
        sa, sb = sign * va, sign * vb
        m = np.maximum(sa, sb)
        # the max operand's shift is then identically 0, which also keeps
        # equal infinite operands (from collapsed label guards) NaN-free
        with np.errstate(invalid="ignore"):
            ea = np.exp(p * np.where(sa == m, 0.0, sa - m))
            eb = np.exp(p * np.where(sb == m, 0.0, sb - m))
        v = sign * (m + np.log(ea + eb) / p)
        wa = ea / (ea + eb)
        return v, (lambda c: (ja(c * wa), jb(c * (1.0 - wa))))

    def _fold(pairs, conj: bool):
        if len(pairs) == 1:
            return pairs[0]
        mid = len(pairs) // 2
        return _combine(_fold(pairs[:mid], conj), _fold(pairs[mid:], conj), conj)

    return go(phi)


def _atom_margin(ctx: _Ctx, f: Formula):
    """Margin value and vjp for a term or an implication between terms."""
    if isinstance(f, _TERMS):
        v = ctx.term_value(f)
        return v, (lambda c, f=f: ctx.term_vjp(f, c))
    if isinstance(f, Implies) and isinstance(f.left, _TERMS) and isinstance(f.right, _TERMS):
        va = ctx.term_value(f.left)
        vb = ctx.term_value(f.right)

        def vj(c, f=f):
            ctx.term_vjp(f.right, c)
            ctx.term_vjp(f.left, -c)

        return vb - va, vj
    return None


def _dl2_head(ctx: _Ctx, phi: Formula):
    """DL2 over the negation normal form: conjunction adds, disjunction
    multiplies, comparisons clamp at zero.  Implication sides that are not
    terms are valued by the hard (p = inf) additive semantics."""

    def clamp(margin, vj):
        v, live = np.maximum(margin, 0.0), margin > 0
        return v, (lambda c: vj(c * live))

    def go(f):
        atom = _atom_margin(ctx, f)
        if atom is not None:
            return clamp(*atom)
        if isinstance(f, Not):
            atom = _atom_margin(ctx, f.child)
            if atom is None:
                raise BackendError("dl2 requires negation normal form (negated atoms only)")
            m, vj = atom
            return clamp(-m, lambda c, vj=vj: vj(-c))
        if isinstance(f, Implies):
            va, ja = _qll_head(ctx, f.left, INF)
            vb, jb = _qll_head(ctx, f.right, INF)
            return clamp(vb - va, lambda c: (jb(c), ja(-c)))
        if isinstance(f, (SoftAnd, LinAnd)):
            va, ja = go(f.left)
            vb, jb = go(f.right)
            return va + vb, (lambda c: (ja(c), jb(c)))
        if isinstance(f, (SoftOr, LinOr)):
            va, ja = go(f.left)
            vb, jb = go(f.right)
            return va * vb, (lambda c: (ja(c * vb), jb(c * va)))
        if isinstance(f, (BigSoftAnd, BigSoftOr)):
            pairs = [go(c) for c in f.items]
            vals = np.stack([v for v, _ in pairs])
            if isinstance(f, BigSoftAnd):
                return vals.sum(axis=0), (lambda c: [vj(c) for _, vj in pairs])
            # leave-one-out products for the disjunction gradient
            k = vals.shape[0]
            fwd = np.cumprod(vals, axis=0)
            bwd = np.cumprod(vals[::-1], axis=0)[::-1]
            ones = np.ones_like(vals[0])
            loo = [(fwd[i - 1] if i > 0 else ones) * (bwd[i + 1] if i < k - 1 else ones)
                   for i in range(k)]
            return fwd[-1], (lambda c: [vj(c * loo[i]) for i, (_, vj) in enumerate(pairs)])
        raise FormulaError(f"not a formula: {f!r}")

    return go(_cached_nnf(phi))


def _stl_head(ctx: _Ctx, phi: Formula, nu: float):
    def agg(pairs, kind):
        vals = np.stack([v for v, _ in pairs])
        v, grad = _stl_fold(kind, vals, nu, want_grad=True)
        return v, (lambda c: [vj(c * grad[i]) for i, (_, vj) in enumerate(pairs)])

    def go(f):
        if isinstance(f, _TERMS):
            v = ctx.term_value(f)
            return v, (lambda c, f=f: ctx.term_vjp(f, c))
        if isinstance(f, Not):
            v, vj = go(f.child)
            return -v, (lambda c: vj(-c))
        if isinstance(f, Implies):
            va, ja = go(f.left)
            vb, jb = go(f.right)
            return vb - va, (lambda c: (jb(c), ja(-c)))
        if isinstance(f, (SoftAnd, LinAnd)):
            return agg([go(f.left), go(f.right)], "conj")
        if isinstance(f, (SoftOr, LinOr)):
            return agg([go(f.left), go(f.right)], "disj")
        if isinstance(f, BigSoftAnd):
            return agg([go(c) for c in f.items], "conj")
        if isinstance(f, BigSoftOr):
            return agg([go(c) for c in f.items], "disj")
        raise FormulaError(f"not a formula: {f!r}")

    return go(phi)


def _fuzzy_head(ctx: _Ctx, phi: Formula, ops: _FuzzyOps, tau: float):
    """Truth degrees: atoms squash margins, soft connectives are min/max,
    linear connectives the t-norm/t-conorm, compound negation/implication
    use the logic's own rows."""

    def atom_degree(margin, vj, flip: bool):
        sign = 1.0 if flip else -1.0
        deg = _logistic(sign * margin / tau)
        dmargin = sign * deg * (1.0 - deg) / tau
        return deg, (lambda c: vj(c * dmargin))

    def binary(table_fn, left, right):
        va, ja = left
        vb, jb = right
        v, (da, db) = table_fn(va, vb)
        return v, (lambda c: (ja(c * da), jb(c * db)))

    def fold(pairs, fn):
        if len(pairs) == 1:
            return pairs[0]
        mid = len(pairs) // 2
        return binary(fn, fold(pairs[:mid], fn), fold(pairs[mid:], fn))

    def soft_and_fn(a, b):
        mask = a <= b
        return np.where(mask, a, b), (1.0 * mask, 1.0 * ~mask)

    def soft_or_fn(a, b):
        mask = a >= b
        return np.where(mask, a, b), (1.0 * mask, 1.0 * ~mask)

    def go(f):
        atom = _atom_margin(ctx, f)
        if atom is not None:
            return atom_degree(*atom, flip=False)
        if isinstance(f, Not):
            atom = _atom_margin(ctx, f.child)
            if atom is not None:
                return atom_degree(*atom, flip=True)
            v, vj = go(f.child)
            nv, da = ops.neg(v)
            return nv, (lambda c: vj(c * da))
        if isinstance(f, Implies):
            return binary(ops.impl, go(f.left), go(f.right))
        if isinstance(f, SoftAnd):
            return binary(soft_and_fn, go(f.left), go(f.right))
        if isinstance(f, SoftOr):
            return binary(soft_or_fn, go(f.left), go(f.right))
        if isinstance(f, LinAnd):
            return binary(ops.t_norm, go(f.left), go(f.right))
        if isinstance(f, LinOr):
            return binary(ops.t_conorm, go(f.left), go(f.right))
        if isinstance(f, BigSoftAnd):
            return fold([go(c) for c in f.items], soft_and_fn)
        if isinstance(f, BigSoftOr):
            return fold([go(c) for c in f.items], soft_or_fn)
        raise FormulaError(f"not a formula: {f!r}")

    return go(phi)


def backend_loss_batch(backend: Backend, phi: Formula, outputs: np.ndarray,
                       labels: np.ndarray | None = None):
    """Loss of a formula over a batch, and its output-logit gradient.

    outputs is (B, n); labels, if the formula mentions label variables,
    is (B, n) as well.  Returns (loss (B,), dloss/doutputs (B, n)).
    """
    outputs = np.asarray(outputs, dtype=float)
    if outputs.ndim != 2:
        raise ValueError("outputs must be a (batch, labels) array")
    ctx = _Ctx(outputs, None if labels is None else np.asarray(labels, dtype=float))
    if backend.kind == "baseline":
        return np.zeros(ctx.batch), ctx.dout
    if backend.kind == "qll":
        v, vj = _qll_head(ctx, phi, backend.p)
        vj(np.ones(ctx.batch))
        return v, ctx.dout
    if backend.kind == "dl2":
        v, vj = _dl2_head(ctx, phi)
        vj(np.ones(ctx.batch))
        return v, ctx.dout
    if backend.kind == "stl":
        v, vj = _stl_head(ctx, phi, backend.nu)
        vj(np.ones(ctx.batch))
        return v, ctx.dout
    deg, vj = _fuzzy_head(ctx, phi, _fuzzy_table(backend), backend.tau)
    vj(-np.ones(ctx.batch))  # loss = 1 - degree
    return 1.0 - deg, ctx.dout


def tape_qll_formula(t, phi: Formula, out_nodes, label_values, p: float) -> int:
    """Compile the additive semantics of a formula onto a tape.

    out_nodes are the tape nodes carrying the output logits; label logits
    enter as constants (they are data, not optimization variables).  Soft
    connectives become max-shifted log-sum-exp subgraphs, so the compiled
    root differentiates with the softmax-weight partials.
    """
    from .autodiff import tape_soft_and, tape_soft_or

    def go(f):
        if isinstance(f, OutputVar):
            return out_nodes[f.i]
        if isinstance(f, LabelVar):
            return t.const(float(label_values[f.i]))
        if isinstance(f, Literal):
            return t.const(float(f.r))
        if isinstance(f, Not):
            return t.neg(go(f.child))
        if isinstance(f, SoftAnd):
            return tape_soft_and(t, go(f.left), go(f.right), p)
        if isinstance(f, SoftOr):
            return tape_soft_or(t, go(f.left), go(f.right), p)
        if isinstance(f, (LinAnd, LinOr)):
            return t.add(go(f.left), go(f.right))
        if isinstance(f, Implies):
            return t.sub(go(f.right), go(f.left))
        if isinstance(f, (BigSoftAnd, BigSoftOr)):
            comb = tape_soft_and if isinstance(f, BigSoftAnd) else tape_soft_or

            def fold(items):
                if len(items) == 1:
                    return go(items[0])
                mid = len(items) // 2
                return comb(t, fold(items[:mid]), fold(items[mid:]), p)

            return fold(list(f.items))
        raise FormulaError(f"not a formula: {f!r}")

    return go(phi)


@functools.lru_cache(maxsize=256)
def _cached_nnf(phi: Formula) -> Formula:
    return to_nnf(phi)


def backend_eval(backend: Backend, phi: Formula, v: Valuation) -> float:
    """Scalar loss of a formula under one backend.

    QLL returns the additive semantics itself; DL2/STL their native values
    (0 and below meaning satisfied); fuzzy backends return 1 - degree.
    The baseline sentinel always returns 0.
    """
    if backend.kind == "qll":
        return eval_additive(phi, v, backend.p)
    if backend.kind == "baseline":
        return 0.0
    out = np.array([v.output_logits], dtype=float)
    lab = np.array([v.label_logits], dtype=float)
    loss, _ = backend_loss_batch(backend, phi, out, lab)
    return float(loss[0])
