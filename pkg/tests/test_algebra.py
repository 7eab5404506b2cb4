"""Algebraic laws of the connective algebra, as seeded property checks.

The inequality laws hold with equality on finite values, so most checks
are two-sided within a relative tolerance; unit laws are exact by the
infinity branches.
"""

import math

import numpy as np
import pytest

from softlogic.formulas import (
    INF,
    Implies,
    Literal,
    Not,
    OutputVar,
    SoftAnd,
    SoftOr,
    Valuation,
    eval_additive,
    eval_boolean,
    implies,
    lin_and,
    lin_or,
    neg,
    soft_and,
    soft_or,
    soft_and_vec,
    soft_or_vec,
)

P_VALUES = (1.0, 2.0, 5.0, 10.0, INF)
LOG2 = math.log(2.0)


def _triples(n=2000, seed=3, lo=-10.0, hi=10.0):
    rng = np.random.default_rng(seed)
    return rng.uniform(lo, hi, size=(3, n))


def _close(x, y, tol=1e-9):
    scale = np.maximum(1.0, np.maximum(np.abs(x), np.abs(y)))
    return np.all(np.abs(x - y) <= tol * scale)


class TestSoftLaws:
    @pytest.mark.parametrize("p", P_VALUES)
    def test_commutative_and_associative(self, p):
        a, b, c = _triples()
        for op in (soft_and_vec, soft_or_vec):
            assert _close(op(a, b, p), op(b, a, p))
            assert _close(op(op(a, b, p), c, p), op(a, op(b, c, p), p))

    def test_linear_commutative_and_associative(self):
        a, b, c = _triples()
        assert _close(a + b, b + a)
        assert _close((a + b) + c, a + (b + c))

    @pytest.mark.parametrize("p", P_VALUES)
    def test_units_exact(self, p):
        for a in (-3.25, 0.0, 7.5, 1e6):
            assert soft_or(a, INF, p) == a
            assert soft_and(a, -INF, p) == a
            assert lin_and(a, 0.0) == a
            assert lin_or(a, 0.0) == a

    @pytest.mark.parametrize("p", (1.0, 2.0, 5.0, 10.0))
    def test_linear_distributes_over_soft(self, p):
        x, a, b = _triples(lo=-20, hi=20)
        assert _close(x + soft_and_vec(a, b, p), soft_and_vec(x + a, x + b, p))
        assert _close(x + soft_or_vec(a, b, p), soft_or_vec(x + a, x + b, p))

    @pytest.mark.parametrize("p", (1.0, 2.0, 5.0, 10.0))
    def test_idempotency_defect_is_log2_over_p(self, p):
        rng = np.random.default_rng(5)
        a = rng.uniform(-50, 50, size=1000)
        assert np.all(np.abs(soft_and_vec(a, a, p) - a - LOG2 / p) <= 1e-12)
        assert np.all(np.abs(soft_or_vec(a, a, p) - a + LOG2 / p) <= 1e-12)

    @pytest.mark.parametrize("p", (1.0, 2.0, 5.0, 10.0))
    def test_convergence_to_lattice_ops(self, p):
        a, b, _ = _triples(n=5000, seed=9, lo=-100, hi=100)
        gap_and = np.abs(soft_and_vec(a, b, p) - np.maximum(a, b))
        gap_or = np.abs(soft_or_vec(a, b, p) - np.minimum(a, b))
        assert np.all(gap_and <= LOG2 / p + 1e-12)
        assert np.all(gap_or <= LOG2 / p + 1e-12)

    def test_strict_monotonicity_in_each_argument(self):
        # ranges kept benign so the mathematical strictness is visible in
        # double precision (the dominated operand's weight stays >> ulp)
        rng = np.random.default_rng(17)
        for p in (1.0, 2.0, 5.0):
            a, b = rng.uniform(-3, 3, size=(2, 500))
            d = 0.1
            assert np.all(soft_and_vec(a + d, b, p) > soft_and_vec(a, b, p))
            assert np.all(soft_and_vec(a, b + d, p) > soft_and_vec(a, b, p))
            assert np.all(soft_or_vec(a + d, b, p) > soft_or_vec(a, b, p))
            assert np.all(soft_or_vec(a, b + d, p) > soft_or_vec(a, b, p))


class TestImplicationLaws:
    def test_identity(self):
        a, _, _ = _triples()
        va = np.array([implies(x, x) for x in a[:100]])
        assert np.all(va == 0.0)

    def test_modus_ponens(self):
        a, b, c = _triples()
        lhs = (b - a) + (c - b)
        rhs = c - a
        assert np.all(lhs >= rhs - 1e-9 * np.maximum(1.0, np.abs(rhs)))

    def test_residuation_equality(self):
        a, b, c = _triples()
        lhs = c - (a + b)
        rhs = (c - b) - a
        assert _close(lhs, rhs)

    def test_mix(self):
        a, b, c = _triples(seed=21)
        d = np.random.default_rng(22).uniform(-10, 10, size=a.shape)
        lhs = (b - a) + (d - c)
        rhs = (b + d) - (a + c)
        assert np.all(lhs >= rhs - 1e-9 * np.maximum(1.0, np.abs(rhs)))

    def test_contraposition(self):
        a, b, _ = _triples()
        for x, y in zip(a[:200], b[:200]):
            assert implies(x, y) == implies(neg(y), neg(x))

    def test_prelinearity(self):
        a, b, _ = _triples()
        lhs = -(b - a)
        rhs = a - b
        assert np.all(lhs <= rhs + 1e-9 * np.maximum(1.0, np.abs(rhs)))

    def test_isomix(self):
        assert neg(0.0) == 0.0

    def test_involutivity(self):
        a, _, _ = _triples()
        for x in a[:200]:
            assert neg(neg(x)) == x

    def test_false_antecedent_is_maximally_true(self):
        # implies() exposes the disjunctive-sum reading, so a +inf
        # antecedent yields -inf for every consequent
        for y in (-4.0, 0.0, 3.0, INF, -INF):
            assert implies(INF, y) == -INF

    @pytest.mark.parametrize("p", (1.0, 2.0, 5.0, 10.0))
    def test_disjunction_rules(self, p):
        a, b, c = _triples(seed=33)
        lhs1 = soft_and_vec(c - a, c - b, p)
        rhs1 = c - soft_or_vec(a, b, p)
        assert np.all(lhs1 >= rhs1 - 1e-9 * np.maximum(1.0, np.abs(rhs1)))
        lhs2 = soft_or_vec(a - c, b - c, p)
        rhs2 = soft_or_vec(a, b, p) - c
        assert np.all(lhs2 >= rhs2 - 1e-9 * np.maximum(1.0, np.abs(rhs2)))

    @pytest.mark.parametrize("p", (1.0, 2.0, 5.0, 10.0))
    def test_conjunction_rules(self, p):
        a, b, c = _triples(seed=34)
        lhs = soft_and_vec(a - c, b - c, p)
        rhs = soft_and_vec(a, b, p) - c
        assert np.all(lhs >= rhs - 1e-9 * np.maximum(1.0, np.abs(rhs)))


def _soundness_pairs(values, rounds):
    """All (hard value, crisp value) pairs reachable by formulas of
    connective depth <= rounds over atoms with the given values, closed
    under the real connective functions (negation-free linear connectives
    are outside the soundness language and excluded)."""
    pairs = {(float(v), v <= 0.0) for v in values}
    for _ in range(rounds):
        new = set(pairs)
        for a, ba in pairs:
            new.add((neg(a), a >= 0.0))
            for b, bb in pairs:
                new.add((soft_and(a, b, INF), ba and bb))
                new.add((soft_or(a, b, INF), ba or bb))
                new.add((implies(a, b), b <= a))
        if new == pairs:
            break
        pairs = new
    return pairs


class TestSoundness:
    def test_reachable_pairs_to_depth_four(self):
        # compositional closure = exhaustive enumeration of all formulas
        # of connective depth <= 4 over two variables, per valuation
        grid = (-1.0, 0.0, 1.0)
        for v0 in grid:
            for v1 in grid:
                for val, crisp in _soundness_pairs({v0, v1, -1.0, 0.0, 1.0}, rounds=4):
                    assert crisp == (val <= 0.0), (v0, v1, val, crisp)

    def test_tree_enumeration_to_depth_two(self):
        # direct cross-check through the real evaluators on real trees
        atoms = [OutputVar(0), OutputVar(1), Literal(-1.0), Literal(0.0), Literal(1.0)]

        def grow(fs):
            out = list(fs)
            out += [Not(f) for f in fs]
            out += [ctor(f, g) for ctor in (SoftAnd, SoftOr, Implies) for f in fs for g in fs]
            return out

        depth1 = grow(atoms)
        depth2 = grow(depth1)
        grid = (-1.0, 0.0, 1.0)
        checked = 0
        for v0 in grid:
            for v1 in grid:
                v = Valuation([0.0, 0.0], [v0, v1])
                for phi in depth2:
                    assert eval_boolean(phi, v) == (eval_additive(phi, v, INF) <= 0.0)
                    checked += 1
        assert checked == len(depth2) * 9
