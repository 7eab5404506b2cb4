"""Per-backend semantics: golden connective values, the STL aggregator
against a high-precision transcription oracle, DL2's zero-iff-satisfied
law, fuzzy ranges, and the batched heads' values and gradients."""

import math

import mpmath
import numpy as np
import pytest

from softlogic.backends import (
    Backend,
    BackendError,
    backend_eval,
    backend_loss_batch,
    backend_name,
    godel_ops,
    ground_atom,
    lukasiewicz_ops,
    parse_backend,
    product_ops,
    stl_nary,
    yager_ops,
)
from softlogic.formulas import (
    INF,
    BigSoftAnd,
    BigSoftOr,
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
    eval_additive,
    eval_boolean,
)

mpmath.mp.dps = 60


# ---------------------------------------------------------------------------
# independent STL oracle: direct transcription of the published
# three-branch aggregators, applied to robustness values rho = -loss,
# with the aggregate negated back into loss order
# ---------------------------------------------------------------------------

def _oracle_soft_min(rho, nu):
    m = min(rho)
    if m == 0:
        return mpmath.mpf(0)
    u = [(r - m) / m for r in rho]
    if m < 0:
        num = sum(m * mpmath.exp(ui) * mpmath.exp(nu * ui) for ui in u)
        den = sum(mpmath.exp(nu * ui) for ui in u)
        return num / den
    num = sum(r * mpmath.exp(-nu * ui) for r, ui in zip(rho, u))
    den = sum(mpmath.exp(-nu * ui) for ui in u)
    return num / den


def _oracle_soft_max(rho, nu):
    m = max(rho)
    if m == 0:
        return mpmath.mpf(0)
    u = [(r - m) / m for r in rho]
    if m > 0:
        num = sum(m * mpmath.exp(ui) * mpmath.exp(nu * ui) for ui in u)
        den = sum(mpmath.exp(nu * ui) for ui in u)
        return num / den
    num = sum(r * mpmath.exp(-nu * ui) for r, ui in zip(rho, u))
    den = sum(mpmath.exp(-nu * ui) for ui in u)
    return num / den


def stl_oracle(kind, values, nu):
    rho = [mpmath.mpf(-v) for v in values]
    agg = _oracle_soft_min if kind == "conj" else _oracle_soft_max
    return float(-agg(rho, mpmath.mpf(nu)))


class TestStlAggregation:
    def test_singleton_identity_exact(self):
        for m in (-3.0, -1e-9, 0.0, 0.4, 7.0):
            assert stl_nary("conj", [m], 5.0) == m
            assert stl_nary("disj", [m], 5.0) == m

    def test_equal_satisfied_values_collapse(self):
        assert stl_nary("conj", [-1.0, -1.0], 1.0) == pytest.approx(-1.0, abs=1e-14)
        assert stl_nary("conj", [2.0, 2.0], 1.0) == pytest.approx(2.0, abs=1e-14)

    def test_zero_branch(self):
        # the worst conjunct sits exactly at the boundary
        assert stl_nary("conj", [-5.0, 0.0], 1.0) == 0.0
        assert stl_nary("disj", [0.0, 5.0], 1.0) == 0.0

    def test_mixed_signs_against_oracle(self):
        assert stl_nary("conj", [0.0, 5.0], 1.0) == pytest.approx(
            stl_oracle("conj", [0.0, 5.0], 1.0), rel=1e-12)
        # frozen from the oracle
        assert stl_nary("conj", [0.0, 5.0], 1.0) == pytest.approx(4.149982992157259, rel=1e-12)

    def test_random_lists_against_oracle(self):
        rng = np.random.default_rng(12)
        for _ in range(200):
            k = int(rng.integers(1, 6))
            vals = rng.uniform(-4, 4, size=k).tolist()
            nu = float(rng.choice([0.5, 1.0, 5.0]))
            for kind in ("conj", "disj"):
                got = stl_nary(kind, vals, nu)
                want = stl_oracle(kind, vals, nu)
                assert got == pytest.approx(want, rel=1e-10, abs=1e-12)

    def test_permutation_invariance(self):
        rng = np.random.default_rng(13)
        for _ in range(100):
            vals = rng.uniform(-3, 3, size=4)
            perm = rng.permutation(4)
            assert stl_nary("conj", vals, 2.0) == pytest.approx(
                stl_nary("conj", vals[perm], 2.0), rel=1e-12)

    def test_non_associativity_witness(self):
        a, b, c = 0.5, -0.3, 2.0
        flat = stl_nary("conj", [a, b, c], 1.0)
        nested = stl_nary("conj", [stl_nary("conj", [a, b], 1.0), c], 1.0)
        assert abs(flat - nested) > 1e-3

    def test_rejects_bad_input(self):
        with pytest.raises(BackendError):
            stl_nary("conj", [], 1.0)
        with pytest.raises(BackendError):
            stl_nary("conj", [1.0], 0.0)
        with pytest.raises(BackendError):
            stl_nary("both", [1.0], 1.0)


class TestGroundAtom:
    def test_dl2_clamps(self):
        assert ground_atom(Backend("dl2"), -2.0) == 0.0
        assert ground_atom(Backend("dl2"), 3.5) == 3.5

    def test_fuzzy_logistic(self):
        assert ground_atom(Backend("godel"), 0.0) == 0.5
        assert ground_atom(Backend("godel"), -INF) == 1.0
        assert ground_atom(Backend("godel"), INF) == 0.0
        # temperature scales the squash
        b2 = Backend("godel", tau=2.0)
        assert ground_atom(b2, -2.0) == pytest.approx(1 / (1 + math.exp(-1.0)))

    def test_identity_backends(self):
        assert ground_atom(parse_backend("qll:p=1"), 1.7) == 1.7
        assert ground_atom(parse_backend("stl:nu=5"), -0.3) == -0.3


class TestFuzzyGolden:
    """Connective-row golden values (arrays of one element)."""

    def _one(self, pair):
        v, grads = pair
        return float(v[0]) if hasattr(v, "__len__") else float(v)

    def check(self, fn, a, b, expected):
        v, _ = fn(np.array([a]), np.array([b]))
        assert float(v[0]) == pytest.approx(expected, abs=1e-12)

    def test_godel(self):
        self.check(godel_ops.t_norm, 0.7, 0.6, 0.6)
        self.check(godel_ops.t_conorm, 0.7, 0.6, 0.7)
        self.check(godel_ops.impl, 0.7, 0.3, 0.3)
        self.check(godel_ops.impl, 0.3, 0.7, 1.0)
        self.check(godel_ops.impl, 0.5, 0.5, 1.0)
        v, _ = godel_ops.neg(np.array([0.0, 0.5, 1.0]))
        assert v.tolist() == [1.0, 0.0, 0.0]

    def test_lukasiewicz(self):
        self.check(lukasiewicz_ops.t_norm, 0.7, 0.6, 0.3)
        self.check(lukasiewicz_ops.t_norm, 0.2, 0.3, 0.0)
        self.check(lukasiewicz_ops.t_conorm, 0.7, 0.6, 1.0)
        self.check(lukasiewicz_ops.t_conorm, 0.2, 0.3, 0.5)
        self.check(lukasiewicz_ops.impl, 0.7, 0.3, 0.6)
        self.check(lukasiewicz_ops.impl, 0.3, 0.7, 1.0)
        v, _ = lukasiewicz_ops.neg(np.array([0.3]))
        assert v[0] == pytest.approx(0.7)

    def test_product(self):
        self.check(product_ops.t_norm, 0.5, 0.4, 0.2)
        self.check(product_ops.t_conorm, 0.5, 0.4, 0.7)
        self.check(product_ops.impl, 0.8, 0.2, 0.25)
        self.check(product_ops.impl, 0.2, 0.8, 1.0)
        v, _ = product_ops.neg(np.array([0.0, 0.5]))
        assert v.tolist() == [1.0, 0.0]

    def test_yager_r2(self):
        ops = yager_ops(2.0)
        self.check(ops.t_norm, 0.5, 0.5, 1 - math.sqrt(0.5))
        self.check(ops.t_norm, 0.1, 0.1, 0.0)  # clamped at 0
        self.check(ops.t_conorm, 0.5, 0.5, math.sqrt(0.5))
        self.check(ops.t_conorm, 0.9, 0.9, 1.0)  # clamped at 1
        v, _ = ops.neg(np.array([0.6]))
        assert v[0] == pytest.approx(0.8)
        self.check(ops.impl, 0.8, 0.5, 1 - math.sqrt(0.25 - 0.04))
        self.check(ops.impl, 0.5, 0.8, 1.0)

    def test_yager_r1_matches_lukasiewicz(self):
        ops = yager_ops(1.0)
        rng = np.random.default_rng(14)
        a, b = rng.uniform(0, 1, size=(2, 200))
        va, _ = ops.t_norm(a, b)
        vl, _ = lukasiewicz_ops.t_norm(a, b)
        assert np.allclose(va, vl, atol=1e-12)
        va, _ = ops.t_conorm(a, b)
        vl, _ = lukasiewicz_ops.t_conorm(a, b)
        assert np.allclose(va, vl, atol=1e-12)

    def test_yager_conorm_converges_to_max(self):
        ops = yager_ops(200.0)
        v, _ = ops.t_conorm(np.array([0.3]), np.array([0.8]))
        assert v[0] == pytest.approx(0.8, abs=1e-2)

    def test_yager_negation_involutive(self):
        ops = yager_ops(2.0)
        a = np.linspace(0.01, 0.99, 50)
        v1, _ = ops.neg(a)
        v2, _ = ops.neg(v1)
        assert np.allclose(v2, a, atol=1e-12)


def _lit_for_degree(d, tau=1.0):
    """Literal whose fuzzy grounding has the given truth degree."""
    return Literal(-tau * math.log(d / (1 - d)))


class TestBackendEval:
    def test_dl2_conjunction_adds(self):
        phi = SoftAnd(Literal(1.0), Literal(2.0))
        v = Valuation([0], [0])
        assert backend_eval(Backend("dl2"), phi, v) == 3.0

    def test_dl2_disjunction_multiplies(self):
        phi = SoftOr(Literal(1.5), Literal(2.0))
        v = Valuation([0], [0])
        assert backend_eval(Backend("dl2"), phi, v) == 3.0

    def test_lukasiewicz_linear_conjunction_loss(self):
        phi = LinAnd(_lit_for_degree(0.7), _lit_for_degree(0.6))
        v = Valuation([0], [0])
        assert backend_eval(Backend("lukasiewicz"), phi, v) == pytest.approx(0.7, abs=1e-12)

    def test_godel_implication_row_on_compound_sides(self):
        # SoftAnd of equal literals keeps the degree, making both sides
        # compound so the implication row (not atom grounding) fires
        la, lb = _lit_for_degree(0.7), _lit_for_degree(0.3)
        phi = Implies(SoftAnd(la, la), SoftAnd(lb, lb))
        v = Valuation([0], [0])
        assert backend_eval(Backend("godel"), phi, v) == pytest.approx(0.7, abs=1e-12)

    def test_yager_tnorm_loss(self):
        phi = LinAnd(_lit_for_degree(0.5), _lit_for_degree(0.5))
        v = Valuation([0], [0])
        expected_truth = 1 - math.sqrt(0.5)
        assert backend_eval(Backend("yager", r=2.0), phi, v) == pytest.approx(
            1 - expected_truth, abs=1e-12)

    def test_qll_matches_eval_additive_bitwise(self):
        rng = np.random.default_rng(15)
        phi = BigSoftAnd([
            Implies(OutputVar(0), OutputVar(1)),
            SoftOr(Not(OutputVar(2)), Literal(0.25)),
            LinAnd(OutputVar(1), Literal(-0.5)),
        ])
        for p in (1.0, 2.0, 5.0, INF):
            b = Backend("qll", p=p)
            for _ in range(50):
                v = Valuation(rng.normal(size=3), rng.normal(size=3))
                assert backend_eval(b, phi, v) == eval_additive(phi, v, p)

    def test_stl_dispatches_nary_folds(self):
        vals = [0.5, -0.3, 2.0]
        phi = BigSoftAnd([Literal(x) for x in vals])
        v = Valuation([0], [0])
        assert backend_eval(Backend("stl", nu=1.0), phi, v) == pytest.approx(
            stl_nary("conj", vals, 1.0), rel=1e-12)
        # nested binary application differs from the flat fold
        nested = SoftAnd(SoftAnd(Literal(vals[0]), Literal(vals[1])), Literal(vals[2]))
        assert backend_eval(Backend("stl", nu=1.0), nested, v) != pytest.approx(
            backend_eval(Backend("stl", nu=1.0), phi, v), abs=1e-3)

    def test_fuzzy_results_within_unit_interval(self):
        rng = np.random.default_rng(16)
        ctors = [SoftAnd, SoftOr, LinAnd, LinOr, Implies]

        def rand_formula(depth):
            if depth == 0 or rng.random() < 0.3:
                f = OutputVar(int(rng.integers(3)))
                return Not(f) if rng.random() < 0.3 else f
            ctor = ctors[rng.integers(len(ctors))]
            return ctor(rand_formula(depth - 1), rand_formula(depth - 1))

        backends = [Backend("godel"), Backend("lukasiewicz"), Backend("product"),
                    Backend("yager", r=2.0)]
        for _ in range(100):
            phi = rand_formula(3)
            v = Valuation(np.zeros(3), rng.normal(size=3) * 3)
            for b in backends:
                loss = backend_eval(b, phi, v)
                assert 0.0 - 1e-12 <= loss <= 1.0 + 1e-12

    def test_baseline_is_zero(self):
        v = Valuation([0], [5.0])
        assert backend_eval(Backend("baseline"), OutputVar(0), v) == 0.0

    def test_backend_parsing_round_trip(self):
        for text in ("qll:p=5", "dl2", "stl:nu=5", "godel", "lukasiewicz",
                     "product", "yager:r=2", "baseline"):
            assert backend_name(parse_backend(text)) == text
        assert parse_backend("qll:p=2.5").p == 2.5
        with pytest.raises(BackendError):
            parse_backend("qll:p=0")
        with pytest.raises(BackendError):
            parse_backend("fuzzy")
        with pytest.raises(BackendError):
            parse_backend("yager:r=0.5")


class TestDl2Soundness:
    """Loss is nonnegative and zero exactly on satisfied formulas.

    Checked two ways: a reachable-state closure equivalent to enumerating
    every formula of connective depth <= 3 over two variables on the
    {-1, 0, 1} grid, and a direct depth-1 tree enumeration through
    backend_eval as a cross-check.
    """

    @staticmethod
    def _closure_states(v0, v1, rounds=3):
        # state: (dl2 of phi, dl2 of nnf(not phi), hard value, crisp value,
        # linear-free).  Negation only applies to linear-free states: the
        # crisp clause for negation reads the additive value, which is not
        # compositional over the linear connectives (same fragment caveat
        # as to_nnf).
        def relu(x):
            return x if x > 0 else 0.0

        atoms = []
        for val in (v0, v1, -1.0, 0.0, 1.0):
            atoms.append((relu(val), relu(-val), val, val <= 0.0, True))
        states = set(atoms)
        for _ in range(rounds):
            new = set(states)
            for pa, na, aa, ba, fa in states:
                if fa:
                    new.add((na, pa, -aa, aa >= 0.0, True))  # negation
                for pb, nb, ab, bb, fb in states:
                    ff = fa and fb
                    new.add((pa + pb, na * nb, max(aa, ab), ba and bb, ff))   # soft and
                    new.add((pa * pb, na + nb, min(aa, ab), ba or bb, ff))    # soft or
                    new.add((pa + pb, na * nb, aa + ab, ba and bb, False))    # linear and
                    new.add((pa * pb, na + nb, aa + ab, ba or bb, False))     # linear or
                    new.add((relu(ab - aa), relu(aa - ab), ab - aa, ab <= aa, ff))  # implies
            if new == states:
                break
            states = new
        return states

    def test_zero_iff_satisfied_to_depth_three(self):
        grid = (-1.0, 0.0, 1.0)
        for v0 in grid:
            for v1 in grid:
                for pos, neg_, _, crisp, _free in self._closure_states(v0, v1):
                    assert pos >= 0.0 and neg_ >= 0.0
                    assert (pos == 0.0) == crisp, (v0, v1, pos, crisp)

    def test_direct_depth_one_cross_check(self):
        atoms = [OutputVar(0), OutputVar(1), Literal(-1.0), Literal(0.0), Literal(1.0)]
        formulas = list(atoms) + [Not(a) for a in atoms]
        for ctor in (SoftAnd, SoftOr, LinAnd, LinOr, Implies):
            formulas += [ctor(a, b) for a in atoms for b in atoms]
        b = Backend("dl2")
        grid = (-1.0, 0.0, 1.0)
        for v0 in grid:
            for v1 in grid:
                v = Valuation([0.0, 0.0], [v0, v1])
                for phi in formulas:
                    loss = backend_eval(b, phi, v)
                    assert loss >= 0.0
                    assert (loss == 0.0) == eval_boolean(phi, v)


class TestBatchedHeads:
    BACKENDS = [
        Backend("qll", p=5.0), Backend("qll", p=INF), Backend("dl2"),
        Backend("stl", nu=2.0), Backend("godel"), Backend("lukasiewicz"),
        Backend("product"), Backend("yager", r=2.0),
    ]

    FORMULAS = [
        BigSoftAnd([Implies(OutputVar(0), OutputVar(1)),
                    Implies(OutputVar(0), OutputVar(2)),
                    Implies(OutputVar(0), OutputVar(0))]),
        SoftAnd(SoftOr(Not(OutputVar(0)), Not(OutputVar(1))),
                SoftOr(OutputVar(0), OutputVar(1))),
        Implies(Literal(0.7), OutputVar(2)),
        LinOr(Not(OutputVar(1)), LinAnd(OutputVar(0), Literal(-0.2))),
    ]

    def test_batch_matches_scalar_eval(self):
        rng = np.random.default_rng(18)
        outs = rng.normal(size=(16, 3)) * 2
        labs = np.zeros((16, 3))
        for b in self.BACKENDS:
            for phi in self.FORMULAS:
                loss, _ = backend_loss_batch(b, phi, outs, labs)
                for j in range(16):
                    v = Valuation(labs[j], outs[j])
                    assert loss[j] == pytest.approx(backend_eval(b, phi, v), rel=1e-12, abs=1e-12)

    def test_gradients_match_finite_differences(self):
        rng = np.random.default_rng(19)
        h = 1e-6
        for b in self.BACKENDS:
            for phi in self.FORMULAS:
                outs = rng.normal(size=(8, 3)) * 1.5
                loss, grad = backend_loss_batch(b, phi, outs)
                for j in range(8):
                    for k in range(3):
                        up, dn = outs.copy(), outs.copy()
                        up[j, k] += h
                        dn[j, k] -= h
                        lu, _ = backend_loss_batch(b, phi, up)
                        ld, _ = backend_loss_batch(b, phi, dn)
                        fd = (lu[j] - ld[j]) / (2 * h)
                        assert grad[j, k] == pytest.approx(fd, rel=2e-4, abs=2e-6), (
                            backend_name(b), phi, j, k)

    def test_label_guards_collapse_in_qll_head(self):
        # +inf label guards drop guarded branches exactly at finite hardness
        from softlogic.constraints import ClassificationRobustness, build_constraint, \
            one_hot_label_logits
        spec = ClassificationRobustness(labels=(0, 1, 2))
        full = build_constraint(spec, "full")
        rng = np.random.default_rng(20)
        outs = rng.normal(size=(6, 3))
        for c in range(3):
            simp = build_constraint(spec, "simplified", true_class=c)
            labs = np.tile(one_hot_label_logits(c, 3), (6, 1))
            for b in (Backend("qll", p=5.0), Backend("qll", p=INF)):
                lf, gf = backend_loss_batch(b, full, outs, labs)
                ls, gs = backend_loss_batch(b, simp, outs, labs)
                assert np.allclose(lf, ls, rtol=1e-12, atol=1e-12)
                assert np.allclose(gf, gs, rtol=1e-12, atol=1e-12)
