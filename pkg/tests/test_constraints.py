"""Constraint builders, their two forms, and the crisp ground truth."""

import numpy as np
import pytest

from softlogic.constraints import (
    ClassificationRobustness,
    ConstraintError,
    ExactlyOne,
    GroupExclusion,
    NotBoth,
    StrongClassificationRobustness,
    build_constraint,
    constraint_name,
    constraint_satisfied,
    one_hot_label_logits,
    parse_constraint,
)
from softlogic.formulas import (
    INF,
    BigSoftAnd,
    Implies,
    Literal,
    OutputVar,
    Valuation,
    eval_additive,
    eval_boolean,
)


class TestBuilders:
    def test_scr_simplified_shape(self):
        spec = StrongClassificationRobustness(0.7, range(10))
        phi = build_constraint(spec, "simplified", true_class=3)
        assert phi == Implies(Literal(0.7), OutputVar(3))

    def test_cr_full_contains_self_implication(self):
        spec = ClassificationRobustness(labels=(0, 1))
        phi = build_constraint(spec, "full")
        text = str(phi)
        assert "Implies(left=OutputVar(i=0), right=OutputVar(i=0))" in text
        assert "Implies(left=OutputVar(i=1), right=OutputVar(i=1))" in text

    def test_exactly_one_truth_table(self):
        spec = ExactlyOne(pairs=[(0, 1)])
        phi = build_constraint(spec, "full")
        # brute force over sign patterns: satisfied iff exactly one <= 0
        for y0 in (-1.0, 1.0):
            for y1 in (-1.0, 1.0):
                v = Valuation([0, 0], [y0, y1])
                want = (y0 <= 0) != (y1 <= 0)
                assert eval_boolean(phi, v) == want

    def test_exactly_one_implies_not_both(self):
        pairs = [(0, 1), (2, 3)]
        eo = build_constraint(ExactlyOne(pairs), "full")
        nb = build_constraint(NotBoth(pairs), "full")
        for bits in range(16):
            logits = [(-1.0 if bits & (1 << k) else 1.0) for k in range(4)]
            v = Valuation([0] * 4, logits)
            if eval_boolean(eo, v):
                assert eval_boolean(nb, v)

    def test_simplified_needs_class(self):
        spec = ClassificationRobustness(labels=(0, 1))
        with pytest.raises(ConstraintError):
            build_constraint(spec, "simplified")
        with pytest.raises(ConstraintError):
            build_constraint(spec, "nope")

    def test_group_exclusion_outside_both_groups_is_vacuous(self):
        spec = GroupExclusion(group_c=(0, 2), group_f=(1, 3))
        phi = build_constraint(spec, "simplified", true_class=4)
        v = Valuation([0] * 5, [9.0, -9.0, 1.0, 2.0, 3.0])
        assert eval_boolean(phi, v)

    def test_invalid_specs(self):
        with pytest.raises(ConstraintError):
            GroupExclusion(group_c=(0, 1), group_f=(1, 2))
        with pytest.raises(ConstraintError):
            NotBoth(pairs=[(0, 0)])
        with pytest.raises(ConstraintError):
            NotBoth(pairs=[(0, 1), (1, 2)])
        with pytest.raises(ConstraintError):
            ExactlyOne(pairs=[])


class TestGuardCollapse:
    """Full and simplified forms agree under the one-hot encoding."""

    SPECS = [
        StrongClassificationRobustness(0.7, labels=(0, 1, 2)),
        ClassificationRobustness(labels=(0, 1, 2)),
        GroupExclusion(group_c=(0,), group_f=(1, 2)),
    ]

    def test_boolean_equivalence(self):
        rng = np.random.default_rng(23)
        for spec in self.SPECS:
            full = build_constraint(spec, "full")
            for c in range(3):
                simp = build_constraint(spec, "simplified", true_class=c)
                labs = one_hot_label_logits(c, 3)
                for _ in range(100):
                    v = Valuation(labs, rng.normal(size=3) * 5)
                    assert eval_boolean(full, v) == eval_boolean(simp, v)

    def test_additive_equivalence_at_every_hardness(self):
        rng = np.random.default_rng(24)
        for spec in self.SPECS:
            full = build_constraint(spec, "full")
            for c in range(3):
                simp = build_constraint(spec, "simplified", true_class=c)
                labs = one_hot_label_logits(c, 3)
                for p in (1.0, 2.0, 5.0, INF):
                    for _ in range(25):
                        v = Valuation(labs, rng.normal(size=3) * 5)
                        a = eval_additive(full, v, p)
                        b = eval_additive(simp, v, p)
                        assert a == pytest.approx(b, rel=1e-12, abs=1e-12)

    def test_exactly_one_label_logit_encoding(self):
        labs = one_hot_label_logits(1, 4)
        assert labs[1] == 0.0
        assert np.all(labs[[0, 2, 3]] == INF)
        assert np.sum(labs <= 0) == 1


class TestSatisfied:
    def test_scr_boundary_is_satisfied(self):
        spec = StrongClassificationRobustness(0.7, labels=(0, 1))
        out = np.array([0.7, 5.0])
        assert constraint_satisfied(spec, 0, out)

    def test_cr_largest_logit(self):
        spec = ClassificationRobustness(labels=(0, 1, 2))
        assert constraint_satisfied(spec, 1, np.array([0.2, 3.0, -1.0]))
        assert not constraint_satisfied(spec, 1, np.array([4.0, 3.0, -1.0]))
        # ties are non-strict
        assert constraint_satisfied(spec, 1, np.array([3.0, 3.0, -1.0]))

    def test_cr_matches_argmax_dominance(self):
        spec = ClassificationRobustness(labels=(0, 1, 2))
        rng = np.random.default_rng(25)
        for _ in range(200):
            out = rng.normal(size=3) * 3
            c = int(rng.integers(3))
            assert constraint_satisfied(spec, c, out) == bool(np.all(out[c] >= out))

    def test_not_both_rejects_double_prediction(self):
        spec = NotBoth(pairs=[(0, 1)])
        # negative logits mean "predicted" in the crisp atom reading
        assert not constraint_satisfied(spec, None, np.array([-1.0, -2.0]))
        assert constraint_satisfied(spec, None, np.array([-1.0, 2.0]))
        assert constraint_satisfied(spec, None, np.array([1.0, 2.0]))

    def test_exactly_one(self):
        spec = ExactlyOne(pairs=[(0, 1)])
        assert constraint_satisfied(spec, None, np.array([-1.0, 1.0]))
        assert not constraint_satisfied(spec, None, np.array([1.0, 1.0]))
        assert not constraint_satisfied(spec, None, np.array([-1.0, -1.0]))

    def test_group_exclusion(self):
        spec = GroupExclusion(group_c=(0, 1), group_f=(2, 3))
        out = np.array([5.0, 0.0, 1.0, 2.0])
        assert constraint_satisfied(spec, 0, out)      # 5 beats 1, 2
        assert not constraint_satisfied(spec, 1, out)  # 0 loses to both
        assert not constraint_satisfied(spec, 2, out)  # 1 loses to 5
        out2 = np.array([-1.0, 0.0, 1.0, 2.0])
        assert constraint_satisfied(spec, 3, out2)     # 2 beats -1 and 0


class TestParsing:
    def test_round_trips(self):
        cases = [
            "scr:delta=0.7;labels=0,1,2",
            "cr:labels=0,1,2,3",
            "groups:C=0,2,3,4,6;F=5,7,9",
            "notboth:P=(1,6)(2,5)(3,4)",
            "exactlyone:P=(0,1)",
        ]
        for text in cases:
            spec = parse_constraint(text)
            assert parse_constraint(constraint_name(spec)) == spec

    def test_label_ranges(self):
        spec = parse_constraint("cr:labels=0-9")
        assert spec.labels == tuple(range(10))

    def test_bad_strings(self):
        for bad in ("huh", "groups:C=0", "notboth:P="):
            with pytest.raises(ConstraintError):
                parse_constraint(bad)
