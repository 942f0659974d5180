import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import brute_macro, brute_micro, brute_prf
from rtap.metrics import (
    BINARY_CLASSES,
    SEVERITY_CLASSES,
    ConfusionMatrix,
    assemble_report,
    f_beta,
    macro_f,
    micro_f,
    precision_recall_f,
    rmse,
)

labels4 = st.lists(st.tuples(st.integers(0, 3), st.integers(0, 3)), min_size=0, max_size=200)


def cm_of(pairs, k=4, classes=SEVERITY_CLASSES):
    t = [a for a, _ in pairs]
    p = [b for _, b in pairs]
    return t, p, ConfusionMatrix.from_labels(t, p, classes[:k])


class TestRmse:
    def test_identity(self):
        assert rmse([0.1, 0.5, 0.9], [0.1, 0.5, 0.9]) == 0.0

    def test_hand_value(self):
        assert rmse([0, 0], [3, 4]) == pytest.approx(math.sqrt(12.5), abs=1e-15)
        assert rmse([0, 0], [3, 4]) == pytest.approx(3.5355, abs=1e-4)

    def test_single_pair(self):
        assert rmse([1], [4]) == 3.0

    @pytest.mark.parametrize("p,a", [([], []), ([1, 2], [1])])
    def test_errors(self, p, a):
        with pytest.raises(ValueError):
            rmse(p, a)


class TestPrecisionRecallF:
    def test_perfect(self):
        cm = ConfusionMatrix.from_labels([0, 1, 1, 0], [0, 1, 1, 0], BINARY_CLASSES)
        assert precision_recall_f(cm, 1) == (1.0, 1.0, 1.0)

    def test_hand_value(self):
        assert f_beta(0.8, 0.5, 0.5) == pytest.approx(0.5 / 0.7, abs=1e-15)
        assert f_beta(0.8, 0.5, 0.5) == pytest.approx(0.7143, abs=1e-4)

    def test_zero_tp(self):
        cm = ConfusionMatrix.from_labels([1, 0], [0, 1], BINARY_CLASSES)
        assert precision_recall_f(cm, 1) == (0.0, 0.0, 0.0)

    def test_recall_denominator_is_tp_plus_fn(self):
        # 2 TP, 1 FN, 5 TN: recall must be 2/3, not 2/7
        cm = ConfusionMatrix.from_labels([1, 1, 1, 0, 0, 0, 0, 0], [1, 1, 0, 0, 0, 0, 0, 0], BINARY_CLASSES)
        assert precision_recall_f(cm, 1)[1] == pytest.approx(2 / 3)

    def test_beta_must_be_positive(self):
        with pytest.raises(ValueError):
            f_beta(0.5, 0.5, 0.0)

    @given(st.floats(0.001, 1), st.floats(0.001, 1), st.floats(0.1, 4))
    def test_f_between_p_and_r(self, p, r, beta):
        f = f_beta(p, r, beta)
        assert min(p, r) - 1e-12 <= f <= max(p, r) + 1e-12


class TestMacroMicro:
    def test_macro_arithmetic_mean(self):
        # per-class F = (1, 0, 0.5, 0.5) built from a matching table
        counts = np.array([[2, 0, 0, 0], [0, 0, 1, 0], [0, 0, 1, 0], [0, 0, 0, 1]])
        cm = ConfusionMatrix(counts, SEVERITY_CLASSES)
        per = [precision_recall_f(cm, c)[2] for c in range(4)]
        assert per == pytest.approx([1.0, 0.0, f_beta(0.5, 1.0), 1.0])
        assert macro_f(cm) == pytest.approx(np.mean(per))

    def test_macro_of_listed_values(self):
        # per-class F0.5 exactly (1, 0, 0.5, 0.5); class 1 never occurs, so its F is 0
        t = [0, 2, 2, 3, 3]
        p = [0, 2, 3, 3, 2]
        cm = ConfusionMatrix.from_labels(t, p, SEVERITY_CLASSES)
        per = [precision_recall_f(cm, c)[2] for c in range(4)]
        assert per == pytest.approx([1.0, 0.0, 0.5, 0.5])
        assert macro_f(cm) == pytest.approx(0.5)

    def test_single_class(self):
        cm = ConfusionMatrix.from_labels([0, 0, 0], [0, 0, 0], ("normal",))
        assert macro_f(cm) == precision_recall_f(cm, 0)[2] == 1.0

    def test_diagonal_micro_is_one(self):
        cm = ConfusionMatrix(np.diag([3, 2, 1, 4]), SEVERITY_CLASSES)
        assert micro_f(cm) == 1.0

    def test_all_wrong_micro_is_zero(self):
        cm = ConfusionMatrix.from_labels([0, 1, 2, 3], [1, 2, 3, 0], SEVERITY_CLASSES)
        assert micro_f(cm) == 0.0

    @given(labels4)
    def test_against_brute_force(self, pairs):
        t, p, cm = cm_of(pairs)
        for c in range(4):
            assert precision_recall_f(cm, c) == pytest.approx(brute_prf(t, p, c), abs=1e-12)
        assert macro_f(cm) == pytest.approx(brute_macro(t, p, 4), abs=1e-12)
        assert macro_f(cm, exclude_absent=True) == pytest.approx(brute_macro(t, p, 4, exclude_absent=True), abs=1e-12)
        assert micro_f(cm) == pytest.approx(brute_micro(t, p, 4), abs=1e-12)

    @given(labels4, st.floats(0.1, 5))
    def test_micro_equals_accuracy_any_beta(self, pairs, beta):
        _, _, cm = cm_of(pairs)
        assert micro_f(cm, beta) == cm.accuracy()

    @given(labels4)
    def test_row_and_column_totals(self, pairs):
        _, _, cm = cm_of(pairs)
        for c in range(4):
            assert cm.tp(c) + cm.fn(c) == cm.counts[c].sum()
            assert cm.tp(c) + cm.fp(c) == cm.counts[:, c].sum()
            assert cm.tp(c) + cm.fp(c) + cm.fn(c) + cm.tn(c) == cm.total


class TestConfusionMatrix:
    def test_rejects_bad_codes(self):
        with pytest.raises(ValueError):
            ConfusionMatrix.from_labels([0, 4], [0, 0], SEVERITY_CLASSES)

    def test_rejects_negative_counts(self):
        with pytest.raises(ValueError):
            ConfusionMatrix(-np.eye(2, dtype=int), BINARY_CLASSES)


class TestAssembleReport:
    def _mats(self, t, p):
        cb = ConfusionMatrix.from_labels([int(x > 0) for x in t], [int(x > 0) for x in p], BINARY_CLASSES)
        return cb, ConfusionMatrix.from_labels(t, p, SEVERITY_CLASSES)

    def test_absent_class_reported_absent(self):
        cb, cs = self._mats([0, 0, 1, 3], [0, 1, 1, 3])
        rep = assemble_report({"cpu_max": 0.1}, cb, cs)
        assert rep.severity["medium"].f_beta is None
        assert rep.to_dict()["severity"]["medium"]["f_beta"] is None
        assert rep.macro_f == pytest.approx(np.mean([f for f in
                                                     (rep.severity[k].f_beta for k in SEVERITY_CLASSES)
                                                     if f is not None]))

    def test_all_normal(self):
        cb, cs = self._mats([0] * 5, [0] * 5)
        rep = assemble_report({}, cb, cs)
        assert rep.severity["normal"].f_beta == 1.0
        assert all(rep.severity[k].f_beta is None for k in ("low", "medium", "high"))
        assert rep.anomaly.f_beta is None

    def test_class_set_mismatch(self):
        cb, cs = self._mats([0, 1], [0, 1])
        with pytest.raises(ValueError):
            assemble_report({}, cs, cb)

    def test_inconsistent_truth(self):
        cb = ConfusionMatrix.from_labels([0, 0], [0, 0], BINARY_CLASSES)
        cs = ConfusionMatrix.from_labels([0, 2], [0, 2], SEVERITY_CLASSES)
        with pytest.raises(ValueError):
            assemble_report({}, cb, cs)

    def test_randomized_200_against_brute_force(self):
        rng = np.random.default_rng(5)
        t, p = rng.integers(0, 4, 200), rng.integers(0, 4, 200)
        cb, cs = self._mats(t, p)
        rep = assemble_report({"cpu_max": 0.0}, cb, cs)
        assert rep.macro_f == pytest.approx(brute_macro(t, p, 4, exclude_absent=True), abs=1e-12)
        assert rep.micro_f == pytest.approx(brute_micro(t, p, 4), abs=1e-12)
        assert 0.5 == rep.beta

    def test_stable_field_order(self):
        cb, cs = self._mats([0, 1], [0, 1])
        keys = list(assemble_report({"a": 1.0}, cb, cs).to_dict())
        assert keys == ["beta", "n_instances", "imbalance_ratio", "rmse", "baseline_rmse", "anomaly",
                        "severity", "macro_f", "micro_f"]

    @given(labels4)
    def test_scores_in_unit_interval(self, pairs):
        if not pairs:
            return
        t = [a for a, _ in pairs]
        p = [b for _, b in pairs]
        rep = assemble_report({}, *self._mats(t, p))
        for s in [rep.anomaly, *rep.severity.values()]:
            for v in (s.precision, s.recall, s.f_beta):
                assert v is None or 0.0 <= v <= 1.0
        assert 0.0 <= rep.macro_f <= 1.0 and 0.0 <= rep.micro_f <= 1.0
