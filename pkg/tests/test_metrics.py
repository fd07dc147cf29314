import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oodlab.metrics import accuracy, auroc, evaluate_scores, fpr_at_tpr, oscr
from oracles import auroc_pairs, fpr_sweep, oscr_sweep

scores_list = st.lists(st.integers(-5, 5).map(float), min_size=1, max_size=40)


class TestAccuracy:
    def test_examples(self):
        assert accuracy([0, 1, 2], [0, 1, 2]) == 1.0
        assert accuracy([0, 1], [0, 0]) == 0.5

    def test_permutation_invariant(self, rng):
        p, l = rng.integers(0, 3, 50), rng.integers(0, 3, 50)
        perm = rng.permutation(50)
        assert accuracy(p, l) == accuracy(p[perm], l[perm])

    def test_empty(self):
        with pytest.raises(ValueError):
            accuracy([], [])


class TestAUROC:
    def test_examples(self):
        assert auroc([3, 2], [1, 0]) == 1.0
        assert auroc([1], [1]) == 0.5
        assert auroc([0, 2], [1, 3]) == 0.25

    def test_empty_side(self):
        with pytest.raises(ValueError):
            auroc([], [1.0])

    @given(scores_list, scores_list)
    def test_matches_pairs_oracle_and_is_tie_symmetric(self, k, u):
        assert abs(auroc(k, u) - auroc_pairs(k, u)) < 1e-12
        assert auroc(k, u) + auroc(u, k) == 1.0

    @given(scores_list, scores_list)
    def test_monotone_transform_invariant(self, k, u):
        f = lambda v: np.exp(np.asarray(v) / 3.0) * 7 - 2
        assert auroc(f(k), f(u)) == auroc(k, u)


class TestFPR:
    def test_worked_example(self):
        known = list(range(1, 11))
        assert fpr_at_tpr(known, [0.5, 1.5, 0.2, 5], 0.95) == 0.5

    def test_all_unknown_below(self):
        assert fpr_at_tpr([5, 6, 7], [1, 2, 3]) == 0.0

    @given(scores_list)
    def test_identical_multisets_give_at_least_target(self, s):
        assert fpr_at_tpr(s, s, 0.95) >= 0.95

    @given(scores_list, scores_list, st.sampled_from([0.5, 0.9, 0.95, 0.99, 1.0]))
    def test_matches_sweep_oracle(self, k, u, tpr):
        assert fpr_at_tpr(k, u, tpr) == fpr_sweep(k, u, tpr)

    def test_twenty_known_needs_nineteen(self):
        # 0.95 * 20 must not round up to 20 known samples
        known = list(range(20))
        assert fpr_at_tpr(known, [0.5], 0.95) == 0.0


class TestOSCR:
    def test_perfect(self):
        assert oscr([5, 4], [True, True], [1, 0]) == 1.0

    def test_two_point_curve(self):
        assert oscr([3, 1], [True, False], [2]) == 0.5

    def test_nothing_correct(self):
        assert oscr([3, 2], [False, False], [1]) == 0.0

    @given(st.data())
    def test_matches_sweep_oracle(self, data):
        k = data.draw(scores_list)
        c = data.draw(st.lists(st.booleans(), min_size=len(k), max_size=len(k)))
        u = data.draw(scores_list)
        assert abs(oscr(k, c, u) - oscr_sweep(k, c, u)) < 1e-12

    @settings(max_examples=50)
    @given(st.integers(1, 60), st.integers(1, 60), st.integers(0, 2**32 - 1))
    def test_bounded_by_auroc_with_equality_when_all_correct(self, nk, nu, seed):
        rng = np.random.default_rng(seed)
        k, u = rng.normal(1, 1, nk), rng.normal(0, 1, nu)  # continuous: no ties
        correct = rng.random(nk) < 0.7
        assert oscr(k, correct, u) <= auroc(k, u) + 1e-12
        assert oscr(k, np.ones(nk, bool), u) == pytest.approx(auroc(k, u), abs=1e-12)


def test_evaluate_scores_without_unknowns():
    row = evaluate_scores([0.9, 0.8], [0, 1], [0, 0], [])
    assert row.accuracy == 0.5 and row.auroc is None and row.fpr95 is None and row.oscr is None


@given(st.data())
def test_all_metrics_invariant_under_increasing_transform(data):
    k = data.draw(scores_list)
    c = data.draw(st.lists(st.booleans(), min_size=len(k), max_size=len(k)))
    u = data.draw(scores_list)
    f = lambda v: np.exp(np.asarray(v) / 2.0) + 10.0
    assert auroc(f(k), f(u)) == auroc(k, u)
    assert fpr_at_tpr(f(k), f(u)) == fpr_at_tpr(k, u)
    assert oscr(f(k), c, f(u)) == oscr(k, c, u)
