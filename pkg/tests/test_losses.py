import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from conftest import central_diff, rel_err
from oodlab.losses import (
    ALSConfig,
    LSConfig,
    als_loss,
    cross_entropy,
    lambda_schedule,
    ls_loss,
    nmpc_penalty,
    nmpc_rows,
    smooth_targets,
)
from oodlab.model import ForwardOut
from oodlab.tensor import Tape, Tensor, backward, softmax


def fwd_of(probs) -> ForwardOut:
    p = Tensor(probs)
    return ForwardOut(features=p, logits=p, probs=p)


def probs_rows(n_classes):
    return st.lists(st.floats(0.01, 1.0), min_size=n_classes, max_size=n_classes).map(
        lambda v: np.array(v) / np.sum(v)
    )


class TestCrossEntropy:
    def test_perfect(self):
        assert cross_entropy(Tensor([[1.0, 0.0, 0.0]]), [0]).item() == 0.0

    def test_symmetric(self):
        assert cross_entropy(Tensor([[0.5, 0.5]]), [1]).item() == pytest.approx(math.log(2), abs=1e-15)

    def test_batch_mean(self):
        loss = cross_entropy(Tensor([[1.0, 0.0], [0.5, 0.5]]), [0, 1]).item()
        assert loss == pytest.approx(0.346574, abs=1e-6)

    def test_zero_probability_is_clamped(self):
        assert cross_entropy(Tensor([[1.0, 0.0]]), [1]).item() == pytest.approx(-math.log(1e-12))


class TestSmoothTargets:
    def test_five_classes(self):
        np.testing.assert_allclose(smooth_targets(5, 0.1, 2), [0.025, 0.025, 0.9, 0.025, 0.025], atol=1e-15)

    def test_alpha_zero_is_one_hot(self):
        assert smooth_targets(4, 0.0, 1).tolist() == [0.0, 1.0, 0.0, 0.0]

    def test_binary(self):
        np.testing.assert_allclose(smooth_targets(2, 0.3, 0), [0.7, 0.3], atol=1e-15)

    @given(st.integers(2, 20), st.floats(0, 1), st.data())
    def test_sums_to_one(self, n, alpha, data):
        k = data.draw(st.integers(0, n - 1))
        assert smooth_targets(n, alpha, k).sum() == pytest.approx(1.0, abs=1e-12)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            LSConfig(1.5)


class TestLSLoss:
    def test_alpha_zero_equals_ce_exactly(self, rng):
        p = softmax(Tensor(rng.normal(size=(8, 4)))).data
        t = rng.integers(0, 4, 8)
        assert ls_loss(Tensor(p), t, LSConfig(0.0)).item() == cross_entropy(Tensor(p), t).item()

    def test_loss_at_target_is_its_entropy(self):
        y = smooth_targets(5, 0.1, 2)
        expected = 0.9 * math.log(1 / 0.9) + 4 * 0.025 * math.log(1 / 0.025)
        assert expected == pytest.approx(0.46371, abs=1e-5)
        assert ls_loss(Tensor([y]), [2], LSConfig(0.1)).item() == pytest.approx(expected, abs=1e-12)

    @settings(max_examples=50)
    @given(st.integers(3, 8), st.floats(0.05, 0.5), st.data())
    def test_minimised_at_smooth_target(self, n, alpha, data):
        y = smooth_targets(n, alpha, 0)
        direction = np.array(data.draw(st.lists(st.floats(-1, 1), min_size=n, max_size=n)))
        direction -= direction.mean()
        assume(np.linalg.norm(direction) > 1e-3)
        step = 1e-3 * direction / np.abs(direction).max()
        base = ls_loss(Tensor([y]), [0], LSConfig(alpha)).item()
        assert ls_loss(Tensor([y + step]), [0], LSConfig(alpha)).item() > base


class TestNMPC:
    def test_worked_example(self):
        assert nmpc_penalty([0.7, 0.2, 0.1]) == pytest.approx(0.05, abs=1e-15)

    def test_uniform(self):
        assert nmpc_penalty([1 / 3, 1 / 3, 1 / 3]) == 0.0

    def test_equal_non_max(self):
        assert nmpc_penalty([0.9, 0.05, 0.05]) == 0.0

    def test_tie_for_max_uses_lowest_index(self):
        # removing index 0 leaves [0.4, 0.2]
        assert nmpc_penalty([0.4, 0.4, 0.2]) == pytest.approx(0.1, abs=1e-15)

    @given(st.integers(2, 8).flatmap(probs_rows), st.randoms())
    def test_nonnegative_and_permutation_invariant(self, p, random):
        base = nmpc_penalty(p)
        assert base >= 0.0
        k = int(np.argmax(p))
        rest = [i for i in range(len(p)) if i != k]
        shuffled = rest[:]
        random.shuffle(shuffled)
        q = p.copy()
        q[rest] = p[shuffled]
        assert nmpc_penalty(q) == pytest.approx(base, abs=1e-15)

    @given(st.integers(3, 8), st.floats(0.4, 0.9), st.floats(0.0, 0.02))
    def test_zero_iff_non_max_equal(self, n, top, spread):
        rest = np.full(n - 1, (1 - top) / (n - 1))
        rest[0] += spread
        rest[1] -= spread
        p = np.concatenate([[top], rest])
        assert (nmpc_penalty(p) == 0.0) == (len(set(rest.tolist())) == 1)

    def test_tensor_rows_match_reference(self, rng):
        p = softmax(Tensor(rng.normal(size=(6, 5)))).data
        rows = nmpc_rows(Tensor(p)).data.ravel()
        np.testing.assert_allclose(rows, [nmpc_penalty(r) for r in p], atol=1e-12)


class TestALSLoss:
    def test_lambda_zero_equals_ce_to_the_bit(self, rng):
        p = softmax(Tensor(rng.normal(size=(5, 4)))).data
        t = rng.integers(0, 4, 5)
        for strategy in ("only_corr", "ramp_all"):
            got = als_loss(fwd_of(p), t, ALSConfig(0.0, strategy, 10), epoch=3).item()
            assert got == cross_entropy(Tensor(p), t).item()

    def test_correct_row(self):
        got = als_loss(fwd_of([[0.7, 0.2, 0.1]]), [0], ALSConfig(5.0, "only_corr")).item()
        assert got == pytest.approx(-math.log(0.7) + 5 * 0.05, abs=1e-10)
        assert got == pytest.approx(0.60667, abs=1e-5)

    def test_misclassified_row_is_not_penalised(self):
        got = als_loss(fwd_of([[0.7, 0.2, 0.1]]), [1], ALSConfig(5.0, "only_corr")).item()
        assert got == pytest.approx(-math.log(0.2), abs=1e-12)
        assert got == pytest.approx(1.60944, abs=1e-5)

    def test_penalty_averages_over_eligible_rows_only(self):
        p = [[0.7, 0.2, 0.1], [0.7, 0.2, 0.1]]
        got = als_loss(fwd_of(p), [0, 1], ALSConfig(5.0, "only_corr")).item()
        ce = (-math.log(0.7) - math.log(0.2)) / 2
        assert got == pytest.approx(ce + 5 * 0.05, abs=1e-10)

    def test_ramp_all_penalises_every_row(self):
        p = [[0.7, 0.2, 0.1]]
        got = als_loss(fwd_of(p), [1], ALSConfig(4.0, "ramp_all", 10), epoch=5).item()
        assert got == pytest.approx(-math.log(0.2) + 2.0 * 0.05, abs=1e-10)

    def test_bad_strategy(self):
        with pytest.raises(ValueError):
            ALSConfig(1.0, "sometimes")


class TestLambdaSchedule:
    def test_values(self):
        assert lambda_schedule(10, 20, 40.0) == 20.0
        assert lambda_schedule(0, 20, 40.0) == 0.0
        assert lambda_schedule(20, 20, 40.0) == 40.0
        assert lambda_schedule(60, 20, 40.0) == 40.0

    def test_no_ramp(self):
        assert lambda_schedule(0, 0, 7.0) == 7.0


def _grad_check(loss_fn, n, n_classes, seed):
    rng = np.random.default_rng(seed)
    logits0 = rng.normal(size=(n, n_classes)) * 2
    targets = rng.integers(0, n_classes, n)
    x = Tensor(logits0)
    Tape().watch(x)
    backward(loss_fn(x, targets))
    numeric = central_diff(lambda a: loss_fn(Tensor(a), targets).item(), logits0)
    return rel_err(x.grad, numeric)


LOSS_FNS = {
    "ce": lambda x, t: cross_entropy(softmax(x), t),
    "ls": lambda x, t: ls_loss(softmax(x), t, LSConfig(0.1)),
    "als_only_corr": lambda x, t: als_loss(fwd_of_tensor(x), t, ALSConfig(5.0, "only_corr")),
    "als_ramp_all": lambda x, t: als_loss(fwd_of_tensor(x), t, ALSConfig(5.0, "ramp_all", 10), epoch=4),
}


def fwd_of_tensor(logits: Tensor) -> ForwardOut:
    return ForwardOut(features=logits, logits=logits, probs=softmax(logits))


@pytest.mark.parametrize("name", sorted(LOSS_FNS))
@pytest.mark.parametrize("seed", range(5))
def test_loss_gradients_match_finite_differences(name, seed):
    assert _grad_check(LOSS_FNS[name], 6, 4, seed) < 1e-6
