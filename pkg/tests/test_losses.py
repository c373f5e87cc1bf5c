import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from wal.errors import DataError
from wal.losses import (
    clamp_label_target,
    cmmd_loss,
    combined_loss,
    discrepancy_loss,
    kl_loss,
    kl_loss_from_logits,
)


def brute_kl(pred, target, eps=1e-8):
    t = [min(max(x, eps), 1.0) for x in target]
    s = sum(t)
    t = [x / s for x in t]
    return sum(p * math.log(p / q) for p, q in zip(pred, t) if p > 0)


class TestKLLoss:
    # hand/brute-force evaluations, frozen
    CASES = [
        (([0.5, 0.5], [0.75, 0.25]), 0.14384103622589042),
        (([0.2, 0.3, 0.5], [0.5, 0.25, 0.25]), 0.218011910943328),
        (([1.0, 0.0], [0.5, 0.5]), 0.6931471805599453),
        (([0.25, 0.75], [2.0, -1.0]), 13.253175423345466),
        (([0.1, 0.2, 0.3, 0.4], [0.4, 0.3, 0.2, 0.1]), 0.45643481914678347),
    ]

    @pytest.mark.parametrize("args,expected", CASES)
    def test_matches_brute_force(self, args, expected):
        value = float(kl_loss(*args))
        assert value == pytest.approx(expected, rel=1e-9)
        assert value == pytest.approx(brute_kl(*args), rel=1e-12)

    def test_zero_iff_equal(self):
        assert float(kl_loss([0.3, 0.7], [0.3, 0.7])) == pytest.approx(0.0, abs=1e-15)
        assert float(kl_loss([0.3, 0.7], [0.7, 0.3])) > 0

    def test_batched_mean(self):
        pairs = [self.CASES[0][0], self.CASES[2][0]]
        single = [float(kl_loss(p, t)) for p, t in pairs]
        batch = float(kl_loss([p for p, _ in pairs], [t for _, t in pairs]))
        assert batch == pytest.approx(np.mean(single), rel=1e-12)

    def test_length_mismatch(self):
        with pytest.raises(DataError):
            kl_loss([0.5, 0.5], [0.2, 0.3, 0.5])

    def test_conventional_direction_switch(self):
        fwd = float(kl_loss([0.5, 0.5], [0.75, 0.25], direction="target-pred"))
        assert fwd == pytest.approx(brute_kl([0.75, 0.25], [0.5, 0.5]), rel=1e-9)

    @given(st.integers(2, 8), st.integers(0, 2**32 - 1))
    @settings(max_examples=200, deadline=None)
    def test_nonnegative(self, m, seed):
        rng = np.random.default_rng(seed)
        pred = rng.dirichlet(np.ones(m))
        target = rng.dirichlet(np.ones(m))
        assert float(kl_loss(pred, target)) >= -1e-12

    def test_logit_form_agrees_with_probability_form(self):
        rng = np.random.default_rng(0)
        logits = rng.normal(size=(6, 5))
        target = rng.dirichlet(np.ones(5), size=6)
        probs = np.exp(logits) / np.exp(logits).sum(axis=1, keepdims=True)
        a = float(kl_loss_from_logits(logits, target))
        b = float(kl_loss(probs, target))
        assert a == pytest.approx(b, rel=1e-9)

    def test_logit_form_survives_extreme_logits(self):
        z = torch.tensor([[200.0, -200.0, 0.0]], requires_grad=True)
        loss = kl_loss_from_logits(z, torch.tensor([[0.8, 0.1, 0.1]]))
        loss.backward()
        assert torch.isfinite(loss)
        assert torch.isfinite(z.grad).all()


class TestCMMDLoss:
    def test_hand_case(self):
        src = [[1.0, 0.0], [0.8, 0.2], [0.1, 0.9]]
        tgt = [[0.6, 0.4], [0.0, 1.0]]
        value = float(cmmd_loss(src, [0, 0, 1], tgt, [0, 1], 2))
        assert value == pytest.approx(0.282842712474619, rel=1e-9)

    def test_single_class_hand_case(self):
        value = float(cmmd_loss([[1.0, 0.0]], [0], [[0.0, 0.0]], [0], 1))
        assert value == pytest.approx(1.0, rel=1e-12)

    def test_identical_means_zero(self):
        src = [[0.2, 0.8], [0.4, 0.6]]
        tgt = [[0.3, 0.7]]
        assert float(cmmd_loss(src, [1, 1], tgt, [1], 2)) == pytest.approx(0.0, abs=1e-12)

    def test_no_shared_class_is_zero(self):
        assert float(cmmd_loss([[1.0, 0.0]], [0], [[0.0, 1.0]], [1], 2)) == 0.0

    def test_within_group_permutation_invariant(self):
        rng = np.random.default_rng(3)
        src = rng.random((12, 4))
        tgt = rng.random((9, 4))
        src_c = rng.integers(0, 3, 12)
        tgt_c = rng.integers(0, 3, 9)
        base = float(cmmd_loss(src, src_c, tgt, tgt_c, 3))
        perm = rng.permutation(12)
        shuffled = float(cmmd_loss(src[perm], src_c[perm], tgt, tgt_c, 3))
        assert shuffled == pytest.approx(base, rel=1e-12)

    @given(st.floats(0.1, 10.0), st.integers(0, 2**32 - 1))
    @settings(max_examples=50, deadline=None)
    def test_positive_homogeneity(self, k, seed):
        rng = np.random.default_rng(seed)
        src = rng.random((8, 3))
        tgt = rng.random((6, 3))
        src_c = rng.integers(0, 2, 8)
        tgt_c = rng.integers(0, 2, 6)
        base = float(cmmd_loss(src, src_c, tgt, tgt_c, 2))
        scaled = float(cmmd_loss(k * src, src_c, k * tgt, tgt_c, 2))
        assert scaled == pytest.approx(k * base, rel=1e-9)


class TestDiscrepancyLoss:
    CASES = [
        (([0.0, 0.0], [1.0, 0.0], [0.6, 0.4]), 0.32),
        (([0.5, -0.5, 0.0], [1.0, 0.0, 0.0], [0.2, 0.5, 0.3]), 0.18),
    ]

    @pytest.mark.parametrize("args,expected", CASES)
    def test_hand_cases(self, args, expected):
        assert float(discrepancy_loss(*args)) == pytest.approx(expected, rel=1e-9)

    def test_zero_when_correction_matches_gap(self):
        y_t = [1.0, 0.0]
        yw = [0.6, 0.4]
        gap = [0.4, -0.4]
        assert float(discrepancy_loss(gap, y_t, yw)) == pytest.approx(0.0, abs=1e-15)

    def test_zero_correction_matching_labels(self):
        assert float(discrepancy_loss([0.0, 0.0], [1.0, 0.0], [1.0, 0.0])) == 0.0

    def test_swap_symmetry(self):
        rng = np.random.default_rng(5)
        c = rng.normal(size=4)
        y_t = rng.normal(size=4)
        yw = rng.normal(size=4)
        gap = y_t - yw
        a = float(discrepancy_loss(c, y_t, yw))
        b = float(discrepancy_loss(gap, c + yw, yw))
        assert a == pytest.approx(b, rel=1e-9)

    def test_batch_mean(self):
        rows = [([0.0, 0.0], [1.0, 0.0], [0.6, 0.4]),
                ([0.1, -0.2], [0.0, 1.0], [0.3, 0.7])]
        single = [float(discrepancy_loss(*row)) for row in rows]
        batch = float(discrepancy_loss([r[0] for r in rows], [r[1] for r in rows],
                                       [r[2] for r in rows]))
        assert batch == pytest.approx(np.mean(single), rel=1e-12)


class TestCombinedLoss:
    def test_alpha_zero_is_kl(self):
        lv = combined_loss([0.5, 0.5], [0.75, 0.25], cmmd_value=123.0, alpha=0.0)
        assert float(lv.value) == pytest.approx(0.14384103622589042, rel=1e-9)

    def test_weighted_sum_exact(self):
        lv = combined_loss([0.5, 0.5], [0.75, 0.25], cmmd_value=100.0, alpha=1e-4)
        assert float(lv.value) == pytest.approx(
            float(lv.components["kl"]) + 1e-4 * float(lv.components["cmmd"]), rel=0)
        assert float(lv.value) == pytest.approx(0.14384103622589042 + 0.01, rel=1e-9)

    def test_negative_alpha_rejected(self):
        with pytest.raises(DataError):
            combined_loss([0.5, 0.5], [0.5, 0.5], 0.0, alpha=-1.0)


def central_difference(f, x, h=1e-6):
    grad = np.zeros_like(x)
    for i in range(x.size):
        hi = np.zeros_like(x)
        hi.flat[i] = h
        grad.flat[i] = (f(x + hi) - f(x - hi)) / (2 * h)
    return grad


class TestGradientChecks:
    """Analytic (autograd) gradients vs central finite differences."""

    def test_kl_gradient(self):
        rng = np.random.default_rng(11)
        for _ in range(20):
            pred = rng.dirichlet(np.ones(5))
            target = rng.dirichlet(np.ones(5))
            t = torch.tensor(pred, requires_grad=True)
            kl_loss(t, target).backward()
            numeric = central_difference(lambda p: float(kl_loss(p, target)), pred)
            assert np.linalg.norm(t.grad.numpy() - numeric) <= \
                1e-4 * max(np.linalg.norm(numeric), 1e-3)

    def test_discrepancy_gradient(self):
        rng = np.random.default_rng(12)
        for _ in range(20):
            c = rng.normal(size=5)
            y_t = rng.normal(size=5)
            yw = rng.normal(size=5)
            t = torch.tensor(c, requires_grad=True)
            discrepancy_loss(t, y_t, yw).backward()
            numeric = central_difference(lambda v: float(discrepancy_loss(v, y_t, yw)), c)
            assert np.linalg.norm(t.grad.numpy() - numeric) <= 1e-4 * np.linalg.norm(numeric)

    def test_cmmd_gradient(self):
        rng = np.random.default_rng(13)
        for _ in range(10):
            src = rng.random((6, 5)) + 0.1
            tgt = rng.random((4, 5))
            src_c = rng.integers(0, 3, 6)
            tgt_c = rng.integers(0, 3, 4)
            t = torch.tensor(src, requires_grad=True)
            cmmd_loss(t, src_c, tgt, tgt_c, 3).backward()
            numeric = central_difference(
                lambda s: float(cmmd_loss(s.reshape(6, 5), src_c, tgt, tgt_c, 3)),
                src.reshape(-1)).reshape(6, 5)
            assert np.linalg.norm(t.grad.numpy() - numeric) <= \
                1e-4 * max(np.linalg.norm(numeric), 1e-3)


def test_clamp_label_target_renormalizes():
    out = clamp_label_target(torch.tensor([2.0, -1.0, 0.5]))
    assert out.min() > 0
    assert float(out.sum()) == pytest.approx(1.0, rel=1e-12)
    assert out.max() <= 1.0
