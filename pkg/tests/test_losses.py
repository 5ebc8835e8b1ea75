"""Supervised, consistency, and combined loss objectives."""

import math

import numpy as np
import pytest
import torch

from semisup.datamodel import PseudoLabel
from semisup.losses import (
    LossError,
    LossWeights,
    consistency_loss,
    supervised_loss,
    total_loss,
)


def accepted(class_index: int) -> PseudoLabel:
    return PseudoLabel("s", class_index, 0.95, accepted=True)


def rejected(class_index: int = 0) -> PseudoLabel:
    return PseudoLabel("s", class_index, 0.2, accepted=False)


class TestSupervisedLoss:
    def test_one_hot_correct_is_zero(self):
        probs = torch.zeros(1, 7, dtype=torch.float64)
        probs[0, 3] = 1.0
        assert supervised_loss(torch.tensor([3]), probs).item() == pytest.approx(0.0)

    def test_uniform_is_ln_seven(self):
        probs = torch.full((1, 7), 1 / 7, dtype=torch.float64)
        loss = supervised_loss(torch.tensor([0]), probs)
        assert loss.item() == pytest.approx(math.log(7), abs=1e-9)

    def test_mean_over_batch(self):
        probs = torch.full((2, 7), 1 / 7, dtype=torch.float64)
        probs[0] = 0.0
        probs[0, 1] = 1.0
        loss = supervised_loss(torch.tensor([1, 5]), probs)
        assert loss.item() == pytest.approx(math.log(7) / 2, abs=1e-9)

    def test_empty_batch_rejected(self):
        with pytest.raises(LossError):
            supervised_loss(torch.zeros(0, dtype=torch.long), torch.zeros(0, 7))

    def test_saturated_prediction_clamped(self):
        probs = torch.zeros(1, 7, dtype=torch.float64)
        probs[0, 0] = 1.0
        loss = supervised_loss(torch.tensor([6]), probs)  # true class has p=0
        assert math.isfinite(loss.item())

    def test_gradient_is_softmax_minus_onehot(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            logits = torch.tensor(rng.normal(size=(3, 7)), requires_grad=True)
            labels = torch.tensor(rng.integers(0, 7, size=3))
            loss = supervised_loss(labels, torch.softmax(logits, dim=1))
            loss.backward()
            sm = torch.softmax(logits.detach(), dim=1)
            onehot = torch.zeros_like(sm)
            onehot[torch.arange(3), labels] = 1.0
            expected = (sm - onehot) / 3
            np.testing.assert_allclose(logits.grad.numpy(), expected.numpy(), atol=1e-10)

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            logits = torch.tensor(rng.normal(size=(2, 5)), requires_grad=True)
            labels = torch.tensor(rng.integers(0, 5, size=2))
            loss = supervised_loss(labels, torch.softmax(logits, dim=1))
            loss.backward()
            eps = 1e-6
            flat = logits.detach().clone().view(-1)
            for k in range(flat.numel()):
                pert = flat.clone()
                pert[k] += eps
                up = supervised_loss(labels, torch.softmax(pert.view(2, 5), dim=1)).item()
                pert[k] -= 2 * eps
                down = supervised_loss(labels, torch.softmax(pert.view(2, 5), dim=1)).item()
                fd = (up - down) / (2 * eps)
                analytic = logits.grad.view(-1)[k].item()
                assert abs(fd - analytic) / max(abs(fd), abs(analytic), 1e-8) < 1e-4


class TestConsistencyLoss:
    def test_no_accepted_samples_is_zero(self):
        probs = torch.full((3, 7), 1 / 7)
        loss = consistency_loss([rejected(), rejected(), rejected()], probs)
        assert loss.item() == 0.0
        assert math.isfinite(loss.item())

    def test_perfect_consistency_is_zero(self):
        probs = torch.zeros(1, 7, dtype=torch.float64)
        probs[0, 2] = 1.0
        assert consistency_loss([accepted(2)], probs).item() == pytest.approx(0.0)

    def test_uniform_strong_view_is_ln_seven(self):
        probs = torch.full((1, 7), 1 / 7, dtype=torch.float64)
        loss = consistency_loss([accepted(4)], probs)
        assert loss.item() == pytest.approx(math.log(7), abs=1e-9)

    def test_averages_over_accepted_only(self):
        probs = torch.full((2, 7), 1 / 7, dtype=torch.float64)
        probs[1] = 0.0
        probs[1, 3] = 1.0
        loss = consistency_loss([accepted(0), rejected(3)], probs)
        assert loss.item() == pytest.approx(math.log(7), abs=1e-9)

    def test_permutation_invariance(self):
        rng = np.random.default_rng(5)
        x = rng.exponential(size=(6, 7))
        probs = torch.tensor(x / x.sum(axis=1, keepdims=True))
        pls = [accepted(i % 7) if i % 2 == 0 else rejected(i % 7) for i in range(6)]
        base = consistency_loss(pls, probs).item()
        for _ in range(10):
            perm = rng.permutation(6)
            shuffled = consistency_loss([pls[i] for i in perm], probs[perm])
            assert shuffled.item() == pytest.approx(base, abs=1e-12)

    def test_batch_size_mismatch_rejected(self):
        with pytest.raises(LossError):
            consistency_loss([accepted(0)], torch.full((2, 7), 1 / 7))


class TestTotalLoss:
    def test_hand_composition(self):
        w = LossWeights(lambda1=0.5, lambda2=0.1)
        assert total_loss(1.0, 0.4, -0.5, w) == pytest.approx(1.15, abs=1e-12)

    def test_supervised_only_degeneracy(self):
        w = LossWeights(lambda1=0.0, lambda2=0.0)
        assert total_loss(0.73, 12.0, -4.0, w) == pytest.approx(0.73)

    def test_all_zero(self):
        assert total_loss(0.0, 0.0, 0.0, LossWeights()) == 0.0

    def test_nonfinite_component_named(self):
        with pytest.raises(LossError, match="l_consistency"):
            total_loss(1.0, float("nan"), 0.0, LossWeights())

    def test_linear_in_each_component(self):
        rng = np.random.default_rng(2)
        w = LossWeights(lambda1=0.5, lambda2=0.1)
        for _ in range(50):
            a1, b1, c1, a2, b2, c2 = rng.normal(size=6)
            combined = total_loss(a1 + a2, b1 + b2, c1 + c2, w)
            split = total_loss(a1, b1, c1, w) + total_loss(a2, b2, c2, w)
            assert combined == pytest.approx(split, abs=1e-9)

    def test_keeps_tensor_graph(self):
        x = torch.tensor(2.0, requires_grad=True)
        out = total_loss(x, x * 2, x * 3, LossWeights(lambda1=0.5, lambda2=0.1))
        out.backward()
        assert x.grad.item() == pytest.approx(1.0 + 0.5 * 2 + 0.1 * 3)

    def test_negative_weights_rejected(self):
        with pytest.raises(LossError):
            LossWeights(lambda1=-0.1)
