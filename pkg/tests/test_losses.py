"""Loss oracles: independent closed-form evaluation in numpy.

The oracles below re-derive the loss values from their formulas with plain
numpy (64-bit), independent of the torch implementations they check.
"""

import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from symdet.losses import focal_loss, weighted_ce


def focal_oracle(p, y, alpha=0.95, gamma=2.0, clamp=1e-6):
    p = np.clip(np.asarray(p, dtype=np.float64), clamp, 1 - clamp)
    y = np.asarray(y, dtype=np.float64)
    terms = alpha * (1 - p) ** gamma * y * np.log(p) + (1 - alpha) * p**gamma * (
        1 - y
    ) * np.log(1 - p)
    return -terms.mean()


def weighted_ce_oracle(logits, target, w):
    logits = np.asarray(logits, dtype=np.float64)
    target = np.asarray(target)
    b, c, h, wd = logits.shape
    shifted = logits - logits.max(axis=1, keepdims=True)
    logp = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    total, weight_sum = 0.0, 0.0
    for bi in range(b):
        for i in range(h):
            for j in range(wd):
                cls = target[bi, i, j]
                weight = w if cls == c - 1 else 1.0
                total += -logp[bi, cls, i, j] * weight
                weight_sum += weight
    return total / weight_sum


def test_focal_worked_values():
    # single positive pixel at p = 0.5: alpha * 0.25 * ln 2
    expected_pos = 0.95 * 0.25 * math.log(2.0)
    got = focal_loss(torch.tensor([[0.5]]), torch.tensor([[1.0]]))
    assert abs(got.item() - expected_pos) < 1e-6
    assert abs(expected_pos - 0.1646224553834952) < 1e-12
    # single negative pixel at p = 0.5: (1 - alpha) * 0.25 * ln 2
    expected_neg = 0.05 * 0.25 * math.log(2.0)
    got = focal_loss(torch.tensor([[0.5]]), torch.tensor([[0.0]]))
    assert abs(got.item() - expected_neg) < 1e-6
    assert abs(expected_neg - 0.008664339757026064) < 1e-12


def test_focal_saturated_correct_prediction():
    prob = torch.tensor([[1.0, 0.0], [1.0, 0.0]])
    target = torch.tensor([[1.0, 0.0], [1.0, 0.0]])
    assert focal_loss(prob, target).item() <= 1e-4


@pytest.mark.parametrize("seed", range(20))
def test_focal_matches_oracle_random(seed):
    rng = np.random.default_rng(seed)
    shape = (rng.integers(1, 4), rng.integers(2, 9), rng.integers(2, 9))
    p = rng.uniform(0, 1, size=shape)
    y = (rng.uniform(0, 1, size=shape) < 0.3).astype(np.float64)
    got = focal_loss(torch.from_numpy(p).float(), torch.from_numpy(y).float())
    assert abs(got.item() - focal_oracle(p, y)) < 1e-6


@given(st.floats(0.0, 1.0), st.booleans())
@settings(max_examples=50, deadline=None)
def test_focal_nonnegative(p, y):
    loss = focal_loss(torch.tensor([[p]]), torch.tensor([[float(y)]]))
    assert loss.item() >= 0.0


def test_weighted_ce_uniform_logits_is_log_c():
    for c in (3, 9, 22):
        logits = torch.zeros(1, c, 4, 4)
        target = torch.full((1, 4, 4), c - 1, dtype=torch.int64)  # all background
        got = weighted_ce(logits, target, background_weight=0.01)
        assert abs(got.item() - math.log(c)) < 1e-6


def test_weighted_ce_perfect_prediction():
    c = 5
    target = torch.randint(0, c, (1, 6, 6))
    logits = torch.nn.functional.one_hot(target, c).permute(0, 3, 1, 2).float() * 50.0
    assert weighted_ce(logits, target, 0.01).item() < 1e-6


def test_weighted_ce_w1_is_plain_ce():
    torch.manual_seed(0)
    logits = torch.randn(2, 6, 5, 5)
    target = torch.randint(0, 6, (2, 5, 5))
    got = weighted_ce(logits, target, background_weight=1.0)
    plain = torch.nn.functional.cross_entropy(logits, target)
    assert torch.allclose(got, plain, atol=1e-7)


@pytest.mark.parametrize("seed", range(20))
def test_weighted_ce_matches_oracle_random(seed):
    rng = np.random.default_rng(100 + seed)
    c = int(rng.integers(2, 8))
    logits = rng.normal(size=(1, c, 5, 5)) * 3
    target = rng.integers(0, c, size=(1, 5, 5))
    w = float(rng.uniform(0.001, 1.0))
    got = weighted_ce(
        torch.from_numpy(logits).float(), torch.from_numpy(target), background_weight=w
    )
    assert abs(got.item() - weighted_ce_oracle(logits, target, w)) < 1e-6


def test_weighted_ce_rejects_bad_classes():
    logits = torch.zeros(1, 4, 3, 3)
    with pytest.raises(ValueError):
        weighted_ce(logits, torch.full((1, 3, 3), 7), 0.5)


def test_focal_shape_mismatch():
    with pytest.raises(ValueError):
        focal_loss(torch.zeros(2, 3), torch.zeros(3, 2))
