import math

import numpy as np
import pytest

from ursam.uncertainty import (
    binarize,
    class_threshold,
    ensemble,
    entropy_map,
    uncertainty_mask,
)

LN2 = math.log(2.0)


def test_entropy_pinned_values():
    u = entropy_map(np.array([[0.25]]))
    expect = -(0.25 * math.log(0.25)) - (0.75 * math.log(0.75))
    assert abs(float(u[0, 0]) - expect) < 1e-7
    assert abs(expect - 0.5623351446188083) < 1e-12
    ends = entropy_map(np.array([0.0, 1.0, 0.5]))
    assert ends[0] == 0.0
    assert ends[1] == 0.0
    assert abs(float(ends[2]) - LN2) < 1e-7


def test_entropy_symmetry(rng):
    p = rng.random((50, 50))
    assert np.allclose(entropy_map(p), entropy_map(1.0 - p), atol=1e-7)


def test_entropy_rejects_bad_probs():
    with pytest.raises(ValueError):
        entropy_map(np.array([1.5]))
    with pytest.raises(ValueError):
        entropy_map(np.array([-0.1]))


def test_ensemble_mean_and_validation(rng):
    a = rng.random((4, 4)).astype(np.float32)
    b = rng.random((4, 4)).astype(np.float32)
    out = ensemble([a, b])
    assert out.dtype == np.float32
    assert np.allclose(out, (a.astype(np.float64) + b) / 2.0, atol=1e-7)
    with pytest.raises(ValueError):
        ensemble([])
    with pytest.raises(ValueError):
        ensemble([a, rng.random((3, 3))])


def test_binarize_threshold_semantics():
    p = np.array([0.0, 0.499, 0.5, 0.501, 1.0])
    assert binarize(p, 0.5).tolist() == [0, 0, 1, 1, 1]
    with pytest.raises(ValueError):
        binarize(p, 0.0)
    with pytest.raises(ValueError):
        binarize(p, 1.0)


def test_class_threshold_pinned_value():
    t = class_threshold(np.array([0.0, 0.693147]), s_y=20, s_b=40)
    assert abs(t - 0.51986025) < 1e-8


def test_class_threshold_clamps():
    u = np.array([0.1, 0.6])
    # segmentation bigger than its box pushes the fraction past 1
    assert class_threshold(u, s_y=400, s_b=40) == 0.6
    # degenerate flat map
    assert class_threshold(np.full(5, 0.3), s_y=10, s_b=40) == pytest.approx(0.3)


def test_class_threshold_validation():
    with pytest.raises(ValueError):
        class_threshold(np.array([]), 1, 1)
    with pytest.raises(ValueError):
        class_threshold(np.array([0.1]), 1, 0)
    with pytest.raises(ValueError):
        class_threshold(np.array([0.1]), -1, 5)


def test_class_threshold_monotone_in_sy(rng):
    for _ in range(100):
        u = rng.random(rng.integers(2, 40))
        s_b = int(rng.integers(1, 500))
        ts = [class_threshold(u, s_y, s_b) for s_y in range(0, 2 * s_b, max(s_b // 7, 1))]
        assert all(b >= a - 1e-12 for a, b in zip(ts, ts[1:]))


def test_uncertainty_mask_strictness():
    u = np.array([0.1, 0.2, 0.3])
    m = uncertainty_mask(u, 0.2)
    assert m.tolist() == [0, 0, 1]
    assert uncertainty_mask(u, 0.3).sum() == 0


def test_identical_votes_never_uncertain(rng):
    # unanimity means zero entropy everywhere, and the strict > of the
    # mask keeps everything certain even at the clamped threshold
    vote = (rng.random((6, 6)) > 0.5).astype(np.float32)
    pbar = ensemble([vote] * 5)
    u = entropy_map(pbar)
    assert np.all(u == 0.0)
    t = class_threshold(u, s_y=int(vote.sum()), s_b=36)
    assert t == 0.0
    assert uncertainty_mask(u, t).sum() == 0


def test_entropy_vanishes_exactly_on_unanimity(rng):
    votes = [(rng.random((8, 8)) > 0.4).astype(np.float32) for _ in range(5)]
    pbar = ensemble(votes)
    u = entropy_map(pbar)
    stack = np.stack(votes)
    unanimous = (stack == stack[0]).all(axis=0)
    assert np.array_equal(u == 0.0, unanimous)
