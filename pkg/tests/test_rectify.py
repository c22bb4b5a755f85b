import numpy as np
import pytest

from ursam.rectify import (
    NoCertainTarget,
    RectifyConfig,
    fixed_threshold,
    mean_intensities,
    partition_regions,
    rectify_fn,
    rectify_fp,
    rectify_fpnc,
    rectify_ur,
)


def random_masks(rng, shape=(8, 8)):
    ens = (rng.random(shape) > 0.5).astype(np.uint8)
    unc = (rng.random(shape) > 0.7).astype(np.uint8)
    return ens, unc


def test_partition_exactness(rng):
    for _ in range(50):
        ens, unc = random_masks(rng)
        part = partition_regions(ens, unc)
        total = (
            part.target.astype(int) + part.background.astype(int) + part.uncertain.astype(int)
        )
        assert (total == 1).all()
        assert not np.any(part.target & part.uncertain)
        assert not np.any(part.background & part.uncertain)


def test_partition_shape_mismatch():
    with pytest.raises(ValueError):
        partition_regions(np.zeros((2, 2)), np.zeros((3, 3)))


def test_mean_intensities_and_fallbacks(rng):
    img = np.arange(16, dtype=np.float64).reshape(4, 4)
    ens = np.zeros((4, 4), dtype=np.uint8)
    ens[1:3, 1:3] = 1
    unc = np.zeros((4, 4), dtype=np.uint8)
    part = partition_regions(ens, unc)
    i_t, i_b = mean_intensities(img, part)
    assert i_t == pytest.approx(img[1:3, 1:3].mean())
    assert i_b == pytest.approx(img[ens == 0].mean())

    # empty target is a hard error
    with pytest.raises(NoCertainTarget):
        mean_intensities(img, partition_regions(np.zeros((4, 4)), unc))

    # empty background falls back to outside-ensemble, then whole image
    all_unc = np.ones((4, 4), dtype=np.uint8)
    all_unc[1, 1] = 0
    ens2 = np.ones((4, 4), dtype=np.uint8)
    part2 = partition_regions(ens2, all_unc)
    swap = np.array(ens2)
    swap[0, 0] = 0
    _, i_b2 = mean_intensities(img, part2, ens_mask=swap)
    assert i_b2 == pytest.approx(img[0, 0])
    _, i_b3 = mean_intensities(img, part2, ens_mask=ens2)
    assert i_b3 == pytest.approx(img.mean())


def test_fixed_threshold():
    u = np.array([0.2, 1.0])
    assert fixed_threshold(u, 0.5) == pytest.approx(0.6)
    assert fixed_threshold(u, 0.0) == pytest.approx(0.2)
    with pytest.raises(ValueError):
        fixed_threshold(np.array([]), 0.5)
    with pytest.raises(ValueError):
        fixed_threshold(u, 1.5)


def test_rectify_config_validation():
    with pytest.raises(ValueError):
        RectifyConfig(alpha_h=0.0)
    with pytest.raises(ValueError):
        RectifyConfig(mode="nope")
    with pytest.raises(ValueError):
        RectifyConfig(threshold_mode="nope")
    with pytest.raises(ValueError):
        RectifyConfig(lower_bound_mode="nope")
    with pytest.raises(ValueError):
        RectifyConfig(fixed_fraction=2.0)


def test_rectify_ur_basic():
    # target mean 0.8, background mean 0.2 -> paper lower bound 0.3,
    # upper 1.1 * 0.8 = 0.88; uncertain pixels at 0.75 admitted, at
    # 0.1 and 0.95 rejected
    img = np.array(
        [
            [0.8, 0.8, 0.2],
            [0.75, 0.10, 0.2],
            [0.95, 0.2, 0.2],
        ]
    )
    ens = np.array([[1, 1, 0], [1, 1, 0], [0, 0, 0]], dtype=np.uint8)
    unc = np.array([[0, 0, 0], [1, 1, 0], [1, 0, 0]], dtype=np.uint8)
    out = rectify_ur(img, ens, unc, RectifyConfig(alpha_h=1.1))
    expect = np.array([[1, 1, 0], [1, 0, 0], [0, 0, 0]], dtype=np.uint8)
    assert np.array_equal(out, expect)


def test_rectify_ur_contains_target_never_background(rng):
    cfg = RectifyConfig()
    for _ in range(200):
        ens, unc = random_masks(rng)
        img = rng.random((8, 8))
        out = rectify_ur(img, ens, unc, cfg).astype(bool)
        target = ens.astype(bool) & ~unc.astype(bool)
        background = ~ens.astype(bool) & ~unc.astype(bool)
        if target.any():
            assert (out[target]).all()
            assert not out[background].any()
        else:
            assert np.array_equal(out, ens.astype(bool))


def test_rectify_ur_empty_uncertain_is_ensemble(rng):
    ens = (rng.random((6, 6)) > 0.5).astype(np.uint8)
    img = rng.random((6, 6))
    out = rectify_ur(img, ens, np.zeros((6, 6), dtype=np.uint8), RectifyConfig())
    assert np.array_equal(out, ens)


def test_rectify_ur_lower_bound_modes():
    # near-equal means: the paper bound (I_t - I_b)/2 collapses toward
    # zero and admits the dark uncertain pixel; the midpoint rejects it
    img = np.array([[0.5, 0.45, 0.1]])
    ens = np.array([[1, 0, 0]], dtype=np.uint8)
    unc = np.array([[0, 0, 1]], dtype=np.uint8)
    got_paper = rectify_ur(img, ens, unc, RectifyConfig(lower_bound_mode="paper"))
    got_mid = rectify_ur(img, ens, unc, RectifyConfig(lower_bound_mode="mean"))
    assert got_paper[0, 2] == 1
    assert got_mid[0, 2] == 0


def test_baseline_strategies(rng):
    for _ in range(100):
        ens, unc = random_masks(rng)
        fp = rectify_fp(ens, unc).astype(bool)
        fn = rectify_fn(ens, unc).astype(bool)
        e = ens.astype(bool)
        assert ((fp <= e) & (e <= fn)).all()
        fpnc = rectify_fpnc(ens, unc)
        assert np.array_equal(rectify_fpnc(fpnc, unc), ens.astype(np.uint8))
        # outside the uncertain region nothing moves
        certain = ~unc.astype(bool)
        assert np.array_equal(fpnc.astype(bool)[certain], e[certain])


def test_shape_mismatches():
    a = np.zeros((2, 2), dtype=np.uint8)
    b = np.zeros((3, 3), dtype=np.uint8)
    for fn in (rectify_fp, rectify_fn, rectify_fpnc):
        with pytest.raises(ValueError):
            fn(a, b)
    with pytest.raises(ValueError):
        rectify_ur(np.zeros((2, 2)), a, b, RectifyConfig())
