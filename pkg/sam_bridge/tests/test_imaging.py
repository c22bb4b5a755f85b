import numpy as np
import pytest

from sam_bridge.imaging import resize_bilinear, scale_box, to_rgb8


def test_resize_identity_is_exact():
    rng = np.random.default_rng(0)
    img = rng.normal(size=(7, 9)).astype(np.float32)
    out = resize_bilinear(img, 7, 9)
    assert np.array_equal(out, img)
    assert out is not img


def test_resize_constant_stays_constant():
    img = np.full((5, 6), 3.25, dtype=np.float32)
    out = resize_bilinear(img, 17, 11)
    assert out.shape == (17, 11)
    assert np.allclose(out, 3.25)


def test_resize_doubling_known_values():
    img = np.array([[0.0, 1.0]], dtype=np.float32)
    out = resize_bilinear(img, 1, 4)
    # half-pixel centers: output xs map to input coords -0.25, 0.25, 0.75, 1.25,
    # clipped at the edges
    assert np.allclose(out, [[0.0, 0.25, 0.75, 1.0]], atol=1e-6)


def test_resize_preserves_range():
    rng = np.random.default_rng(3)
    img = rng.uniform(-2.0, 5.0, size=(13, 8)).astype(np.float32)
    out = resize_bilinear(img, 31, 29)
    assert out.min() >= img.min() - 1e-5
    assert out.max() <= img.max() + 1e-5


def test_resize_rejects_bad_shapes():
    with pytest.raises(ValueError):
        resize_bilinear(np.zeros((2, 2, 2), dtype=np.float32), 4, 4)
    with pytest.raises(ValueError):
        resize_bilinear(np.zeros((2, 2), dtype=np.float32), 0, 4)


def test_to_rgb8_sam_stretches_min_max():
    sl = np.array([[10.0, 20.0], [30.0, 40.0]], dtype=np.float32)
    rgb = to_rgb8(sl, "sam")
    assert rgb.shape == (2, 2, 3)
    assert rgb.dtype == np.uint8
    assert rgb[0, 0, 0] == 0
    assert rgb[1, 1, 0] == 255
    assert np.array_equal(rgb[..., 0], rgb[..., 1])
    assert np.array_equal(rgb[..., 0], rgb[..., 2])


def test_to_rgb8_sam_flat_slice_is_zero():
    rgb = to_rgb8(np.full((3, 3), 7.0, dtype=np.float32), "sam")
    assert rgb.sum() == 0


def test_to_rgb8_medsam_assumes_unit_range():
    sl = np.array([[0.0, 0.5], [1.0, 2.0]], dtype=np.float32)
    rgb = to_rgb8(sl, "medsam")
    assert rgb[0, 0, 0] == 0
    assert rgb[0, 1, 0] == 128
    assert rgb[1, 0, 0] == 255
    # values above 1 are clipped, not wrapped
    assert rgb[1, 1, 0] == 255


def test_to_rgb8_rejects_unknown_variant():
    with pytest.raises(ValueError):
        to_rgb8(np.zeros((2, 2), dtype=np.float32), "vit-h")


def test_scale_box_identity_resolution():
    xyxy = scale_box((1, 2, 3, 4), 8, 8, 8, 8)
    # inclusive rows/cols become exclusive float edges
    assert np.allclose(xyxy, [2.0, 1.0, 5.0, 4.0])


def test_scale_box_full_slice_covers_canvas():
    xyxy = scale_box((0, 0, 9, 19), 10, 20, 64, 64)
    assert np.allclose(xyxy, [0.0, 0.0, 64.0, 64.0])


def test_scale_box_rejects_out_of_bounds():
    with pytest.raises(ValueError):
        scale_box((0, 0, 10, 5), 10, 20, 64, 64)
    with pytest.raises(ValueError):
        scale_box((3, 0, 2, 5), 10, 20, 64, 64)
