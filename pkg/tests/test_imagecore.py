import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from skimage import color

from scenetext.imagecore import (
    BoundingBox,
    InvalidComponentError,
    crop_resize,
    draw_overlay,
    lab_to_rgb,
    load_image,
    quantize_gray,
    resize_bilinear,
    save_png,
    to_gray,
    to_lab,
)

boxes = st.builds(BoundingBox, st.integers(0, 40), st.integers(0, 40), st.integers(0, 10), st.integers(0, 10))


def raster_iou(a: BoundingBox, b: BoundingBox) -> float:
    ga = np.zeros((60, 60), bool)
    gb = np.zeros((60, 60), bool)
    ga[a.y : a.y2, a.x : a.x2] = True
    gb[b.y : b.y2, b.x : b.x2] = True
    union = (ga | gb).sum()
    return (ga & gb).sum() / union if union else 0.0


@given(boxes, boxes)
@settings(max_examples=300)
def test_iou_matches_pixel_count(a, b):
    assert a.iou(b) == pytest.approx(raster_iou(a, b), abs=1e-12)
    assert a.iou(b) == b.iou(a)


def test_box_helpers():
    b = BoundingBox(10, 20, 30, 40)
    assert (b.x2, b.y2, b.area, b.center) == (40, 60, 1200, (25.0, 40.0))
    assert b.clamp(25, 100) == BoundingBox(10, 20, 15, 40)
    assert BoundingBox(-5, -5, 10, 10).clamp(100, 100) == BoundingBox(0, 0, 5, 5)
    assert b.union(BoundingBox(0, 0, 1, 1)) == BoundingBox(0, 0, 40, 60)
    assert BoundingBox.from_corners(1, 2, 4, 6) == BoundingBox(1, 2, 3, 4)


def test_lab_matches_skimage():
    rng = np.random.default_rng(0)
    img = rng.integers(0, 256, (40, 40, 3), dtype=np.uint8)
    ref = color.rgb2lab(img, illuminant="D65", observer="2")
    # skimage rounds the sRGB->XYZ matrix differently; 0.01 is far below one just-noticeable step
    np.testing.assert_allclose(to_lab(img), ref, atol=1e-2)


def test_lab_known_points():
    np.testing.assert_allclose(to_lab(np.array([[[255, 255, 255]]], np.uint8))[0, 0], [100, 0, 0], atol=1e-3)
    np.testing.assert_allclose(to_lab(np.array([[[0, 0, 0]]], np.uint8))[0, 0], [0, 0, 0], atol=1e-9)


@given(st.lists(st.integers(0, 255), min_size=3, max_size=3))
def test_lab_round_trip(rgb):
    px = np.array([[rgb]], np.uint8)
    assert np.array_equal(lab_to_rgb(to_lab(px)), px)


def test_gray_and_quantize():
    img = np.array([[[255, 0, 0], [0, 255, 0], [0, 0, 255], [255, 255, 255]]], np.uint8)
    np.testing.assert_allclose(to_gray(img)[0], [0.299, 0.587, 0.114, 1.0])
    assert list(quantize_gray(np.array([0.0, 0.5, 1.0]))) == [0, 128, 255]


def test_bilinear_checkerboard_table():
    # half-pixel centres, edges clamped; worked by hand:
    # value = 255 * ((1 - fy) fx + fy (1 - fx)) with fx, fy in {0, 1/4, 3/4, 1}
    board = np.array([[0, 255], [255, 0]], np.float64)
    expected = np.array(
        [
            [0, 64, 191, 255],
            [64, 96, 159, 191],
            [191, 159, 96, 64],
            [255, 191, 64, 0],
        ]
    )
    out = np.rint(resize_bilinear(board, 4, 4))
    np.testing.assert_array_equal(out, expected)


def test_resize_identity_and_constant():
    rng = np.random.default_rng(1)
    a = rng.uniform(size=(7, 5, 3))
    np.testing.assert_allclose(resize_bilinear(a, 7, 5), a)
    np.testing.assert_allclose(resize_bilinear(np.full((3, 9), 4.0), 11, 2), 4.0)


def test_crop_resize_contracts():
    rng = np.random.default_rng(2)
    img = rng.integers(0, 256, (50, 60, 3), dtype=np.uint8)
    same = crop_resize(img, BoundingBox(5, 6, 32, 32), 32)
    np.testing.assert_array_equal(same, img[6:38, 5:37])
    corner = crop_resize(img, BoundingBox(-10, -10, 40, 40), 32)
    assert corner.shape == (32, 32, 3) and corner.dtype == np.uint8
    with pytest.raises(InvalidComponentError):
        crop_resize(img, BoundingBox(70, 0, 10, 10), 32)
    with pytest.raises(InvalidComponentError):
        crop_resize(img, BoundingBox(3, 3, 0, 5), 32)


def test_draw_overlay_perimeter_only():
    img = np.zeros((20, 20, 3), np.uint8)
    out = draw_overlay(img, [BoundingBox(2, 3, 5, 4)], color=(255, 0, 0))
    red = out[..., 0] == 255
    ref = np.zeros((20, 20), bool)
    ref[3, 2:7] = ref[6, 2:7] = True
    ref[3:7, 2] = ref[3:7, 6] = True
    np.testing.assert_array_equal(red, ref)
    assert img.sum() == 0  # input untouched
    with_scores = draw_overlay(img, [BoundingBox(2, 12, 5, 4)], scores=[0.5])
    assert with_scores[:12].sum() > 0


def test_png_io(tmp_path):
    img = np.random.default_rng(3).integers(0, 256, (9, 7, 3), dtype=np.uint8)
    save_png(tmp_path / "a.png", img)
    np.testing.assert_array_equal(load_image(tmp_path / "a.png"), img)
    with pytest.raises(ValueError):
        load_image(tmp_path / "a.bmp")
