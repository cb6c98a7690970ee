import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

import oracles
from vismine import imaging
from vismine.errors import InvalidInputError
from vismine.imaging import BitMask, Contour, Raster


def masks(min_side=1, max_side=12):
    return st.integers(min_side, max_side).flatmap(
        lambda h: st.integers(min_side, max_side).flatmap(
            lambda w: arrays(np.bool_, (h, w))))


# --- rasters ---------------------------------------------------------------

def test_raster_rejects_out_of_range_values():
    with pytest.raises(InvalidInputError):
        Raster(np.array([[1.5]]))
    with pytest.raises(InvalidInputError):
        Raster(np.zeros((2, 2, 4)))


def test_raster_is_read_only():
    r = Raster(np.zeros((2, 3)))
    assert (r.width, r.height, r.channels) == (3, 2, 1)
    with pytest.raises(ValueError):
        r.data[0, 0] = 1.0


# --- grayscale ---------------------------------------------------------------

def test_grayscale_white_black_red():
    white = imaging.to_grayscale(Raster(np.ones((3, 4, 3))))
    black = imaging.to_grayscale(Raster(np.zeros((3, 4, 3))))
    assert np.allclose(white.data, 1.0) and white.data.shape == (3, 4)
    assert np.all(black.data == 0.0)
    red = imaging.to_grayscale(Raster(np.array([[[1.0, 0.0, 0.0]]])))
    assert red.data[0, 0] == pytest.approx(0.299, abs=1e-12)


def test_grayscale_needs_three_channels():
    with pytest.raises(InvalidInputError):
        imaging.to_grayscale(Raster(np.zeros((2, 2))))


# --- blur ----------------------------------------------------------------------

def test_blur_of_constant_is_constant():
    for sigma in (0.5, 1.4, 3.0):
        out = imaging.gaussian_blur(Raster(np.full((9, 11), 0.5)), sigma)
        assert np.allclose(out.data, 0.5, atol=1e-12)


def test_blur_keeps_single_peak_at_center():
    a = np.zeros((9, 9))
    a[4, 4] = 1.0
    out = imaging.gaussian_blur(Raster(a), 1.0).data
    assert np.unravel_index(np.argmax(out), out.shape) == (4, 4)


def test_blur_matches_direct_2d_convolution():
    rng = np.random.default_rng(5)
    img = rng.random((9, 9))
    ours = imaging.gaussian_blur(Raster(img), 1.4).data
    ref = np.array(oracles.convolve2d(img.tolist(), oracles.gaussian_kernel2d(1.4)))
    assert np.max(np.abs(ours - ref)) < 1e-9


def test_blur_kernel_radius():
    assert len(imaging.gaussian_kernel(1.4)) == 2 * math.ceil(3 * 1.4) + 1


@pytest.mark.parametrize("sigma", [0.0, -1.0, 10.5])
def test_blur_rejects_bad_sigma(sigma):
    with pytest.raises(InvalidInputError):
        imaging.gaussian_blur(Raster(np.zeros((4, 4))), sigma)


# --- canny ------------------------------------------------------------------

def test_canny_uniform_is_empty():
    assert imaging.canny(Raster(np.full((16, 16), 0.3)), 0.1, 0.25).count() == 0


@pytest.mark.parametrize("c", [3, 8, 12])
def test_canny_vertical_step_columns(c):
    a = np.zeros((16, 16))
    a[:, c:] = 1.0
    edges = imaging.canny(imaging.gaussian_blur(Raster(a), 1.4), 0.1, 0.25).bits
    cols = set(np.nonzero(edges)[1].tolist())
    assert cols and cols <= {c - 1, c}


def test_canny_rejects_bad_thresholds():
    with pytest.raises(InvalidInputError):
        imaging.canny(Raster(np.zeros((4, 4))), 0.3, 0.3)


def test_canny_high_thresholds_never_mark_weak_pixels():
    rng = np.random.default_rng(2)
    blurred = imaging.gaussian_blur(Raster(rng.random((20, 20))), 1.4)
    edges = imaging.canny(blurred, 0.99, 1.0).bits
    mag = imaging.gradient_magnitude(blurred)
    assert np.all(mag[edges] >= 0.99)
    assert edges.sum() <= 2


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(6, 14), st.integers(6, 14)),
              elements=st.floats(0, 1)),
       st.floats(0.0, 0.5), st.floats(0.05, 0.5))
def test_canny_subset_of_low_threshold(img, low, span):
    high = min(1.0, low + span)
    edges = imaging.canny(Raster(img), low, high).bits
    mag = imaging.gradient_magnitude(Raster(img))
    assert np.all(mag[edges] >= low)


def test_canny_matches_reference_on_step_images():
    rng = np.random.default_rng(11)
    for _ in range(20):
        h, w = rng.integers(8, 17, size=2)
        a = np.zeros((h, w))
        if rng.random() < 0.5:
            a[:, rng.integers(2, w - 2):] = 1.0
        else:
            a[rng.integers(2, h - 2):, :] = 1.0
        if rng.random() < 0.5:
            a = 1.0 - a
        blurred = imaging.gaussian_blur(Raster(a), 1.4)
        ours = imaging.canny(blurred, 0.1, 0.25).bits
        ref = np.array(oracles.canny_reference(blurred.data.tolist(), 0.1, 0.25))
        assert np.array_equal(ours, ref)


# --- dilation ---------------------------------------------------------------

def test_dilate_single_pixel():
    m = np.zeros((9, 9), dtype=bool)
    m[4, 4] = True
    out = imaging.dilate(BitMask(m), 1).bits
    expected = np.zeros_like(m)
    expected[3:6, 3:6] = True
    assert np.array_equal(out, expected)


def test_dilate_empty():
    assert imaging.dilate(BitMask(np.zeros((5, 5), dtype=bool)), 2).count() == 0


@pytest.mark.parametrize("r", [0, 11, 1.5])
def test_dilate_rejects_bad_radius(r):
    with pytest.raises(InvalidInputError):
        imaging.dilate(BitMask(np.zeros((5, 5), dtype=bool)), r)


@settings(max_examples=60, deadline=None)
@given(masks(1, 10), st.integers(1, 3))
def test_dilate_equals_bruteforce(m, r):
    ours = imaging.dilate(BitMask(m), r).bits
    assert np.array_equal(ours, np.array(oracles.dilate(m.tolist(), r), dtype=bool).reshape(m.shape))


@settings(max_examples=40, deadline=None)
@given(masks(2, 10), st.integers(1, 2))
def test_dilate_extensive_and_monotone(m, r):
    out = imaging.dilate(BitMask(m), r).bits
    assert np.all(out[m])
    sub = m.copy()
    sub[::2] = False
    assert np.all(out[imaging.dilate(BitMask(sub), r).bits])


# --- contours ---------------------------------------------------------------

def test_trace_filled_square():
    m = np.zeros((8, 8), dtype=bool)
    m[2:6, 3:7] = True
    cs = imaging.trace_contours(BitMask(m))
    assert len(cs) == 1 and cs[0].kind == "outer" and cs[0].bbox == (3, 2, 4, 4)


def test_trace_ring_has_hole():
    m = np.zeros((6, 6), dtype=bool)
    m[:, :] = True
    m[2:4, 2:4] = False
    cs = imaging.trace_contours(BitMask(m))
    assert [c.kind for c in cs] == ["outer", "hole"]


def test_trace_empty():
    assert imaging.trace_contours(BitMask(np.zeros((4, 4), dtype=bool))) == []


def _check_contour(c: Contour, shape):
    pts = c.points
    assert len(pts) >= 1
    for (x0, y0), (x1, y1) in zip(pts, pts[1:] + pts[:1]):
        assert max(abs(x1 - x0), abs(y1 - y0)) <= 1
    for x, y in pts:
        assert 0 <= x < shape[1] and 0 <= y < shape[0]


@settings(max_examples=80, deadline=None)
@given(masks(1, 12))
def test_outer_count_matches_flood_fill(m):
    cs = imaging.trace_contours(BitMask(m))
    outers = [c for c in cs if c.kind == "outer"]
    assert len(outers) == len(oracles.components(m.tolist()))
    assert len(cs) - len(outers) == oracles.hole_count(m.tolist())
    for c in cs:
        _check_contour(c, m.shape)


@settings(max_examples=60, deadline=None)
@given(masks(1, 12))
def test_fill_reconstructs_hole_free_components(m):
    from scipy import ndimage
    m = ndimage.binary_fill_holes(m)
    rebuilt = np.zeros_like(m)
    for c in imaging.trace_contours(BitMask(m)):
        assert c.kind == "outer"
        filled, x0, y0 = imaging.fill_contour(c)
        rebuilt[y0:y0 + filled.shape[0], x0:x0 + filled.shape[1]] |= filled
    assert np.array_equal(rebuilt, m)


def test_trace_is_deterministic_and_ordered():
    rng = np.random.default_rng(4)
    m = rng.random((12, 12)) < 0.4
    a = imaging.trace_contours(BitMask(m))
    b = imaging.trace_contours(BitMask(m.copy()))
    assert [(c.kind, c.points) for c in a] == [(c.kind, c.points) for c in b]
    firsts = [(c.bbox[1], c.bbox[0]) for c in a if c.kind == "outer"]
    assert firsts == sorted(firsts)


# --- metrics and shapes -----------------------------------------------------

def _outer_of(m):
    return [c for c in imaging.trace_contours(BitMask(m)) if c.kind == "outer"][0]


def test_rectangle_metrics():
    m = np.zeros((10, 16), dtype=bool)
    m[3:7, 2:12] = True
    met = imaging.contour_metrics(_outer_of(m))
    assert met.area == 40 and met.bbox == (2, 3, 10, 4)
    assert met.rect_fill == 1.0
    assert met.principal_angle == pytest.approx(0.0, abs=1e-9)
    assert imaging.classify_shape(met) == ("rectangle", "horizontal")


def test_disc_circularity():
    yy, xx = np.mgrid[:45, :45]
    m = (xx - 22) ** 2 + (yy - 22) ** 2 <= 20 ** 2
    met = imaging.contour_metrics(_outer_of(m))
    assert met.area == int(m.sum())
    assert met.circularity >= 0.8
    assert imaging.classify_shape(met) == ("circle", "horizontal")


def test_l_octomino_fill():
    m = np.zeros((7, 6), dtype=bool)
    m[1:6, 1] = True
    m[5, 1:5] = True
    # 8 pixels in a 4x5 box
    assert m.sum() == 8
    met = imaging.contour_metrics(_outer_of(m))
    assert met.area == 8 and met.rect_fill == pytest.approx(8 / 20)
    assert met.rect_fill < 0.85


def test_tilted_l_is_irregular():
    m = np.zeros((40, 40), dtype=bool)
    for i in range(25):
        m[5 + i, 5 + i:8 + i] = True      # 45 degree bar
    for i in range(10):
        m[5 + i:8 + i, 29 - i] = True     # short arm
    met = imaging.contour_metrics(_outer_of(m))
    assert imaging.classify_shape(met) == ("irregular", "irregular")


def test_single_point_contour():
    met = imaging.contour_metrics(Contour([(3, 4)], "outer"))
    assert met.area == 1 and met.perimeter == 1 and met.circularity <= 1.1


def test_classify_disc_metrics():
    met = imaging.ContourMetrics(100.0, 35.0, (0, 0, 12, 12), 0.92, 0.7, 37.0)
    assert imaging.classify_shape(met) == ("circle", "horizontal")


def test_vertical_bar_orientation():
    m = np.zeros((20, 10), dtype=bool)
    m[2:18, 4:7] = True
    assert imaging.classify_shape(imaging.contour_metrics(_outer_of(m))) == ("rectangle", "vertical")


@settings(max_examples=60, deadline=None)
@given(masks(2, 12))
def test_metric_invariants(m):
    from scipy import ndimage
    for c in imaging.trace_contours(BitMask(m)):
        met = imaging.contour_metrics(c)
        x, y, w, h = met.bbox
        assert met.area <= w * h
        assert met.perimeter > 0
        assert 0 < met.rect_fill <= 1
        assert 0 <= met.circularity <= 1.1
        assert 0 <= met.principal_angle < 180
        if c.kind == "outer":
            filled = ndimage.binary_fill_holes(m)
            comp = [p for p in oracles.components(filled.tolist()) if (c.points[0]) in p][0]
            assert met.area == len(comp)
