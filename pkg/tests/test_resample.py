from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import random_frame
from nwrap.filters import resample_matrix, resample_plane
from nwrap.frame_io import FrameYUV420
from nwrap.resample import (RATIOS, crop_frame, depth_to_space, get_ratio, pack_bottleneck, pad_frame,
                            padded_extents, resample_frame, space_to_depth)


@pytest.mark.parametrize("value,k", [("1/2", 2), (3, 3), (Fraction(1, 4), 4), ("1", 1), ("2-3", 3)])
def test_get_ratio(value, k):
    assert get_ratio(value).k == k


@pytest.mark.parametrize("value", ["3/4", 0, 5, Fraction(1, 3), True])
def test_bad_ratio(value):
    with pytest.raises(ValueError):
        get_ratio(value)


@pytest.mark.parametrize("r", RATIOS)
def test_padded_extents_give_even_bottleneck(r):
    h, w = padded_extents(101, 77, r)
    assert h % r.pad_multiple == 0 and w >= 77
    assert r.bottleneck_extent(h) % 2 == 0
    assert r.source_extent(r.bottleneck_extent(h)) == h


def test_bottleneck_extent_rejects_indivisible():
    with pytest.raises(ValueError, match="pad"):
        get_ratio("2/3").bottleneck_extent(10)


@pytest.mark.parametrize("kind", ["bilinear", "lanczos4"])
@pytest.mark.parametrize("n_in,n_out", [(12, 6), (12, 8), (12, 3), (6, 12), (7, 7)])
def test_matrix_rows_sum_to_one(kind, n_in, n_out):
    m = resample_matrix(n_in, n_out, kind)
    assert m.shape == (n_out, n_in)
    np.testing.assert_allclose(m.sum(axis=1), 1.0)


def test_unknown_filter():
    with pytest.raises(ValueError):
        resample_matrix(4, 2, "cubic")


def test_bilinear_2x_down_is_box_average():
    x = np.arange(16.0).reshape(4, 4)
    np.testing.assert_allclose(resample_plane(x, 2, 2, "bilinear", antialias=False),
                               0.25 * (x[0::2, 0::2] + x[0::2, 1::2] + x[1::2, 0::2] + x[1::2, 1::2]))


@pytest.mark.parametrize("r", RATIOS)
def test_constant_frame_survives_down_up(r):
    f = FrameYUV420.from_planes(np.full((24, 48), 77), np.full((12, 24), 200), np.full((12, 24), 3))
    down = resample_frame(f, r)
    up = resample_frame(down, r, direction="up")
    assert up.equals(f)


def test_odd_bottleneck_rejected():
    f = FrameYUV420.from_planes(np.zeros((6, 6)), np.zeros((3, 3)), np.zeros((3, 3)))
    with pytest.raises(ValueError, match="pad"):
        resample_frame(f, "1/2")


def test_resample_to_10bit(rng):
    f = random_frame(rng, 12, 12)
    out = resample_frame(f, "1/2", out_bit_depth=10)
    assert out.bit_depth == 10 and out.height == 6


def test_pad_crop_roundtrip(rng):
    f = random_frame(rng, 10, 14)
    p = pad_frame(f, 12, 16)
    assert (p.y[10:, :] == p.y[9:10, :]).all()
    assert crop_frame(p, 10, 14).equals(f)
    with pytest.raises(ValueError):
        pad_frame(f, 11, 14)


@settings(max_examples=30, deadline=None)
@given(h=st.integers(1, 6), w=st.integers(1, 6), seed=st.integers(0, 99))
def test_space_depth_plane_roundtrip(h, w, seed):
    p = np.random.default_rng(seed).integers(0, 1024, (2 * h, 2 * w))
    s = space_to_depth(p)
    np.testing.assert_array_equal(s[0], p[0::2, 0::2])
    np.testing.assert_array_equal(s[3], p[1::2, 1::2])
    np.testing.assert_array_equal(depth_to_space(s), p)


def test_pack_bottleneck_shape(rng):
    b = random_frame(rng, 8, 12, 10)
    packed = pack_bottleneck(b, "1/2")
    assert packed.shape == (6, 8, 12)
    with pytest.raises(ValueError):
        pack_bottleneck(b, "1/2", height=10)
