import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import random_frame
from nwrap.frame_io import (PSNR_CAP, FrameYUV420, Sequence, denormalize, denormalize_plane, normalize,
                            normalize_plane, psnr_from_mse, psnr_sequence, psnr_yuv, read_ppm, read_yuv420,
                            requantize, rgb_to_yuv420, write_ppm, write_yuv420)


@pytest.mark.parametrize("depth", [8, 10])
def test_yuv_roundtrip(tmp_path, rng, depth):
    seq = Sequence([random_frame(rng, 16, 24, depth) for _ in range(3)])
    path = tmp_path / "clip.yuv"
    write_yuv420(seq, path)
    assert path.stat().st_size == 3 * 16 * 24 * 3 // 2 * (2 if depth > 8 else 1)
    back = read_yuv420(path, 16, 24, depth)
    assert len(back) == 3
    assert all(a.equals(b) for a, b in zip(seq, back))


def test_yuv_max_frames(tmp_path, rng):
    write_yuv420([random_frame(rng, 8, 8) for _ in range(4)], tmp_path / "a.yuv")
    assert len(read_yuv420(tmp_path / "a.yuv", 8, 8, max_frames=2)) == 2


def test_truncated_yuv_reports_offset(tmp_path, rng):
    path = tmp_path / "t.yuv"
    write_yuv420([random_frame(rng, 8, 8)] * 2, path)
    with open(path, "ab") as fh:
        fh.write(b"\0" * 10)
    with pytest.raises(ValueError, match="byte offset 192"):
        read_yuv420(path, 8, 8)


def test_out_of_range_10bit_sample(tmp_path):
    raw = np.zeros(8 * 8 * 3 // 2, dtype="<u2")
    raw[5] = 1024
    path = tmp_path / "bad.yuv"
    raw.tofile(path)
    with pytest.raises(ValueError, match="byte offset 10"):
        read_yuv420(path, 8, 8, 10)


def test_frame_validation():
    with pytest.raises(ValueError):
        FrameYUV420(np.zeros((3, 4), np.uint16), np.zeros((1, 2), np.uint16), np.zeros((1, 2), np.uint16))
    with pytest.raises(ValueError):
        FrameYUV420(np.zeros((4, 4), np.uint16), np.zeros((2, 2), np.uint16), np.zeros((1, 2), np.uint16))
    with pytest.raises(ValueError):
        FrameYUV420(np.full((2, 2), 256, np.uint16), np.zeros((1, 1), np.uint16), np.zeros((1, 1), np.uint16))
    with pytest.raises(ValueError):
        FrameYUV420(np.zeros((2, 2), np.uint16), np.zeros((1, 1), np.uint16), np.zeros((1, 1), np.uint16), 12)


def test_sequence_validation(rng):
    with pytest.raises(ValueError):
        Sequence([])
    with pytest.raises(ValueError):
        Sequence([random_frame(rng, 8, 8), random_frame(rng, 8, 10)])


def test_empty_write_refused(tmp_path):
    with pytest.raises(ValueError):
        write_yuv420([], tmp_path / "x.yuv")


def test_ppm_roundtrip(tmp_path, rng):
    img = rng.integers(0, 256, (5, 7, 3)).astype(np.uint8)
    write_ppm(img, tmp_path / "a.ppm")
    np.testing.assert_array_equal(read_ppm(tmp_path / "a.ppm"), img)


def test_ppm_header_with_comment(tmp_path):
    (tmp_path / "c.ppm").write_bytes(b"P6\n# hi\n2 1\n255\n" + bytes(range(6)))
    assert read_ppm(tmp_path / "c.ppm").shape == (1, 2, 3)


@pytest.mark.parametrize("data", [b"P5\n1 1\n255\n\0", b"P6\n1 1\n65535\n\0\0\0", b"P6\n2 2\n255\n\0"])
def test_bad_ppm(tmp_path, data):
    (tmp_path / "b.ppm").write_bytes(data)
    with pytest.raises(ValueError):
        read_ppm(tmp_path / "b.ppm")


def test_rgb_to_yuv_gray_and_range():
    gray = np.full((4, 4, 3), 255, np.uint8)
    f = rgb_to_yuv420(gray)
    assert (f.y == 235).all() and (f.u == 128).all() and (f.v == 128).all()
    black = rgb_to_yuv420(np.zeros((3, 5, 3), np.uint8))
    assert (black.height, black.width) == (2, 4) and (black.y == 16).all()


def test_psnr_identical_is_capped(rng):
    f = random_frame(rng, 8, 8)
    assert psnr_yuv(f, f)["weighted"] == PSNR_CAP


def test_psnr_known_value():
    a = FrameYUV420.from_planes(np.zeros((4, 4)), np.zeros((2, 2)), np.zeros((2, 2)))
    b = FrameYUV420.from_planes(np.full((4, 4), 10), np.zeros((2, 2)), np.full((2, 2), 10))
    r = psnr_yuv(a, b)
    expect = 10 * np.log10(255 ** 2 / 100)
    assert r["psnr_y"] == pytest.approx(expect)
    assert r["psnr_u"] == PSNR_CAP
    assert r["weighted"] == pytest.approx((6 * expect + PSNR_CAP + expect) / 8)
    assert psnr_yuv(a, b, "mse")["weighted"] == pytest.approx(psnr_from_mse(700 / 8, 8))
    with pytest.raises(ValueError):
        psnr_yuv(a, b, "bogus")


def test_psnr_sequence_pools_mse(rng):
    a = Sequence([random_frame(rng, 8, 8), random_frame(rng, 8, 8)])
    b = Sequence([random_frame(rng, 8, 8), random_frame(rng, 8, 8)])
    r = psnr_sequence(a, b)
    assert r["psnr_y"] < 20
    with pytest.raises(ValueError):
        psnr_sequence(a, Sequence(a.frames[:1]))


def test_normalize_denormalize_all_8bit_values():
    v = np.arange(256, dtype=np.uint16)
    np.testing.assert_array_equal(denormalize_plane(normalize_plane(v, 8), 8), v)
    assert normalize_plane(v, 8).min() == -1.0 and normalize_plane(v, 8).max() == 1.0


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 1000), depth=st.sampled_from([8, 10]))
def test_frame_normalize_roundtrip(seed, depth):
    f = random_frame(np.random.default_rng(seed), 6, 8, depth)
    assert denormalize(normalize(f), depth).equals(f)


def test_denormalize_clips():
    np.testing.assert_array_equal(denormalize_plane(np.array([-3.0, 3.0]), 8), [0, 255])


def test_requantize_8_10_8(rng):
    f = random_frame(rng, 8, 8)
    f10 = requantize(f, 10)
    assert f10.bit_depth == 10
    assert requantize(f10, 8).equals(f)
