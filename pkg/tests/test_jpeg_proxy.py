import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from conftest import natural_frame
from nwrap.jpeg import (STD_AC, STD_DC, HuffmanTable, baseline_gray_bits, baseline_gray_decode,
                        baseline_gray_encode, dct_matrix, msb8, optimal_table, quality_table,
                        quantized_reconstruction, zigzag_order)
from nwrap.proxy import (BLOCK_SIZES, ProxyConfig, block_dct2d, block_idct2d, draw_block_size, proxy_apply,
                         q_to_qf, qf_to_q, rate_loss_record, real_coder_bits)
from nwrap.tensor import Graph, Tensor, backward, texp


@pytest.mark.parametrize("L", BLOCK_SIZES)
def test_dct_orthonormal_and_parseval(L):
    d = dct_matrix(L)
    np.testing.assert_allclose(d @ d.T, np.eye(L), atol=1e-12)
    x = Tensor(np.random.default_rng(L).uniform(-512, 512, size=(2, 3 * L, 2 * L)))
    y = block_dct2d(x, L)
    assert np.abs(block_idct2d(y, L).data - x.data).max() < 1e-9
    assert abs(np.sum(y.data ** 2) - np.sum(x.data ** 2)) / np.sum(x.data ** 2) < 1e-9


def test_dct_requires_divisible_extent():
    with pytest.raises(ValueError, match="pad first"):
        block_dct2d(Tensor(np.zeros((6, 8))), 4)


def test_dct_of_constant_block_is_dc_only():
    y = block_dct2d(Tensor(np.full((8, 8), 3.0)), 8).data
    assert y[0, 0] == pytest.approx(24.0)
    y[0, 0] = 0
    assert np.abs(y).max() < 1e-12


def test_zigzag_is_permutation():
    z = zigzag_order(8)
    assert sorted(z.tolist()) == list(range(64))
    assert z[:4].tolist() == [0, 1, 8, 16]


@pytest.mark.parametrize("q,qf", [(0.5, 100), (16.5, 50), (32.5, 1), (1e-6, 100), (1e6, 1)])
def test_q_to_qf_spot_values(q, qf):
    assert q_to_qf(q) == qf


def test_q_to_qf_depth_scaling():
    assert q_to_qf(4 * 16.5, 10) == 50
    assert qf_to_q(75, 10) == pytest.approx(4 * qf_to_q(75, 8))
    with pytest.raises(ValueError):
        q_to_qf(0.0)


@settings(max_examples=50, deadline=None)
@given(qf=st.integers(1, 100))
def test_qf_roundtrip(qf):
    assert q_to_qf(qf_to_q(qf)) == qf


def test_quality_table():
    assert (quality_table(50) == np.asarray(quality_table(50))).all()
    assert quality_table(100).max() == 1
    assert (quality_table(10) >= quality_table(90)).all()
    for bad in (0, 101):
        with pytest.raises(ValueError):
            quality_table(bad)


def test_standard_huffman_tables_are_prefix_free():
    for t in (STD_DC, STD_AC):
        codes, sizes = t.encoder()
        used = [(int(c), int(s)) for c, s in zip(codes, sizes) if s]
        strs = [format(c, f"0{s}b") for c, s in used]
        for a in strs:
            assert not any(b != a and b.startswith(a) for b in strs)


def test_invalid_huffman_table():
    with pytest.raises(ValueError):
        HuffmanTable((3,) + (0,) * 15, (0, 1, 2), 32)


def test_optimal_table_limits_length():
    freq = np.zeros(256, dtype=np.int64)
    freq[:40] = 2 ** np.arange(40)
    t = optimal_table(freq, 256)
    assert max(t.encoder()[1]) <= 16


@pytest.mark.parametrize("qf", [95, 75, 50, 20, 5])
def test_baseline_roundtrip_matches_reconstruction(qf):
    y = natural_frame(64, 80).y
    stream, nbits = baseline_gray_encode(y, qf)
    assert nbits == baseline_gray_bits(y, qf)
    np.testing.assert_array_equal(baseline_gray_decode(stream), quantized_reconstruction(y, qf))


def test_baseline_odd_size():
    p = np.random.default_rng(0).integers(0, 256, (13, 21))
    stream, _ = baseline_gray_encode(p, 60)
    assert baseline_gray_decode(stream).shape == (13, 21)


def test_bits_monotone_in_qf():
    y = natural_frame(96, 96).y
    bits = [baseline_gray_bits(y, qf) for qf in (95, 80, 60, 40, 20, 5)]
    assert all(a > b for a, b in zip(bits, bits[1:]))


def test_msb8():
    np.testing.assert_array_equal(msb8(np.array([0, 3, 4, 1023]), 10), [0, 0, 1, 255])
    np.testing.assert_array_equal(msb8(np.array([7, 200]), 8), [7, 200])


def _planes(seed, h=24, w=40):
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:h, 0:w]
    base = 512 + 300 * np.sin(xx / 7.0 + seed) * np.cos(yy / 5.0)
    return [base + rng.normal(0, 20, (h, w)), (base[::2, ::2] * 0.5 + 256)]


def test_proxy_reconstruction_close_at_small_q():
    x = [Tensor(p[None, None]) for p in _planes(0)]
    xh, _, _ = proxy_apply(x, ProxyConfig(Tensor(np.array(np.log(1e-4))), 8, 10))
    for a, b in zip(xh, x):
        assert np.abs(a.data - np.clip(b.data, 0, 1023)).max() < 1e-3


def test_proxy_error_bounded_by_step():
    x = Tensor(_planes(1)[0][None, None])
    q = 40.0
    for L in BLOCK_SIZES:
        xh, y, yh = proxy_apply(x, ProxyConfig(Tensor(np.array(np.log(q))), L, 10))
        assert np.abs(yh.data - y.data).max() <= q / 2 + 1e-9
        assert xh.shape == x.shape


def test_rate_loss_calibration_value():
    rng = np.random.default_rng(0)
    for i in range(100):
        L = draw_block_size(rng)
        x = [Tensor(p[None, None]) for p in _planes(i)]
        cfg = ProxyConfig(Tensor(np.array(rng.uniform(1, 5))), L, 10)
        _, Y, _ = proxy_apply(x, cfg)
        R = rng.uniform(100, 1e5)
        rec = rate_loss_record(Y, cfg.q, R)
        assert abs(rec.L_R.item() - R) / R < 1e-9


def _rate_grad(R, y0, lq):
    with Graph() as g:
        y = g.parameter("y", y0.copy())
        q = texp(g.parameter("log_q", lq.copy()))
        rec = rate_loss_record(y, q, R)
    backward(g, rec.L_R)
    return np.concatenate([g.params["y"].grad.ravel(), g.params["log_q"].grad.ravel()]), rec


def test_rate_gradient_direction_independent_of_R():
    rng = np.random.default_rng(1)
    y0, lq = rng.normal(0, 30, (3, 16, 16)), np.array(np.log(8.0))
    g1, r1 = _rate_grad(1000.0, y0, lq)
    g2, r2 = _rate_grad(3700.0, y0, lq)
    cos = g1 @ g2 / np.linalg.norm(g1) / np.linalg.norm(g2)
    assert abs(cos - 1.0) < 1e-9
    assert r2.L_R.item() / r1.L_R.item() == pytest.approx(3.7)
    assert r1.S == r2.S


def test_rate_gradient_wrt_q_negative():
    y0 = np.random.default_rng(2).normal(0, 30, (8, 8))
    g, _ = _rate_grad(500.0, y0, np.array(np.log(8.0)))
    assert g[-1] < 0


def test_negative_rate_rejected():
    with pytest.raises(ValueError):
        rate_loss_record(Tensor(np.ones((4, 4))), Tensor(np.array(1.0)), -1.0)


def test_real_coder_bits_fall_with_q():
    planes = _planes(3, 64, 64)
    bits = [real_coder_bits(planes, q, 10) for q in (4, 16, 40, 80, 128)]
    assert all(a > b for a, b in zip(bits, bits[1:]))


def test_block_size_draws_uniform():
    rng = np.random.default_rng(0)
    draws = [draw_block_size(rng) for _ in range(4000)]
    counts = [draws.count(L) for L in BLOCK_SIZES]
    assert stats.chisquare(counts).pvalue > 0.001


def test_proxy_config_validation():
    with pytest.raises(ValueError):
        ProxyConfig(Tensor(np.array(0.0)), 6, 10)
    with pytest.raises(ValueError):
        ProxyConfig(Tensor(np.array(0.0)), 8, 12)
    cfg = ProxyConfig.initial(10, 75)
    assert cfg.qf == 75 and cfg.with_block(16).L == 16


def test_proxy_rounds_coefficients():
    # a 4x4 constant block of 0.4 has DC 1.6 after level shift removal
    x = Tensor(np.full((1, 1, 4, 4), 512.0 + 0.4))
    _, y, yh = proxy_apply(x, ProxyConfig(Tensor(np.array(0.0)), 4, 10))
    assert y.data[0, 0, 0, 0] == pytest.approx(1.6)
    assert yh.data[0, 0, 0, 0] == pytest.approx(2.0)


def test_zero_coefficients_give_zero_rate_loss():
    rec = rate_loss_record(Tensor(np.zeros((8, 8))), Tensor(np.array(2.0)), 123.0)
    assert rec.L_R.item() == 0.0 and rec.S == 0.0


def test_rate_gradient_wrt_q_matches_finite_difference():
    y0 = np.random.default_rng(3).normal(0, 30, (8, 8))
    lq = np.array(np.log(8.0))
    g, _ = _rate_grad(500.0, y0, lq)
    from nwrap.proxy import log_magnitude_sum
    a = 500.0 / log_magnitude_sum(Tensor(y0), Tensor(np.exp(lq))).item()
    f = lambda v: a * log_magnitude_sum(Tensor(y0), Tensor(np.exp(v))).item()
    fd = (f(lq + 1e-6) - f(lq - 1e-6)) / 2e-6
    assert g[-1] == pytest.approx(fd, rel=1e-6)
