import struct

import numpy as np
import pytest

from conftest import natural_frame, random_frame
from nwrap.models import (LayerSpec, WrapperModel, MissingModelError, ModelBank, build_postprocessor, build_preprocessor, count_macs,
                          identity_bank, linear_downsample, linear_shortcut, load_weights, model_filename,
                          run_postprocess, run_preprocess, save_weights)
from fractions import Fraction

from nwrap.resample import RATIOS, get_ratio, padded_extents, resample_frame, pad_frame

INF64 = np.float64


@pytest.mark.parametrize("ratio", [1, 2, 3, 4])
def test_post_budget(ratio):
    macs, params = count_macs(build_postprocessor(ratio))
    assert macs <= 600
    assert 7000 <= params <= 10000


def test_post_topology_shared_across_ratios():
    hashes = {build_postprocessor(k, flag).topology_hash() for k in range(1, 5) for flag in ("pair", "post-only")}
    assert len(hashes) == 1


def test_pre_topologies_differ():
    assert len({build_preprocessor(k).topology_hash() for k in range(1, 5)}) == 4


@pytest.mark.parametrize("k", [1, 2, 3, 4])
def test_pre_budget_reported(k):
    macs, params = count_macs(build_preprocessor(k))
    assert 0 < macs < 5000 and params > 0


def test_count_macs_independent_of_resolution():
    m = build_postprocessor(2)
    assert count_macs(m, 256, 384)[0] == pytest.approx(count_macs(m)[0])


@pytest.mark.parametrize("r", RATIOS)
def test_untrained_post_equals_bilinear_upsampling(r):
    src = natural_frame(96, 96)
    h, w = padded_extents(96, 96, r)
    bott = resample_frame(pad_frame(src, h, w), r, out_bit_depth=10)
    model = build_postprocessor(r, seed=7)
    for dtype in (np.float32, INF64):
        out = run_postprocess(model, bott, r, 96, 96, 8, dtype)
        assert out.equals(linear_shortcut(bott, r, 96, 96, 8, dtype))
    up = resample_frame(bott, r, direction="up", out_bit_depth=8)
    assert run_postprocess(model, bott, r, h, w, 8, INF64).equals(up)


@pytest.mark.parametrize("r", RATIOS)
def test_untrained_pre_equals_bilinear_downsampling(r):
    src = natural_frame(96, 96)
    out = run_preprocess(build_preprocessor(r, seed=3), src, INF64)
    assert out.equals(linear_downsample(src, r))


def test_postprocess_checks_target_size(rng):
    bott = random_frame(rng, 8, 8, 10)
    with pytest.raises(ValueError, match="inconsistent"):
        run_postprocess(build_postprocessor(2), bott, 2, 8, 8)


def test_wrong_kind_rejected(rng):
    with pytest.raises(ValueError):
        run_postprocess(build_preprocessor(2), random_frame(rng, 8, 8, 10), 2, 16, 16)


def test_weights_roundtrip(tmp_path):
    m = build_postprocessor(3, "pair", seed=4)
    path = tmp_path / "m.nwrp"
    save_weights(m, path)
    back = load_weights(path, "post")
    assert back.topology_hash() == m.topology_hash() and back.flag == "pair" and back.ratio == m.ratio
    for k, v in m.params.items():
        np.testing.assert_array_equal(back.params[k], v.astype(np.float32))


def _saved(tmp_path, m=None):
    path = tmp_path / "w.nwrp"
    save_weights(m or build_preprocessor(2), path)
    return path, bytearray(path.read_bytes())


def test_bad_magic(tmp_path):
    path, data = _saved(tmp_path)
    data[:4] = b"XXXX"
    path.write_bytes(bytes(data))
    with pytest.raises(ValueError, match="magic"):
        load_weights(path)


def test_bad_version(tmp_path):
    path, data = _saved(tmp_path)
    data[4:8] = struct.pack("<I", 99)
    path.write_bytes(bytes(data))
    with pytest.raises(ValueError, match="version"):
        load_weights(path)


def test_truncated_file(tmp_path):
    path, data = _saved(tmp_path)
    path.write_bytes(bytes(data[:-100]))
    with pytest.raises(ValueError):
        load_weights(path)


def test_kind_mismatch(tmp_path):
    path, _ = _saved(tmp_path)
    with pytest.raises(ValueError, match="expected post"):
        load_weights(path, "post")


def test_shape_mismatch(tmp_path):
    m = build_postprocessor(2)
    m.params["in_dw.w"] = np.zeros((1, 2, 2))
    path, _ = _saved(tmp_path, m)
    with pytest.raises(ValueError, match="shape"):
        load_weights(path)


def test_missing_tensor(tmp_path):
    m = build_postprocessor(2)
    del m.params["out_pw.b"]
    path, _ = _saved(tmp_path, m)
    with pytest.raises(ValueError, match="missing"):
        load_weights(path)


def test_bank(tmp_path):
    bank = identity_bank()
    assert len(bank) == 12 and not bank.missing()
    bank.save(tmp_path)
    assert (tmp_path / model_filename("post", "1/2", "post-only")).exists()
    again = ModelBank.from_dir(tmp_path)
    assert ("pre", "2/3", "pair") in again
    partial = ModelBank([build_postprocessor(2, "post-only")])
    with pytest.raises(MissingModelError, match="ratio 1/2"):
        partial.get("pre", 2, "pair")
    assert ("post", 2, "post-only") not in partial.missing()


def test_missing_model_dir(tmp_path):
    with pytest.raises(FileNotFoundError):
        ModelBank.from_dir(tmp_path / "nope")


def test_filenames():
    assert model_filename("post", 4, "post-only") == "post_postonly_r1-4.nwrp"
    assert model_filename("pre", "2/3", "pair") == "pre_pair_r2-3.nwrp"


def _single(spec):
    return WrapperModel("post", get_ratio(1), [spec])


def test_count_macs_closed_forms():
    assert count_macs(_single(LayerSpec("a", "pw", 4, 8)), 64, 64) == (32.0, 40)
    c = 6
    macs, _ = count_macs(_single(LayerSpec("b", "dw", c, c, 3, 1, Fraction(1, 2))), 64, 64)
    assert macs == 9 * c / 4
