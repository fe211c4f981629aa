import shlex
import sys

import numpy as np
import pytest

from conftest import natural_frame, random_frame
from nwrap.codec import (CodecSpec, code_sequence, internal_intra_decode, internal_intra_encode,
                         qp_to_step, quantized_intra)
from nwrap.corpus import smooth_clip
from nwrap.frame_io import FrameYUV420, Sequence, psnr_sequence

PY = shlex.quote(sys.executable)
COPY = f"{PY} -c 'import shutil, sys; shutil.copy(sys.argv[1], sys.argv[2])'"
ENC = COPY + " {input} {output} {qp} {width} {height}"
DEC = COPY + " {input} {output}"


def test_qp_to_step():
    assert qp_to_step(4, 8) == 1.0
    assert qp_to_step(10, 8) == 2.0
    assert qp_to_step(4, 10) == 4.0


@pytest.mark.parametrize("depth", [8, 10])
def test_intra_roundtrip_matches_quantizer(depth):
    f = natural_frame(48, 64, depth)
    step = qp_to_step(30, depth)
    assert internal_intra_decode(internal_intra_encode(f, step)).equals(quantized_intra(f, step))


def test_intra_near_lossless_at_low_qp():
    f = natural_frame(32, 32)
    out = internal_intra_decode(internal_intra_encode(f, qp_to_step(0, 8)))
    assert psnr_sequence(Sequence([f]), Sequence([out]))["weighted"] > 60


def test_bits_fall_with_qp():
    seq = Sequence([natural_frame(64, 64)])
    spec = CodecSpec()
    sizes = [len(spec.encode(seq, qp)) for qp in (17, 22, 27, 32, 37, 42)]
    assert all(a > b for a, b in zip(sizes, sizes[1:]))


def test_constant_frame_is_cheap():
    f = FrameYUV420.from_planes(np.full((128, 128), 90), np.full((64, 64), 100), np.full((64, 64), 110))
    payload = CodecSpec().encode(Sequence([f]), 32)
    assert 8 * len(payload) / (128 * 128) < 0.1


def test_odd_block_extent(rng):
    f = random_frame(rng, 18, 26)
    step = qp_to_step(27, 8)
    assert internal_intra_decode(internal_intra_encode(f, step)).equals(quantized_intra(f, step))


def test_corrupt_stream_errors():
    data = internal_intra_encode(natural_frame(32, 32), 4.0)
    with pytest.raises(ValueError, match="magic"):
        internal_intra_decode(b"XXXX" + data[4:])
    with pytest.raises(ValueError, match="byte offset"):
        internal_intra_decode(data[: len(data) // 2])


def test_code_sequence_internal():
    seq = smooth_clip(32, 48, 3)
    out, bits = code_sequence(seq, CodecSpec(), 27)
    assert len(out) == 3 and bits > 0
    assert psnr_sequence(seq, out)["weighted"] > 35


def test_decode_dimension_check():
    seq = smooth_clip(16, 16, 1)
    payload = CodecSpec().encode(seq, 27)
    with pytest.raises(ValueError, match="expected"):
        CodecSpec().decode(payload, 32, 16, 8)


def test_external_copy_codec_is_lossless():
    spec = CodecSpec("external", ENC, DEC)
    seq = smooth_clip(16, 24, 2, bit_depth=10)
    out, bits = code_sequence(seq, spec, 32)
    assert all(a.equals(b) for a, b in zip(seq, out))
    assert bits == 8 * 2 * 16 * 24 * 3 // 2 * 2


def test_external_failure_surfaces_stderr():
    bad = f"{PY} -c 'import sys; sys.stderr.write(\"boom\"); sys.exit(3)' {{input}} {{output}} {{qp}} {{width}} {{height}}"
    spec = CodecSpec("external", bad, DEC)
    with pytest.raises(RuntimeError, match="boom"):
        spec.encode(smooth_clip(16, 16, 1), 30)


def test_external_missing_binary():
    spec = CodecSpec("external", "/no/such/enc {input} {output} {qp} {width} {height}", DEC)
    with pytest.raises(FileNotFoundError):
        spec.encode(smooth_clip(16, 16, 1), 30)


@pytest.mark.parametrize("enc,dec,msg", [
    ("x {input} {output}", DEC, "lacks"),
    (ENC, "x {input}", "lacks"),
    (ENC + " {bogus}", DEC, "unknown"),
    (None, DEC, "needs"),
])
def test_template_validation(enc, dec, msg):
    with pytest.raises(ValueError, match=msg):
        CodecSpec("external", enc, dec)


def test_ladder_validation():
    with pytest.raises(ValueError):
        CodecSpec(qp_ladder=[])
    with pytest.raises(ValueError):
        CodecSpec(qp_ladder=[37, 22])
    with pytest.raises(ValueError):
        CodecSpec("hevc")
