"""Standard-codec layer: a built-in intra DCT codec and an external command adapter.

Internal bitstream (per frame)::

    "NWIC" | u8 version | u32 height | u32 width | u8 depth | f64 stepsize
    then for Y, U, V:  DC table | AC table | u32 payload bytes | payload

A table is ``u16 nsym`` followed by ``nsym`` (u8 symbol, u8 code length)
pairs; codes are canonical. DC symbols 0-15 are difference sizes; symbol
16 + n announces a run of r in [2^n, 2^(n+1)) blocks that repeat the DC
predictor with no AC energy, followed by n bits of r - 2^n.
"""
from __future__ import annotations

import os
import shlex
import shutil
import string
import struct
import subprocess
import tempfile
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Optional

import numpy as np

from . import kernels
from .frame_io import FrameYUV420, Sequence, read_yuv420, write_yuv420
from .jpeg import (HuffmanTable, forward_dct_blocks, from_blocks, inverse_dct_blocks,
                   optimal_table, round_half_away, to_blocks, zigzag_order)

MAGIC = b"NWIC"
VERSION = 1
_HEADER = struct.Struct("<4sBIIBd")
COEF_LIMIT = (1 << 15) - 1

ENCODE_REQUIRED = ("input", "output", "qp", "width", "height")
DECODE_REQUIRED = ("input", "output")
PLACEHOLDERS = ("input", "output", "width", "height", "depth", "qp", "fps")


def qp_to_step(qp: float, bit_depth: int = 8) -> float:
    """HEVC-like stepsize: doubles every 6 qp, scaled to the sample depth."""
    return 2.0 ** ((qp - 4) / 6.0) * (1 << (bit_depth - 8))


# ---------------------------------------------------------------- internal intra codec

def _quantize(plane: np.ndarray, step: float, depth: int):
    blocks, br, bc = to_blocks(plane.astype(np.float64) - (1 << (depth - 1)))
    zz = round_half_away(forward_dct_blocks(blocks) / step).reshape(-1, 64)[:, zigzag_order()]
    return np.ascontiguousarray(np.clip(zz, -COEF_LIMIT, COEF_LIMIT), dtype=np.int32), br, bc


def _reconstruct(zz: np.ndarray, step: float, depth: int, br: int, bc: int, h: int, w: int):
    raster = np.empty(zz.shape, dtype=np.float64)
    raster[:, zigzag_order()] = zz
    pix = inverse_dct_blocks(raster.reshape(-1, 8, 8) * step) + (1 << (depth - 1))
    pix = np.clip(np.floor(pix + 0.5), 0, (1 << depth) - 1)
    return from_blocks(pix, br, bc, h, w).astype(np.uint16)


def _write_table(t: HuffmanTable) -> bytes:
    lengths = []
    for n, count in enumerate(t.bits, start=1):
        lengths += [n] * count
    out = struct.pack("<H", len(t.vals))
    return out + b"".join(struct.pack("<BB", s, n) for s, n in zip(t.vals, lengths))


def _read_table(data: bytes, pos: int, size: int):
    if pos + 2 > len(data):
        raise ValueError(f"corrupt stream: table header truncated at byte offset {pos}")
    (n,) = struct.unpack_from("<H", data, pos)
    pos += 2
    if pos + 2 * n > len(data):
        raise ValueError(f"corrupt stream: table truncated at byte offset {pos}")
    pairs = np.frombuffer(data, dtype=np.uint8, count=2 * n, offset=pos).reshape(-1, 2)
    start = pos
    pos += 2 * n
    bits = [0] * 16
    for length in pairs[:, 1]:
        if not 1 <= length <= 16:
            raise ValueError(f"corrupt stream: code length {length} at byte offset {start}")
        bits[length - 1] += 1
    try:
        table = HuffmanTable(tuple(bits), tuple(int(s) for s in pairs[:, 0]), size)
    except ValueError as exc:
        raise ValueError(f"corrupt stream: {exc} (table at byte offset {start})") from None
    return table, pos


def quantized_intra(frame: FrameYUV420, stepsize: float) -> FrameYUV420:
    """The frame the decoder must reproduce for ``stepsize``."""
    planes = []
    for p in frame.planes:
        zz, br, bc = _quantize(p, stepsize, frame.bit_depth)
        planes.append(_reconstruct(zz, stepsize, frame.bit_depth, br, bc, *p.shape))
    return FrameYUV420(*planes, bit_depth=frame.bit_depth)


def internal_intra_encode(frame: FrameYUV420, stepsize: float) -> bytes:
    if not stepsize > 0:
        raise ValueError(f"stepsize must be positive, got {stepsize}")
    out = [_HEADER.pack(MAGIC, VERSION, frame.height, frame.width, frame.bit_depth, float(stepsize))]
    for p in frame.planes:
        zz, _, _ = _quantize(p, stepsize, frame.bit_depth)
        dc_freq, ac_freq = kernels.symbol_stats(zz, True)
        dc, ac = optimal_table(dc_freq, 32), optimal_table(ac_freq, 256)
        payload, _ = kernels.entropy_encode(zz, *dc.encoder(), *ac.encoder(), True)
        out += [_write_table(dc), _write_table(ac), struct.pack("<I", len(payload)), payload]
    return b"".join(out)


def internal_intra_decode(data: bytes) -> FrameYUV420:
    data = bytes(data)
    if len(data) < _HEADER.size:
        raise ValueError(f"corrupt stream: header truncated at byte offset {len(data)}")
    magic, version, h, w, depth, step = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise ValueError(f"corrupt stream: bad magic {magic!r} at byte offset 0")
    if version != VERSION:
        raise ValueError(f"unsupported intra stream version {version} at byte offset 4")
    if depth not in (8, 10) or h % 2 or w % 2 or h == 0 or w == 0 or not step > 0:
        raise ValueError("corrupt stream: invalid header fields at byte offset 5")
    pos = _HEADER.size
    planes = []
    for ph, pw in ((h, w), (h // 2, w // 2), (h // 2, w // 2)):
        dc, pos = _read_table(data, pos, 32)
        ac, pos = _read_table(data, pos, 256)
        if pos + 4 > len(data):
            raise ValueError(f"corrupt stream: payload length truncated at byte offset {pos}")
        (n,) = struct.unpack_from("<I", data, pos)
        pos += 4
        if pos + n > len(data):
            raise ValueError(f"corrupt stream: payload of {n} bytes truncated at byte offset {pos}")
        br, bc = -(-ph // 8), -(-pw // 8)
        try:
            zz = kernels.entropy_decode(np.frombuffer(data, dtype=np.uint8, count=n, offset=pos),
                                        br * bc, *dc.decoder(), *ac.decoder(), True)
        except ValueError as exc:
            raise ValueError(f"corrupt stream: {exc} (plane payload starts at byte offset {pos})") from None
        pos += n
        planes.append(_reconstruct(np.asarray(zz), step, depth, br, bc, ph, pw))
    return FrameYUV420(*planes, bit_depth=depth)


def _pack_frames(streams) -> bytes:
    parts = [struct.pack("<I", len(streams))]
    for s in streams:
        parts += [struct.pack("<I", len(s)), s]
    return b"".join(parts)


def _unpack_frames(payload: bytes):
    if len(payload) < 4:
        raise ValueError("corrupt payload: frame count truncated at byte offset 0")
    (n,) = struct.unpack_from("<I", payload, 0)
    pos, out = 4, []
    for _ in range(n):
        if pos + 4 > len(payload):
            raise ValueError(f"corrupt payload: frame length truncated at byte offset {pos}")
        (m,) = struct.unpack_from("<I", payload, pos)
        pos += 4
        if pos + m > len(payload):
            raise ValueError(f"corrupt payload: frame truncated at byte offset {pos}")
        out.append(payload[pos:pos + m])
        pos += m
    return out


# ---------------------------------------------------------------- codec spec

def _fields(template: str):
    return {f for _, f, _, _ in string.Formatter().parse(template) if f is not None}


@dataclass
class CodecSpec:
    """Which standard codec codes the bottleneck, plus its quality ladder.

    ``kind="internal"`` uses the built-in intra codec with ``qp_to_step``;
    ``kind="external"`` runs the command templates (argument lists after
    shell-style splitting, placeholders filled per token; no shell).
    """
    kind: str = "internal"
    encode_template: Optional[str] = None
    decode_template: Optional[str] = None
    qp_ladder: list = field(default_factory=lambda: [22, 27, 32, 37])
    timeout: Optional[float] = None

    def __post_init__(self):
        if self.kind not in ("internal", "external"):
            raise ValueError(f"codec kind must be 'internal' or 'external', got {self.kind!r}")
        if not self.qp_ladder:
            raise ValueError("qp ladder must be non-empty")
        if list(self.qp_ladder) != sorted(self.qp_ladder):
            raise ValueError(f"qp ladder must be sorted, got {self.qp_ladder}")
        if self.kind == "external":
            for name, tpl, required in (("encode", self.encode_template, ENCODE_REQUIRED),
                                        ("decode", self.decode_template, DECODE_REQUIRED)):
                if not tpl:
                    raise ValueError(f"external codec needs a {name} template")
                found = _fields(tpl)
                missing = [p for p in required if p not in found]
                if missing:
                    raise ValueError(f"{name} template lacks placeholder(s) "
                                     + ", ".join("{" + p + "}" for p in missing))
                unknown = sorted(found - set(PLACEHOLDERS))
                if unknown:
                    raise ValueError(f"{name} template has unknown placeholder(s) {unknown}")

    def to_dict(self):
        return {"kind": self.kind, "encode_template": self.encode_template,
                "decode_template": self.decode_template, "qp_ladder": list(self.qp_ladder)}

    # -------------------------------------------------------------- encode/decode

    def encode(self, seq: Sequence, qp: float) -> bytes:
        if self.kind == "internal":
            step = qp_to_step(qp, seq.bit_depth)
            return _pack_frames([internal_intra_encode(f, step) for f in seq.frames])
        return self._external_encode(seq, qp)

    def decode(self, payload: bytes, height: int, width: int, bit_depth: int,
               fps: Fraction = Fraction(30), nframes: Optional[int] = None) -> Sequence:
        if self.kind == "internal":
            frames = [internal_intra_decode(s) for s in _unpack_frames(payload)]
            for f in frames:
                if (f.height, f.width, f.bit_depth) != (height, width, bit_depth):
                    raise ValueError(f"decoded frame is {f.height}x{f.width}@{f.bit_depth}-bit, "
                                     f"expected {height}x{width}@{bit_depth}-bit")
            seq = Sequence(frames, fps)
        else:
            seq = self._external_decode(payload, height, width, bit_depth, fps)
        if nframes is not None and len(seq.frames) != nframes:
            raise ValueError(f"decoder returned {len(seq.frames)} frames, expected {nframes}")
        return seq

    # -------------------------------------------------------------- external

    def _run(self, template: str, values: dict, what: str):
        argv = [tok.format(**values) for tok in shlex.split(template)]
        if shutil.which(argv[0]) is None and not os.path.exists(argv[0]):
            raise FileNotFoundError(f"{what}: executable {argv[0]!r} not found")
        proc = subprocess.run(argv, capture_output=True, text=True, timeout=self.timeout)
        if proc.returncode != 0:
            raise RuntimeError(f"{what} exited with status {proc.returncode}: {' '.join(argv)}\n"
                               f"stdout:\n{proc.stdout[-2000:]}\nstderr:\n{proc.stderr[-2000:]}")

    def _values(self, tmp: Path, inp: str, out: str, h: int, w: int, depth: int, qp, fps):
        return {"input": str(tmp / inp), "output": str(tmp / out), "width": w, "height": h,
                "depth": depth, "qp": qp, "fps": float(fps)}

    def _external_encode(self, seq: Sequence, qp) -> bytes:
        with tempfile.TemporaryDirectory(prefix="nwrap-enc-") as tmp:
            tmp = Path(tmp)
            write_yuv420(seq, tmp / "input.yuv")
            self._run(self.encode_template,
                      self._values(tmp, "input.yuv", "stream.bin", seq.height, seq.width,
                                   seq.bit_depth, qp, seq.fps), "encoder")
            out = tmp / "stream.bin"
            if not out.exists():
                raise RuntimeError(f"encoder did not write {out}")
            return out.read_bytes()

    def _external_decode(self, payload: bytes, h: int, w: int, depth: int, fps) -> Sequence:
        with tempfile.TemporaryDirectory(prefix="nwrap-dec-") as tmp:
            tmp = Path(tmp)
            (tmp / "stream.bin").write_bytes(payload)
            self._run(self.decode_template,
                      self._values(tmp, "stream.bin", "output.yuv", h, w, depth, "", fps), "decoder")
            out = tmp / "output.yuv"
            if not out.exists():
                raise RuntimeError(f"decoder did not write {out}")
            return read_yuv420(out, h, w, depth, fps=fps)


def code_sequence(seq: Sequence, spec: CodecSpec, qp: float):
    """Code and decode ``seq`` -> (decoded Sequence, payload bits)."""
    payload = spec.encode(seq, qp)
    decoded = spec.decode(payload, seq.height, seq.width, seq.bit_depth, seq.fps, len(seq.frames))
    return decoded, 8 * len(payload)


__all__ = [
    "CodecSpec", "code_sequence", "internal_intra_encode", "internal_intra_decode",
    "quantized_intra", "qp_to_step",
]
