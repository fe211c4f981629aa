"""Planar YUV 4:2:0 frames: raw file I/O, PPM ingestion, normalisation and PSNR."""
from __future__ import annotations

import os
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Optional, Union

import numpy as np

from .tensor import Tensor

PSNR_CAP = 100.0
PLANE_WEIGHTS = (6.0, 1.0, 1.0)

# BT.709 luma coefficients
KR, KB = 0.2126, 0.0722
KG = 1.0 - KR - KB


def max_value(bit_depth: int) -> int:
    return (1 << bit_depth) - 1


@dataclass(frozen=True)
class FrameYUV420:
    y: np.ndarray
    u: np.ndarray
    v: np.ndarray
    bit_depth: int = 8

    def __post_init__(self):
        if self.bit_depth not in (8, 10):
            raise ValueError(f"bit depth must be 8 or 10, got {self.bit_depth}")
        h, w = self.y.shape
        if h % 2 or w % 2:
            raise ValueError(f"luma extents must be even, got {h}x{w}")
        for name, plane in (("u", self.u), ("v", self.v)):
            if plane.shape != (h // 2, w // 2):
                raise ValueError(f"{name} plane is {plane.shape}, expected {(h // 2, w // 2)}")
        top = max_value(self.bit_depth)
        for name, plane in (("y", self.y), ("u", self.u), ("v", self.v)):
            if plane.size and (plane.min() < 0 or plane.max() > top):
                raise ValueError(f"{name} plane has samples outside [0, {top}]")

    @classmethod
    def from_planes(cls, y, u, v, bit_depth: int = 8) -> "FrameYUV420":
        return cls(np.asarray(y, dtype=np.uint16).copy(), np.asarray(u, dtype=np.uint16).copy(),
                   np.asarray(v, dtype=np.uint16).copy(), bit_depth)

    @property
    def height(self) -> int:
        return self.y.shape[0]

    @property
    def width(self) -> int:
        return self.y.shape[1]

    @property
    def planes(self):
        return self.y, self.u, self.v

    def nbytes_raw(self) -> int:
        return frame_bytes(self.height, self.width, self.bit_depth)

    def equals(self, other: "FrameYUV420") -> bool:
        return (self.bit_depth == other.bit_depth
                and all(np.array_equal(a, b) for a, b in zip(self.planes, other.planes)))


@dataclass
class Sequence:
    frames: list
    fps: Fraction = field(default_factory=lambda: Fraction(30))

    def __post_init__(self):
        if not self.frames:
            raise ValueError("a sequence needs at least one frame")
        f0 = self.frames[0]
        for i, f in enumerate(self.frames):
            if (f.height, f.width, f.bit_depth) != (f0.height, f0.width, f0.bit_depth):
                raise ValueError(f"frame {i} is {f.height}x{f.width}@{f.bit_depth}b, "
                                 f"expected {f0.height}x{f0.width}@{f0.bit_depth}b")
        self.fps = Fraction(self.fps)

    def __len__(self):
        return len(self.frames)

    def __iter__(self):
        return iter(self.frames)

    @property
    def height(self) -> int:
        return self.frames[0].height

    @property
    def width(self) -> int:
        return self.frames[0].width

    @property
    def bit_depth(self) -> int:
        return self.frames[0].bit_depth

    @property
    def duration(self) -> float:
        return len(self.frames) / float(self.fps)


def frame_bytes(height: int, width: int, bit_depth: int) -> int:
    samples = height * width * 3 // 2
    return samples * (2 if bit_depth > 8 else 1)


# ---------------------------------------------------------------- raw yuv

def read_yuv420(path: Union[str, os.PathLike], height: int, width: int, bit_depth: int = 8,
                max_frames: Optional[int] = None, fps=30) -> Sequence:
    if height % 2 or width % 2:
        raise ValueError(f"4:2:0 needs even extents, got {height}x{width}")
    fsize = frame_bytes(height, width, bit_depth)
    raw = np.fromfile(path, dtype=np.uint8)
    if raw.size % fsize:
        whole = raw.size // fsize
        raise ValueError(f"{path}: truncated frame at byte offset {whole * fsize} "
                         f"(file has {raw.size} bytes, frame size {fsize})")
    n = raw.size // fsize
    if max_frames is not None:
        n = min(n, max_frames)
    ysz, csz = height * width, height * width // 4
    frames = []
    for i in range(n):
        chunk = raw[i * fsize:(i + 1) * fsize]
        if bit_depth > 8:
            samples = chunk.view("<u2").astype(np.uint16)
            bad = np.flatnonzero(samples > max_value(bit_depth))
            if bad.size:
                off = i * fsize + 2 * int(bad[0])
                raise ValueError(f"{path}: sample {samples[bad[0]]} exceeds {bit_depth}-bit range "
                                 f"at byte offset {off}")
        else:
            samples = chunk.astype(np.uint16)
        y = samples[:ysz].reshape(height, width)
        u = samples[ysz:ysz + csz].reshape(height // 2, width // 2)
        v = samples[ysz + csz:].reshape(height // 2, width // 2)
        frames.append(FrameYUV420(y.copy(), u.copy(), v.copy(), bit_depth))
    return Sequence(frames, fps)


def frame_to_bytes(frame: FrameYUV420) -> bytes:
    dt = "<u2" if frame.bit_depth > 8 else np.uint8
    return b"".join(np.ascontiguousarray(p, dtype=dt).tobytes() for p in frame.planes)


def write_yuv420(seq: Union[Sequence, Iterable[FrameYUV420]], path: Union[str, os.PathLike]) -> None:
    frames = list(seq.frames if isinstance(seq, Sequence) else seq)
    if not frames:
        raise ValueError("refusing to write an empty sequence")
    with open(path, "wb") as fh:
        for f in frames:
            fh.write(frame_to_bytes(f))


# ---------------------------------------------------------------- ppm / rgb

def _ppm_tokens(data: bytes, count: int):
    tokens, pos = [], 0
    while len(tokens) < count:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace() and data[pos:pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise ValueError("malformed PPM header: unexpected end of data")
        tokens.append(data[start:pos])
    return tokens, pos + 1


def read_ppm(path: Union[str, os.PathLike]) -> np.ndarray:
    """Read a binary 8-bit PPM (P6) into an H x W x 3 uint8 array."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:2] != b"P6":
        raise ValueError(f"{path}: malformed PPM header (magic {data[:2]!r}, expected b'P6')")
    try:
        (_, w, h, maxval), pos = _ppm_tokens(data, 4)
        w, h, maxval = int(w), int(h), int(maxval)
    except ValueError as exc:
        raise ValueError(f"{path}: malformed PPM header ({exc})") from None
    if w < 1 or h < 1 or maxval != 255:
        raise ValueError(f"{path}: malformed PPM header (size {w}x{h}, maxval {maxval}; need 8-bit)")
    pixels = np.frombuffer(data, dtype=np.uint8, count=w * h * 3, offset=pos) \
        if len(data) - pos >= w * h * 3 else None
    if pixels is None:
        raise ValueError(f"{path}: PPM pixel data truncated")
    return pixels.reshape(h, w, 3)


def write_ppm(rgb: np.ndarray, path: Union[str, os.PathLike]) -> None:
    rgb = np.asarray(rgb, dtype=np.uint8)
    h, w = rgb.shape[:2]
    with open(path, "wb") as fh:
        fh.write(b"P6\n%d %d\n255\n" % (w, h))
        fh.write(np.ascontiguousarray(rgb[..., :3]).tobytes())


def rgb_to_yuv420(rgb: np.ndarray) -> FrameYUV420:
    """BT.709 limited range, 2x2 box-averaged chroma; odd extents lose a row/column."""
    rgb = np.asarray(rgb, dtype=np.float64)
    h, w = rgb.shape[0] & ~1, rgb.shape[1] & ~1
    rgb = rgb[:h, :w] / 255.0
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    yn = KR * r + KG * g + KB * b
    cb = (b - yn) / (2.0 * (1.0 - KB))
    cr = (r - yn) / (2.0 * (1.0 - KR))
    y = 16.0 + 219.0 * yn
    u = 128.0 + 224.0 * cb
    v = 128.0 + 224.0 * cr

    def box(p):
        return 0.25 * (p[0::2, 0::2] + p[0::2, 1::2] + p[1::2, 0::2] + p[1::2, 1::2])

    def q(p):
        return np.clip(np.floor(p + 0.5), 0, 255)

    return FrameYUV420.from_planes(q(y), q(box(u)), q(box(v)), 8)


def load_image_as_yuv420(path: Union[str, os.PathLike]) -> FrameYUV420:
    return rgb_to_yuv420(read_ppm(path))


# ---------------------------------------------------------------- quality

def plane_mse(a: np.ndarray, b: np.ndarray) -> float:
    d = np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)
    return float(np.mean(d * d))


def psnr_from_mse(mse: float, bit_depth: int) -> float:
    if mse <= 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * np.log10(max_value(bit_depth) ** 2 / mse))


def psnr_yuv(a: FrameYUV420, b: FrameYUV420, weighting: str = "psnr") -> dict:
    """Per-plane PSNR and the 6:1:1 weighted figure.

    ``weighting="psnr"`` averages the plane PSNRs; ``"mse"`` converts the
    6:1:1-weighted MSE instead.
    """
    if (a.height, a.width, a.bit_depth) != (b.height, b.width, b.bit_depth):
        raise ValueError(f"psnr_yuv: frames differ ({a.height}x{a.width}@{a.bit_depth}b vs "
                         f"{b.height}x{b.width}@{b.bit_depth}b)")
    mses = [plane_mse(p, q) for p, q in zip(a.planes, b.planes)]
    return _psnr_report(mses, a.bit_depth, weighting)


def _psnr_report(mses, bit_depth: int, weighting: str) -> dict:
    py, pu, pv = (psnr_from_mse(m, bit_depth) for m in mses)
    wy, wu, wv = PLANE_WEIGHTS
    if weighting == "psnr":
        weighted = (wy * py + wu * pu + wv * pv) / (wy + wu + wv)
    elif weighting == "mse":
        weighted = psnr_from_mse((wy * mses[0] + wu * mses[1] + wv * mses[2]) / (wy + wu + wv), bit_depth)
    else:
        raise ValueError(f"unknown weighting {weighting!r}")
    return {"psnr_y": py, "psnr_u": pu, "psnr_v": pv, "weighted": weighted}


def psnr_sequence(a: Sequence, b: Sequence, weighting: str = "psnr") -> dict:
    """PSNR over a whole sequence, from the per-plane MSE pooled over frames."""
    if len(a) != len(b):
        raise ValueError(f"sequences differ in length: {len(a)} vs {len(b)}")
    mses = np.zeros(3)
    for fa, fb in zip(a, b):
        if (fa.height, fa.width, fa.bit_depth) != (fb.height, fb.width, fb.bit_depth):
            raise ValueError("psnr_sequence: frame dimensions differ")
        mses += [plane_mse(p, q) for p, q in zip(fa.planes, fb.planes)]
    return _psnr_report(mses / len(a), a.bit_depth, weighting)


# ---------------------------------------------------------------- normalisation

def normalize_plane(plane: np.ndarray, bit_depth: int) -> np.ndarray:
    return np.asarray(plane, dtype=np.float64) * (2.0 / max_value(bit_depth)) - 1.0


def denormalize_plane(x: np.ndarray, bit_depth: int) -> np.ndarray:
    v = (np.clip(x, -1.0, 1.0) + 1.0) * 0.5 * max_value(bit_depth)
    return np.floor(v + 0.5).astype(np.uint16)


def normalize(frame: FrameYUV420):
    """Map samples affinely onto [-1, 1]; returns (Y, U, V) tensors of shape 1 x h x w."""
    return tuple(Tensor(normalize_plane(p, frame.bit_depth)[None]) for p in frame.planes)


def denormalize(tensors, bit_depth: int) -> FrameYUV420:
    """Clip to [-1, 1], rescale to the bit depth and round to integers."""
    planes = []
    for t in tensors:
        arr = t.data if isinstance(t, Tensor) else np.asarray(t)
        arr = arr.reshape(arr.shape[-2:])
        planes.append(denormalize_plane(arr, bit_depth))
    return FrameYUV420(*planes, bit_depth=bit_depth)


def requantize(frame: FrameYUV420, bit_depth: int) -> FrameYUV420:
    """Convert a frame to another bit depth through the normalised domain."""
    if frame.bit_depth == bit_depth:
        return frame
    return denormalize([normalize_plane(p, frame.bit_depth) for p in frame.planes], bit_depth)
