"""The four resampling ratios, linear frame resamplers and the bottleneck packer."""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from . import nn
from .filters import resample_plane
from .frame_io import FrameYUV420, denormalize_plane, normalize_plane
from .tensor import Tensor, concat, reshape


@dataclass(frozen=True)
class Ratio:
    """Downsampling ratio a/b with its mode index k (1-based)."""
    a: int
    b: int
    k: int

    @property
    def fraction(self) -> Fraction:
        return Fraction(self.a, self.b)

    @property
    def pad_multiple(self) -> int:
        """Source extents must be a multiple of this for an even integer bottleneck."""
        return 2 * self.b

    def bottleneck_extent(self, n: int) -> int:
        if (n * self.a) % self.b:
            raise ValueError(f"extent {n} is not divisible for ratio {self}; pad to a multiple of {self.pad_multiple}")
        return n * self.a // self.b

    def source_extent(self, n: int) -> int:
        if (n * self.b) % self.a:
            raise ValueError(f"bottleneck extent {n} does not map back through ratio {self}")
        return n * self.b // self.a

    @property
    def tag(self) -> str:
        return f"{self.a}-{self.b}"

    def __str__(self):
        return f"{self.a}/{self.b}"


RATIOS = (Ratio(1, 1, 1), Ratio(1, 2, 2), Ratio(2, 3, 3), Ratio(1, 4, 4))
_BY_TEXT = {"1": RATIOS[0], "1/1": RATIOS[0], "1/2": RATIOS[1], "2/3": RATIOS[2], "1/4": RATIOS[3]}


def get_ratio(value) -> Ratio:
    """Look a ratio up by Ratio, mode index (1-4), text ("1/2") or Fraction."""
    if isinstance(value, Ratio):
        if value not in RATIOS:
            raise ValueError(f"unsupported ratio {value}")
        return value
    if isinstance(value, (int, np.integer)) and not isinstance(value, bool):
        if 1 <= value <= 4:
            return RATIOS[value - 1]
        raise ValueError(f"unsupported ratio index {value}; expected 1-4")
    if isinstance(value, Fraction):
        for r in RATIOS:
            if r.fraction == value:
                return r
        raise ValueError(f"unsupported ratio {value}; expected one of 1/1, 1/2, 2/3, 1/4")
    text = str(value).strip().replace("-", "/")
    if text in _BY_TEXT:
        return _BY_TEXT[text]
    raise ValueError(f"unsupported ratio {value!r}; expected one of 1/1, 1/2, 2/3, 1/4")


# ---------------------------------------------------------------- padding

def padded_extents(height: int, width: int, ratio: Ratio):
    m = ratio.pad_multiple
    return -(-height // m) * m, -(-width // m) * m


def pad_frame(frame: FrameYUV420, height: int, width: int) -> FrameYUV420:
    """Replicate-pad right/bottom to ``height`` x ``width`` (both even)."""
    if (height, width) == (frame.height, frame.width):
        return frame
    dh, dw = height - frame.height, width - frame.width
    if dh < 0 or dw < 0 or dh % 2 or dw % 2:
        raise ValueError(f"cannot pad {frame.height}x{frame.width} to {height}x{width}")
    y = np.pad(frame.y, ((0, dh), (0, dw)), mode="edge")
    u = np.pad(frame.u, ((0, dh // 2), (0, dw // 2)), mode="edge")
    v = np.pad(frame.v, ((0, dh // 2), (0, dw // 2)), mode="edge")
    return FrameYUV420(y, u, v, frame.bit_depth)


def crop_frame(frame: FrameYUV420, height: int, width: int) -> FrameYUV420:
    if (height, width) == (frame.height, frame.width):
        return frame
    return FrameYUV420(frame.y[:height, :width].copy(), frame.u[:height // 2, :width // 2].copy(),
                       frame.v[:height // 2, :width // 2].copy(), frame.bit_depth)


# ---------------------------------------------------------------- linear resampling

def resample_frame(frame: FrameYUV420, ratio, filter: str = "bilinear", direction: str = "down",
                   out_bit_depth: int | None = None) -> FrameYUV420:
    """Resample Y, U and V independently by ``ratio`` (down) or its inverse (up).

    Down requires extents padded to ``ratio.pad_multiple``. ``out_bit_depth``
    optionally requantises the result (e.g. to the 10-bit bottleneck format).
    Filtering runs on normalised samples in float64, the same arithmetic the
    post-processor's shortcut path uses.
    """
    ratio = get_ratio(ratio)
    depth = out_bit_depth or frame.bit_depth
    if direction == "down":
        h, w = ratio.bottleneck_extent(frame.height), ratio.bottleneck_extent(frame.width)
        if h % 2 or w % 2:
            raise ValueError(f"{frame.height}x{frame.width} gives odd bottleneck {h}x{w}; "
                             f"pad to a multiple of {ratio.pad_multiple}")
    elif direction == "up":
        h, w = ratio.source_extent(frame.height), ratio.source_extent(frame.width)
    else:
        raise ValueError(f"direction must be 'down' or 'up', got {direction!r}")
    if (h, w) == (frame.height, frame.width) and depth == frame.bit_depth:
        return frame
    planes = []
    for p, (ph, pw) in zip(frame.planes, ((h, w), (h // 2, w // 2), (h // 2, w // 2))):
        x = normalize_plane(p, frame.bit_depth)
        if p.shape != (ph, pw):
            x = resample_plane(x, ph, pw, filter)
        planes.append(denormalize_plane(x, depth))
    return FrameYUV420(*planes, bit_depth=depth)


# ---------------------------------------------------------------- pixel shuffling

def space_to_depth(plane: np.ndarray) -> np.ndarray:
    """H x W -> 4 x H/2 x W/2 in TL, TR, BL, BR order."""
    h, w = plane.shape
    if h % 2 or w % 2:
        raise ValueError(f"space_to_depth needs even extents, got {h}x{w}")
    return plane.reshape(h // 2, 2, w // 2, 2).transpose(1, 3, 0, 2).reshape(4, h // 2, w // 2)


def depth_to_space(chans: np.ndarray) -> np.ndarray:
    c, h, w = chans.shape
    if c != 4:
        raise ValueError(f"depth_to_space needs 4 channels, got {c}")
    return chans.reshape(2, 2, h, w).transpose(2, 0, 3, 1).reshape(2 * h, 2 * w)


def pack_planes(y: Tensor, u: Tensor, v: Tensor, height: int, width: int) -> Tensor:
    """Differentiable packer: N x 1 planes in [-1, 1] -> N x 6 x H/2 x W/2."""
    yr = nn.bilinear_resize(y, height, width)
    ur = nn.bilinear_resize(u, height // 2, width // 2)
    vr = nn.bilinear_resize(v, height // 2, width // 2)
    return concat([nn.space_to_depth(yr), ur, vr], axis=1)


def frame_tensors(frame: FrameYUV420, dtype=np.float64):
    """Normalised planes of one frame as 1 x 1 x h x w tensors."""
    return tuple(Tensor(normalize_plane(p, frame.bit_depth).astype(dtype)[None, None])
                 for p in frame.planes)


def pack_bottleneck(frame: FrameYUV420, ratio, height: int | None = None, width: int | None = None,
                    dtype=np.float64) -> Tensor:
    """Decoded bottleneck -> 6 x H/2 x W/2 post-processor input in [-1, 1]."""
    ratio = get_ratio(ratio)
    exp_h, exp_w = ratio.source_extent(frame.height), ratio.source_extent(frame.width)
    height = exp_h if height is None else height
    width = exp_w if width is None else width
    if (height, width) != (exp_h, exp_w):
        raise ValueError(f"bottleneck {frame.height}x{frame.width} at ratio {ratio} implies "
                         f"{exp_h}x{exp_w}, not {height}x{width}")
    packed = pack_planes(*frame_tensors(frame, dtype), height, width)
    return reshape(packed, packed.shape[1:])
