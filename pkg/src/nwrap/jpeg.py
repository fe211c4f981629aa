"""Baseline grayscale DCT/Huffman coder and the Huffman-table machinery it shares
with the internal intra codec.

Bitstreams are bare entropy-coded segments (no markers, no byte stuffing);
the final byte is padded with 1-bits. Bit counts are exact payload bits.
"""
from __future__ import annotations

import heapq
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import kernels

BLOCK = 8

STD_LUMA_QT = np.array([
    16, 11, 10, 16, 24, 40, 51, 61,
    12, 12, 14, 19, 26, 58, 60, 55,
    14, 13, 16, 24, 40, 57, 69, 56,
    14, 17, 22, 29, 51, 87, 80, 62,
    18, 22, 37, 56, 68, 109, 103, 77,
    24, 35, 55, 64, 81, 104, 113, 92,
    49, 64, 78, 87, 103, 121, 120, 101,
    72, 92, 95, 98, 112, 100, 103, 99,
], dtype=np.int64).reshape(8, 8)

STD_DC_BITS = (0, 1, 5, 1, 1, 1, 1, 1, 1, 0, 0, 0, 0, 0, 0, 0)
STD_DC_VALS = tuple(range(12))
STD_AC_BITS = (0, 2, 1, 3, 3, 2, 4, 3, 5, 5, 4, 4, 0, 0, 1, 0x7d)
STD_AC_VALS = (
    0x01, 0x02, 0x03, 0x00, 0x04, 0x11, 0x05, 0x12, 0x21, 0x31, 0x41, 0x06, 0x13, 0x51, 0x61, 0x07,
    0x22, 0x71, 0x14, 0x32, 0x81, 0x91, 0xa1, 0x08, 0x23, 0x42, 0xb1, 0xc1, 0x15, 0x52, 0xd1, 0xf0,
    0x24, 0x33, 0x62, 0x72, 0x82, 0x09, 0x0a, 0x16, 0x17, 0x18, 0x19, 0x1a, 0x25, 0x26, 0x27, 0x28,
    0x29, 0x2a, 0x34, 0x35, 0x36, 0x37, 0x38, 0x39, 0x3a, 0x43, 0x44, 0x45, 0x46, 0x47, 0x48, 0x49,
    0x4a, 0x53, 0x54, 0x55, 0x56, 0x57, 0x58, 0x59, 0x5a, 0x63, 0x64, 0x65, 0x66, 0x67, 0x68, 0x69,
    0x6a, 0x73, 0x74, 0x75, 0x76, 0x77, 0x78, 0x79, 0x7a, 0x83, 0x84, 0x85, 0x86, 0x87, 0x88, 0x89,
    0x8a, 0x92, 0x93, 0x94, 0x95, 0x96, 0x97, 0x98, 0x99, 0x9a, 0xa2, 0xa3, 0xa4, 0xa5, 0xa6, 0xa7,
    0xa8, 0xa9, 0xaa, 0xb2, 0xb3, 0xb4, 0xb5, 0xb6, 0xb7, 0xb8, 0xb9, 0xba, 0xc2, 0xc3, 0xc4, 0xc5,
    0xc6, 0xc7, 0xc8, 0xc9, 0xca, 0xd2, 0xd3, 0xd4, 0xd5, 0xd6, 0xd7, 0xd8, 0xd9, 0xda, 0xe1, 0xe2,
    0xe3, 0xe4, 0xe5, 0xe6, 0xe7, 0xe8, 0xe9, 0xea, 0xf1, 0xf2, 0xf3, 0xf4, 0xf5, 0xf6, 0xf7, 0xf8,
    0xf9, 0xfa,
)

AC_LIMIT = 1023
MAX_CODE_LEN = 16


# ---------------------------------------------------------------- transforms

@lru_cache(maxsize=None)
def dct_matrix(n: int) -> np.ndarray:
    """Orthonormal DCT-II matrix D (rows are basis vectors): coefficients = D @ x."""
    k = np.arange(n)[:, None]
    i = np.arange(n)[None, :]
    d = np.cos(np.pi * (2 * i + 1) * k / (2 * n)) * np.sqrt(2.0 / n)
    d[0] /= np.sqrt(2.0)
    d.setflags(write=False)
    return d


@lru_cache(maxsize=None)
def zigzag_order(n: int = BLOCK) -> np.ndarray:
    """Raster indices of an n x n block in zigzag scan order."""
    cells = sorted(((r, c) for r in range(n) for c in range(n)),
                   key=lambda rc: (rc[0] + rc[1], rc[0] if (rc[0] + rc[1]) % 2 else rc[1]))
    order = np.array([r * n + c for r, c in cells], dtype=np.intp)
    order.setflags(write=False)
    return order


def round_half_away(a: np.ndarray) -> np.ndarray:
    return np.sign(a) * np.floor(np.abs(a) + 0.5)


def to_blocks(plane: np.ndarray, n: int = BLOCK) -> tuple[np.ndarray, int, int]:
    """Replicate-pad to a multiple of n and split: -> (nb, n, n), block rows, block cols."""
    h, w = plane.shape
    ph, pw = (-h) % n, (-w) % n
    p = np.pad(plane, ((0, ph), (0, pw)), mode="edge") if ph or pw else plane
    br, bc = p.shape[0] // n, p.shape[1] // n
    return p.reshape(br, n, bc, n).transpose(0, 2, 1, 3).reshape(-1, n, n), br, bc


def from_blocks(blocks: np.ndarray, br: int, bc: int, h: int, w: int) -> np.ndarray:
    n = blocks.shape[-1]
    return blocks.reshape(br, bc, n, n).transpose(0, 2, 1, 3).reshape(br * n, bc * n)[:h, :w]


def forward_dct_blocks(blocks: np.ndarray) -> np.ndarray:
    d = dct_matrix(blocks.shape[-1])
    return d @ blocks @ d.T


def inverse_dct_blocks(coefs: np.ndarray) -> np.ndarray:
    d = dct_matrix(coefs.shape[-1])
    return d.T @ coefs @ d


# ---------------------------------------------------------------- Huffman tables

@dataclass(frozen=True)
class HuffmanTable:
    bits: tuple            # number of codes of each length 1..16
    vals: tuple            # symbols in canonical order
    size: int              # alphabet size (32 for DC, 256 for AC)

    def __post_init__(self):
        if len(self.bits) != MAX_CODE_LEN or sum(self.bits) != len(self.vals):
            raise ValueError("inconsistent Huffman table: bits/vals disagree")
        if len(set(self.vals)) != len(self.vals) or any(not 0 <= v < self.size for v in self.vals):
            raise ValueError("Huffman table symbols must be distinct and inside the alphabet")
        kraft = sum(b / 2 ** (i + 1) for i, b in enumerate(self.bits))
        if kraft > 1:
            raise ValueError("Huffman table over-subscribes the code space")

    def encoder(self):
        """(codes, sizes) int32 lookup arrays indexed by symbol; size 0 = no code."""
        codes = np.zeros(self.size, dtype=np.int32)
        sizes = np.zeros(self.size, dtype=np.int32)
        code, k = 0, 0
        for length in range(1, MAX_CODE_LEN + 1):
            for _ in range(self.bits[length - 1]):
                codes[self.vals[k]] = code
                sizes[self.vals[k]] = length
                code += 1
                k += 1
            code <<= 1
        return codes, sizes

    def decoder(self):
        """(mincode, maxcode, valptr, huffval) indexed by code length 1..16."""
        mincode = np.zeros(MAX_CODE_LEN + 1, dtype=np.int32)
        maxcode = np.full(MAX_CODE_LEN + 1, -1, dtype=np.int32)
        valptr = np.zeros(MAX_CODE_LEN + 1, dtype=np.int32)
        code, k = 0, 0
        for length in range(1, MAX_CODE_LEN + 1):
            n = self.bits[length - 1]
            if n:
                valptr[length] = k
                mincode[length] = code
                code += n
                k += n
                maxcode[length] = code - 1
            code <<= 1
        return mincode, maxcode, valptr, np.asarray(self.vals, dtype=np.int32)


STD_DC = HuffmanTable(STD_DC_BITS, STD_DC_VALS, 32)
STD_AC = HuffmanTable(STD_AC_BITS, STD_AC_VALS, 256)


def _limit_lengths(lengths: dict, max_len: int) -> dict:
    """Shorten an optimal code to ``max_len`` bits while keeping it complete."""
    if not lengths or max(lengths.values()) <= max_len:
        return lengths
    count = [0] * (max(lengths.values()) + 1)
    for n in lengths.values():
        count[n] += 1
    i = len(count) - 1
    while i > max_len:
        while count[i] > 0:
            j = i - 2
            while count[j] == 0:
                j -= 1
            count[i] -= 2
            count[i - 1] += 1
            count[j + 1] += 2
            count[j] -= 1
        i -= 1
    # longest codes go to the rarest symbols
    order = sorted(lengths, key=lambda s: (lengths[s], s))
    out, k = {}, 0
    for n in range(1, max_len + 1):
        for _ in range(count[n]):
            out[order[k]] = n
            k += 1
    return out


def optimal_table(freq, size: int) -> HuffmanTable:
    """Canonical length-limited Huffman table for the given symbol frequencies."""
    freq = np.asarray(freq)
    used = [int(s) for s in np.nonzero(freq)[0]]
    if not used:
        return HuffmanTable((0,) * MAX_CODE_LEN, (), size)
    if len(used) == 1:
        lengths = {used[0]: 1}
    else:
        heap = [(int(freq[s]), s, (s,)) for s in used]
        heapq.heapify(heap)
        depth = dict.fromkeys(used, 0)
        while len(heap) > 1:
            fa, ta, sa = heapq.heappop(heap)
            fb, tb, sb = heapq.heappop(heap)
            for s in sa + sb:
                depth[s] += 1
            heapq.heappush(heap, (fa + fb, min(ta, tb), sa + sb))
        lengths = _limit_lengths(depth, MAX_CODE_LEN)
    bits = [0] * MAX_CODE_LEN
    for n in lengths.values():
        bits[n - 1] += 1
    vals = tuple(sorted(lengths, key=lambda s: (lengths[s], s)))
    return HuffmanTable(tuple(bits), vals, size)


# ---------------------------------------------------------------- baseline gray coder

def quality_table(qf: int) -> np.ndarray:
    """IJG quality scaling of the standard luminance table."""
    if not 1 <= qf <= 100 or int(qf) != qf:
        raise ValueError(f"quality factor must be an integer in [1, 100], got {qf}")
    scale = 5000 // qf if qf < 50 else 200 - 2 * qf
    return np.clip((STD_LUMA_QT * scale + 50) // 100, 1, 255)


def _check_plane(plane: np.ndarray) -> np.ndarray:
    plane = np.asarray(plane)
    if plane.ndim != 2 or plane.size == 0:
        raise ValueError(f"expected a non-empty 2-D plane, got shape {plane.shape}")
    if plane.min() < 0 or plane.max() > 255:
        raise ValueError("baseline coder takes 8-bit samples; pass the top 8 bits of deeper planes")
    return plane


def quantize_plane(plane: np.ndarray, qf: int):
    """8-bit plane -> (zigzag int32 coefficient blocks, block rows, block cols)."""
    plane = _check_plane(plane)
    qt = quality_table(qf)
    blocks, br, bc = to_blocks(plane.astype(np.float64) - 128.0)
    coefs = round_half_away(forward_dct_blocks(blocks) / qt)
    coefs = np.clip(coefs, -AC_LIMIT, AC_LIMIT).reshape(-1, 64)[:, zigzag_order()]
    return np.ascontiguousarray(coefs, dtype=np.int32), br, bc


def reconstruct_blocks(zz: np.ndarray, qt: np.ndarray, br: int, bc: int, h: int, w: int,
                       offset: float = 128.0, maxval: int = 255) -> np.ndarray:
    raster = np.empty_like(zz, dtype=np.float64)
    raster[:, zigzag_order()] = zz
    pix = inverse_dct_blocks(raster.reshape(-1, 8, 8) * qt) + offset
    pix = np.clip(np.floor(pix + 0.5), 0, maxval)
    return from_blocks(pix, br, bc, h, w).astype(np.uint16)


def quantized_reconstruction(plane: np.ndarray, qf: int) -> np.ndarray:
    """What a decoder must output for ``plane`` coded at ``qf`` (uint16, 0..255)."""
    zz, br, bc = quantize_plane(plane, qf)
    return reconstruct_blocks(zz, quality_table(qf), br, bc, *np.shape(plane))


@dataclass(frozen=True)
class GrayBitstream:
    data: bytes
    nbits: int
    height: int
    width: int
    qf: int


def baseline_gray_encode(plane: np.ndarray, qf: int):
    """-> (GrayBitstream, R) with R the exact entropy-coded payload size in bits."""
    zz, _, _ = quantize_plane(plane, qf)
    data, nbits = kernels.entropy_encode(zz, *STD_DC.encoder(), *STD_AC.encoder())
    h, w = np.shape(plane)
    return GrayBitstream(data, int(nbits), h, w, int(qf)), int(nbits)


def baseline_gray_bits(plane: np.ndarray, qf: int) -> int:
    """Bit count of :func:`baseline_gray_encode` without materialising the stream."""
    zz, _, _ = quantize_plane(plane, qf)
    return int(kernels.entropy_count(zz, *STD_DC.encoder(), *STD_AC.encoder()))


def baseline_gray_decode(stream: GrayBitstream) -> np.ndarray:
    br, bc = -(-stream.height // BLOCK), -(-stream.width // BLOCK)
    zz = kernels.entropy_decode(np.frombuffer(stream.data, dtype=np.uint8), br * bc,
                                *STD_DC.decoder(), *STD_AC.decoder(), False)
    return reconstruct_blocks(np.asarray(zz), quality_table(stream.qf), br, bc, stream.height, stream.width)


def msb8(plane: np.ndarray, bit_depth: int) -> np.ndarray:
    """Top 8 bits of a ``bit_depth`` plane."""
    return np.asarray(plane).astype(np.int64) >> (bit_depth - 8)
