"""Differentiable stand-in for a block-transform codec, used only in training.

Forward: clip to the codec range, level-shift, L x L orthonormal DCT,
uniform quantization with a learned stepsize q, inverse DCT. Backward treats
rounding as the identity and the clip as identity inside the range.

The rate term is calibrated against a real coder: with
S = sum log(1 + |Y| / q) and a = SG(R / S), the loss a * S has the value R
(the real coder's bits) but the gradient of S.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from .jpeg import baseline_gray_bits, dct_matrix, msb8
from .tensor import (Tensor, _record, add, add_const, clip_st, crop, div, log1p, mul,
                     pad_replicate, round_half_away, round_st, stop_gradient, tabs, texp, tsum)

BLOCK_SIZES = (4, 8, 16, 32)
S_EPS = 1e-8

Planes = Union[Tensor, Sequence[Tensor]]


# ---------------------------------------------------------------- block DCT

def _blocked(shape, L):
    *lead, h, w = shape
    if h % L or w % L:
        raise ValueError(f"extents {h}x{w} are not divisible by block size {L}; pad first")
    return (*lead, h // L, L, w // L, L)


def block_dct2d(x: Tensor, L: int) -> Tensor:
    """Orthonormal 2-D DCT-II of every L x L block; coefficients stay in place."""
    d = dct_matrix(L).astype(x.dtype)
    bs = _blocked(x.shape, L)
    shape = x.shape
    y = np.einsum("ki,...aibj,lj->...akbl", d, x.data.reshape(bs), d, optimize=True).reshape(shape)
    return _record(y, (x,), lambda g: (
        np.einsum("ki,...akbl,lj->...aibj", d, g.reshape(bs), d, optimize=True).reshape(shape),))


def block_idct2d(y: Tensor, L: int) -> Tensor:
    """Exact inverse of :func:`block_dct2d`."""
    d = dct_matrix(L).astype(y.dtype)
    bs = _blocked(y.shape, L)
    shape = y.shape
    x = np.einsum("ki,...akbl,lj->...aibj", d, y.data.reshape(bs), d, optimize=True).reshape(shape)
    return _record(x, (y,), lambda g: (
        np.einsum("ki,...aibj,lj->...akbl", d, g.reshape(bs), d, optimize=True).reshape(shape),))


# ---------------------------------------------------------------- configuration

def q_to_qf(q: float, bit_depth: int = 8) -> int:
    """Quality factor of the baseline coder whose DC stepsize is ``q``.

    ``q`` is in ``bit_depth`` code units; deeper planes are rescaled to the
    8-bit domain the baseline coder sees.
    """
    q8 = float(q) / (1 << (bit_depth - 8))
    if not q8 > 0:
        raise ValueError(f"stepsize must be positive, got {q}")
    qf = 100.0 - (100.0 * q8 - 50.0) / 32.0
    return int(np.floor(min(max(qf, 1.0), 100.0) + 0.5))


def qf_to_q(qf: float, bit_depth: int = 8) -> float:
    """Inverse of the unclamped qf mapping."""
    return (32.0 * (100.0 - qf) + 50.0) / 100.0 * (1 << (bit_depth - 8))


@dataclass
class ProxyConfig:
    """Proxy state: q = exp(log_q) in ``d``-bit code units, block size L, depth d."""
    log_q: Tensor
    L: int = 8
    d: int = 10

    def __post_init__(self):
        if self.L not in BLOCK_SIZES:
            raise ValueError(f"block size must be one of {BLOCK_SIZES}, got {self.L}")
        if self.d not in (8, 10):
            raise ValueError(f"bit depth must be 8 or 10, got {self.d}")
        if not isinstance(self.log_q, Tensor):
            self.log_q = Tensor(np.asarray(self.log_q, dtype=np.float64))

    @classmethod
    def initial(cls, d: int = 10, qf: float = 75.0, L: int = 8) -> "ProxyConfig":
        return cls(Tensor(np.array(np.log(qf_to_q(qf, d)))), L, d)

    @property
    def q(self) -> Tensor:
        return texp(self.log_q)

    @property
    def q_value(self) -> float:
        return float(np.exp(self.log_q.item()))

    @property
    def qf(self) -> int:
        return q_to_qf(self.q_value, self.d)

    @property
    def max_value(self) -> int:
        return (1 << self.d) - 1

    def with_block(self, L: int) -> "ProxyConfig":
        return ProxyConfig(self.log_q, L, self.d)


def draw_block_size(rng: np.random.Generator) -> int:
    return int(BLOCK_SIZES[rng.integers(len(BLOCK_SIZES))])


# ---------------------------------------------------------------- proxy pass

def _proxy_plane(x: Tensor, q: Tensor, cfg: ProxyConfig):
    h, w = x.shape[-2:]
    L = cfg.L
    mid = float(1 << (cfg.d - 1))
    xc = clip_st(x, 0.0, float(cfg.max_value))
    xp = pad_replicate(xc, (-h) % L, (-w) % L)
    y = block_dct2d(add_const(xp, -mid), L)
    yq = mul(round_st(div(y, q)), q)
    xh = crop(add_const(block_idct2d(yq, L), mid), h, w)
    return xh, y, yq


def proxy_apply(X: Planes, cfg: ProxyConfig, q: Tensor | None = None):
    """Run the proxy on one tensor or on a sequence of planes (e.g. 4:2:0 Y, U, V).

    Returns (X_hat, Y, Y_hat) with the same structure as ``X``. Planes whose
    extents are not multiples of L are replicate-padded, and X_hat is cropped
    back. Pass ``q`` to reuse an already-built stepsize tensor.
    """
    q = cfg.q if q is None else q
    if isinstance(X, Tensor):
        return _proxy_plane(X, q, cfg)
    outs = [_proxy_plane(x, q, cfg) for x in X]
    return tuple(list(t) for t in zip(*outs))


# ---------------------------------------------------------------- rate

@dataclass
class RateLossRecord:
    S: float
    R: float
    a: float
    L_R: Tensor


def log_magnitude_sum(Y: Planes, q: Tensor) -> Tensor:
    ys = [Y] if isinstance(Y, Tensor) else list(Y)
    total = None
    for y in ys:
        s = tsum(log1p(div(tabs(y), q)))
        total = s if total is None else add(total, s)
    return total


def rate_loss_record(Y: Planes, q: Tensor, R: float) -> RateLossRecord:
    if R < 0:
        raise ValueError(f"rate must be non-negative, got {R}")
    S = log_magnitude_sum(Y, q)
    a = stop_gradient(np.asarray(float(R) / max(S.item(), S_EPS), dtype=S.dtype))
    return RateLossRecord(S.item(), float(R), a.item(), mul(a, S))


def rate_loss(Y: Planes, q: Tensor, R: float) -> Tensor:
    """Rate term whose value equals ``R`` and whose gradient is that of the log-magnitude sum."""
    return rate_loss_record(Y, q, R).L_R


def codec_samples(x: np.ndarray, bit_depth: int) -> np.ndarray:
    """Clip and round codec-range floats to integer samples, then keep the top 8 bits."""
    ints = round_half_away(np.clip(x, 0, (1 << bit_depth) - 1))
    return msb8(ints, bit_depth)


def real_coder_bits(planes: Sequence[np.ndarray], q: float, bit_depth: int) -> int:
    """Total bits the baseline coder spends on ``planes`` at the qf matching ``q``."""
    qf = q_to_qf(q, bit_depth)
    return sum(baseline_gray_bits(codec_samples(p, bit_depth), qf) for p in planes)


__all__ = [
    "BLOCK_SIZES", "ProxyConfig", "RateLossRecord", "block_dct2d", "block_idct2d", "proxy_apply",
    "q_to_qf", "qf_to_q", "rate_loss", "rate_loss_record", "real_coder_bits", "draw_block_size",
    "log_magnitude_sum", "codec_samples",
]
