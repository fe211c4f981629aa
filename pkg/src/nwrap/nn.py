"""Convolution, activation and resize ops on N x C x H x W tensors.

Every op also accepts a single C x H x W image and returns the same rank.
Spatial convolutions zero-pad symmetrically by (k - 1) // 2, so stride 1
preserves extents and stride s yields ceil(extent / s).
"""
from __future__ import annotations

from typing import Optional, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import kernels
from .filters import resample_matrix
from .tensor import Tensor, _record, reshape, permute

Pad = Union[str, int]


def _promote(x: Tensor):
    if x.ndim == 3:
        return reshape(x, (1,) + x.shape), True
    if x.ndim != 4:
        raise ValueError(f"expected a C x H x W or N x C x H x W tensor, got shape {x.shape}")
    return x, False


def _demote(y: Tensor, squeezed: bool) -> Tensor:
    return reshape(y, y.shape[1:]) if squeezed else y


def _pad_amount(k: int, pad: Pad) -> int:
    if pad == "same":
        return (k - 1) // 2
    if pad == "valid":
        return 0
    return int(pad)


def _out_extent(n: int, k: int, stride: int, p: int) -> int:
    return (n + 2 * p - k) // stride + 1


def _zero_pad(a: np.ndarray, ph: int, pw: int) -> np.ndarray:
    if ph == 0 and pw == 0:
        return np.ascontiguousarray(a)
    return np.pad(a, ((0, 0), (0, 0), (ph, ph), (pw, pw)))


# ---------------------------------------------------------------- depthwise

def depthwise_conv2d(x: Tensor, k: Tensor, stride: int = 1, pad: Pad = "same",
                     bias: Optional[Tensor] = None) -> Tensor:
    """Per-channel spatial convolution; ``k`` is C x kh x kw."""
    x4, squeezed = _promote(x)
    if k.ndim != 3 or k.shape[0] != x4.shape[1]:
        raise ValueError(f"depthwise_conv2d: input {x4.shape} and kernel {k.shape} disagree on channels")
    kh, kw = k.shape[1:]
    if kh % 2 == 0 or kw % 2 == 0:
        raise ValueError(f"depthwise_conv2d: kernel extents must be odd, got {k.shape}")
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    ph, pw = _pad_amount(kh, pad), _pad_amount(kw, pad)
    h, w = x4.shape[2:]
    oh, ow = _out_extent(h, kh, stride, ph), _out_extent(w, kw, stride, pw)
    dtype = np.result_type(x4.dtype, k.dtype)
    xpad = _zero_pad(x4.data.astype(dtype, copy=False), ph, pw)
    kd = np.ascontiguousarray(k.data, dtype=dtype)
    out = kernels.dwconv_forward(xpad, kd, stride, oh, ow)

    def bwd(g):
        gxp, gk = kernels.dwconv_backward(xpad, kd, np.ascontiguousarray(g, dtype=dtype), stride)
        return gxp[:, :, ph:ph + h, pw:pw + w], gk

    y = _record(out, (x4, k), bwd)
    if bias is not None:
        y = add_channel_bias(y, bias)
    return _demote(y, squeezed)


# ---------------------------------------------------------------- channel mixing

def add_channel_bias(x: Tensor, b: Tensor) -> Tensor:
    if b.ndim != 1 or b.shape[0] != x.shape[1]:
        raise ValueError(f"bias of shape {b.shape} does not match {x.shape[1]} channels")
    return _record(x.data + b.data[None, :, None, None], (x, b),
                   lambda g: (g, g.sum(axis=(0, 2, 3))))


def pointwise_conv2d(x: Tensor, k: Tensor, b: Optional[Tensor] = None) -> Tensor:
    """1x1 cross-channel convolution; ``k`` is Cout x Cin, ``b`` is Cout."""
    x4, squeezed = _promote(x)
    if k.ndim != 2 or k.shape[1] != x4.shape[1]:
        raise ValueError(f"pointwise_conv2d: input {x4.shape} has {x4.shape[1]} channels, kernel {k.shape} expects {k.shape[1] if k.ndim == 2 else '?'}")
    xd, kd = x4.data, k.data
    out = np.einsum("oc,nchw->nohw", kd, xd)

    def bwd(g):
        return np.einsum("oc,nohw->nchw", kd, g), np.einsum("nohw,nchw->oc", g, xd)

    y = _record(out, (x4, k), bwd)
    if b is not None:
        y = add_channel_bias(y, b)
    return _demote(y, squeezed)


# ---------------------------------------------------------------- dense convolution

def _windows(xpad: np.ndarray, kh: int, kw: int, stride: int, oh: int, ow: int) -> np.ndarray:
    win = sliding_window_view(xpad, (kh, kw), axis=(2, 3))
    return win[:, :, : stride * (oh - 1) + 1: stride, : stride * (ow - 1) + 1: stride]


def _conv_fwd(xd, kd, stride, ph, pw):
    kh, kw = kd.shape[2:]
    h, w = xd.shape[2:]
    oh, ow = _out_extent(h, kh, stride, ph), _out_extent(w, kw, stride, pw)
    xpad = _zero_pad(xd, ph, pw)
    win = _windows(xpad, kh, kw, stride, oh, ow)
    out = np.tensordot(win, kd, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
    return np.ascontiguousarray(out), xpad


def _conv_bwd_data(g, kd, stride, ph, pw, h, w):
    """Adjoint of _conv_fwd w.r.t. its input of extent h x w."""
    kh, kw = kd.shape[2:]
    oh, ow = g.shape[2:]
    cols = np.tensordot(g, kd, axes=([1], [0]))  # n, oh, ow, c, kh, kw
    gxp = np.zeros((g.shape[0], kd.shape[1], h + 2 * ph, w + 2 * pw), dtype=g.dtype)
    for a in range(kh):
        for b in range(kw):
            gxp[:, :, a:a + stride * (oh - 1) + 1:stride, b:b + stride * (ow - 1) + 1:stride] += \
                cols[:, :, :, :, a, b].transpose(0, 3, 1, 2)
    return gxp[:, :, ph:ph + h, pw:pw + w]


def _conv_bwd_kernel(g, xpad, kshape, stride):
    kh, kw = kshape[2:]
    oh, ow = g.shape[2:]
    win = _windows(xpad, kh, kw, stride, oh, ow)
    return np.tensordot(g, win, axes=([0, 2, 3], [0, 2, 3]))


def conv2d(x: Tensor, k: Tensor, b: Optional[Tensor] = None, stride: int = 1) -> Tensor:
    """Dense convolution, ``k`` is Cout x Cin x kh x kw, zero 'same' padding."""
    x4, squeezed = _promote(x)
    if k.ndim != 4 or k.shape[1] != x4.shape[1]:
        raise ValueError(f"conv2d: input {x4.shape} and kernel {k.shape} disagree on channels")
    kh, kw = k.shape[2:]
    ph, pw = (kh - 1) // 2, (kw - 1) // 2
    h, w = x4.shape[2:]
    dtype = np.result_type(x4.dtype, k.dtype)
    xd, kd = x4.data.astype(dtype, copy=False), k.data.astype(dtype, copy=False)
    out, xpad = _conv_fwd(xd, kd, stride, ph, pw)

    def bwd(g):
        return _conv_bwd_data(g, kd, stride, ph, pw, h, w), _conv_bwd_kernel(g, xpad, kd.shape, stride)

    y = _record(out, (x4, k), bwd)
    if b is not None:
        y = add_channel_bias(y, b)
    return _demote(y, squeezed)


def _check_stride(x4: Tensor, stride: int, op: str, divisible: bool = True):
    if stride not in (2, 3):
        raise ValueError(f"{op}: stride must be 2 or 3, got {stride}")
    h, w = x4.shape[2:]
    if divisible and (h % stride or w % stride):
        raise ValueError(f"{op}: input extents {h}x{w} are not divisible by stride {stride}; pad the input first")


def strided_conv2d(x: Tensor, k: Tensor, stride: int, b: Optional[Tensor] = None) -> Tensor:
    """Downsampling convolution: extents shrink exactly by ``stride``."""
    x4, _ = _promote(x)
    _check_stride(x4, stride, "strided_conv2d")
    return conv2d(x, k, b, stride=stride)


def transposed_conv2d(x: Tensor, k: Tensor, stride: int, b: Optional[Tensor] = None) -> Tensor:
    """Upsampling convolution, the adjoint of :func:`strided_conv2d`.

    ``k`` is Cin x Cout x kh x kw (the layout of the strided convolution it
    transposes); extents grow exactly by ``stride``.
    """
    x4, squeezed = _promote(x)
    _check_stride(x4, stride, "transposed_conv2d", divisible=False)
    if k.ndim != 4 or k.shape[0] != x4.shape[1]:
        raise ValueError(f"transposed_conv2d: input {x4.shape} and kernel {k.shape} disagree on channels")
    kh, kw = k.shape[2:]
    ph, pw = (kh - 1) // 2, (kw - 1) // 2
    h, w = x4.shape[2:]
    H, W = h * stride, w * stride
    if _out_extent(H, kh, stride, ph) != h or _out_extent(W, kw, stride, pw) != w:
        raise ValueError(f"transposed_conv2d: kernel {kh}x{kw} incompatible with stride {stride}")
    dtype = np.result_type(x4.dtype, k.dtype)
    xd, kd = x4.data.astype(dtype, copy=False), k.data.astype(dtype, copy=False)
    out = _conv_bwd_data(xd, kd, stride, ph, pw, H, W)

    def bwd(g):
        gx, gpad = _conv_fwd(g, kd, stride, ph, pw)
        gk = _conv_bwd_kernel(xd, gpad, kd.shape, stride)
        return gx, gk

    y = _record(np.ascontiguousarray(out), (x4, k), bwd)
    if b is not None:
        y = add_channel_bias(y, b)
    return _demote(y, squeezed)


# ---------------------------------------------------------------- activation / resize

def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    xd = x.data
    pos = xd > 0
    return _record(np.where(pos, xd, slope * xd), (x,), lambda g: (np.where(pos, g, slope * g),))


def bilinear_resize(x: Tensor, out_h: int, out_w: int) -> Tensor:
    """Bilinear resize of the last two axes (half-pixel centres, no antialias)."""
    if out_h < 1 or out_w < 1:
        raise ValueError(f"bilinear_resize: output extents must be >= 1, got {out_h}x{out_w}")
    h, w = x.shape[-2:]
    if (h, w) == (out_h, out_w):
        return x
    mh = resample_matrix(h, out_h, "bilinear", False).astype(x.dtype)
    mw = resample_matrix(w, out_w, "bilinear", False).astype(x.dtype)
    out = mh @ x.data @ mw.T
    return _record(out, (x,), lambda g: (mh.T @ g @ mw,))


def space_to_depth(x: Tensor) -> Tensor:
    """N x 1 x H x W -> N x 4 x H/2 x W/2, channels TL, TR, BL, BR of each 2x2 block."""
    n, c, h, w = x.shape
    if c != 1 or h % 2 or w % 2:
        raise ValueError(f"space_to_depth needs one channel with even extents, got {x.shape}")
    t = reshape(x, (n, h // 2, 2, w // 2, 2))
    t = permute(t, (0, 2, 4, 1, 3))
    return reshape(t, (n, 4, h // 2, w // 2))


def depth_to_space(x: Tensor) -> Tensor:
    """Exact inverse of :func:`space_to_depth`."""
    n, c, h, w = x.shape
    if c != 4:
        raise ValueError(f"depth_to_space needs 4 channels, got {x.shape}")
    t = reshape(x, (n, 2, 2, h, w))
    t = permute(t, (0, 3, 1, 4, 2))
    return reshape(t, (n, 1, 2 * h, 2 * w))
