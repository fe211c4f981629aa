"""Separable linear resampling matrices (bilinear, Lanczos-4)."""
from functools import lru_cache

import numpy as np

SUPPORT = {"bilinear": 1.0, "lanczos4": 4.0}


def _kernel(kind: str, x: np.ndarray) -> np.ndarray:
    ax = np.abs(x)
    if kind == "bilinear":
        return np.maximum(0.0, 1.0 - ax)
    if kind == "lanczos4":
        return np.where(ax < 4.0, np.sinc(x) * np.sinc(x / 4.0), 0.0)
    raise ValueError(f"unknown filter {kind!r}; expected one of {sorted(SUPPORT)}")


@lru_cache(maxsize=256)
def resample_matrix(n_in: int, n_out: int, kind: str = "bilinear", antialias: bool = True) -> np.ndarray:
    """Return the (n_out, n_in) matrix mapping a 1-D signal to ``n_out`` samples.

    Sample centres follow the half-pixel (align-corners=false) convention.
    When shrinking with ``antialias`` the kernel is stretched by the scale
    factor. Out-of-range taps replicate the edge sample and every row is
    normalised to sum to one, so constants are preserved exactly.
    """
    if n_in < 1 or n_out < 1:
        raise ValueError(f"resample extents must be >= 1, got {n_in} -> {n_out}")
    support = SUPPORT.get(kind)
    if support is None:
        raise ValueError(f"unknown filter {kind!r}; expected one of {sorted(SUPPORT)}")
    scale = n_in / n_out
    stretch = scale if (antialias and scale > 1.0) else 1.0
    m = np.zeros((n_out, n_in))
    if n_in == n_out:
        np.fill_diagonal(m, 1.0)
        m.setflags(write=False)
        return m
    reach = support * stretch
    for i in range(n_out):
        center = (i + 0.5) * scale - 0.5
        taps = np.arange(int(np.floor(center - reach)), int(np.ceil(center + reach)) + 1)
        w = _kernel(kind, (taps - center) / stretch)
        np.add.at(m[i], np.clip(taps, 0, n_in - 1), w)
        m[i] /= m[i].sum()
    m.setflags(write=False)
    return m


def resample_plane(plane: np.ndarray, out_h: int, out_w: int, kind: str = "bilinear",
                   antialias: bool = True) -> np.ndarray:
    """Resample the last two axes of ``plane`` to ``out_h`` x ``out_w`` (float result)."""
    h, w = plane.shape[-2:]
    mh = resample_matrix(h, out_h, kind, antialias)
    mw = resample_matrix(w, out_w, kind, antialias)
    return mh @ np.asarray(plane, dtype=np.float64) @ mw.T
