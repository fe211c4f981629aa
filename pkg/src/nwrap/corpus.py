"""Desk-scale training corpus and synthetic evaluation clips."""
from __future__ import annotations

from fractions import Fraction
from pathlib import Path

import numpy as np

from .frame_io import FrameYUV420, Sequence, write_ppm

PHOTOS = ("astronaut", "coffee", "chelsea", "rocket", "immunohistochemistry", "hubble_deep_field",
          "retina", "cat", "colorwheel", "camera", "coins", "moon", "brick", "grass", "gravel")


def _photo(name: str) -> np.ndarray:
    from skimage import data  # optional dependency, only needed to build the corpus
    img = getattr(data, name)()
    if img.ndim == 2:
        img = np.repeat(img[..., None], 3, axis=2)
    img = img[..., :3]
    if img.dtype != np.uint8:
        img = (255 * (img.astype(np.float64) / img.max())).round().astype(np.uint8)
    return img


def make_desk_corpus(out_dir, n_images: int = 24, tile: int = 256, seed: int = 0, exclude=()) -> list:
    """Cut ``n_images`` random ``tile`` x ``tile`` PPM tiles from scikit-image's bundled photos."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    photos = [p for p in PHOTOS if p not in exclude]
    imgs = {p: _photo(p) for p in photos}
    imgs = {p: im for p, im in imgs.items() if im.shape[0] >= tile and im.shape[1] >= tile}
    if not imgs:
        raise ValueError(f"no bundled photo is at least {tile}x{tile}")
    names = sorted(imgs)
    paths = []
    for i in range(n_images):
        name = names[i % len(names)]
        im = imgs[name]
        r = rng.integers(im.shape[0] - tile + 1)
        c = rng.integers(im.shape[1] - tile + 1)
        path = out / f"{i:03d}_{name}.ppm"
        write_ppm(im[r:r + tile, c:c + tile], path)
        paths.append(path)
    return paths


def smooth_clip(height: int = 128, width: int = 192, frames: int = 2, seed: int = 0,
                bit_depth: int = 8, fps=30) -> Sequence:
    """Low-frequency synthetic content: a few random drifting sinusoids per plane."""
    rng = np.random.default_rng(seed)
    maxv = (1 << bit_depth) - 1

    def field(h, w, t, params, mid, amp):
        yy, xx = np.mgrid[0:h, 0:w] / max(h, w)
        v = np.zeros((h, w))
        for fy, fx, ph, a, vel in params:
            v += a * np.sin(2 * np.pi * (fy * yy + fx * xx) + ph + vel * t)
        return np.clip(np.round((mid + amp * v / len(params)) * maxv), 0, maxv).astype(np.uint16)

    def draw(n):
        return [(rng.uniform(0.3, 2.5), rng.uniform(0.3, 2.5), rng.uniform(0, 2 * np.pi),
                 rng.uniform(0.5, 1.0), rng.uniform(0.05, 0.2)) for _ in range(n)]

    py, pu, pv = draw(4), draw(2), draw(2)
    out = []
    for t in range(frames):
        y = field(height, width, t, py, 0.5, 0.35)
        u = field(height // 2, width // 2, t, pu, 0.5, 0.12)
        v = field(height // 2, width // 2, t, pv, 0.5, 0.12)
        out.append(FrameYUV420(y, u, v, bit_depth))
    return Sequence(out, Fraction(fps))
