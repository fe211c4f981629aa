"""End-to-end training of pre/post pairs and post-only models through the codec proxy."""
from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np

from .filters import resample_matrix
from .frame_io import PLANE_WEIGHTS, FrameYUV420, load_image_as_yuv420, normalize_plane
from .models import (WrapperModel, bind, build_postprocessor, build_preprocessor,
                     model_filename, post_forward, pre_forward, save_weights)
from .proxy import ProxyConfig, draw_block_size, proxy_apply, rate_loss_record, real_coder_bits
from .resample import get_ratio
from .tensor import (Graph, Tensor, add, add_const, backward, crop, mean, scale, square, sub)

log = logging.getLogger(__name__)

# MSE in normalised units times this is MSE in 8-bit code values
CODE_SCALE = (255.0 / 2.0) ** 2


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    ratio: str = "1/2"
    flag: str = "pair"               # pair | post-only
    lam: float = 16.0
    depth: int = 10
    crop: int = 256
    steps: int = 5000
    batch: int = 8
    lr: float = 1e-3
    seed: int = 0
    dataset_root: str = ""
    out_dir: str = "models"
    log_path: str = ""
    qf_init: float = 75.0
    log_every: int = 1

    def __post_init__(self):
        self.ratio = str(get_ratio(self.ratio))
        if self.flag not in ("pair", "post-only"):
            raise ValueError(f"flag must be 'pair' or 'post-only', got {self.flag!r}")
        if not self.lam > 0:
            raise ValueError(f"lambda must be positive, got {self.lam}")
        if self.depth not in (8, 10):
            raise ValueError(f"bottleneck depth must be 8 or 10, got {self.depth}")
        if self.crop < 16 or self.crop % 2:
            raise ValueError(f"crop must be an even size of at least 16, got {self.crop}")
        if self.steps < 1 or self.batch < 1:
            raise ValueError("steps and batch must be positive")
        if not self.lr > 0:
            raise ValueError(f"learning rate must be positive, got {self.lr}")


def _coerce(value: str, typ):
    if typ in (int, "int"):
        return int(value)
    if typ in (float, "float"):
        return float(value)
    return value


def load_config(path=None, overrides: Optional[dict] = None) -> TrainConfig:
    """Read a flat ``key = value`` file ('#' comments), then apply ``overrides``."""
    values = {}
    if path is not None:
        for n, line in enumerate(Path(path).read_text().splitlines(), start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, val = line.partition("=")
            if not sep:
                raise ValueError(f"{path}:{n}: expected key = value, got {line!r}")
            values[key.strip().replace("-", "_")] = val.strip()
    for k, v in (overrides or {}).items():
        if v is not None:
            values[k.replace("-", "_")] = v
    if "lambda" in values:
        values["lam"] = values.pop("lambda")
    types = {f.name: f.type for f in fields(TrainConfig)}
    unknown = sorted(set(values) - set(types))
    if unknown:
        raise ValueError(f"unknown config key(s): {', '.join(unknown)}")
    return TrainConfig(**{k: _coerce(v, types[k]) if isinstance(v, str) else v for k, v in values.items()})


# ---------------------------------------------------------------- loss

def distortion(x, xhat) -> Tensor:
    """6:1:1-weighted plane MSE in normalised space, expressed in 8-bit code units."""
    total = None
    for w, a, b in zip(PLANE_WEIGHTS, x, xhat):
        if a.shape != b.shape:
            raise ValueError(f"plane shapes differ: {a.shape} vs {b.shape}")
        term = scale(mean(square(sub(b, a))), w / sum(PLANE_WEIGHTS) * CODE_SCALE)
        total = term if total is None else add(total, term)
    return total


def rd_loss(x, xhat, L_R: Tensor, lam: float) -> Tensor:
    """L = L_D + lambda * L_R."""
    return add(distortion(x, xhat), scale(L_R, lam))


# ---------------------------------------------------------------- data

class ImageDataset:
    """PPM images under a directory, converted to 4:2:0 on load."""

    def __init__(self, root, crop: int = 0):
        root = Path(root)
        files = sorted(p for p in root.glob("*.ppm")) if root.is_dir() else []
        if not files:
            raise ValueError(f"dataset directory {root} has no .ppm images")
        self.frames = []
        for f in files:
            fr = load_image_as_yuv420(f)
            if fr.height < crop or fr.width < crop:
                log.warning("skipping %s: %dx%d is smaller than the %d crop", f.name, fr.height, fr.width, crop)
                continue
            self.frames.append(fr)
        if not self.frames:
            raise ValueError(f"no image in {root} is at least {crop}x{crop}")

    def __len__(self):
        return len(self.frames)


def make_training_batch(dataset, crop: int, batch: int, seed) -> tuple:
    """Uniform random image and even-aligned position per sample -> normalised
    (Y, U, V) tensors of shape batch x 1 x h x w."""
    frames = dataset.frames if isinstance(dataset, ImageDataset) else list(dataset)
    frames = [f for f in frames if f.height >= crop and f.width >= crop]
    if not frames:
        raise ValueError("no image in the dataset is large enough for the crop")
    rng = np.random.default_rng(seed)
    ys, us, vs = [], [], []
    for _ in range(batch):
        f: FrameYUV420 = frames[rng.integers(len(frames))]
        r = 2 * rng.integers((f.height - crop) // 2 + 1)
        c = 2 * rng.integers((f.width - crop) // 2 + 1)
        ys.append(normalize_plane(f.y[r:r + crop, c:c + crop], f.bit_depth))
        us.append(normalize_plane(f.u[r // 2:(r + crop) // 2, c // 2:(c + crop) // 2], f.bit_depth))
        vs.append(normalize_plane(f.v[r // 2:(r + crop) // 2, c // 2:(c + crop) // 2], f.bit_depth))
    return tuple(Tensor(np.stack(p)[:, None]) for p in (ys, us, vs))


def _pad_batch(planes, ratio):
    m = ratio.pad_multiple
    y = planes[0].data
    ph, pw = (-y.shape[2]) % m, (-y.shape[3]) % m
    if not (ph or pw):
        return planes
    widths = lambda a, b: ((0, 0), (0, 0), (0, a), (0, b))
    return (Tensor(np.pad(planes[0].data, widths(ph, pw), mode="edge")),
            Tensor(np.pad(planes[1].data, widths(ph // 2, pw // 2), mode="edge")),
            Tensor(np.pad(planes[2].data, widths(ph // 2, pw // 2), mode="edge")))


def _bilinear_down(planes, ratio):
    out = []
    for p in planes:
        h, w = p.shape[2:]
        oh, ow = ratio.bottleneck_extent(h), ratio.bottleneck_extent(w)
        if (oh, ow) == (h, w):
            out.append(Tensor(p.data.copy()))
            continue
        mh = resample_matrix(h, oh, "bilinear")
        mw = resample_matrix(w, ow, "bilinear")
        out.append(Tensor(mh @ p.data @ mw.T))
    return tuple(out)


# ---------------------------------------------------------------- optimiser

class Adam:
    def __init__(self, params: dict, lr: float, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = params
        self.lr, self.b1, self.b2, self.eps = lr, betas[0], betas[1], eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, grads: dict):
        self.t += 1
        c1 = 1 - self.b1 ** self.t
        c2 = 1 - self.b2 ** self.t
        for k, p in self.params.items():
            g = grads[k]
            self.m[k] = self.b1 * self.m[k] + (1 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1 - self.b2) * g * g
            p -= self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


# ---------------------------------------------------------------- pipeline

@dataclass
class StepRecord:
    step: int
    L: float
    L_D: float
    L_R: float
    q: float
    qf: int
    L_block: int = 8

    def to_json(self):
        return json.dumps(asdict(self))


def pipeline_loss(graph: Graph, x, pre: Optional[WrapperModel], post: WrapperModel, log_q: np.ndarray,
                  L: int, lam: float, depth: int = 10, rate: Optional[float] = None):
    """One forward pass: source planes -> (pre | bilinear) -> proxy -> post -> R-D loss.

    Registers every trainable array with ``graph`` (post params prefixed
    ``post.``, pre params ``pre.``, the stepsize ``log_q``). ``rate`` fixes the
    real-coder bitrate (bits per source pixel) instead of measuring it.
    Returns (loss, L_D, RateLossRecord).
    """
    ratio = post.ratio
    h, w = x[0].shape[2:]
    xp = _pad_batch(x, ratio)
    lin = _bilinear_down(xp, ratio)
    if pre is not None:
        P_pre = bind(pre, graph, prefix="pre.")
        bott = pre_forward(pre, P_pre, *xp, lin)
    else:
        bott = lin
    maxv = float((1 << depth) - 1)
    codec_in = [add_const(scale(b, maxv / 2.0), maxv / 2.0) for b in bott]
    lq = graph.parameter("log_q", log_q)
    cfg = ProxyConfig(lq, L, depth)
    q = cfg.q
    xhat, Y, _ = proxy_apply(codec_in, cfg, q)
    if rate is None:
        planes = [p.data[n, 0] for p in codec_in for n in range(p.shape[0])]
        rate = real_coder_bits(planes, float(q.item()), depth) / (x[0].shape[0] * h * w)
    rec = rate_loss_record(Y, q, rate)
    dec = [add_const(scale(t, 2.0 / maxv), -1.0) for t in xhat]
    P_post = bind(post, graph, prefix="post.")
    out = post_forward(post, P_post, *dec, xp[0].shape[2], xp[0].shape[3])
    out = [crop(o, s.shape[2], s.shape[3]) for o, s in zip(out, x)]
    L_D = distortion(x, out)
    return add(L_D, scale(rec.L_R, lam)), L_D, rec


@dataclass
class TrainResult:
    models: dict                     # kind -> WrapperModel
    log: list = field(default_factory=list)
    q: float = 0.0
    files: list = field(default_factory=list)
    seconds: float = 0.0


def smoothed(values, frac: float = 0.1) -> tuple:
    """Means of the first and last ``frac`` of a series."""
    n = max(1, int(len(values) * frac))
    return float(np.mean(values[:n])), float(np.mean(values[-n:]))


def train_model(config: TrainConfig, dataset=None, init: Optional[dict] = None, save: bool = True) -> TrainResult:
    """Optimise a pair (or a post-only model) with Adam; write weights and the step log."""
    ratio = get_ratio(config.ratio)
    dataset = dataset if dataset is not None else ImageDataset(config.dataset_root, config.crop)
    init = init or {}
    post = init.get("post") or build_postprocessor(ratio, config.flag, seed=config.seed)
    pre = None
    if config.flag == "pair":
        pre = init.get("pre") or build_preprocessor(ratio, seed=config.seed + 1)
    log_q = np.array(np.log(ProxyConfig.initial(config.depth, config.qf_init).q_value))

    params = {f"post.{k}": v for k, v in post.params.items()}
    if pre is not None:
        params.update({f"pre.{k}": v for k, v in pre.params.items()})
    params["log_q"] = log_q
    opt = Adam(params, config.lr)
    block_rng = np.random.default_rng([config.seed, 1])
    records = []
    log_fh = open(config.log_path, "w") if config.log_path else None
    t0 = time.perf_counter()
    try:
        for step in range(config.steps):
            x = make_training_batch(dataset, config.crop, config.batch, [config.seed, 0, step])
            L = draw_block_size(block_rng)
            with Graph() as g:
                loss, L_D, rec = pipeline_loss(g, x, pre, post, log_q, L, config.lam, config.depth)
            value = loss.item()
            if not math.isfinite(value):
                raise TrainingDiverged(f"loss became {value} at step {step}")
            backward(g, loss)
            opt.step({k: t.grad for k, t in g.params.items()})
            q = float(np.exp(log_q))
            r = StepRecord(step, value, L_D.item(), rec.L_R.item(), q,
                           ProxyConfig(Tensor(log_q.copy()), L, config.depth).qf, L)
            records.append(r)
            if log_fh and step % config.log_every == 0:
                log_fh.write(r.to_json() + "\n")
    finally:
        if log_fh:
            log_fh.close()
    models = {"post": post}
    if pre is not None:
        models["pre"] = pre
    result = TrainResult(models, records, float(np.exp(log_q)), seconds=time.perf_counter() - t0)
    if save:
        out = Path(config.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        for kind, m in models.items():
            path = out / model_filename(kind, ratio, config.flag)
            save_weights(m, path)
            result.files.append(str(path))
    return result


def read_log(path) -> list:
    return [StepRecord(**json.loads(line)) for line in Path(path).read_text().splitlines() if line.strip()]


__all__ = [
    "TrainConfig", "load_config", "rd_loss", "distortion", "make_training_batch", "ImageDataset",
    "train_model", "pipeline_loss", "Adam", "TrainingDiverged", "TrainResult", "StepRecord",
    "smoothed", "read_log",
]
