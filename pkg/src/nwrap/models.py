"""Pre-/post-processor topologies, inference, weight files and complexity counts.

Both networks work on the 4:2:0 frame packed as six channels at half luma
resolution (four space-to-depth luma phases plus U and V). The post-processor
uses only depthwise 3x3 plus pointwise 1x1 layers in a three-level UNet and
predicts a residual over the bilinear shortcut; the pre-processor is a small
dense UNet whose down/up strides realise the ratio, summed with a 1x1 MLP on
the linearly downsampled input.
"""
from __future__ import annotations

import hashlib
import json
import os
import struct
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Optional

import numpy as np

from . import nn
from .frame_io import FrameYUV420, denormalize
from .resample import (Ratio, crop_frame, frame_tensors, get_ratio, pack_planes, pad_frame,
                       padded_extents, resample_frame)
from .tensor import (INFER_DTYPE, TRAIN_DTYPE, Graph, Tensor, add, channels, crop,
                     pad_replicate)

MAGIC = b"NWRP"
FORMAT_VERSION = 1
SLOPE = 0.2
BOTTLENECK_DEPTH = 10

POST_WIDTHS = (17, 24, 40)
PRE_WIDTHS = (16, 32)
MLP_WIDTH = 12

CONVENTIONS = {
    "space_to_depth": "row-major 2x2 phases: TL, TR, BL, BR",
    "padding": "zero, (k-1)//2 each side",
    "activation": f"leaky_relu {SLOPE}",
    "layout": "N x C x H x W",
}

PRE_STRIDES = {  # ratio index -> (down strides, up stride or None)
    1: ((2,), 2),
    2: ((2,), None),
    3: ((3,), 2),
    4: ((2, 2), None),
}


@dataclass(frozen=True)
class LayerSpec:
    name: str
    op: str            # dw | pw | conv | sconv | tconv
    cin: int
    cout: int
    kernel: int = 1
    stride: int = 1
    res: Fraction = Fraction(1)   # output extent relative to the source frame

    def weight_shape(self):
        k = self.kernel
        return {
            "dw": (self.cin, k, k),
            "pw": (self.cout, self.cin),
            "conv": (self.cout, self.cin, k, k),
            "sconv": (self.cout, self.cin, k, k),
            "tconv": (self.cin, self.cout, k, k),
        }[self.op]

    def macs_per_output_pixel(self) -> int:
        k2 = self.kernel * self.kernel
        if self.op == "dw":
            return k2 * self.cout
        return k2 * self.cin * self.cout

    def n_params(self) -> int:
        return int(np.prod(self.weight_shape())) + self.cout

    def to_dict(self):
        d = asdict(self)
        d["res"] = str(self.res)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["res"] = Fraction(d["res"])
        return cls(**d)


@dataclass
class WrapperModel:
    kind: str                     # "pre" | "post"
    ratio: Ratio
    layers: list
    params: dict = field(default_factory=dict)
    flag: str = "pair"            # "pair" | "post-only"
    version: int = FORMAT_VERSION

    def layer(self, name: str) -> LayerSpec:
        for spec in self.layers:
            if spec.name == name:
                return spec
        raise KeyError(f"{self.kind}-processor has no layer {name!r}")

    def topology_hash(self) -> str:
        desc = json.dumps([s.to_dict() for s in self.layers], sort_keys=True)
        return hashlib.sha256(desc.encode()).hexdigest()[:16]

    def copy(self) -> "WrapperModel":
        return WrapperModel(self.kind, self.ratio, list(self.layers),
                            {k: v.copy() for k, v in self.params.items()}, self.flag, self.version)


# ---------------------------------------------------------------- topology

def _post_layers():
    c0, c1, c2 = POST_WIDTHS
    h0, h1, h2 = Fraction(1, 2), Fraction(1, 4), Fraction(1, 8)
    return [
        LayerSpec("in_dw", "dw", 6, 6, 3, 1, h0),
        LayerSpec("in_pw", "pw", 6, c0, 1, 1, h0),
        LayerSpec("e0_dw", "dw", c0, c0, 3, 1, h0),
        LayerSpec("e0_pw", "pw", c0, c0, 1, 1, h0),
        LayerSpec("d1_dw", "dw", c0, c0, 3, 2, h1),
        LayerSpec("d1_pw", "pw", c0, c1, 1, 1, h1),
        LayerSpec("e1_dw", "dw", c1, c1, 3, 1, h1),
        LayerSpec("e1_pw", "pw", c1, c1, 1, 1, h1),
        LayerSpec("d2_dw", "dw", c1, c1, 3, 2, h2),
        LayerSpec("d2_pw", "pw", c1, c2, 1, 1, h2),
        LayerSpec("m_dw", "dw", c2, c2, 3, 1, h2),
        LayerSpec("m_pw", "pw", c2, c2, 1, 1, h2),
        LayerSpec("u2_pw", "pw", c2, c1, 1, 1, h2),
        LayerSpec("r1_dw", "dw", c1, c1, 3, 1, h1),
        LayerSpec("r1_pw", "pw", c1, c1, 1, 1, h1),
        LayerSpec("u1_pw", "pw", c1, c0, 1, 1, h1),
        LayerSpec("r0_dw", "dw", c0, c0, 3, 1, h0),
        LayerSpec("r0_pw", "pw", c0, c0, 1, 1, h0),
        LayerSpec("out_pw", "pw", c0, 6, 1, 1, h0),
        LayerSpec("chroma", "conv", 2, 2, 3, 1, h0),
    ]


def _pre_layers(ratio: Ratio):
    p0, p1 = PRE_WIDTHS
    downs, up = PRE_STRIDES[ratio.k]
    res_in = Fraction(1, 2)
    res_out = res_in * ratio.fraction
    layers = [
        LayerSpec("e0", "conv", 6, p0, 3, 1, res_in),
        LayerSpec("e1", "conv", p0, p0, 3, 1, res_in),
    ]
    res = res_in
    cin = p0
    for i, s in enumerate(downs):
        res = res / s
        layers.append(LayerSpec(f"down{i}", "sconv", cin, p1, 3, s, res))
        cin = p1
    layers.append(LayerSpec("mid", "conv", p1, p1, 3, 1, res))
    if up is None:
        layers.append(LayerSpec("up", "conv", p1, p0, 3, 1, res))
    else:
        layers.append(LayerSpec("up", "tconv", p1, p0, 3, up, res * up))
    if layers[-1].res != res_out:
        raise AssertionError(f"pre-processor strides do not realise ratio {ratio}")
    layers += [
        LayerSpec("head", "conv", p0, 6, 3, 1, res_out),
        LayerSpec("mlp1", "pw", 6, MLP_WIDTH, 1, 1, res_out),
        LayerSpec("mlp2", "pw", MLP_WIDTH, MLP_WIDTH, 1, 1, res_out),
        LayerSpec("mlp3", "pw", MLP_WIDTH, 6, 1, 1, res_out),
    ]
    return layers


def _init_params(layers, rng: np.random.Generator):
    params = {}
    for spec in layers:
        shape = spec.weight_shape()
        fan_in = spec.kernel * spec.kernel * (1 if spec.op == "dw" else spec.cin)
        bound = np.sqrt(6.0 / ((1 + SLOPE ** 2) * fan_in))
        params[f"{spec.name}.w"] = rng.uniform(-bound, bound, size=shape)
        params[f"{spec.name}.b"] = np.zeros(spec.cout)
    return params


def _mlp_identity(params):
    """Three 1x1 layers that reproduce their input exactly through leaky ReLUs.

    Hidden units carry +x and -x; lrelu(x) - lrelu(-x) = (1 + slope) x.
    """
    eye = np.eye(6)
    gain = 1.0 / (1.0 + SLOPE)
    half = MLP_WIDTH // 2
    w1 = np.zeros((MLP_WIDTH, 6))
    w1[:6], w1[half:half + 6] = eye, -eye
    w2 = np.zeros((MLP_WIDTH, MLP_WIDTH))
    w2[:6, :6], w2[:6, half:half + 6] = gain * eye, -gain * eye
    w2[half:half + 6, :6], w2[half:half + 6, half:half + 6] = -gain * eye, gain * eye
    w3 = np.zeros((6, MLP_WIDTH))
    w3[:, :6], w3[:, half:half + 6] = gain * eye, -gain * eye
    for name, w in (("mlp1", w1), ("mlp2", w2), ("mlp3", w3)):
        params[f"{name}.w"] = w
        params[f"{name}.b"] = np.zeros(w.shape[0])


def build_postprocessor(ratio=2, flag: str = "post-only", seed: int = 0) -> WrapperModel:
    """Efficient post-processor; starts as the exact bilinear shortcut."""
    ratio = get_ratio(ratio)
    layers = _post_layers()
    params = _init_params(layers, np.random.default_rng(seed))
    params["out_pw.w"][:] = 0.0
    chroma = np.zeros((2, 2, 3, 3))
    chroma[0, 0, 1, 1] = chroma[1, 1, 1, 1] = 1.0
    params["chroma.w"] = chroma
    return WrapperModel("post", ratio, layers, params, flag)


def build_preprocessor(ratio, seed: int = 0) -> WrapperModel:
    """Pre-processor for one ratio; starts as the bilinear downsampler."""
    ratio = get_ratio(ratio)
    layers = _pre_layers(ratio)
    params = _init_params(layers, np.random.default_rng(seed))
    params["head.w"][:] = 0.0
    _mlp_identity(params)
    return WrapperModel("pre", ratio, layers, params, "pair")


# ---------------------------------------------------------------- forward passes

def bind(model: WrapperModel, graph: Optional[Graph] = None, dtype=TRAIN_DTYPE, prefix: str = ""):
    """Tensors for the model parameters, registered as trainable when ``graph`` is given."""
    if graph is None:
        return {k: Tensor(np.asarray(v, dtype=dtype)) for k, v in model.params.items()}
    return {k: graph.parameter(prefix + k, v) for k, v in model.params.items()}


def apply_layer(spec: LayerSpec, P: dict, x: Tensor) -> Tensor:
    w, b = P[f"{spec.name}.w"], P[f"{spec.name}.b"]
    if spec.op == "dw":
        return nn.depthwise_conv2d(x, w, spec.stride, "same", bias=b)
    if spec.op == "pw":
        return nn.pointwise_conv2d(x, w, b)
    if spec.op == "conv":
        return nn.conv2d(x, w, b)
    if spec.op == "sconv":
        return nn.strided_conv2d(x, w, spec.stride, b)
    if spec.op == "tconv":
        return nn.transposed_conv2d(x, w, spec.stride, b)
    raise ValueError(f"unknown layer op {spec.op!r}")


def _up2(x: Tensor, like: Tensor) -> Tensor:
    return nn.bilinear_resize(x, like.shape[2], like.shape[3])


def post_residual(model: WrapperModel, P: dict, x: Tensor) -> Tensor:
    """UNet over the packed N x 6 x h x w input (h, w divisible by 4)."""
    def L(name, t, act=True):
        t = apply_layer(model.layer(name), P, t)
        return nn.leaky_relu(t, SLOPE) if act else t

    f0 = L("e0_pw", L("e0_dw", L("in_pw", L("in_dw", x, False)), False))
    f1 = L("e1_pw", L("e1_dw", L("d1_pw", L("d1_dw", f0, False)), False))
    f2 = L("m_pw", L("m_dw", L("d2_pw", L("d2_dw", f1, False)), False))
    g1 = add(_up2(L("u2_pw", f2, False), f1), f1)
    g1 = L("r1_pw", L("r1_dw", g1, False))
    g0 = add(_up2(L("u1_pw", g1, False), f0), f0)
    g0 = L("r0_pw", L("r0_dw", g0, False))
    return L("out_pw", g0, False)


def post_forward(model: WrapperModel, P: dict, y: Tensor, u: Tensor, v: Tensor,
                 height: int, width: int):
    """Bottleneck planes (N x 1, normalised) -> reconstructed (Y, U, V) at height x width."""
    x = pack_planes(y, u, v, height, width)
    h2, w2 = x.shape[2:]
    ph, pw = (-h2) % 4, (-w2) % 4
    r = crop(post_residual(model, P, pad_replicate(x, ph, pw)), h2, w2)
    y_short = nn.bilinear_resize(y, height, width)
    y_out = add(y_short, nn.depth_to_space(channels(r, 0, 4)))
    uv = apply_layer(model.layer("chroma"), P, channels(x, 4, 6))
    uv = add(uv, channels(r, 4, 6))
    return y_out, channels(uv, 0, 1), channels(uv, 1, 2)


def pre_forward(model: WrapperModel, P: dict, y: Tensor, u: Tensor, v: Tensor, linear: tuple):
    """Source planes (N x 1, normalised, extents a multiple of the ratio's padding)
    -> bottleneck (Y, U, V). ``linear`` holds the bilinear-downsampled planes
    feeding the MLP path."""
    x = pack_planes(y, u, v, y.shape[2], y.shape[3])
    h2, w2 = x.shape[2:]
    m = 2 if model.ratio.k == 1 else 1
    ph, pw = (-h2) % m, (-w2) % m
    xp = pad_replicate(x, ph, pw)

    def L(name, t, act=True):
        t = apply_layer(model.layer(name), P, t)
        return nn.leaky_relu(t, SLOPE) if act else t

    t = L("e1", L("e0", xp))
    downs, _ = PRE_STRIDES[model.ratio.k]
    for i in range(len(downs)):
        t = L(f"down{i}", t)
    t = L("up", L("mid", t))
    unet = L("head", t, False)
    lin = pack_planes(*linear, linear[0].shape[2], linear[0].shape[3])
    unet = crop(unet, lin.shape[2], lin.shape[3])
    mlp = L("mlp3", L("mlp2", L("mlp1", lin)), False)
    out = add(unet, mlp)
    return nn.depth_to_space(channels(out, 0, 4)), channels(out, 4, 5), channels(out, 5, 6)


# ---------------------------------------------------------------- frame-level inference

def _check_model(model: WrapperModel, kind: str, ratio: Optional[Ratio] = None):
    if model.kind != kind:
        raise ValueError(f"expected a {kind}-processor, got a {model.kind}-processor")
    if ratio is not None and model.ratio != ratio:
        raise ValueError(f"model was built for ratio {model.ratio}, not {ratio}")


def linear_shortcut(bottleneck: FrameYUV420, ratio, height: int, width: int, bit_depth: int,
                    dtype=INFER_DTYPE) -> FrameYUV420:
    """The post-processor's shortcut path alone: bilinear upsampling in the
    normalised domain, cropped to ``height`` x ``width``."""
    ratio = get_ratio(ratio)
    full_h, full_w = ratio.source_extent(bottleneck.height), ratio.source_extent(bottleneck.width)
    y, u, v = frame_tensors(bottleneck, dtype)
    planes = (nn.bilinear_resize(y, full_h, full_w), nn.bilinear_resize(u, full_h // 2, full_w // 2),
              nn.bilinear_resize(v, full_h // 2, full_w // 2))
    return crop_frame(denormalize(planes, bit_depth), height, width)


def run_postprocess(model: WrapperModel, bottleneck: FrameYUV420, ratio, height: int, width: int,
                    bit_depth: int = 8, dtype=INFER_DTYPE) -> FrameYUV420:
    """Decoded bottleneck -> reconstruction of exactly ``height`` x ``width``."""
    ratio = get_ratio(ratio)
    _check_model(model, "post", ratio)
    full_h, full_w = ratio.source_extent(bottleneck.height), ratio.source_extent(bottleneck.width)
    if not (0 <= full_h - height < ratio.pad_multiple and 0 <= full_w - width < ratio.pad_multiple):
        raise ValueError(f"bottleneck {bottleneck.height}x{bottleneck.width} at ratio {ratio} "
                         f"is inconsistent with target {height}x{width}")
    P = bind(model, dtype=dtype)
    y, u, v = post_forward(model, P, *frame_tensors(bottleneck, dtype), full_h, full_w)
    return crop_frame(denormalize((y, u, v), bit_depth), height, width)


def run_preprocess(model: WrapperModel, frame: FrameYUV420, dtype=INFER_DTYPE) -> FrameYUV420:
    """Source frame -> 10-bit bottleneck at the model's ratio (source padded as needed)."""
    _check_model(model, "pre")
    ratio = model.ratio
    src = pad_frame(frame, *padded_extents(frame.height, frame.width, ratio))
    lin = resample_frame_float(src, ratio, dtype)
    P = bind(model, dtype=dtype)
    y, u, v = pre_forward(model, P, *frame_tensors(src, dtype), lin)
    return denormalize((y, u, v), BOTTLENECK_DEPTH)


def resample_frame_float(frame: FrameYUV420, ratio: Ratio, dtype=TRAIN_DTYPE):
    """Bilinear-downsampled normalised planes (unrounded) as N x 1 tensors."""
    from .filters import resample_plane
    from .frame_io import normalize_plane
    h, w = ratio.bottleneck_extent(frame.height), ratio.bottleneck_extent(frame.width)
    out = []
    for p, (ph, pw) in zip(frame.planes, ((h, w), (h // 2, w // 2), (h // 2, w // 2))):
        x = normalize_plane(p, frame.bit_depth)
        if x.shape != (ph, pw):
            x = resample_plane(x, ph, pw, "bilinear")
        out.append(Tensor(x.astype(dtype)[None, None]))
    return tuple(out)


def linear_downsample(frame: FrameYUV420, ratio) -> FrameYUV420:
    """Pad and bilinear-downsample a source frame to the 10-bit bottleneck."""
    ratio = get_ratio(ratio)
    src = pad_frame(frame, *padded_extents(frame.height, frame.width, ratio))
    return resample_frame(src, ratio, "bilinear", "down", out_bit_depth=BOTTLENECK_DEPTH)


# ---------------------------------------------------------------- complexity

def count_macs(model: WrapperModel, height: int = 2160, width: int = 3840):
    """(MACs per source pixel, parameter count) from the layer descriptors."""
    total = Fraction(0)
    for spec in model.layers:
        out_px = (height * spec.res) * (width * spec.res)
        total += spec.macs_per_output_pixel() * out_px
    n_params = sum(spec.n_params() for spec in model.layers)
    return float(total / (height * width)), n_params


# ---------------------------------------------------------------- weight files

def _header(model: WrapperModel) -> bytes:
    return json.dumps({
        "kind": model.kind,
        "ratio": str(model.ratio),
        "flag": model.flag,
        "layers": [s.to_dict() for s in model.layers],
        "conventions": CONVENTIONS,
        "topology": model.topology_hash(),
    }, sort_keys=True).encode("utf-8")


def save_weights(model: WrapperModel, path) -> None:
    header = _header(model)
    chunks = [MAGIC, struct.pack("<II", model.version, len(header)), header,
              struct.pack("<I", len(model.params))]
    for name in sorted(model.params):
        arr = np.asarray(model.params[name], dtype="<f4")
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(raw)) + raw + struct.pack("<B", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(arr.tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_weights(path, kind: Optional[str] = None) -> WrapperModel:
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise ValueError(f"{path}: bad magic {data[:4]!r}, expected {MAGIC!r}")
    try:
        version, hlen = struct.unpack_from("<II", data, 4)
        if version != FORMAT_VERSION:
            raise ValueError(f"{path}: format version {version}, this build reads {FORMAT_VERSION}")
        pos = 12
        header = json.loads(data[pos:pos + hlen].decode("utf-8"))
        pos += hlen
        (count,) = struct.unpack_from("<I", data, pos)
        pos += 4
        params = {}
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", data, pos)
            pos += 2
            name = data[pos:pos + nlen].decode("utf-8")
            pos += nlen
            (ndim,) = struct.unpack_from("<B", data, pos)
            pos += 1
            shape = struct.unpack_from(f"<{ndim}I", data, pos)
            pos += 4 * ndim
            n = int(np.prod(shape)) if ndim else 1
            if pos + 4 * n > len(data):
                raise ValueError(f"{path}: tensor {name!r} truncated")
            params[name] = np.frombuffer(data, dtype="<f4", count=n, offset=pos).reshape(shape).astype(np.float64)
            pos += 4 * n
    except (struct.error, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ValueError(f"{path}: corrupt weight file ({exc})") from None
    if kind is not None and header["kind"] != kind:
        raise ValueError(f"{path}: holds a {header['kind']}-processor, expected {kind}")
    layers = [LayerSpec.from_dict(d) for d in header["layers"]]
    model = WrapperModel(header["kind"], get_ratio(header["ratio"]), layers, params,
                         header.get("flag", "pair"), version)
    for spec in layers:
        for suffix, shape in ((".w", spec.weight_shape()), (".b", (spec.cout,))):
            got = params.get(spec.name + suffix)
            if got is None:
                raise ValueError(f"{path}: missing tensor {spec.name + suffix}")
            if got.shape != tuple(shape):
                raise ValueError(f"{path}: tensor {spec.name + suffix} has shape {got.shape}, "
                                 f"descriptor requires {tuple(shape)}")
    return model


# ---------------------------------------------------------------- model bank

FLAGS = ("pair", "post-only")


class MissingModelError(LookupError):
    def __init__(self, kind: str, ratio, flag: str):
        self.kind, self.ratio, self.flag = kind, ratio, flag
        super().__init__(f"model bank has no {kind}-processor for ratio {ratio} ({flag})")

    def __str__(self):
        return self.args[0]


def model_filename(kind: str, ratio, flag: str) -> str:
    ratio = get_ratio(ratio)
    return f"{kind}_{flag.replace('-', '')}_r{ratio.tag}.nwrp"


class ModelBank:
    """(kind, ratio index, flag) -> WrapperModel."""

    def __init__(self, models=None):
        self.models = {}
        for m in models or ():
            self.add(m)

    def add(self, model: WrapperModel):
        self.models[(model.kind, model.ratio.k, model.flag)] = model

    def get(self, kind: str, ratio, flag: str) -> WrapperModel:
        ratio = get_ratio(ratio)
        try:
            return self.models[(kind, ratio.k, flag)]
        except KeyError:
            raise MissingModelError(kind, ratio, flag) from None

    def __contains__(self, key):
        kind, ratio, flag = key
        return (kind, get_ratio(ratio).k, flag) in self.models

    def __len__(self):
        return len(self.models)

    @classmethod
    def from_dir(cls, path) -> "ModelBank":
        bank = cls()
        path = Path(path)
        if not path.is_dir():
            raise FileNotFoundError(f"model directory {path} does not exist")
        for f in sorted(path.glob("*.nwrp")):
            bank.add(load_weights(f))
        return bank

    def save(self, path) -> None:
        os.makedirs(path, exist_ok=True)
        for (kind, k, flag), m in self.models.items():
            save_weights(m, Path(path) / model_filename(kind, k, flag))

    def missing(self):
        """Entries absent from a complete bank (4 pairs + 4 post-only models)."""
        want = [(kind, k, "pair") for k in range(1, 5) for kind in ("pre", "post")]
        want += [("post", k, "post-only") for k in range(1, 5)]
        return [w for w in want if w not in self.models]


def identity_bank() -> ModelBank:
    """Untrained bank: every post model is the bilinear shortcut, every pre
    model the bilinear downsampler."""
    bank = ModelBank()
    for k in range(1, 5):
        bank.add(build_preprocessor(k))
        bank.add(build_postprocessor(k, "pair"))
        bank.add(build_postprocessor(k, "post-only"))
    return bank


__all__ = [
    "LayerSpec", "WrapperModel", "ModelBank", "MissingModelError", "build_postprocessor", "build_preprocessor",
    "run_postprocess", "run_preprocess", "count_macs", "save_weights", "load_weights",
    "post_forward", "pre_forward", "bind", "linear_shortcut", "linear_downsample",
    "identity_bank", "model_filename",
]
