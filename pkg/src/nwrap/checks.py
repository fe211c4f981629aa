"""Finite-difference gradient checks for every differentiable op and for the
full pre -> proxy -> post pipeline."""
from __future__ import annotations

import numpy as np

from . import nn
from .models import build_postprocessor, build_preprocessor
from .proxy import ProxyConfig, block_dct2d, block_idct2d, proxy_apply, rate_loss
from .tensor import (Freezer, Graph, Tensor, add, backward, clip_st, concat, crop, div, grad_check, log1p, mean, mul,
                     freezing, pad_replicate, permute, relative_error, reshape, square, sub, tabs,
                     texp, tsum)

OP_TOL = 1e-4
PIPELINE_TOL = 1e-3


def _away_from_kinks(a: np.ndarray, margin: float = 1e-3) -> np.ndarray:
    return np.where(np.abs(a) < margin, np.sign(a + 1e-12) * margin * 2, a)


def _weighted(out, w):
    """Scalarise an op output with a fixed random weighting."""
    return tsum(mul(out, w))


def _suite(rng: np.random.Generator):
    """name -> (loss_fn, params); inputs bounded in [-2, 2]."""
    u = lambda *s: rng.uniform(-2, 2, size=s)
    cases = {}

    def case(name, params, body):
        out_w = {}

        def fn(g):
            ts = {k: g.parameter(k, v) for k, v in params.items()}
            out = body(ts)
            if "w" not in out_w:
                out_w["w"] = rng.uniform(-1, 1, size=out.shape)
            return _weighted(out, Tensor(out_w["w"]))
        cases[name] = (fn, params)

    case("depthwise_conv2d", {"x": u(2, 8, 8), "k": u(2, 3, 3), "b": u(2)},
         lambda t: nn.depthwise_conv2d(t["x"], t["k"], 1, "same", t["b"]))
    case("depthwise_conv2d_stride2", {"x": u(1, 3, 8, 8), "k": u(3, 3, 3)},
         lambda t: nn.depthwise_conv2d(t["x"], t["k"], 2))
    case("pointwise_conv2d", {"x": u(4, 5, 5), "k": u(6, 4), "b": u(6)},
         lambda t: nn.pointwise_conv2d(t["x"], t["k"], t["b"]))
    case("conv2d", {"x": u(1, 3, 6, 6), "k": u(4, 3, 3, 3), "b": u(4)},
         lambda t: nn.conv2d(t["x"], t["k"], t["b"]))
    case("strided_conv2d_s2", {"x": u(1, 2, 8, 8), "k": u(3, 2, 3, 3)},
         lambda t: nn.strided_conv2d(t["x"], t["k"], 2))
    case("strided_conv2d_s3", {"x": u(1, 2, 6, 6), "k": u(3, 2, 3, 3)},
         lambda t: nn.strided_conv2d(t["x"], t["k"], 3))
    case("transposed_conv2d", {"x": u(1, 3, 3, 3), "k": u(3, 2, 3, 3), "b": u(2)},
         lambda t: nn.transposed_conv2d(t["x"], t["k"], 2, t["b"]))
    case("leaky_relu", {"x": _away_from_kinks(u(3, 4, 4))}, lambda t: nn.leaky_relu(t["x"], 0.2))
    case("bilinear_resize", {"x": u(1, 4, 4)}, lambda t: nn.bilinear_resize(t["x"], 6, 6))
    case("bilinear_resize_down", {"x": u(1, 1, 8, 6)}, lambda t: nn.bilinear_resize(t["x"], 4, 3))
    case("space_to_depth", {"x": u(2, 1, 4, 6)}, lambda t: nn.space_to_depth(t["x"]))
    case("depth_to_space", {"x": u(1, 4, 3, 2)}, lambda t: nn.depth_to_space(t["x"]))
    case("block_dct2d", {"x": u(2, 8, 8)}, lambda t: block_dct2d(t["x"], 4))
    case("block_idct2d", {"x": u(1, 16, 16)}, lambda t: block_idct2d(t["x"], 16))
    case("elementwise", {"a": u(3, 3), "b": u(3, 3) + 3.0},
         lambda t: add(div(mul(t["a"], t["b"]), t["b"]), log1p(tabs(sub(t["b"], texp(t["a"]))))))
    case("clip", {"x": np.clip(u(4, 4), -0.9, 0.9) * 2}, lambda t: clip_st(t["x"], -1.0, 1.0))
    case("shape_ops", {"x": u(1, 2, 3, 4), "y": u(1, 1, 3, 4)},
         lambda t: crop(pad_replicate(concat([permute(reshape(t["x"], (1, 2, 3, 4)), (0, 1, 2, 3)),
                                              t["y"]], 1), 2, 1), 4, 4))
    case("mean_square", {"x": u(5, 5)}, lambda t: reshape(mean(square(t["x"])), (1,)))
    return cases


def op_gradients(seed: int = 0, eps: float = 1e-5) -> dict:
    """op name -> max relative error over its inputs and parameters."""
    rng = np.random.default_rng(seed)
    report = {}
    for name, (fn, params) in _suite(rng).items():
        errs = grad_check(fn, params, eps=eps)
        report[name] = max(errs.values())
    report["proxy_apply"] = proxy_gradient(seed)  # linear once frozen, so a wider step is safe
    report["rate_loss"] = rate_gradient(seed)
    return report


def proxy_gradient(seed: int = 0, eps: float = 1e-4) -> float:
    """Randomly weighted sum of X_hat, with rounding frozen at the base point."""
    rng = np.random.default_rng(seed)
    x0 = rng.uniform(-30, 1050, size=(1, 1, 16, 24))
    x0 = np.where(np.abs(x0) < 1, 5.0, x0)
    x0 = np.where(np.abs(x0 - 1023) < 1, 1000.0, x0)
    lq = np.array(np.log(20.0))
    w = Tensor(rng.uniform(-1, 1, size=x0.shape))

    def fn(g):
        x = g.parameter("x", x0)
        cfg = ProxyConfig(g.parameter("log_q", lq), 8, 10)
        xh, _, _ = proxy_apply(x, cfg)
        return _weighted(xh, w)
    return max(grad_check(fn, {"x": x0, "log_q": lq}, eps=eps).values())


def rate_gradient(seed: int = 0, eps: float = 1e-5) -> float:
    rng = np.random.default_rng(seed)
    y0 = _away_from_kinks(rng.uniform(-2, 2, size=(3, 8, 8)))
    lq = np.array(np.log(0.7))

    def fn(g):
        y = g.parameter("y", y0)
        q = texp(g.parameter("log_q", lq))
        return rate_loss(y, q, 17.0)
    return max(grad_check(fn, {"y": y0, "log_q": lq}, eps=eps).values())


def pipeline_gradient(ratio="1/2", flag: str = "pair", size: int = 64, seed: int = 0,
                      max_checks: int = 4, eps: float = 1e-6) -> dict:
    """Full pre -> proxy -> post -> R-D loss check on one random smooth image.

    Untrained models have zero-initialised output layers, which hides most
    upstream gradients, so all parameters are first randomised. A small
    step keeps bias perturbations from pushing pixels across leaky-ReLU
    kinks. Relative errors use a per-tensor floor of 1e-6 times the tensor's
    largest analytic gradient so entries at round-off level do not dominate.
    Returns parameter name -> max relative error.
    """
    from .trainer import pipeline_loss

    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size] / size
    planes = [np.sin(3 * xx + 2 * yy) * 0.6 + 0.1 * rng.standard_normal((size, size))]
    for _ in range(2):
        h = size // 2
        planes.append(0.3 * np.cos(4 * xx[::2, ::2] - yy[::2, ::2]) + 0.05 * rng.standard_normal((h, h)))
    x = tuple(Tensor(np.clip(p, -1, 1)[None, None]) for p in planes)
    post = build_postprocessor(ratio, flag, seed=seed)
    pre = build_preprocessor(ratio, seed=seed + 1) if flag == "pair" else None
    for m in (post, pre):
        if m is None:
            continue
        for k, v in m.params.items():
            v += rng.normal(scale=0.1, size=v.shape)
    lq = np.array(np.log(30.0))
    params = {f"post.{k}": v for k, v in post.params.items()}
    if pre is not None:
        params.update({f"pre.{k}": v for k, v in pre.params.items()})
    params["log_q"] = lq

    def fn(g):
        loss, _, _ = pipeline_loss(g, x, pre, post, lq, 8, 16.0, 10, rate=0.8)
        return loss

    freezer = Freezer()
    report = {}
    with freezing(freezer):
        with Graph() as g:
            loss = fn(g)
        backward(g, loss)
        analytic = {k: g.params[k].grad.copy() for k in params}

        def evaluate():
            freezer.replay()
            with Graph() as g2:
                return fn(g2).item()

        for name, arr in params.items():
            flat = arr.reshape(-1)
            a = analytic[name].reshape(-1)
            idx = np.arange(flat.size)
            if flat.size > max_checks:
                idx = rng.choice(flat.size, size=max_checks, replace=False)
            num = np.empty(idx.size)
            for n, i in enumerate(idx):
                orig = flat[i]
                flat[i] = orig + eps
                fp = evaluate()
                flat[i] = orig - eps
                fm = evaluate()
                flat[i] = orig
                num[n] = (fp - fm) / (2 * eps)
            floor = max(1e-6 * float(np.abs(a).max()), 1e-8)
            report[name] = float(relative_error(a[idx], num, floor).max())
    return report
