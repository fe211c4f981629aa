"""Dense tensors with tape-based reverse-mode differentiation.

Operations record themselves on the active :class:`Graph` (entered with a
``with`` block) whenever one of their inputs requires a gradient. Outside a
graph, or with constant inputs, ops just compute, which is how inference runs.

The op set is deliberately small: no general broadcasting, only equal shapes
or a 0-d scalar operand.
"""
from __future__ import annotations

import itertools
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

TRAIN_DTYPE = np.float64
INFER_DTYPE = np.float32

_GRAPHS: list["Graph"] = []
_FREEZERS: list["Freezer"] = []


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "node_id", "name")

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: Optional[str] = None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind != "f":
            arr = arr.astype(TRAIN_DTYPE)
        self.data = arr
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.node_id: Optional[int] = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def __add__(self, other):
        return add(self, _as_tensor(other, self))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, _as_tensor(other, self))

    def __rsub__(self, other):
        return sub(_as_tensor(other, self), self)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return div(self, other)
        return scale(self, 1.0 / float(other))

    def __neg__(self):
        return scale(self, -1.0)


def _as_tensor(x, like: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.dtype))


@dataclass
class _Node:
    out: Tensor
    inputs: tuple
    backward: Callable


class Graph:
    """Recording tape plus the registry of trainable parameters.

    >>> with Graph() as g:
    ...     w = g.parameter("w", np.ones(3))
    ...     loss = tsum(w * w)
    >>> backward(g, loss); w.grad
    array([2., 2., 2.])
    """

    def __init__(self):
        self.tape: list[_Node] = []
        self.params: dict[str, Tensor] = {}
        self._ids = itertools.count()

    def __enter__(self):
        _GRAPHS.append(self)
        return self

    def __exit__(self, *exc):
        _GRAPHS.remove(self)
        return False

    def parameter(self, name: str, value) -> Tensor:
        if name in self.params:
            raise KeyError(f"parameter {name!r} already registered")
        t = value if isinstance(value, Tensor) else Tensor(value)
        t.requires_grad = True
        t.grad = None
        t.name = name
        t.node_id = next(self._ids)
        self.params[name] = t
        return t

    def record(self, out: Tensor, inputs: Sequence[Tensor], backward_fn: Callable) -> Tensor:
        out.requires_grad = True
        out.node_id = next(self._ids)
        self.tape.append(_Node(out, tuple(inputs), backward_fn))
        return out


def active_graph() -> Optional[Graph]:
    return _GRAPHS[-1] if _GRAPHS else None


def _record(out_data, inputs: Sequence[Tensor], backward_fn: Callable) -> Tensor:
    out = Tensor(out_data)
    g = active_graph()
    if g is not None and any(t.requires_grad for t in inputs):
        g.record(out, inputs, backward_fn)
    return out


def backward(graph: Graph, loss: Tensor) -> None:
    """Populate ``grad`` on every registered parameter with d(loss)/d(param)."""
    if loss.data.size != 1 or loss.ndim > 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    for node in graph.tape:
        node.out.grad = None
    for p in graph.params.values():
        p.grad = None
    loss.grad = np.ones_like(loss.data)
    for node in reversed(graph.tape):
        g_out = node.out.grad
        if g_out is None:
            continue
        grads = node.backward(g_out)
        for inp, g in zip(node.inputs, grads):
            if g is None or not inp.requires_grad:
                continue
            if inp.grad is None:
                inp.grad = np.array(g, dtype=inp.dtype, copy=True).reshape(inp.shape)
            else:
                inp.grad += g
    for p in graph.params.values():
        if p.grad is None:
            p.grad = np.zeros_like(p.data)


# ---------------------------------------------------------------- frozen surrogates

class Freezer:
    """Records the values of non-differentiable pieces on a first pass and
    replays them afterwards.

    Finite differences through rounding or a stop-gradient see the true
    (piecewise constant) function, not the straight-through surrogate that
    backpropagation differentiates. Replaying the recorded rounding offsets
    and stop-gradient values turns the forward pass into exactly that
    surrogate, so finite differences become a valid oracle.
    """

    def __init__(self):
        self.values: list[np.ndarray] = []
        self.replaying = False
        self._cursor = 0

    def replay(self):
        self.replaying = True
        self._cursor = 0

    def take(self, compute: Callable[[], np.ndarray]) -> np.ndarray:
        if not self.replaying:
            v = np.array(compute(), copy=True)
            self.values.append(v)
            return v
        if self._cursor >= len(self.values):
            raise RuntimeError("replay requested more frozen values than were recorded")
        v = self.values[self._cursor]
        self._cursor += 1
        return v


@contextmanager
def freezing(freezer: Freezer):
    _FREEZERS.append(freezer)
    try:
        yield freezer
    finally:
        _FREEZERS.remove(freezer)


def _freezer() -> Optional[Freezer]:
    return _FREEZERS[-1] if _FREEZERS else None


# ---------------------------------------------------------------- elementwise ops

def _check_binary(a: Tensor, b: Tensor, op: str):
    if a.shape != b.shape and a.ndim != 0 and b.ndim != 0:
        raise ValueError(f"{op}: shape mismatch {a.shape} vs {b.shape} (no broadcasting)")


def _reduce_to(g: np.ndarray, t: Tensor):
    return g.sum() if t.ndim == 0 and g.ndim != 0 else g


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_binary(a, b, "add")
    return _record(a.data + b.data, (a, b), lambda g: (_reduce_to(g, a), _reduce_to(g, b)))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_binary(a, b, "sub")
    return _record(a.data - b.data, (a, b), lambda g: (_reduce_to(g, a), _reduce_to(-g, b)))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_binary(a, b, "mul")
    ad, bd = a.data, b.data
    return _record(ad * bd, (a, b), lambda g: (_reduce_to(g * bd, a), _reduce_to(g * ad, b)))


def div(a: Tensor, b: Tensor) -> Tensor:
    _check_binary(a, b, "div")
    ad, bd = a.data, b.data
    out = ad / bd
    return _record(out, (a, b), lambda g: (_reduce_to(g / bd, a), _reduce_to(-g * out / bd, b)))


def scale(x: Tensor, c: float) -> Tensor:
    return _record(x.data * c, (x,), lambda g: (g * c,))


def add_const(x: Tensor, c: float) -> Tensor:
    return _record(x.data + c, (x,), lambda g: (g,))


def square(x: Tensor) -> Tensor:
    xd = x.data
    return _record(xd * xd, (x,), lambda g: (2.0 * g * xd,))


def tabs(x: Tensor) -> Tensor:
    xd = x.data
    return _record(np.abs(xd), (x,), lambda g: (g * np.sign(xd),))


def log1p(x: Tensor) -> Tensor:
    xd = x.data
    return _record(np.log1p(xd), (x,), lambda g: (g / (1.0 + xd),))


def texp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return _record(out, (x,), lambda g: (g * out,))


def tsum(x: Tensor) -> Tensor:
    shape = x.shape
    return _record(np.asarray(x.data.sum()), (x,), lambda g: (np.broadcast_to(g, shape),))


def mean(x: Tensor) -> Tensor:
    n = x.data.size
    shape = x.shape
    return _record(np.asarray(x.data.mean()), (x,), lambda g: (np.broadcast_to(g / n, shape),))


def clip_st(x: Tensor, lo: float, hi: float) -> Tensor:
    """Clip; gradient passes unchanged inside [lo, hi] and is zero outside."""
    xd = x.data
    inside = (xd >= lo) & (xd <= hi)
    return _record(np.clip(xd, lo, hi), (x,), lambda g: (g * inside,))


def round_half_away(a: np.ndarray) -> np.ndarray:
    return np.sign(a) * np.floor(np.abs(a) + 0.5)


def round_st(x: Tensor) -> Tensor:
    """Round half away from zero; backward treats it as the identity."""
    xd = x.data
    fz = _freezer()
    if fz is None:
        out = round_half_away(xd)
    else:
        out = xd + fz.take(lambda: round_half_away(xd) - xd)
    return _record(out, (x,), lambda g: (g,))


def stop_gradient(x) -> Tensor:
    """Constant copy of ``x``; under a replaying Freezer, the recorded value."""
    data = x.data if isinstance(x, Tensor) else np.asarray(x, dtype=TRAIN_DTYPE)
    fz = _freezer()
    if fz is not None:
        data = fz.take(lambda: data)
    return Tensor(np.array(data, copy=True))


# ---------------------------------------------------------------- shape ops

def reshape(x: Tensor, shape) -> Tensor:
    old = x.shape
    return _record(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),))


def permute(x: Tensor, axes) -> Tensor:
    inv = np.argsort(axes)
    return _record(np.ascontiguousarray(x.data.transpose(axes)), (x,), lambda g: (g.transpose(inv),))


def concat(xs: Sequence[Tensor], axis: int = 1) -> Tensor:
    sizes = [t.shape[axis] for t in xs]
    bounds = np.cumsum([0] + sizes)

    def bwd(g):
        idx = [slice(None)] * g.ndim
        out = []
        for lo, hi in zip(bounds[:-1], bounds[1:]):
            idx[axis] = slice(lo, hi)
            out.append(g[tuple(idx)])
        return tuple(out)

    return _record(np.concatenate([t.data for t in xs], axis=axis), tuple(xs), bwd)


def channels(x: Tensor, start: int, stop: int) -> Tensor:
    """Slice channels [start, stop) of an N x C x H x W tensor."""
    shape = x.shape

    def bwd(g):
        full = np.zeros(shape, dtype=g.dtype)
        full[:, start:stop] = g
        return (full,)

    return _record(x.data[:, start:stop].copy(), (x,), bwd)


def crop(x: Tensor, h: int, w: int) -> Tensor:
    """Keep the top-left h x w window of the last two axes."""
    shape = x.shape

    def bwd(g):
        full = np.zeros(shape, dtype=g.dtype)
        full[..., :h, :w] = g
        return (full,)

    return _record(x.data[..., :h, :w].copy(), (x,), bwd)


def pad_replicate(x: Tensor, pad_h: int, pad_w: int) -> Tensor:
    """Replicate the last row/column ``pad_h``/``pad_w`` times (bottom/right)."""
    if pad_h == 0 and pad_w == 0:
        return x
    h, w = x.shape[-2:]
    widths = [(0, 0)] * (x.ndim - 2) + [(0, pad_h), (0, pad_w)]

    def bwd(g):
        gx = g[..., :h, :w].copy()
        if pad_h:
            gx[..., h - 1, :] += g[..., h:, :w].sum(axis=-2)
        if pad_w:
            gx[..., :, w - 1] += g[..., :h, w:].sum(axis=-1)
        if pad_h and pad_w:
            gx[..., h - 1, w - 1] += g[..., h:, w:].sum(axis=(-2, -1))
        return (gx,)

    return _record(np.pad(x.data, widths, mode="edge"), (x,), bwd)


# ---------------------------------------------------------------- gradient checking

def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> np.ndarray:
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / denom


def grad_check(loss_fn: Callable[[Graph], Tensor], params: dict, eps: float = 1e-5,
               max_checks: Optional[int] = None, seed: int = 0, floor: float = 1e-6) -> dict:
    """Compare backprop gradients with central differences.

    ``loss_fn(graph)`` must build the forward pass, registering each entry of
    ``params`` (name -> float64 array, perturbed in place) with
    ``graph.parameter``. Straight-through pieces are frozen at the base point.
    Returns name -> max relative error over the checked elements; with
    ``max_checks`` only a seeded random subset of each parameter is probed.
    """
    for name, arr in params.items():
        if arr.dtype != np.float64:
            raise TypeError(f"grad_check needs float64 parameters; {name} is {arr.dtype}")
    freezer = Freezer()
    with freezing(freezer):
        with Graph() as g:
            loss = loss_fn(g)
        backward(g, loss)
        analytic = {name: g.params[name].grad.copy() for name in params}

        def evaluate() -> float:
            freezer.replay()
            with Graph() as g2:
                val = loss_fn(g2).item()
            return val

        rng = np.random.default_rng(seed)
        report = {}
        for name, arr in params.items():
            flat = arr.reshape(-1)
            idx = np.arange(flat.size)
            if max_checks is not None and flat.size > max_checks:
                idx = rng.choice(flat.size, size=max_checks, replace=False)
            numeric = np.empty(idx.size)
            for n, i in enumerate(idx):
                orig = flat[i]
                flat[i] = orig + eps
                fp = evaluate()
                flat[i] = orig - eps
                fm = evaluate()
                flat[i] = orig
                numeric[n] = (fp - fm) / (2.0 * eps)
            err = relative_error(analytic[name].reshape(-1)[idx], numeric, floor)
            report[name] = float(err.max()) if err.size else 0.0
    return report


def is_finite(x: Tensor) -> bool:
    return bool(np.all(np.isfinite(x.data)))


def as_float(x) -> float:
    return x.item() if isinstance(x, Tensor) else float(x)


__all__ = [
    "Tensor", "Graph", "Freezer", "freezing", "backward", "grad_check", "active_graph",
    "add", "sub", "mul", "div", "scale", "add_const", "square", "tabs", "log1p", "texp",
    "tsum", "mean", "clip_st", "round_st", "round_half_away", "stop_gradient", "reshape",
    "permute", "concat", "channels", "crop", "pad_replicate", "relative_error",
    "TRAIN_DTYPE", "INFER_DTYPE",
]
