"""Mode search, Pareto frontiers, BD-rate and the container that carries the mode."""
from __future__ import annotations

import csv
import json
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Optional

import numpy as np
from scipy.interpolate import PchipInterpolator

from .codec import CodecSpec
from .frame_io import Sequence, psnr_sequence, requantize
from .models import (BOTTLENECK_DEPTH, ModelBank, linear_downsample, run_postprocess,
                     run_preprocess)
from .resample import RATIOS, get_ratio, padded_extents

SIDE_INFO_BITS = 4
PREPROC = {"none": 0, "linear": 1, "neural": 2}
_PREPROC_NAMES = {v: k for k, v in PREPROC.items()}


# ---------------------------------------------------------------- modes

@dataclass(frozen=True, order=True)
class ModeDecision:
    preproc: str
    k: int

    def __post_init__(self):
        if self.preproc not in PREPROC:
            raise ValueError(f"pre-processing option must be one of {sorted(PREPROC)}, got {self.preproc!r}")
        if self.k not in (1, 2, 3, 4):
            raise ValueError(f"ratio index must be 1-4, got {self.k}")
        if self.preproc == "none" and self.k != 1:
            raise ValueError("resampling without a pre-processing option is not a mode")

    @property
    def code(self) -> int:
        return (PREPROC[self.preproc] << 2) | (self.k - 1)

    @property
    def ratio(self):
        return get_ratio(self.k)

    @property
    def is_passthrough(self) -> bool:
        return self.preproc == "none"

    @classmethod
    def from_code(cls, code: int) -> "ModeDecision":
        code = int(code)
        pre, k = code >> 2, (code & 3) + 1
        if not 0 <= code < 16 or pre not in _PREPROC_NAMES or (pre == 0 and k != 1):
            raise ValueError(f"mode code {code} is reserved")
        return cls(_PREPROC_NAMES[pre], k)

    @classmethod
    def parse(cls, text) -> "ModeDecision":
        """'passthrough', 'linear:1/2', 'neural:2/3' or a numeric code."""
        text = str(text).strip()
        if text.isdigit():
            return cls.from_code(int(text))
        if text in ("passthrough", "none"):
            return cls("none", 1)
        pre, _, ratio = text.partition(":")
        if not ratio:
            raise ValueError(f"mode {text!r} must look like 'linear:1/2' or 'passthrough'")
        return cls(pre, get_ratio(ratio).k)

    def __str__(self):
        return "passthrough" if self.is_passthrough else f"{self.preproc}:{self.ratio}"


ALL_MODES = tuple([ModeDecision("none", 1)] + [ModeDecision(p, k) for p in ("linear", "neural")
                                                for k in range(1, 5)])


# ---------------------------------------------------------------- R-D records

@dataclass(frozen=True)
class RDPoint:
    rate: float                 # bits per second, side info included
    quality: float              # weighted PSNR (dB)
    mode: int = 0
    qp: float = 0
    bits: int = 0
    psnr_y: float = float("nan")
    psnr_u: float = float("nan")
    psnr_v: float = float("nan")

    def row(self, sequence: str = ""):
        return {"sequence": sequence, "mode": self.mode, "qp": self.qp, "bits": self.bits,
                "bps": self.rate, "psnr_y": self.psnr_y, "psnr_u": self.psnr_u,
                "psnr_v": self.psnr_v, "psnr_weighted": self.quality}


@dataclass
class RDCurve:
    points: list = field(default_factory=list)

    def __post_init__(self):
        self.points = sorted((_as_point(p) for p in self.points), key=lambda p: (p.rate, -p.quality))

    @property
    def rates(self) -> np.ndarray:
        return np.array([p.rate for p in self.points], dtype=np.float64)

    @property
    def qualities(self) -> np.ndarray:
        return np.array([p.quality for p in self.points], dtype=np.float64)

    def __len__(self):
        return len(self.points)

    def __iter__(self):
        return iter(self.points)


def _as_point(p) -> RDPoint:
    if isinstance(p, RDPoint):
        return p
    rate, quality, *rest = p
    return RDPoint(float(rate), float(quality), *rest)


def pareto_frontier(points: Iterable) -> RDCurve:
    """Non-dominated subset; exact duplicates keep the lowest mode code."""
    pts = [_as_point(p) for p in points]
    if not pts:
        raise ValueError("pareto_frontier needs at least one point")
    pts.sort(key=lambda p: (p.rate, -p.quality, p.mode))
    keep, best = [], -np.inf
    for p in pts:
        if p.quality > best:
            keep.append(p)
            best = p.quality
    return RDCurve(keep)


# ---------------------------------------------------------------- BD-rate

def _curve_arrays(curve, name: str):
    c = curve if isinstance(curve, RDCurve) else RDCurve(list(curve))
    if len(c) < 4:
        raise ValueError(f"{name} curve needs at least 4 points, got {len(c)}")
    rates, qual = c.rates, c.qualities
    if np.any(rates <= 0):
        raise ValueError(f"{name} curve has non-positive rates")
    order = np.argsort(qual, kind="stable")
    qual, logr = qual[order], np.log10(rates[order])
    if np.any(np.diff(qual) <= 0):
        raise ValueError(f"{name} curve qualities must be distinct (prune to a Pareto frontier first)")
    return qual, logr


def bd_rate(test, anchor) -> float:
    """Average rate difference (percent) of ``test`` against ``anchor`` at equal quality.

    log10(rate) is interpolated over quality with monotone piecewise-cubic
    Hermite polynomials and integrated exactly over the common quality range.
    """
    qt, rt = _curve_arrays(test, "test")
    qa, ra = _curve_arrays(anchor, "anchor")
    lo, hi = max(qt[0], qa[0]), min(qt[-1], qa[-1])
    if not hi > lo:
        raise ValueError(f"quality ranges do not overlap: test [{qt[0]:.3f}, {qt[-1]:.3f}] "
                         f"vs anchor [{qa[0]:.3f}, {qa[-1]:.3f}]")
    it = PchipInterpolator(qt, rt).integrate(lo, hi)
    ia = PchipInterpolator(qa, ra).integrate(lo, hi)
    return float((10.0 ** ((it - ia) / (hi - lo)) - 1.0) * 100.0)


# ---------------------------------------------------------------- mode evaluation

def _require_models(mode: ModeDecision, bank: Optional[ModelBank]):
    if mode.is_passthrough:
        return None, None
    if bank is None:
        raise ValueError(f"mode {mode} needs a model bank")
    if mode.preproc == "neural":
        return bank.get("pre", mode.k, "pair"), bank.get("post", mode.k, "pair")
    return None, bank.get("post", mode.k, "post-only")


def bottleneck_geometry(mode: ModeDecision, height: int, width: int, depth: int):
    """(height, width, depth) of what the standard codec sees."""
    if mode.is_passthrough:
        return height, width, depth
    ph, pw = padded_extents(height, width, mode.ratio)
    return mode.ratio.bottleneck_extent(ph), mode.ratio.bottleneck_extent(pw), BOTTLENECK_DEPTH


def _pre_path(seq: Sequence, mode: ModeDecision, pre_model) -> Sequence:
    if mode.is_passthrough:
        return seq
    if mode.preproc == "neural":
        frames = [run_preprocess(pre_model, f) for f in seq.frames]
    else:
        frames = [linear_downsample(f, mode.ratio) for f in seq.frames]
    return Sequence(frames, seq.fps)


def _post_path(decoded: Sequence, mode: ModeDecision, post_model, height: int, width: int,
               depth: int) -> Sequence:
    if mode.is_passthrough:
        return decoded
    frames = [run_postprocess(post_model, f, mode.ratio, height, width, depth) for f in decoded.frames]
    return Sequence(frames, decoded.fps)


@dataclass
class _Evaluated:
    point: RDPoint
    payload: bytes
    output: Sequence


def _evaluate(seq: Sequence, mode: ModeDecision, spec: CodecSpec, qp, bank) -> _Evaluated:
    pre_model, post_model = _require_models(mode, bank)
    bottleneck = _pre_path(seq, mode, pre_model)
    payload = spec.encode(bottleneck, qp)
    decoded = spec.decode(payload, bottleneck.height, bottleneck.width, bottleneck.bit_depth,
                          seq.fps, len(seq.frames))
    out = _post_path(decoded, mode, post_model, seq.height, seq.width, seq.bit_depth)
    if out.bit_depth != seq.bit_depth:
        out = Sequence([requantize(f, seq.bit_depth) for f in out.frames], seq.fps)
    bits = 8 * len(payload) + SIDE_INFO_BITS
    q = psnr_sequence(seq, out)
    point = RDPoint(bits / seq.duration, q["weighted"], mode.code, qp, bits,
                    q["psnr_y"], q["psnr_u"], q["psnr_v"])
    return _Evaluated(point, payload, out)


def evaluate_mode(seq: Sequence, mode, spec: CodecSpec, qp, bank: Optional[ModelBank] = None) -> RDPoint:
    """Run one (mode, qp) through pre path, codec and post path; measure rate and quality."""
    mode = mode if isinstance(mode, ModeDecision) else ModeDecision.parse(mode)
    return _evaluate(seq, mode, spec, qp, bank).point


def evaluate_table(seq: Sequence, spec: CodecSpec, qp_ladder, bank, mode_set, threads: int = 1):
    """All (mode, qp) evaluations, in mode-then-qp order."""
    modes = [m if isinstance(m, ModeDecision) else ModeDecision.parse(m) for m in mode_set]
    if not modes:
        raise ValueError("mode set is empty")
    for m in modes:
        _require_models(m, bank)
    jobs = [(m, qp) for m in modes for qp in qp_ladder]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(lambda j: _evaluate(seq, j[0], spec, j[1], bank), jobs))
    return [_evaluate(seq, m, spec, qp, bank) for m, qp in jobs]


# ---------------------------------------------------------------- container

CONTAINER_MAGIC = b"NWC1"
CONTAINER_VERSION = 1
_CONTAINER = struct.Struct("<4sHBBIIBIIQ")


@dataclass
class Container:
    mode: int
    height: int
    width: int
    bit_depth: int
    fps: Fraction
    payload: bytes
    version: int = CONTAINER_VERSION

    @property
    def ratio_index(self) -> int:
        return (self.mode & 3) + 1

    def to_bytes(self) -> bytes:
        fps = Fraction(self.fps)
        head = _CONTAINER.pack(CONTAINER_MAGIC, self.version, self.mode & 0xF, self.ratio_index,
                               self.height, self.width, self.bit_depth, fps.numerator,
                               fps.denominator, len(self.payload))
        return head + self.payload

    @classmethod
    def from_bytes(cls, data: bytes) -> "Container":
        if len(data) < _CONTAINER.size:
            raise ValueError(f"container truncated: {len(data)} bytes, header needs {_CONTAINER.size}")
        magic, ver, mode, ridx, h, w, depth, num, den, n = _CONTAINER.unpack_from(data, 0)
        if magic != CONTAINER_MAGIC:
            raise ValueError(f"not a container: magic {magic!r}")
        if ver != CONTAINER_VERSION:
            raise ValueError(f"unsupported container version {ver}")
        ModeDecision.from_code(mode)
        if ridx != (mode & 3) + 1:
            raise ValueError(f"ratio index {ridx} disagrees with mode code {mode}")
        if den == 0:
            raise ValueError("container frame rate has a zero denominator")
        if len(data) != _CONTAINER.size + n:
            raise ValueError(f"container payload is {len(data) - _CONTAINER.size} bytes, header says {n}")
        return cls(mode, h, w, depth, Fraction(num, den), bytes(data[_CONTAINER.size:]), ver)


# ---------------------------------------------------------------- encode / decode

@dataclass
class EncodeReport:
    sequence: str
    points: list                 # every evaluated RDPoint
    frontier: RDCurve
    selected: RDPoint
    ladder_choices: dict         # qp -> mode code maximising quality at that qp

    def to_json(self) -> dict:
        def pt(p):
            return {"mode": p.mode, "mode_name": str(ModeDecision.from_code(p.mode)), "qp": p.qp,
                    "bits": p.bits, "bps": p.rate, "psnr_weighted": p.quality}
        return {"sequence": self.sequence, "frontier": [pt(p) for p in self.frontier],
                "selected": pt(self.selected),
                "ladder_choices": {str(k): v for k, v in self.ladder_choices.items()}}


def best_at_qp(points: Iterable[RDPoint], qp) -> RDPoint:
    """Highest quality at ``qp``; ties go to lower rate, then lower mode code."""
    cands = [p for p in points if p.qp == qp]
    if not cands:
        raise ValueError(f"no evaluated point at qp {qp}")
    return min(cands, key=lambda p: (-p.quality, p.rate, p.mode))


def select_point(frontier: RDCurve, target_bps: Optional[float] = None) -> RDPoint:
    """Frontier point nearest ``target_bps`` from below (lowest-rate point if none fits);
    without a target, the highest-quality point."""
    pts = frontier.points
    if target_bps is None:
        return pts[-1]
    below = [p for p in pts if p.rate <= target_bps]
    return below[-1] if below else pts[0]


def encode_sequence(seq: Sequence, spec: CodecSpec, qp_ladder=None, bank: Optional[ModelBank] = None,
                    mode_set=ALL_MODES, target_bps: Optional[float] = None, qp=None,
                    threads: int = 1, name: str = "sequence"):
    """Evaluate ``mode_set`` x ``qp_ladder``, pick one point, return (container bytes, report)."""
    ladder = list(spec.qp_ladder if qp_ladder is None else qp_ladder)
    if qp is not None and qp not in ladder:
        ladder = sorted(set(ladder) | {qp})
    evaluated = evaluate_table(seq, spec, ladder, bank, mode_set, threads)
    points = [e.point for e in evaluated]
    frontier = pareto_frontier(points)
    chosen = best_at_qp(points, qp) if qp is not None else select_point(frontier, target_bps)
    ev = next(e for e in evaluated if e.point is chosen)
    choices = {q: best_at_qp(points, q).mode for q in ladder}
    container = Container(chosen.mode, seq.height, seq.width, seq.bit_depth, seq.fps, ev.payload)
    return container.to_bytes(), EncodeReport(name, points, frontier, chosen, choices)


def decode_sequence(container, bank: Optional[ModelBank] = None, spec: Optional[CodecSpec] = None) -> Sequence:
    """Container -> source-resolution sequence via the signalled mode's post path."""
    c = container if isinstance(container, Container) else Container.from_bytes(container)
    mode = ModeDecision.from_code(c.mode)
    spec = spec or CodecSpec()
    _, post_model = _require_models(mode, bank)
    h, w, depth = bottleneck_geometry(mode, c.height, c.width, c.bit_depth)
    decoded = spec.decode(c.payload, h, w, depth, c.fps)
    out = _post_path(decoded, mode, post_model, c.height, c.width, c.bit_depth)
    return out


# ---------------------------------------------------------------- reports

CSV_COLUMNS = ("sequence", "mode", "qp", "bits", "bps", "psnr_y", "psnr_u", "psnr_v", "psnr_weighted")


def write_report_csv(points: Iterable[RDPoint], dest, sequence: str = "") -> None:
    """Write the R-D table to a path or an open text stream."""
    def emit(fh):
        w = csv.DictWriter(fh, fieldnames=CSV_COLUMNS, lineterminator="\n")
        w.writeheader()
        for p in points:
            w.writerow(p.row(sequence))
    if hasattr(dest, "write"):
        emit(dest)
    else:
        with open(dest, "w", newline="") as fh:
            emit(fh)


def read_report_csv(path) -> list:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ValueError(f"{path}: no R-D rows")
    missing = [c for c in ("bps", "psnr_weighted") if c not in rows[0]]
    if missing:
        raise ValueError(f"{path}: missing column(s) {missing}")
    out = []
    for r in rows:
        qp = float(r.get("qp") or 0)
        out.append(RDPoint(float(r["bps"]), float(r["psnr_weighted"]), int(r.get("mode") or 0),
                           int(qp) if qp.is_integer() else qp, int(float(r.get("bits") or 0)),
                           float(r.get("psnr_y") or "nan"), float(r.get("psnr_u") or "nan"),
                           float(r.get("psnr_v") or "nan")))
    return out


def write_pareto_json(report: EncodeReport, path) -> None:
    with open(path, "w") as fh:
        json.dump(report.to_json(), fh, indent=2)


__all__ = [
    "ModeDecision", "ALL_MODES", "RDPoint", "RDCurve", "Container", "EncodeReport",
    "pareto_frontier", "bd_rate", "evaluate_mode", "evaluate_table", "encode_sequence",
    "decode_sequence", "select_point", "best_at_qp", "write_report_csv", "read_report_csv",
    "write_pareto_json", "SIDE_INFO_BITS", "RATIOS",
]
