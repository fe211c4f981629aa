"""Command-line interface: ``nwrap <command> [options]``.

Exit status is 0 on success, 1 on usage errors and 2 on runtime errors.
Results go to stdout; diagnostics go to stderr.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from fractions import Fraction
from pathlib import Path

EXIT_USAGE = 1
EXIT_RUNTIME = 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# ---------------------------------------------------------------- shared options

def _ladder(text: str):
    try:
        vals = [float(v) for v in text.replace(" ", "").split(",") if v]
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid qp ladder {text!r}; expected e.g. 22,27,32,37") from None
    if not vals:
        raise argparse.ArgumentTypeError("qp ladder is empty")
    return [int(v) if v.is_integer() else v for v in vals]


def _ratio(text: str):
    from .resample import get_ratio
    try:
        return str(get_ratio(text))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _add_video(p):
    p.add_argument("input", help="raw planar YUV 4:2:0 file")
    p.add_argument("--width", type=int, required=True)
    p.add_argument("--height", type=int, required=True)
    p.add_argument("--depth", type=int, choices=(8, 10), default=8, help="source bit depth")
    p.add_argument("--fps", type=Fraction, default=Fraction(30))
    p.add_argument("--frames", type=int, default=None, help="read at most this many frames")


def _add_codec(p):
    p.add_argument("--codec-template", default=None,
                   help="external encoder command, e.g. 'x265 --input {input} ... -o {output}'")
    p.add_argument("--decode-template", default=None, help="external decoder command")
    p.add_argument("--qp-ladder", type=_ladder, default=[22, 27, 32, 37])


def _add_models(p):
    p.add_argument("--model-dir", default=os.environ.get("NWRAP_MODEL_DIR"),
                   help="model bank directory (default: $NWRAP_MODEL_DIR)")
    p.add_argument("--identity-models", action="store_true",
                   help="use untrained models (linear resampling only) for missing bank entries")


def _codec_spec(args, ladder=None):
    from .codec import CodecSpec
    ladder = ladder if ladder is not None else args.qp_ladder
    if args.codec_template or args.decode_template:
        if not (args.codec_template and args.decode_template):
            raise UsageError("--codec-template and --decode-template must be given together")
        return CodecSpec("external", args.codec_template, args.decode_template, sorted(ladder))
    return CodecSpec("internal", qp_ladder=sorted(ladder))


def _bank(args):
    from .models import ModelBank, identity_bank
    bank = ModelBank()
    if args.identity_models:
        bank = identity_bank()
    if args.model_dir:
        loaded = ModelBank.from_dir(args.model_dir)
        for m in loaded.models.values():
            bank.add(m)
    return bank


def _modes(args, bank):
    from .rdo import ALL_MODES, ModeDecision
    if args.mode:
        return [ModeDecision.parse(m) for m in args.mode]
    out = []
    for m in ALL_MODES:
        if m.is_passthrough:
            out.append(m)
        elif m.preproc == "neural" and ("pre", m.k, "pair") in bank and ("post", m.k, "pair") in bank:
            out.append(m)
        elif m.preproc == "linear" and ("post", m.k, "post-only") in bank:
            out.append(m)
    return out


def _read_video(args):
    from .frame_io import read_yuv420
    return read_yuv420(args.input, args.height, args.width, args.depth, args.frames, args.fps)


# ---------------------------------------------------------------- commands

def cmd_train(args):
    from .trainer import load_config, train_model
    overrides = {"ratio": args.ratio, "flag": args.flag, "lam": args.lam, "depth": args.depth,
                 "crop": args.crop, "steps": args.steps, "batch": args.batch, "lr": args.lr,
                 "seed": args.seed, "dataset_root": args.dataset, "out_dir": args.model_dir,
                 "log_path": args.log}
    cfg = load_config(args.config, overrides)
    if not cfg.dataset_root:
        raise UsageError("a dataset directory is required (--dataset or dataset_root in the config)")
    res = train_model(cfg)
    first, last = res.log[0], res.log[-1]
    print(json.dumps({"files": res.files, "steps": len(res.log), "seconds": round(res.seconds, 2),
                      "q": res.q, "qf": last.qf, "L_first": first.L, "L_last": last.L}))


def cmd_make_corpus(args):
    from .corpus import make_desk_corpus
    paths = make_desk_corpus(args.out, args.count, args.tile, args.seed or 0)
    print(json.dumps({"images": [str(p) for p in paths]}))


def cmd_evaluate(args):
    from .rdo import evaluate_table, pareto_frontier, write_report_csv, EncodeReport, best_at_qp
    seq = _read_video(args)
    bank = _bank(args)
    spec = _codec_spec(args)
    modes = _modes(args, bank)
    evaluated = evaluate_table(seq, spec, spec.qp_ladder, bank, modes, args.threads)
    points = [e.point for e in evaluated]
    name = args.name or Path(args.input).stem
    write_report_csv(points, args.csv or sys.stdout, name)
    frontier = pareto_frontier(points)
    if args.json:
        rep = EncodeReport(name, points, frontier, frontier.points[-1],
                           {q: best_at_qp(points, q).mode for q in spec.qp_ladder})
        Path(args.json).write_text(json.dumps(rep.to_json(), indent=2))


def cmd_encode(args):
    from .rdo import encode_sequence, write_pareto_json, write_report_csv
    seq = _read_video(args)
    bank = _bank(args)
    ladder = list(args.qp_ladder)
    spec = _codec_spec(args, ladder)
    modes = _modes(args, bank)
    data, report = encode_sequence(seq, spec, ladder, bank, modes, target_bps=args.target_bps,
                                   qp=args.qp, threads=args.threads,
                                   name=Path(args.input).stem)
    Path(args.output).write_bytes(data)
    if args.report:
        write_report_csv(report.points, args.report, report.sequence)
    if args.pareto:
        write_pareto_json(report, args.pareto)
    print(json.dumps(report.to_json()["selected"]))


def cmd_decode(args):
    from .frame_io import write_yuv420
    from .rdo import decode_sequence
    bank = _bank(args)
    spec = _codec_spec(args)
    seq = decode_sequence(Path(args.input).read_bytes(), bank, spec)
    write_yuv420(seq, args.output)
    print(json.dumps({"frames": len(seq), "height": seq.height, "width": seq.width,
                      "depth": seq.bit_depth}))


def _mode_codes(text):
    from .rdo import ModeDecision
    try:
        return [ModeDecision.parse(v).code for v in text.split(",")]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc))


def cmd_bdrate(args):
    from .rdo import bd_rate, pareto_frontier, read_report_csv
    test = read_report_csv(args.test)
    anchor = read_report_csv(args.anchor)
    if args.test_modes:
        test = [p for p in test if p.mode in args.test_modes]
    if args.anchor_modes:
        anchor = [p for p in anchor if p.mode in args.anchor_modes]
    print(f"{bd_rate(pareto_frontier(test), pareto_frontier(anchor)):.2f}%")


def cmd_macs(args):
    from .models import build_postprocessor, build_preprocessor, count_macs, load_weights
    models = []
    for path in args.model or []:
        models.append((path, load_weights(path)))
    if not models:
        if args.kind == "pre":
            models.append((f"pre r={args.ratio}", build_preprocessor(args.ratio)))
        else:
            models.append((f"post r={args.ratio}", build_postprocessor(args.ratio)))
    for label, m in models:
        macs, params = count_macs(m, args.height, args.width)
        print(json.dumps({"model": label, "kind": m.kind, "ratio": str(m.ratio),
                          "macs_per_pixel": round(macs, 4), "params": params,
                          "topology": m.topology_hash()}))


def cmd_gradcheck(args):
    from .checks import OP_TOL, PIPELINE_TOL, op_gradients, pipeline_gradient
    ok = True
    seed = args.seed or 0
    for name, err in op_gradients(seed).items():
        passed = err < OP_TOL
        ok &= passed
        print(json.dumps({"check": name, "max_rel_err": err, "tol": OP_TOL, "pass": passed}))
    if not args.ops_only:
        for flag in ("pair", "post-only"):
            errs = pipeline_gradient(args.ratio, flag, seed=seed)
            worst = max(errs.values())
            passed = worst < PIPELINE_TOL
            ok &= passed
            print(json.dumps({"check": f"pipeline[{flag}]", "max_rel_err": worst, "tol": PIPELINE_TOL,
                              "params_checked": len(errs), "pass": passed}))
    if not ok:
        raise RuntimeError("gradient check failed")


# ---------------------------------------------------------------- parser

def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--threads", type=int, default=1, help="parallel mode evaluations")
    common.add_argument("--seed", type=int, default=None, help="random seed (default 0)")
    common.add_argument("-v", "--verbose", action="store_true")
    p = _Parser(prog="nwrap", description="Neural pre/post-processing wrapper around a standard codec.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    _add = sub.add_parser
    sub.add_parser = lambda *a, **k: _add(*a, parents=[common], **k)

    t = sub.add_parser("train", help="train a pre/post pair or a post-only model")
    t.add_argument("--config", default=None, help="key = value config file")
    t.add_argument("--ratio", type=_ratio, default=None)
    t.add_argument("--flag", choices=("pair", "post-only"), default=None)
    t.add_argument("--lambda", dest="lam", type=float, default=None)
    t.add_argument("--depth", type=int, choices=(8, 10), default=None)
    t.add_argument("--crop", type=int, default=None)
    t.add_argument("--steps", type=int, default=None)
    t.add_argument("--batch", type=int, default=None)
    t.add_argument("--lr", type=float, default=None)
    t.add_argument("--dataset", default=None, help="directory of .ppm training images")
    t.add_argument("--model-dir", default=os.environ.get("NWRAP_MODEL_DIR"))
    t.add_argument("--log", default=None, help="line-delimited JSON training log")
    t.set_defaults(func=cmd_train)

    c = sub.add_parser("make-corpus", help="cut a desk-scale PPM corpus from bundled photos")
    c.add_argument("out")
    c.add_argument("--count", type=int, default=24)
    c.add_argument("--tile", type=int, default=256)
    c.set_defaults(func=cmd_make_corpus)

    for name, func, helptext in (("evaluate", cmd_evaluate, "R-D sweep over modes x qp ladder"),
                                 ("encode", cmd_encode, "encode a sequence into a container")):
        e = sub.add_parser(name, help=helptext)
        _add_video(e)
        _add_codec(e)
        _add_models(e)
        e.add_argument("--mode", action="append", default=None,
                       help="restrict modes: passthrough, linear:1/2, neural:2/3 or a code (repeatable)")
        e.set_defaults(func=func)
        if name == "evaluate":
            e.add_argument("--csv", default=None, help="CSV report path (default stdout)")
            e.add_argument("--json", default=None, help="Pareto summary path")
            e.add_argument("--name", default=None, help="sequence name in the report")
        else:
            e.add_argument("-o", "--output", required=True)
            e.add_argument("--qp", type=float, default=None, help="pick the best mode at this qp")
            e.add_argument("--target-bps", type=float, default=None)
            e.add_argument("--report", default=None, help="CSV of every evaluated point")
            e.add_argument("--pareto", default=None, help="JSON Pareto summary")

    d = sub.add_parser("decode", help="decode a container to raw YUV")
    d.add_argument("input")
    d.add_argument("-o", "--output", required=True)
    _add_codec(d)
    _add_models(d)
    d.set_defaults(func=cmd_decode)

    b = sub.add_parser("bdrate", help="BD-rate of TEST against ANCHOR report CSVs")
    b.add_argument("test")
    b.add_argument("anchor")
    b.add_argument("--test-modes", type=_mode_codes, default=None,
                   help="comma list of mode names or codes, e.g. passthrough,linear:1/2")
    b.add_argument("--anchor-modes", type=_mode_codes, default=None)
    b.set_defaults(func=cmd_bdrate)

    m = sub.add_parser("macs", help="MACs per pixel and parameter count")
    m.add_argument("--model", action="append", default=None, help="weight file (repeatable)")
    m.add_argument("--kind", choices=("pre", "post"), default="post")
    m.add_argument("--ratio", type=_ratio, default="1/2")
    m.add_argument("--height", type=int, default=2160)
    m.add_argument("--width", type=int, default=3840)
    m.set_defaults(func=cmd_macs)

    g = sub.add_parser("gradcheck", help="finite-difference gradient checks")
    g.add_argument("--ratio", type=_ratio, default="1/2")
    g.add_argument("--ops-only", action="store_true")
    g.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    if args.threads < 1:
        parser.error("--threads must be at least 1")
    try:
        args.func(args)
    except UsageError as exc:
        print(f"nwrap: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, ValueError, RuntimeError, LookupError, TypeError) as exc:
        print(f"nwrap: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return 0


if __name__ == "__main__":
    sys.exit(main())
