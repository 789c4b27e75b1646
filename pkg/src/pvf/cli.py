"""Command-line front end: pvf data | train | campaign | sweep | bitpos | oracle | report.

Exit codes: 0 success, 1 user error, 2 campaign infeasible, 3 internal error.
Every randomised command prints the master seed it used.
"""
from __future__ import annotations

import argparse
import json
import logging
import secrets
import sys
import time
from pathlib import Path

from . import __version__
from .campaign import (CampaignInfeasible, bitpos_sweep, count_sweep, default_workers, estimate_pvf,
                       exact_sbf_oracle, ORACLE_LIMIT)
from .faultmodels import FaultModelSpec, InfeasiblePlanError, InvalidFaultSpec
from .io.checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .io.datasets import MODEL_FOR, gen_ctr, gen_tokens, gen_toy, load_dataset, save_dataset
from .io.idx import IdxError
from .io.report import EstimateRow, ReportDocument, ReportError, merge_reports, read_report, write_report
from .io.svg import emit_svg_bars, emit_svg_lines
from .nn.models import CLI_NAMES, make_model, model_from_tensors

EXIT_OK, EXIT_USER, EXIT_INFEASIBLE, EXIT_INTERNAL = 0, 1, 2, 3

ACCURACY_FLOORS = {"lenet_mini": 0.95, "dlrm_mini": 0.70, "bert_mini": 0.85}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USER)


def _seed(args) -> int:
    seed = args.seed if args.seed is not None else secrets.randbits(32)
    print(f"seed: {seed}")
    return seed


def _load(args):
    tensors, digest = load_checkpoint(args.checkpoint)
    model = model_from_tensors(tensors)
    data = load_dataset(args.data).split(args.split)
    return model, data


def _workers(args) -> int:
    return args.workers if args.workers is not None else default_workers()


def _row(result, label, **kw) -> EstimateRow:
    return EstimateRow.from_estimate(result.estimate, label, result.target, result.fault,
                                     verdicts=result.counts, **kw)


def _document(kind, model, result, config, rows, duration, timing) -> ReportDocument:
    return ReportDocument(kind, model.kind, result.checkpoint_digest, result.dataset_fingerprint, result.eligible,
                          config, rows, duration_s=round(duration, 3) if timing else None)


def _finish(args, doc: ReportDocument, duration: float, lines: bool = False):
    print(f"elapsed: {duration:.2f}s")
    if args.out:
        write_report(args.out, doc)
        print(f"report: {args.out}")
    if getattr(args, "svg", None):
        (emit_svg_lines if lines else emit_svg_bars)(doc, args.svg, log=args.log)
        print(f"svg: {args.svg}")


# ---------------------------------------------------------------------------

def cmd_data(args):
    seed = _seed(args)
    gen = {"ctr": gen_ctr, "tokens": gen_tokens, "toy": gen_toy}[args.kind]
    ds = gen(seed, args.n)
    save_dataset(args.out, ds)
    print(f"{args.kind}: {len(ds)} examples ({ds.test_start} train / {len(ds) - ds.test_start} test) -> {args.out}")


def cmd_train(args):
    from .trainer import DEFAULTS, TrainConfig, train

    seed = _seed(args)
    kind = CLI_NAMES[args.model]
    ds = load_dataset(args.data)
    expected = MODEL_FOR.get(ds.kind)
    if expected != kind:
        raise UsageError(f"{args.data} holds {ds.kind} data, which feeds {expected}, not {kind}")
    d = DEFAULTS[kind]
    config = TrainConfig(lr=args.lr or d.lr, epochs=args.epochs or d.epochs,
                         batch_size=args.batch_size or d.batch_size, seed=seed)
    t0 = time.perf_counter()
    result = train(make_model(kind, seed=seed), ds, config)
    digest = save_checkpoint(args.out, result.model.tensors())
    floor = ACCURACY_FLOORS.get(kind)
    print(f"held-out accuracy: {result.accuracy:.4f}")
    if floor is not None:
        ok = result.accuracy >= floor
        print(f"accuracy {'>=' if ok else '<'} {floor:.2f}: {'ok' if ok else 'below floor'}")
    print(f"checkpoint: {args.out} (digest {digest}) in {time.perf_counter() - t0:.1f}s")


def _write_log(path, header: dict, outcomes, duration: float):
    with open(path, "w") as f:
        f.write(json.dumps({"header": header}) + "\n")
        for o in outcomes:
            f.write(json.dumps(o.record()) + "\n")
        f.write(json.dumps({"footer": {"trials": len(outcomes), "duration_s": round(duration, 3)}}) + "\n")


def cmd_campaign(args):
    seed = _seed(args)
    spec = FaultModelSpec.parse(args.fault)
    model, data = _load(args)
    model.group(args.target)
    t0 = time.perf_counter()
    res = estimate_pvf(model, data, args.target, spec, args.trials, seed, bit=args.bit,
                       workers=_workers(args), detail=bool(args.log_trials))
    dt = time.perf_counter() - t0
    print(f"{args.target} {spec}: {res.estimate}")
    config = {"command": "campaign", "checkpoint": str(args.checkpoint), "data": str(args.data),
              "split": args.split, "target": args.target, "fault": str(spec), "trials": args.trials,
              "seed": seed, "bit": args.bit}
    label = f"{args.target} {spec}" + (f" bit {args.bit}" if args.bit is not None else "")
    doc = _document("campaign", model, res, config,
                    [_row(res, label, bit=args.bit, count=spec.count if spec.kind != "ber" else None)],
                    dt, args.timing)
    if args.log_trials:
        _write_log(args.log_trials, config, res.outcomes, dt)
    _finish(args, doc, dt)


def _parse_counts(text: str) -> list[int]:
    try:
        counts = [int(c) for c in text.split(",") if c.strip()]
    except ValueError:
        raise UsageError(f"--counts must be comma-separated integers, got {text!r}") from None
    if not counts or min(counts) < 1:
        raise UsageError("--counts needs positive integers")
    return counts


def cmd_sweep(args):
    seed = _seed(args)
    counts = _parse_counts(args.counts)
    model, data = _load(args)
    model.group(args.target)
    t0 = time.perf_counter()
    results = count_sweep(model, data, args.target, args.fault_family, counts, args.trials, seed,
                          workers=_workers(args))
    dt = time.perf_counter() - t0
    rows = []
    for c, r in zip(counts, results):
        print(f"{args.target} {r.fault}: {r.estimate}")
        rows.append(_row(r, f"{args.target} {r.fault}", count=c))
    config = {"command": "sweep", "checkpoint": str(args.checkpoint), "data": str(args.data), "split": args.split,
              "target": args.target, "fault_family": args.fault_family, "counts": counts, "trials": args.trials,
              "seed": seed}
    _finish(args, _document("sweep", model, results[0], config, rows, dt, args.timing), dt, lines=True)


def cmd_bitpos(args):
    seed = _seed(args)
    spec = FaultModelSpec.parse(args.fault)
    model, data = _load(args)
    model.group(args.target)
    t0 = time.perf_counter()
    results = bitpos_sweep(model, data, args.target, args.trials, seed, spec, workers=_workers(args))
    dt = time.perf_counter() - t0
    rows = []
    for b, r in enumerate(results):
        print(f"bit {b:2d}: {r.estimate}")
        rows.append(_row(r, f"{args.target} bit {b}", bit=b))
    best = max(range(len(results)), key=lambda b: results[b].estimate.pvf)
    print(f"most vulnerable bit: {best}")
    config = {"command": "bitpos", "checkpoint": str(args.checkpoint), "data": str(args.data), "split": args.split,
              "target": args.target, "fault": str(spec), "trials": args.trials, "seed": seed}
    _finish(args, _document("bitpos", model, results[0], config, rows, dt, args.timing), dt)


def cmd_oracle(args):
    model, data = _load(args)
    model.group(args.target)
    t0 = time.perf_counter()
    est = exact_sbf_oracle(model, data, args.target, limit=args.limit)
    dt = time.perf_counter() - t0
    print(f"{args.target} exact sbf: PVF = {est.pvf:.6g} ({est.D}/{est.N} bit-input pairs)")
    if args.out:
        from .campaign import get_baseline

        base = get_baseline(model, data)
        config = {"command": "oracle", "checkpoint": str(args.checkpoint), "data": str(args.data),
                  "split": args.split, "target": args.target}
        row = EstimateRow.from_estimate(est, f"{args.target} sbf exact", args.target, "sbf", exact=True)
        doc = ReportDocument("oracle", model.kind, base.model_digest, base.dataset_fingerprint, len(base), config,
                             [row], duration_s=round(dt, 3) if args.timing else None)
        write_report(args.out, doc)
        print(f"report: {args.out}")
    print(f"elapsed: {dt:.2f}s")


def cmd_report(args):
    docs = [read_report(p) for p in args.reports]
    doc = merge_reports(docs)
    for r in doc.estimates:
        tag = " (exact)" if r.exact else ""
        print(f"{r.label}: PVF = {r.pvf:.6g} ({r.D}/{r.N}), 95% CI [{r.ci_low:.6g}, {r.ci_high:.6g}]{tag}")
    if args.svg:
        lines = args.lines or doc.kind == "sweep"
        (emit_svg_lines if lines else emit_svg_bars)(doc, args.svg, log=args.log, title=args.title)
        print(f"svg: {args.svg}")


# ---------------------------------------------------------------------------

def _fault(text):
    try:
        FaultModelSpec.parse(text)
    except InvalidFaultSpec as e:
        raise argparse.ArgumentTypeError(str(e)) from None
    return text


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="pvf", description="Parameter vulnerability factor (PVF) fault-injection workbench.")
    p.add_argument("--version", action="version", version=f"pvf {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    d = sub.add_parser("data", help="generate a synthetic dataset")
    d.add_argument("kind", choices=["ctr", "tokens", "toy"])
    d.add_argument("--n", type=int, default=10000)
    d.add_argument("--seed", type=int)
    d.add_argument("--out", type=Path, required=True)
    d.set_defaults(fn=cmd_data)

    t = sub.add_parser("train", help="train a model and save a checkpoint")
    t.add_argument("--model", choices=sorted(CLI_NAMES), required=True)
    t.add_argument("--data", type=Path, required=True)
    t.add_argument("--out", type=Path, required=True)
    t.add_argument("--seed", type=int)
    t.add_argument("--epochs", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--batch-size", type=int)
    t.set_defaults(fn=cmd_train)

    def common(sp, seed=True):
        sp.add_argument("--checkpoint", type=Path, required=True)
        sp.add_argument("--target", required=True, help="target group name")
        sp.add_argument("--data", type=Path, required=True, help="evaluation dataset (.npz or MNIST folder)")
        sp.add_argument("--split", choices=["test", "train", "all"], default="test")
        sp.add_argument("--out", type=Path, help="report JSON path")
        sp.add_argument("--timing", action="store_true", help="record wall-clock duration in the report")
        if seed:
            sp.add_argument("--trials", type=int, required=True)
            sp.add_argument("--seed", type=int)
            sp.add_argument("--workers", type=int, help="worker processes (default: $PVF_WORKERS or 1)")

    c = sub.add_parser("campaign", help="Monte Carlo PVF estimate for one target and fault model")
    common(c)
    c.add_argument("--fault", type=_fault, required=True, help="sbf | mbf:k | ber:r | mbbf:b")
    c.add_argument("--bit", type=int, help="confine every flip to this bit position")
    c.add_argument("--log-trials", type=Path, help="per-trial JSONL log")
    c.add_argument("--svg", type=Path)
    c.add_argument("--log", action="store_true", help="log-scale y axis")
    c.set_defaults(fn=cmd_campaign)

    s = sub.add_parser("sweep", help="PVF over a list of MBF or MBBF counts")
    common(s)
    s.add_argument("--fault-family", choices=["mbf", "mbbf"], required=True)
    s.add_argument("--counts", default="1,2,4,8,16,32,64,128")
    s.add_argument("--svg", type=Path)
    s.add_argument("--log", action="store_true")
    s.set_defaults(fn=cmd_sweep)

    b = sub.add_parser("bitpos", help="PVF per bit position (32 restricted campaigns)")
    common(b)
    b.add_argument("--fault", type=_fault, default="sbf")
    b.add_argument("--svg", type=Path)
    b.add_argument("--log", action="store_true")
    b.set_defaults(fn=cmd_bitpos)

    o = sub.add_parser("oracle", help="exact SBF PVF by exhaustive enumeration")
    common(o, seed=False)
    o.add_argument("--limit", type=int, default=ORACLE_LIMIT, help="maximum forward passes")
    o.set_defaults(fn=cmd_oracle)

    r = sub.add_parser("report", help="print report(s) and draw an SVG chart")
    r.add_argument("reports", nargs="+", type=Path)
    r.add_argument("--svg", type=Path)
    r.add_argument("--log", action="store_true")
    r.add_argument("--lines", action="store_true", help="line chart over counts")
    r.add_argument("--title")
    r.set_defaults(fn=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    if getattr(args, "trials", None) is not None and args.trials < 1:
        parser.error("--trials must be >= 1")
    if getattr(args, "workers", None) is not None and args.workers < 1:
        parser.error("--workers must be >= 1")
    try:
        args.fn(args)
    except (CampaignInfeasible, InfeasiblePlanError) as e:
        print(f"infeasible: {e}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except KeyError as e:
        print(f"error: {e.args[0] if e.args else e}", file=sys.stderr)
        return EXIT_USER
    except (UsageError, InvalidFaultSpec, CheckpointError, IdxError, ReportError, OSError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USER
    except Exception as e:  # noqa: BLE001
        logging.getLogger(__name__).debug("internal error", exc_info=True)
        print(f"internal error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_INTERNAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
