#!/usr/bin/env python3
"""Run the desk-scale vulnerability experiments and write reports plus SVG charts.

    python scripts/reproduce.py results/ --only bitpos dlrm
    python scripts/reproduce.py results/ --scale 0.1      # quick pass

Experiments (trial counts at --scale 1):
    toy      exact SBF PVF of the toy model next to a 2000-trial estimate
    bitpos   per-bit PVF of lenet fc3 and dlrm top_mlp, 20000 trials per bit
    dlrm     SBF PVF of every dlrm target, 100000 trials each
    sweeps   MBF and MBBF counts 1..128 on dlrm top_mlp and bot_mlp, 20000 trials each
    bert     SBF PVF of every query/key/value weight, 50000 trials each
    lenet    SBF PVF of every lenet layer, 100000 trials each
Each writes <name>.json (validated report) and <name>.svg into the output folder.
"""
import argparse
import time
from pathlib import Path

from pvf.campaign import (bitpos_sweep, count_sweep, default_workers, estimate_pvf, exact_sbf_oracle,
                          get_baseline)
from pvf.io.checkpoint import load_checkpoint
from pvf.io.datasets import load_dataset
from pvf.io.report import EstimateRow, ReportDocument, merge_reports, write_report
from pvf.io.svg import emit_svg_bars, emit_svg_lines
from pvf.nn.models import model_from_tensors

ROOT = Path(__file__).resolve().parents[1]
FIXTURES = ROOT / "fixtures"
DATA = {"dlrm_mini": "ctr.npz", "bert_mini": "tokens.npz", "lenet_mini": "mnist5k", "toy_linear": "toy.npz"}
EXPERIMENTS = ("toy", "bitpos", "dlrm", "sweeps", "bert", "lenet")


def load(kind):
    tensors, _ = load_checkpoint(FIXTURES / f"{kind}.pvfw")
    return model_from_tensors(tensors), load_dataset(FIXTURES / DATA[kind]).test


def row(r, label, **kw):
    return EstimateRow.from_estimate(r.estimate, label, r.target, r.fault, verdicts=r.counts, **kw)


def document(kind, model, ds, config, rows):
    base = get_baseline(model, ds)
    return ReportDocument(kind, model.kind, base.model_digest, base.dataset_fingerprint, len(base), config, rows)


def save(out: Path, name: str, doc, lines=False, log=False, title=None):
    write_report(out / f"{name}.json", doc)
    (emit_svg_lines if lines else emit_svg_bars)(doc, out / f"{name}.svg", log=log, title=title or name)
    for r in doc.estimates:
        print(f"  {r.label}: {r.pvf:.4g} [{r.ci_low:.4g}, {r.ci_high:.4g}]")


def run_toy(out, n, seed, workers):
    model, ds = load("toy_linear")
    exact = exact_sbf_oracle(model, ds, "fc")
    est = estimate_pvf(model, ds, "fc", "sbf", n(2000), seed, workers=workers)
    rows = [EstimateRow.from_estimate(exact, "fc sbf exact", "fc", "sbf", exact=True), row(est, "fc sbf")]
    save(out, "toy", document("campaign", model, ds, {"trials": n(2000), "seed": seed}, rows))


def run_bitpos(out, n, seed, workers):
    for kind, target in (("lenet_mini", "fc3"), ("dlrm_mini", "top_mlp")):
        model, ds = load(kind)
        res = bitpos_sweep(model, ds, target, n(20000), seed, workers=workers)
        rows = [row(r, f"{target} bit {r.bit}", bit=r.bit) for r in res]
        doc = document("bitpos", model, ds, {"target": target, "trials": n(20000), "seed": seed}, rows)
        save(out, f"bitpos_{kind}_{target}", doc, log=True)


def run_dlrm(out, n, seed, workers):
    model, ds = load("dlrm_mini")
    targets = ["top_mlp", "bot_mlp"] + [f"emb_{i}" for i in range(8)]
    rows = [row(estimate_pvf(model, ds, t, "sbf", n(100_000), seed, workers=workers), t) for t in targets]
    save(out, "dlrm_components", document("campaign", model, ds, {"trials": n(100_000), "seed": seed}, rows),
         log=True)


def run_sweeps(out, n, seed, workers):
    model, ds = load("dlrm_mini")
    counts = [1, 2, 4, 8, 16, 32, 64, 128]
    docs = []
    for target in ("top_mlp", "bot_mlp"):
        for family in ("mbf", "mbbf"):
            res = count_sweep(model, ds, target, family, counts, n(20000), seed, workers=workers)
            rows = [row(r, f"{target} {r.fault}", count=c) for c, r in zip(counts, res)]
            docs.append(document("sweep", model, ds, {"target": target, "family": family,
                                                      "trials": n(20000), "seed": seed}, rows))
    save(out, "dlrm_sweeps", merge_reports(docs), lines=True)


def run_bert(out, n, seed, workers):
    model, ds = load("bert_mini")
    rows = []
    for l in range(model.config.layers):
        for h in "qkv":
            t = f"l{l}.{h}"
            rows.append(row(estimate_pvf(model, ds, t, "sbf", n(50_000), seed, workers=workers), t))
    save(out, "bert_qkv", document("campaign", model, ds, {"trials": n(50_000), "seed": seed}, rows))


def run_lenet(out, n, seed, workers):
    model, ds = load("lenet_mini")
    rows = [row(estimate_pvf(model, ds, g, "sbf", n(100_000), seed, workers=workers), g)
            for g in ("conv1", "conv2", "fc1", "fc2", "fc3")]
    save(out, "lenet_layers", document("campaign", model, ds, {"trials": n(100_000), "seed": seed}, rows))


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("out", type=Path)
    ap.add_argument("--only", nargs="+", choices=EXPERIMENTS)
    ap.add_argument("--scale", type=float, default=1.0, help="multiply every trial count")
    ap.add_argument("--seed", type=int, default=2024)
    ap.add_argument("--workers", type=int, default=default_workers())
    args = ap.parse_args()
    args.out.mkdir(parents=True, exist_ok=True)

    def n(trials):
        return max(1, round(trials * args.scale))

    for name in args.only or EXPERIMENTS:
        t0 = time.perf_counter()
        print(f"{name}:")
        globals()[f"run_{name}"](args.out, n, args.seed, args.workers)
        print(f"  ({time.perf_counter() - t0:.1f}s)")


if __name__ == "__main__":
    main()
