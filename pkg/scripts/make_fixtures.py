#!/usr/bin/env python3
"""Regenerate the dataset and checkpoint fixtures shipped in fixtures/.

    python scripts/make_fixtures.py fixtures

Writes ctr.npz, tokens.npz and toy.npz, then trains dlrm_mini, bert_mini and
lenet_mini (the last on fixtures/mnist5k, see prepare_mnist.py) and saves
their checkpoints. Everything is seeded; reruns give identical files.
"""
import argparse
import logging
import time
from pathlib import Path

from pvf.io.checkpoint import save_checkpoint
from pvf.io.datasets import gen_ctr, gen_tokens, gen_toy, load_dataset, save_dataset
from pvf.nn.models import make_model
from pvf.trainer import DEFAULTS, train

DATA_SEED = 7
MODEL_SEED = 1


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("out", type=Path, nargs="?", default=Path("fixtures"))
    ap.add_argument("--only", choices=["dlrm_mini", "bert_mini", "lenet_mini", "toy_linear"], action="append")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    out = args.out
    out.mkdir(parents=True, exist_ok=True)

    datasets = {
        "dlrm_mini": ("ctr.npz", lambda: gen_ctr(DATA_SEED, 25000)),
        "bert_mini": ("tokens.npz", lambda: gen_tokens(DATA_SEED, 5000)),
        "toy_linear": ("toy.npz", lambda: gen_toy(DATA_SEED, 60)),
        "lenet_mini": ("mnist5k", None),
    }
    for kind, (fname, gen) in datasets.items():
        if args.only and kind not in args.only:
            continue
        path = out / fname
        if gen is not None:
            save_dataset(path, gen())
        ds = load_dataset(path)
        t0 = time.perf_counter()
        result = train(make_model(kind, seed=MODEL_SEED), ds, DEFAULTS[kind])
        digest = save_checkpoint(out / f"{kind}.pvfw", result.model.tensors())
        print(f"{kind}: held-out accuracy {result.accuracy:.4f} in {time.perf_counter() - t0:.1f}s, digest {digest}")


if __name__ == "__main__":
    main()
