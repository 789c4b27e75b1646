"""Labelled datasets: synthetic generators, .npz persistence and MNIST IDX folders.

Generators are versioned: a (generator, version, seed, n) tuple always yields
the same arrays, so checkpoints trained on them are reproducible artifacts.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .idx import read_idx

CTR_VERSION = 1
TOKENS_VERSION = 1
TOY_VERSION = 1

# dataset kind -> model kind it feeds
MODEL_FOR = {"ctr": "dlrm_mini", "tokens": "bert_mini", "mnist": "lenet_mini", "toy": "toy_linear"}


@dataclass
class Dataset:
    kind: str
    inputs: dict[str, np.ndarray]
    labels: np.ndarray
    test_start: int | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        n = len(self.labels)
        for k, v in self.inputs.items():
            if len(v) != n:
                raise ValueError(f"input {k!r} has {len(v)} rows, labels have {n}")
        if self.test_start is None:
            self.test_start = n - n // 5
        if not 0 <= self.test_start <= n:
            raise ValueError("test_start outside dataset")

    def __len__(self):
        return len(self.labels)

    def subset(self, idx) -> Dataset:
        idx = np.asarray(idx)
        return Dataset(self.kind, {k: v[idx] for k, v in self.inputs.items()}, self.labels[idx],
                       test_start=len(self.labels[idx]), meta=dict(self.meta))

    @property
    def train(self) -> Dataset:
        return self.subset(np.arange(self.test_start))

    @property
    def test(self) -> Dataset:
        return self.subset(np.arange(self.test_start, len(self)))

    def split(self, name: str) -> Dataset:
        if name == "all":
            return self
        if name in ("train", "test"):
            return getattr(self, name)
        raise ValueError(f"unknown split {name!r}; use train, test or all")

    def fingerprint(self) -> str:
        h = hashlib.blake2b(digest_size=8)
        h.update(self.kind.encode())
        for k in sorted(self.inputs):
            h.update(k.encode())
            h.update(np.ascontiguousarray(self.inputs[k]).tobytes())
        h.update(np.ascontiguousarray(self.labels).tobytes())
        return h.hexdigest()


def _stream(name: str, version: int, seed: int) -> np.random.Generator:
    tag = int.from_bytes(hashlib.blake2b(name.encode(), digest_size=4).digest(), "little")
    return np.random.default_rng([tag, version, seed])


def _sigmoid(z):
    return 1.0 / (1.0 + np.exp(-z))


@dataclass
class CtrHidden:
    dense_w: np.ndarray
    popularity: list[np.ndarray]
    effects: list[np.ndarray]
    offset: float

    def logit(self, dense, cats) -> np.ndarray:
        z = dense.astype(np.float64) @ self.dense_w
        for t, eff in enumerate(self.effects):
            z = z + eff[cats[:, t]]
        return z - self.offset


def ctr_hidden(seed: int, table_rows=(16, 32, 64, 128, 256, 512, 1024, 4096), n_dense: int = 4,
               dense_scale: float = 1.5, effect_scale: float = 0.8, zipf: float = 1.05) -> CtrHidden:
    rng = _stream("ctr", CTR_VERSION, seed)
    w = rng.normal(size=n_dense)
    w *= dense_scale / np.linalg.norm(w)
    pops, effects = [], []
    offset = 0.0
    for rows in table_rows:
        p = 1.0 / np.arange(1, rows + 1) ** zipf
        p = rng.permutation(p / p.sum())
        e = rng.normal(scale=effect_scale, size=rows)
        pops.append(p)
        effects.append(e)
        offset += float(p @ e)
    return CtrHidden(w, pops, effects, offset)


def gen_ctr(seed: int, n: int, table_rows=(16, 32, 64, 128, 256, 512, 1024, 4096), n_dense: int = 4) -> Dataset:
    """Synthetic click data: Bernoulli(sigmoid(w . dense + sum of category effects)).

    Categories follow a shuffled Zipf popularity per table; the hidden
    effects are centred so the click base rate stays near one half.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    hidden = ctr_hidden(seed, table_rows, n_dense)
    rng = _stream("ctr-samples", CTR_VERSION, seed)
    dense = rng.normal(size=(n, n_dense)).astype(np.float32)
    cats = np.stack([rng.choice(len(p), size=n, p=p) for p in hidden.popularity], axis=1).astype(np.int64)
    prob = _sigmoid(hidden.logit(dense, cats))
    labels = (rng.random(n) < prob).astype(np.int64)
    return Dataset("ctr", {"dense": dense, "cats": cats}, labels,
                   meta={"generator": "ctr", "version": CTR_VERSION, "seed": seed,
                         "table_rows": np.asarray(table_rows)})


def ctr_bayes_accuracy(ds: Dataset) -> float:
    """Accuracy of the generator's own decision rule (hidden logit >= 0)."""
    rows = tuple(int(x) for x in ds.meta["table_rows"])
    hidden = ctr_hidden(int(ds.meta["seed"]), rows, ds.inputs["dense"].shape[1])
    pred = hidden.logit(ds.inputs["dense"], ds.inputs["cats"]) >= 0
    return float(np.mean(pred == ds.labels))


def gen_tokens(seed: int, n: int, vocab: int = 1000, seq_len: int = 16, classes: int = 4,
               markers_per_class: int = 8) -> Dataset:
    """Synthetic topic classification.

    Every class owns a disjoint set of marker tokens. A sequence carries 2-4
    markers of its class, at most one marker of another class, and noise
    tokens elsewhere. Classes are balanced exactly.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = _stream("tokens", TOKENS_VERSION, seed)
    perm = rng.permutation(vocab)
    markers = perm[:classes * markers_per_class].reshape(classes, markers_per_class)
    noise = perm[classes * markers_per_class:]
    labels = rng.permutation(np.arange(n) % classes).astype(np.int64)
    tokens = rng.choice(noise, size=(n, seq_len))
    for i in range(n):
        c = labels[i]
        k = int(rng.integers(2, 5))
        distract = int(rng.integers(0, 2))
        pos = rng.choice(seq_len, size=k + distract, replace=False)
        tokens[i, pos[:k]] = rng.choice(markers[c], size=k)
        if distract:
            other = (c + 1 + int(rng.integers(classes - 1))) % classes
            tokens[i, pos[k]] = rng.choice(markers[other])
    return Dataset("tokens", {"tokens": tokens.astype(np.int64)}, labels,
                   meta={"generator": "tokens", "version": TOKENS_VERSION, "seed": seed,
                         "markers": markers})


def tokens_bayes_accuracy(ds: Dataset) -> float:
    """Accuracy of 'most frequent class marker wins' on a token dataset."""
    markers = np.asarray(ds.meta["markers"])
    counts = np.stack([np.isin(ds.inputs["tokens"], markers[c]).sum(axis=1) for c in range(len(markers))], axis=1)
    return float(np.mean(np.argmax(counts, axis=1) == ds.labels))


def gen_toy(seed: int, n: int, n_in: int = 4, classes: int = 2) -> Dataset:
    """Gaussian inputs labelled by a hidden linear rule (binary: sign of w.x + c)."""
    rng = _stream("toy", TOY_VERSION, seed)
    x = rng.normal(size=(n, n_in)).astype(np.float32)
    if classes == 2:
        w = rng.normal(size=n_in)
        labels = (x @ w + 0.1 >= 0).astype(np.int64)
    else:
        w = rng.normal(size=(classes, n_in))
        labels = np.argmax(x @ w.T, axis=1).astype(np.int64)
    return Dataset("toy", {"x": x}, labels, meta={"generator": "toy", "version": TOY_VERSION, "seed": seed})


def save_dataset(path, ds: Dataset) -> None:
    arrays = {f"input.{k}": v for k, v in ds.inputs.items()}
    arrays["labels"] = ds.labels
    arrays["kind"] = np.array(ds.kind)
    arrays["test_start"] = np.array(ds.test_start)
    for k, v in ds.meta.items():
        arrays[f"meta.{k}"] = np.asarray(v)
    with open(path, "wb") as f:
        np.savez_compressed(f, **arrays)


def load_dataset(path) -> Dataset:
    """Load a .npz written by `save_dataset`, or a folder of MNIST IDX files."""
    path = Path(path)
    if path.is_dir():
        return load_mnist_dir(path)
    if not path.exists():
        raise FileNotFoundError(f"dataset not found: {path}")
    with np.load(path, allow_pickle=False) as z:
        inputs = {k[len("input."):]: z[k] for k in z.files if k.startswith("input.")}
        meta = {k[len("meta."):]: z[k][()] if z[k].ndim == 0 else z[k] for k in z.files if k.startswith("meta.")}
        for k, v in meta.items():
            if isinstance(v, np.generic):
                meta[k] = v.item()
        return Dataset(str(z["kind"]), inputs, z["labels"].astype(np.int64), int(z["test_start"]), meta)


def _find(folder: Path, stem: str) -> Path | None:
    for suffix in ("", ".gz"):
        p = folder / (stem + suffix)
        if p.exists():
            return p
    return None


def load_mnist_dir(folder) -> Dataset:
    """Read ``train-*`` and (optionally) ``t10k-*`` IDX pairs; t10k becomes the test split."""
    folder = Path(folder)
    parts = []
    for prefix in ("train", "t10k"):
        img = _find(folder, f"{prefix}-images-idx3-ubyte")
        lab = _find(folder, f"{prefix}-labels-idx1-ubyte")
        if img is None and lab is None:
            continue
        if img is None or lab is None:
            raise FileNotFoundError(f"{folder}: {prefix} images and labels must both be present")
        parts.append(read_idx(img, lab))
    if not parts:
        raise FileNotFoundError(f"{folder}: no MNIST IDX files found")
    images = np.concatenate([p[0] for p in parts])[:, None, :, :]
    labels = np.concatenate([p[1] for p in parts])
    test_start = len(parts[0][1]) if len(parts) == 2 else None
    return Dataset("mnist", {"image": images}, labels, test_start=test_start, meta={"source": str(folder)})
