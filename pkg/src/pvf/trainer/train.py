"""Plain-SGD training of the desk-scale models.

The differentiable forward passes below mirror the FP32 engine graphs layer
for layer but run in float64; trained weights are rounded to FP32 once at the
end and accuracy is always measured with the FP32 engine.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from ..io.datasets import Dataset
from ..nn.models import BertMini, DlrmMini, LeNetMini, ModelGraph, ToyLinear
from . import autograd as ag

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.05
    epochs: int = 5
    batch_size: int = 32
    seed: int = 0
    loss: str | None = None  # "bce" | "cross_entropy"; None picks by model

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError("learning rate must be > 0")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch size must be >= 1")
        if self.loss not in (None, "bce", "cross_entropy"):
            raise ValueError(f"unknown loss {self.loss!r}")


# per-model defaults that clear the accuracy floors on the bundled data
DEFAULTS = {
    "dlrm_mini": TrainConfig(lr=0.1, epochs=6, batch_size=32),
    "lenet_mini": TrainConfig(lr=0.05, epochs=12, batch_size=16),
    "bert_mini": TrainConfig(lr=0.05, epochs=8, batch_size=16),
    "toy_linear": TrainConfig(lr=0.1, epochs=20, batch_size=8),
}


@dataclass
class TrainResult:
    model: ModelGraph
    accuracy: float
    epoch_losses: list[float] = field(default_factory=list)


def _forward(model: ModelGraph, P: Mapping[str, ag.Var], inputs: Mapping[str, np.ndarray]) -> ag.Var:
    """Logits (pre-sigmoid for binary models) as a differentiable Var."""
    if isinstance(model, DlrmMini):
        c = model.config
        z = ag.Var(inputs["dense"])
        for i in range(len(c.bot_widths)):
            z = ag.relu(ag.linear(z, P[f"bot.{i}.weight"], P[f"bot.{i}.bias"]))
        cats = inputs["cats"]
        z = ag.concat([z] + [ag.embedding(P[f"emb.{t}"], cats[:, t]) for t in range(len(c.table_rows))])
        n = len(c.top_widths)
        for i in range(n):
            z = ag.linear(z, P[f"top.{i}.weight"], P[f"top.{i}.bias"])
            if i < n - 1:
                z = ag.relu(z)
        return z

    if isinstance(model, LeNetMini):
        x = ag.Var(model.standardize(inputs["image"]))
        for name in ("conv1", "conv2"):
            x = ag.maxpool2(ag.relu(ag.conv2d(x, P[f"{name}.weight"], P[f"{name}.bias"])))
        x = ag.reshape(x, (x.shape[0], -1))
        x = ag.relu(ag.linear(x, P["fc1.weight"], P["fc1.bias"]))
        x = ag.relu(ag.linear(x, P["fc2.weight"], P["fc2.bias"]))
        return ag.linear(x, P["fc3.weight"], P["fc3.bias"])

    if isinstance(model, BertMini):
        c = model.config
        h, dh = c.heads, c.width // c.heads
        tok = inputs["tokens"]
        x = ag.embedding(P["embed.tok"], tok) + P["embed.pos"]
        bsz, n = tok.shape

        def split(t):
            return ag.transpose(ag.reshape(t, (bsz, n, h, dh)), (0, 2, 1, 3))

        for l in range(c.layers):
            q = ag.linear(x, P[f"l{l}.q.weight"], P[f"l{l}.q.bias"])
            k = ag.linear(x, P[f"l{l}.k.weight"], P[f"l{l}.k.bias"])
            v = ag.linear(x, P[f"l{l}.v.weight"], P[f"l{l}.v.bias"])
            a = ag.attention(split(q), split(k), split(v))
            a = ag.reshape(ag.transpose(a, (0, 2, 1, 3)), (bsz, n, c.width))
            o = ag.linear(a, P[f"l{l}.o.weight"], P[f"l{l}.o.bias"])
            x = ag.layer_norm(x + o, P[f"l{l}.ln1.gamma"], P[f"l{l}.ln1.beta"], model.eps)
            f = ag.relu(ag.linear(x, P[f"l{l}.ff1.weight"], P[f"l{l}.ff1.bias"]))
            f = ag.linear(f, P[f"l{l}.ff2.weight"], P[f"l{l}.ff2.bias"])
            x = ag.layer_norm(x + f, P[f"l{l}.ln2.gamma"], P[f"l{l}.ln2.beta"], model.eps)
        return ag.linear(ag.mean(x, axis=1), P["head.weight"], P["head.bias"])

    if isinstance(model, ToyLinear):
        return ag.linear(ag.Var(inputs["x"]), P["fc.weight"], P.get("fc.bias"))

    raise TypeError(f"no differentiable forward for {type(model).__name__}")


def _loss_kind(model: ModelGraph, config: TrainConfig | None) -> str:
    if config is not None and config.loss is not None:
        return config.loss
    return "bce" if model.binary else "cross_entropy"


def loss_and_grads(model: ModelGraph, params: Mapping[str, np.ndarray], inputs, targets,
                   loss: str | None = None) -> tuple[float, dict[str, np.ndarray]]:
    P = {k: ag.Var(v) for k, v in params.items()}
    out = _forward(model, P, inputs)
    loss = loss or _loss_kind(model, None)
    L = ag.bce_with_logits(out, targets) if loss == "bce" else ag.cross_entropy(out, targets)
    value = float(L.value)
    if not np.isfinite(value):
        raise TrainingDiverged(f"non-finite loss {value}")
    ag.backward(L)
    return value, {k: (v.grad if v.grad is not None else np.zeros_like(v.value)) for k, v in P.items()}


def backward(model: ModelGraph, inputs, targets, loss: str | None = None) -> dict[str, np.ndarray]:
    """Gradient of the mean training loss w.r.t. every parameter tensor."""
    params = {k: v.astype(np.float64) for k, v in model.params.items()}
    return loss_and_grads(model, params, inputs, targets, loss)[1]


def accuracy(model: ModelGraph, ds: Dataset, chunk: int = 512) -> float:
    if len(ds) == 0:
        raise ValueError("empty evaluation set")
    hits = 0
    for s in range(0, len(ds), chunk):
        sl = slice(s, s + chunk)
        pred = model.predict_batch({k: v[sl] for k, v in ds.inputs.items()})
        hits += int(np.sum((pred.labels == ds.labels[sl]) & ~pred.has_nan))
    return hits / len(ds)


def train(model: ModelGraph, dataset: Dataset, config: TrainConfig | None = None,
          eval_set: Dataset | None = None) -> TrainResult:
    """SGD on `dataset`; accuracy is measured with the FP32 engine on `eval_set`
    (default: the dataset's held-out split, with training on the rest)."""
    config = config or DEFAULTS.get(model.kind, TrainConfig())
    if eval_set is None:
        train_set, eval_set = dataset.train, dataset.test
    else:
        train_set = dataset
    n = len(train_set)
    if n == 0:
        raise ValueError("empty training set")
    loss_kind = _loss_kind(model, config)
    rng = np.random.default_rng(config.seed)
    params = {k: v.astype(np.float64) for k, v in model.params.items()}
    losses = []
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        total = 0.0
        for s in range(0, n, config.batch_size):
            idx = order[s:s + config.batch_size]
            batch = {k: v[idx] for k, v in train_set.inputs.items()}
            value, grads = loss_and_grads(model, params, batch, train_set.labels[idx], loss_kind)
            for k in params:
                params[k] -= config.lr * grads[k]
            total += value * len(idx)
        losses.append(total / n)
        bad = [k for k, v in params.items() if not np.isfinite(v).all()]
        if bad:
            raise TrainingDiverged(f"epoch {epoch + 1}: non-finite parameters in {', '.join(bad)}")
        log.info("%s epoch %d/%d loss %.4f", model.kind, epoch + 1, config.epochs, losses[-1])
    with np.errstate(over="ignore"):
        final = {k: v.astype(np.float32) for k, v in params.items()}
    bad = [k for k, v in final.items() if not np.isfinite(v).all()]
    if bad:
        raise TrainingDiverged(f"parameters overflow FP32 in {', '.join(bad)}")
    trained = type(model)(model.config, params=final)
    acc = accuracy(trained, eval_set) if len(eval_set) else float("nan")
    return TrainResult(trained, acc, losses)
