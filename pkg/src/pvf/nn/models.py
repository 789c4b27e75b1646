"""Desk-scale model graphs: DLRM-style recommender, LeNet-5 style CNN, a small
BERT-style encoder, and a toy linear unit used to validate the estimator.

A model is a named set of FP32 tensors plus an ordered list of stages. Each
stage reads a dict of batched activations and the tensors it declares, and
returns the next dict. Running stages from the middle is what lets the fault
campaign reuse cached fault-free activations upstream of the target.
"""
from __future__ import annotations

from dataclasses import astuple, dataclass
from typing import Callable, Mapping

import numpy as np

from ..faultmodels import TargetGroup
from . import layers as L

F32 = np.float32
META_PREFIX = "__meta__."


@dataclass(frozen=True)
class Stage:
    name: str
    uses: tuple[str, ...]
    fn: Callable[[Mapping[str, np.ndarray], dict], dict]


@dataclass(frozen=True)
class Prediction:
    scores: np.ndarray
    label: int
    has_nan: bool
    has_inf: bool


@dataclass
class PredictionBatch:
    scores: np.ndarray
    labels: np.ndarray
    has_nan: np.ndarray
    has_inf: np.ndarray

    def __len__(self):
        return len(self.labels)

    def __getitem__(self, i) -> Prediction:
        return Prediction(self.scores[i].copy(), int(self.labels[i]), bool(self.has_nan[i]), bool(self.has_inf[i]))


def _uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(F32)


class ModelGraph:
    """Base class; subclasses define `param_shapes`, `build_stages`, `group_tensors`."""

    kind: str = ""
    binary: bool = False
    input_keys: tuple[str, ...] = ()

    def __init__(self, config, params: Mapping[str, np.ndarray] | None = None, seed: int | None = None):
        self.config = config
        shapes = self.param_shapes()
        if params is None:
            params = self.init_params(np.random.default_rng(seed))
        params = {k: v for k, v in params.items() if not k.startswith(META_PREFIX)}
        missing = set(shapes) - set(params)
        extra = set(params) - set(shapes)
        if missing or extra:
            raise ValueError(f"{self.kind}: missing tensors {sorted(missing)}, unexpected {sorted(extra)}")
        self.params: dict[str, np.ndarray] = {}
        for name, shape in shapes.items():
            arr = np.array(params[name], dtype=F32, copy=True, order="C")
            if arr.shape != tuple(shape):
                raise ValueError(f"{self.kind}: tensor {name} has shape {arr.shape}, expected {tuple(shape)}")
            arr.flags.writeable = False
            self.params[name] = arr
        self.stages: list[Stage] = self.build_stages()

    # -- to be provided by subclasses -------------------------------------
    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        raise NotImplementedError

    def fan_in(self, name: str) -> int:
        raise NotImplementedError

    def build_stages(self) -> list[Stage]:
        raise NotImplementedError

    def group_tensors(self) -> dict[str, tuple[str, ...]]:
        raise NotImplementedError

    def meta_vector(self) -> np.ndarray:
        return np.asarray(astuple(self.config), dtype=F32)

    # -- shared machinery ---------------------------------------------------
    def init_params(self, rng: np.random.Generator) -> dict[str, np.ndarray]:
        out = {}
        for name, shape in self.param_shapes().items():
            if name.endswith(".gamma"):
                out[name] = np.ones(shape, dtype=F32)
            elif name.endswith(".beta"):
                out[name] = np.zeros(shape, dtype=F32)
            else:
                out[name] = _uniform(rng, shape, self.fan_in(name))
        return out

    def groups(self) -> dict[str, TargetGroup]:
        return {g: TargetGroup.from_params(g, ts, self.params) for g, ts in self.group_tensors().items()}

    def group(self, name: str) -> TargetGroup:
        groups = self.group_tensors()
        if name not in groups:
            raise KeyError(f"unknown target group {name!r} for {self.kind}; valid: {', '.join(groups)}")
        return TargetGroup.from_params(name, groups[name], self.params)

    def tensors(self) -> dict[str, np.ndarray]:
        """Everything persisted in a checkpoint, including the config record."""
        out = dict(self.params)
        out[META_PREFIX + self.kind] = self.meta_vector()
        return out

    def first_stage(self, tensor_names) -> int:
        names = set(tensor_names)
        for i, st in enumerate(self.stages):
            if names & set(st.uses):
                return i
        return len(self.stages)

    def initial_state(self, inputs: Mapping[str, np.ndarray]) -> dict:
        state = {}
        for k in self.input_keys:
            if k not in inputs:
                raise ValueError(f"{self.kind} input needs key {k!r}")
            state[k] = inputs[k]
        self.check_inputs(state)
        return state

    def check_inputs(self, state: dict):
        pass

    def run_stages(self, state: dict, params: Mapping[str, np.ndarray] | None = None,
                   start: int = 0, stop: int | None = None) -> dict:
        params = self.params if params is None else params
        for st in self.stages[start:stop]:
            state = st.fn(params, state)
        return state

    def predictions(self, out: np.ndarray) -> PredictionBatch:
        flat = out.reshape(out.shape[0], -1)
        has_nan = np.isnan(flat).any(axis=1)
        has_inf = np.isinf(flat).any(axis=1)
        if self.binary:
            labels = (flat[:, 0] >= F32(0.5)).astype(np.int64)
        else:
            labels = L.argmax_lowest(flat).astype(np.int64)
        return PredictionBatch(flat, labels, has_nan, has_inf)

    def predict_batch(self, inputs: Mapping[str, np.ndarray], params=None) -> PredictionBatch:
        return self.predictions(self.run_stages(self.initial_state(inputs), params)["out"])

    def forward(self, inputs: Mapping[str, np.ndarray], params=None) -> Prediction:
        """Single-sample inference; `inputs` values carry no sample axis."""
        batched = {k: np.asarray(v)[None] for k, v in inputs.items()}
        return self.predict_batch(batched, params)[0]

    def __repr__(self):
        return f"{type(self).__name__}({self.config})"


# ---------------------------------------------------------------------------
# DLRM-style recommender

@dataclass(frozen=True)
class DlrmConfig:
    n_dense: int = 4
    table_rows: tuple[int, ...] = (16, 32, 64, 128, 256, 512, 1024, 4096)
    emb_dim: int = 8
    bot_widths: tuple[int, ...] = (16, 8)
    top_widths: tuple[int, ...] = (32, 1)

    def __post_init__(self):
        if self.top_widths[-1] != 1:
            raise ValueError("top MLP must end in a single click logit")


class DlrmMini(ModelGraph):
    kind = "dlrm_mini"
    binary = True
    input_keys = ("dense", "cats")

    def __init__(self, config: DlrmConfig | None = None, params=None, seed=None):
        super().__init__(config or DlrmConfig(), params, seed)

    @property
    def top_input_width(self) -> int:
        c = self.config
        return c.bot_widths[-1] + len(c.table_rows) * c.emb_dim

    def param_shapes(self):
        c = self.config
        shapes = {}
        width = c.n_dense
        for i, w in enumerate(c.bot_widths):
            shapes[f"bot.{i}.weight"] = (w, width)
            shapes[f"bot.{i}.bias"] = (w,)
            width = w
        for t, rows in enumerate(c.table_rows):
            shapes[f"emb.{t}"] = (rows, c.emb_dim)
        width = self.top_input_width
        for i, w in enumerate(c.top_widths):
            shapes[f"top.{i}.weight"] = (w, width)
            shapes[f"top.{i}.bias"] = (w,)
            width = w
        return shapes

    def fan_in(self, name):
        shape = self.param_shapes()[name]
        if name.startswith("emb."):
            return shape[0]
        layer = name.rsplit(".", 1)[0]
        return self.param_shapes()[layer + ".weight"][1]

    def check_inputs(self, state):
        c = self.config
        if state["dense"].shape[-1] != c.n_dense:
            raise ValueError(f"dlrm_mini expects {c.n_dense} dense features")
        if state["cats"].shape[-1] != len(c.table_rows):
            raise ValueError(f"dlrm_mini expects {len(c.table_rows)} categorical indices")

    def build_stages(self):
        c = self.config
        stages = []
        n_bot, n_top, n_tab = len(c.bot_widths), len(c.top_widths), len(c.table_rows)

        def bot_layer(i):
            w, b = f"bot.{i}.weight", f"bot.{i}.bias"
            src = "dense" if i == 0 else "bot"

            def fn(p, s):
                return {"bot": L.relu(L.linear(s[src], p[w], p[b])), "cats": s["cats"]}
            return Stage(f"bot.{i}", (w, b), fn)

        for i in range(n_bot):
            stages.append(bot_layer(i))

        tables = tuple(f"emb.{t}" for t in range(n_tab))

        def emb(p, s):
            cats = s["cats"]
            parts = [s["bot"]] + [L.embedding_lookup(p[tables[t]], cats[:, t]) for t in range(n_tab)]
            return {"z": np.concatenate(parts, axis=-1)}
        stages.append(Stage("interaction", tables, emb))

        def top_layer(i):
            w, b = f"top.{i}.weight", f"top.{i}.bias"
            last = i == n_top - 1

            def fn(p, s):
                y = L.linear(s["z"], p[w], p[b])
                return {"out": L.sigmoid(y)} if last else {"z": L.relu(y)}
            return Stage(f"top.{i}", (w, b), fn)

        for i in range(n_top):
            stages.append(top_layer(i))
        return stages

    def group_tensors(self):
        c = self.config
        shapes = self.param_shapes()
        g = {f"emb_{t}": (f"emb.{t}",) for t in range(len(c.table_rows))}
        g["bot_mlp"] = tuple(n for n in shapes if n.startswith("bot."))
        g["top_mlp"] = tuple(n for n in shapes if n.startswith("top."))
        return g

    def meta_vector(self):
        c = self.config
        return np.asarray([c.n_dense, c.emb_dim, len(c.table_rows), *c.table_rows,
                           len(c.bot_widths), *c.bot_widths, len(c.top_widths), *c.top_widths], dtype=F32)

    @staticmethod
    def config_from_meta(v) -> DlrmConfig:
        v = [int(x) for x in v]
        n_dense, emb_dim, nt = v[0], v[1], v[2]
        rows = tuple(v[3:3 + nt])
        i = 3 + nt
        bot = tuple(v[i + 1:i + 1 + v[i]])
        i += 1 + v[i]
        top = tuple(v[i + 1:i + 1 + v[i]])
        return DlrmConfig(n_dense, rows, emb_dim, bot, top)


# ---------------------------------------------------------------------------
# LeNet-5 style CNN (28x28 -> conv5 -> pool -> conv5 -> pool -> 256 -> 120 -> 84 -> 10)

@dataclass(frozen=True)
class LeNetConfig:
    image: int = 28
    conv_channels: tuple[int, int] = (6, 16)
    kernel: int = 5
    hidden: tuple[int, int] = (120, 84)
    classes: int = 10
    # fixed input standardisation applied before conv1 (the usual MNIST constants)
    pixel_mean: float = 0.1307
    pixel_std: float = 0.3081


class LeNetMini(ModelGraph):
    kind = "lenet_mini"
    input_keys = ("image",)

    def __init__(self, config: LeNetConfig | None = None, params=None, seed=None):
        super().__init__(config or LeNetConfig(), params, seed)

    @property
    def flat_width(self) -> int:
        c = self.config
        side = ((c.image - c.kernel + 1) // 2 - c.kernel + 1) // 2
        return c.conv_channels[1] * side * side

    def param_shapes(self):
        c = self.config
        c1, c2 = c.conv_channels
        k = c.kernel
        h1, h2 = c.hidden
        return {
            "conv1.weight": (c1, 1, k, k), "conv1.bias": (c1,),
            "conv2.weight": (c2, c1, k, k), "conv2.bias": (c2,),
            "fc1.weight": (h1, self.flat_width), "fc1.bias": (h1,),
            "fc2.weight": (h2, h1), "fc2.bias": (h2,),
            "fc3.weight": (c.classes, h2), "fc3.bias": (c.classes,),
        }

    def fan_in(self, name):
        layer = name.rsplit(".", 1)[0]
        shape = self.param_shapes()[layer + ".weight"]
        return int(np.prod(shape[1:]))

    def standardize(self, image: np.ndarray) -> np.ndarray:
        c = self.config
        with np.errstate(all="ignore"):
            return (image.astype(F32) - F32(c.pixel_mean)) / F32(c.pixel_std)

    def check_inputs(self, state):
        c = self.config
        if state["image"].shape[-3:] != (1, c.image, c.image):
            raise ValueError(f"lenet_mini expects 1x{c.image}x{c.image} images, got {state['image'].shape[1:]}")

    def build_stages(self):
        def conv(name, src):
            w, b = f"{name}.weight", f"{name}.bias"

            def fn(p, s):
                x = self.standardize(s[src]) if src == "image" else s[src]
                return {"x": L.maxpool2(L.relu(L.conv2d(x, p[w], p[b])))}
            return Stage(name, (w, b), fn)

        def fc(name, act):
            w, b = f"{name}.weight", f"{name}.bias"

            def fn(p, s):
                x = s["x"]
                x = x.reshape(x.shape[0], -1)
                y = L.linear(x, p[w], p[b])
                return {"x": L.relu(y)} if act else {"out": y}
            return Stage(name, (w, b), fn)

        return [conv("conv1", "image"), conv("conv2", "x"),
                fc("fc1", True), fc("fc2", True), fc("fc3", False)]

    def group_tensors(self):
        return {n: (f"{n}.weight",) for n in ("conv1", "conv2", "fc1", "fc2", "fc3")}

    @staticmethod
    def config_from_meta(v) -> LeNetConfig:
        i = [int(x) for x in v[:7]]
        mean, std = (float(v[7]), float(v[8])) if len(v) >= 9 else (0.0, 1.0)
        return LeNetConfig(i[0], (i[1], i[2]), i[3], (i[4], i[5]), i[6], mean, std)

    def meta_vector(self):
        c = self.config
        return np.asarray([c.image, *c.conv_channels, c.kernel, *c.hidden, c.classes,
                           c.pixel_mean, c.pixel_std], dtype=F32)


# ---------------------------------------------------------------------------
# BERT-style encoder classifier (post-LN blocks, ReLU feed-forward, mean pool)

@dataclass(frozen=True)
class BertConfig:
    vocab: int = 1000
    seq_len: int = 16
    width: int = 64
    heads: int = 4
    layers: int = 4
    classes: int = 4
    ffn: int = 128

    def __post_init__(self):
        if self.width % self.heads:
            raise ValueError("width must be divisible by the head count")


class BertMini(ModelGraph):
    kind = "bert_mini"
    input_keys = ("tokens",)
    eps = 1e-5

    def __init__(self, config: BertConfig | None = None, params=None, seed=None):
        super().__init__(config or BertConfig(), params, seed)

    def param_shapes(self):
        c = self.config
        d, f = c.width, c.ffn
        shapes = {"embed.tok": (c.vocab, d), "embed.pos": (c.seq_len, d)}
        for l in range(c.layers):
            for p in "qkvo":
                shapes[f"l{l}.{p}.weight"] = (d, d)
                shapes[f"l{l}.{p}.bias"] = (d,)
            shapes[f"l{l}.ln1.gamma"] = (d,)
            shapes[f"l{l}.ln1.beta"] = (d,)
            shapes[f"l{l}.ff1.weight"] = (f, d)
            shapes[f"l{l}.ff1.bias"] = (f,)
            shapes[f"l{l}.ff2.weight"] = (d, f)
            shapes[f"l{l}.ff2.bias"] = (d,)
            shapes[f"l{l}.ln2.gamma"] = (d,)
            shapes[f"l{l}.ln2.beta"] = (d,)
        shapes["head.weight"] = (c.classes, d)
        shapes["head.bias"] = (c.classes,)
        return shapes

    def fan_in(self, name):
        shapes = self.param_shapes()
        if name.startswith("embed."):
            return shapes[name][0]
        layer = name.rsplit(".", 1)[0]
        return shapes[layer + ".weight"][1]

    def check_inputs(self, state):
        c = self.config
        tok = state["tokens"]
        if tok.shape[-1] != c.seq_len:
            raise ValueError(f"bert_mini expects sequences of length {c.seq_len}")
        if tok.size and (tok.min() < 0 or tok.max() >= c.vocab):
            raise ValueError("token id outside vocabulary")

    def build_stages(self):
        c = self.config
        h, dh = c.heads, c.width // c.heads

        def embed(p, s):
            tok = s["tokens"]
            x = L.embedding_lookup(p["embed.tok"], tok)
            with np.errstate(all="ignore"):
                x = x + p["embed.pos"]
            return {"x": x}

        def split(t):
            b, n, _ = t.shape
            return t.reshape(b, n, h, dh).transpose(0, 2, 1, 3)

        def attn_block(l):
            names = tuple(f"l{l}.{p}.{q}" for p in "qkvo" for q in ("weight", "bias")) + (
                f"l{l}.ln1.gamma", f"l{l}.ln1.beta")

            def fn(p, s):
                x = s["x"]
                q = L.linear(x, p[f"l{l}.q.weight"], p[f"l{l}.q.bias"])
                k = L.linear(x, p[f"l{l}.k.weight"], p[f"l{l}.k.bias"])
                v = L.linear(x, p[f"l{l}.v.weight"], p[f"l{l}.v.bias"])
                a = L.attention(split(q), split(k), split(v))
                a = a.transpose(0, 2, 1, 3).reshape(x.shape)
                o = L.linear(a, p[f"l{l}.o.weight"], p[f"l{l}.o.bias"])
                with np.errstate(all="ignore"):
                    r = x + o
                return {"x": L.layer_norm(r, p[f"l{l}.ln1.gamma"], p[f"l{l}.ln1.beta"], self.eps)}
            return Stage(f"l{l}.attn", names, fn)

        def ffn_block(l):
            names = (f"l{l}.ff1.weight", f"l{l}.ff1.bias", f"l{l}.ff2.weight", f"l{l}.ff2.bias",
                     f"l{l}.ln2.gamma", f"l{l}.ln2.beta")

            def fn(p, s):
                x = s["x"]
                f = L.relu(L.linear(x, p[f"l{l}.ff1.weight"], p[f"l{l}.ff1.bias"]))
                f = L.linear(f, p[f"l{l}.ff2.weight"], p[f"l{l}.ff2.bias"])
                with np.errstate(all="ignore"):
                    r = x + f
                return {"x": L.layer_norm(r, p[f"l{l}.ln2.gamma"], p[f"l{l}.ln2.beta"], self.eps)}
            return Stage(f"l{l}.ffn", names, fn)

        def head(p, s):
            x = s["x"]
            with np.errstate(all="ignore"):
                pooled = L.sum_last(np.swapaxes(x, -1, -2)) / F32(x.shape[-2])
            return {"out": L.linear(pooled, p["head.weight"], p["head.bias"])}

        stages = [Stage("embed", ("embed.tok", "embed.pos"), embed)]
        for l in range(c.layers):
            stages += [attn_block(l), ffn_block(l)]
        stages.append(Stage("head", ("head.weight", "head.bias"), head))
        return stages

    def group_tensors(self):
        return {f"l{l}.{p}": (f"l{l}.{p}.weight",) for l in range(self.config.layers) for p in "qkv"}

    @staticmethod
    def config_from_meta(v) -> BertConfig:
        return BertConfig(*[int(x) for x in v])


# ---------------------------------------------------------------------------
# toy linear unit: oracle-enumerable target for estimator validation

@dataclass(frozen=True)
class ToyConfig:
    n_in: int = 4
    n_out: int = 1
    bias: bool = True
    dead: int = 0


class ToyLinear(ModelGraph):
    """y = W x + b; one output is read as a sigmoid click probability, more
    outputs as class scores. `dead` adds a tensor the forward never reads."""

    kind = "toy_linear"
    input_keys = ("x",)

    def __init__(self, config: ToyConfig | None = None, params=None, seed=None):
        config = config or ToyConfig()
        self.binary = config.n_out == 1
        super().__init__(config, params, seed)

    def param_shapes(self):
        c = self.config
        shapes = {"fc.weight": (c.n_out, c.n_in)}
        if c.bias:
            shapes["fc.bias"] = (c.n_out,)
        if c.dead:
            shapes["dead.weight"] = (c.dead,)
        return shapes

    def fan_in(self, name):
        return self.config.n_in

    def check_inputs(self, state):
        if state["x"].shape[-1] != self.config.n_in:
            raise ValueError(f"toy_linear expects {self.config.n_in} inputs")

    def build_stages(self):
        uses = ("fc.weight", "fc.bias") if self.config.bias else ("fc.weight",)

        def fn(p, s):
            y = L.linear(s["x"], p["fc.weight"], p["fc.bias"] if self.config.bias else None)
            return {"out": L.sigmoid(y) if self.binary else y}
        return [Stage("fc", uses, fn)]

    def group_tensors(self):
        g = {"fc": tuple(n for n in ("fc.weight", "fc.bias") if n in self.param_shapes())}
        for n in self.param_shapes():
            g[n] = (n,)
        return g

    @staticmethod
    def config_from_meta(v) -> ToyConfig:
        v = [int(x) for x in v]
        return ToyConfig(v[0], v[1], bool(v[2]), v[3])


MODEL_KINDS: dict[str, type[ModelGraph]] = {
    cls.kind: cls for cls in (DlrmMini, LeNetMini, BertMini, ToyLinear)
}
CLI_NAMES = {"dlrm-mini": "dlrm_mini", "lenet-mini": "lenet_mini", "bert-mini": "bert_mini", "toy": "toy_linear"}


def model_from_tensors(tensors: Mapping[str, np.ndarray]) -> ModelGraph:
    """Rebuild a model from checkpoint tensors (kind read from the config record)."""
    metas = [k for k in tensors if k.startswith(META_PREFIX)]
    if len(metas) != 1:
        raise ValueError("checkpoint has no (or more than one) model config record")
    kind = metas[0][len(META_PREFIX):]
    if kind not in MODEL_KINDS:
        raise ValueError(f"unknown model kind {kind!r}")
    cls = MODEL_KINDS[kind]
    config = cls.config_from_meta(np.asarray(tensors[metas[0]]))
    return cls(config, params=tensors)


def make_model(kind: str, seed: int | None = 0, **config) -> ModelGraph:
    kind = CLI_NAMES.get(kind, kind)
    cls = MODEL_KINDS[kind]
    cfg_cls = {"dlrm_mini": DlrmConfig, "lenet_mini": LeNetConfig,
               "bert_mini": BertConfig, "toy_linear": ToyConfig}[kind]
    return cls(cfg_cls(**config), seed=seed)
