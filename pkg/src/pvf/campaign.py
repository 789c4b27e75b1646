"""Monte Carlo fault-injection campaigns and PVF estimation.

One trial = draw one eligible input and one fault plan from the trial's own
random stream, corrupt the target tensors, run one inference, and compare
with ground truth. PVF is D/N over N trials, D counting corrupted and NaN
outputs. Eligible inputs are the ones the fault-free model gets right, so
only correct -> incorrect transitions are counted.

Trials are evaluated in batches: the target tensors are materialised once
per trial (stacked along a leading axis), upstream activations come from a
cache of the fault-free run, and trials whose activations return to the
fault-free values after the last corrupted stage are resolved immediately.
None of this changes any per-trial result, which is why verdicts are
identical for every batch size and worker count.
"""
from __future__ import annotations

import concurrent.futures as cf
import logging
import math
import multiprocessing as mp
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from statistics import NormalDist
from typing import Iterable, Sequence

import numpy as np

from .bitops import WORD_BITS
from .faultmodels import FaultModelSpec, FaultPlan, InfeasiblePlanError, TargetGroup, sample_plan
from .io.checkpoint import tensors_digest
from .io.datasets import Dataset
from .nn.models import ModelGraph

log = logging.getLogger(__name__)

STILL_CORRECT = "still_correct"
CORRUPTED = "corrupted"
NAN_OUTPUT = "nan_output"
VERDICTS = (STILL_CORRECT, CORRUPTED, NAN_OUTPUT)

ORACLE_LIMIT = 10_000_000
_MAX_BATCH_WORDS = 1 << 21


class CampaignInfeasible(RuntimeError):
    pass


def trial_rng(master_seed: int, trial: int) -> np.random.Generator:
    """Independent random stream of one trial."""
    return np.random.default_rng(np.random.SeedSequence(master_seed, spawn_key=(trial,)))


# ---------------------------------------------------------------------------
# estimates

def wilson_interval(d: int, n: int, confidence: float = 0.95) -> tuple[float, float]:
    if n < 1 or not 0 <= d <= n:
        raise ValueError(f"need 0 <= D <= N and N >= 1, got D={d}, N={n}")
    z = NormalDist().inv_cdf(0.5 + confidence / 2)
    p = d / n
    z2n = z * z / n
    centre = (p + z2n / 2) / (1 + z2n)
    half = z * math.sqrt(p * (1 - p) / n + z2n / (4 * n)) / (1 + z2n)
    low = 0.0 if d == 0 else max(0.0, centre - half)
    high = 1.0 if d == n else min(1.0, centre + half)
    return min(low, p), max(high, p)


@dataclass(frozen=True)
class PvfEstimate:
    D: int
    N: int
    pvf: float
    ci_low: float
    ci_high: float

    @classmethod
    def from_counts(cls, d: int, n: int, confidence: float = 0.95) -> PvfEstimate:
        low, high = wilson_interval(d, n, confidence)
        return cls(int(d), int(n), d / n, low, high)

    def __str__(self):
        return f"PVF = {self.pvf:.6g} ({self.D}/{self.N}), 95% CI [{self.ci_low:.6g}, {self.ci_high:.6g}]"


@dataclass(frozen=True)
class TrialOutcome:
    trial: int
    input_id: int
    plan_digest: str
    label: int
    has_nan: bool
    has_inf: bool
    verdict: str
    # (tensor, flat index, old bit pattern, new bit pattern) per corrupted word
    flips: tuple[tuple[str, int, int, int], ...] = ()
    plan: tuple[tuple[str, int, int], ...] = ()

    def record(self) -> dict:
        d = asdict(self)
        d["plan"] = [list(p) for p in self.plan]
        d["flips"] = [[t, i, f"0x{o:08X}", f"0x{n:08X}"] for t, i, o, n in self.flips]
        return d


def verdict_of(label: int, has_nan: bool, truth: int) -> str:
    if has_nan:
        return NAN_OUTPUT
    return STILL_CORRECT if label == truth else CORRUPTED


# ---------------------------------------------------------------------------
# fault-free reference run

class Baseline:
    """Fault-free predictions, the eligible set, and cached stage inputs."""

    def __init__(self, model: ModelGraph, dataset: Dataset, chunk: int = 512):
        self.model = model
        self.dataset = dataset
        n = len(dataset)
        if n == 0:
            raise CampaignInfeasible("evaluation set is empty")
        ok = np.zeros(n, dtype=bool)
        for s in range(0, n, chunk):
            sl = slice(s, s + chunk)
            pred = model.predict_batch({k: v[sl] for k, v in dataset.inputs.items()})
            ok[sl] = (pred.labels == dataset.labels[sl]) & ~pred.has_nan
        self.eligible = np.flatnonzero(ok)
        if self.eligible.size == 0:
            raise CampaignInfeasible("the fault-free model misclassifies every input; nothing is eligible")
        self.labels = dataset.labels[self.eligible]
        # states[i] = input of stage i for every eligible input; states[-1] holds "out"
        state = model.initial_state({k: v[self.eligible] for k, v in dataset.inputs.items()})
        self.states = [state]
        for st in model.stages:
            state = st.fn(model.params, state)
            self.states.append(state)
        self.pred = model.predictions(state["out"])
        self.model_digest = tensors_digest(model.tensors())
        self.dataset_fingerprint = dataset.fingerprint()

    def __len__(self):
        return int(self.eligible.size)

    def state_at(self, stage: int, pos: np.ndarray) -> dict:
        return {k: v[pos] for k, v in self.states[stage].items()}


_BASELINES: dict[tuple[int, str], Baseline] = {}


def build_eligible_set(model: ModelGraph, dataset: Dataset) -> np.ndarray:
    """Ids of the inputs the fault-free model classifies correctly."""
    return get_baseline(model, dataset).eligible.copy()


def get_baseline(model: ModelGraph, dataset: Dataset) -> Baseline:
    key = (id(model), dataset.fingerprint())
    b = _BASELINES.get(key)
    if b is None or b.model is not model:
        b = Baseline(model, dataset)
        if len(_BASELINES) >= 4:
            _BASELINES.pop(next(iter(_BASELINES)))
        _BASELINES[key] = b
    return b


# ---------------------------------------------------------------------------
# single trial (flip, infer, revert)

class injected:
    """Context manager applying a plan to writable tensors in place and
    undoing it on exit, whatever happens inside the block."""

    def __init__(self, tensors: dict[str, np.ndarray], plan: FaultPlan):
        self.tensors = tensors
        self.plan = plan
        self.records: list[tuple[str, int, int, int]] = []

    def _apply(self):
        for name, (flat, bits) in self.plan.per_tensor().items():
            view = self.tensors[name].view(np.uint32).reshape(-1)
            np.bitwise_xor.at(view, flat, np.left_shift(np.uint32(1), bits.astype(np.uint32)))

    def __enter__(self):
        before = {name: self.tensors[name].view(np.uint32).reshape(-1)[np.unique(flat)].copy()
                  for name, (flat, _) in self.plan.per_tensor().items()}
        self._apply()
        for name, (flat, _) in self.plan.per_tensor().items():
            idx = np.unique(flat)
            after = self.tensors[name].view(np.uint32).reshape(-1)[idx]
            self.records += [(name, int(i), int(o), int(n)) for i, o, n in zip(idx, before[name], after)]
        return self

    def __exit__(self, *exc):
        self._apply()
        return False


def run_trial(model: ModelGraph, plan: FaultPlan, inputs: dict, truth: int, *,
              trial: int = 0, input_id: int = -1, work: dict[str, np.ndarray] | None = None) -> TrialOutcome:
    """Inject `plan`, run one single-sample inference, restore.

    `work` is a private writable copy of the target tensors; one is made when
    not supplied. The model's own tensors are never written.
    """
    if work is None:
        work = {t: model.params[t].copy() for t in plan.group.tensors}
    params = dict(model.params)
    params.update(work)
    with injected(work, plan) as inj:
        pred = model.forward(inputs, params)
    return TrialOutcome(trial, input_id, plan.digest(), pred.label, pred.has_nan, pred.has_inf,
                        verdict_of(pred.label, pred.has_nan, truth), tuple(inj.records),
                        tuple((a.tensor, a.flat_index, a.bit) for a in plan.flips))


# ---------------------------------------------------------------------------
# batched trials

def _same_rows(a: dict, b: dict) -> np.ndarray:
    """Per-row bitwise equality of two activation dicts."""
    same = None
    for k, x in a.items():
        y = b[k]
        if x.dtype == np.float32:
            x, y = x.view(np.uint32), y.view(np.uint32)
        eq = (x == y).reshape(x.shape[0], -1).all(axis=1)
        same = eq if same is None else same & eq
    return same


def _draw(spec: FaultModelSpec, group: TargetGroup, seed: int, trials: Sequence[int], n_eligible: int,
          bit: int | None) -> tuple[np.ndarray, list[FaultPlan]]:
    positions = np.empty(len(trials), dtype=np.int64)
    plans = []
    for i, t in enumerate(trials):
        rng = trial_rng(seed, t)
        positions[i] = rng.integers(n_eligible)
        try:
            plans.append(sample_plan(spec, group, rng, bit))
        except InfeasiblePlanError as e:
            raise CampaignInfeasible(f"trial {t}: {e}") from None
    return positions, plans


def evaluate_plans(base: Baseline, group: TargetGroup, plans: Sequence[FaultPlan],
                   positions: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Faulted (labels, has_nan, has_inf) for each (plan, eligible position)."""
    model = base.model
    n = len(plans)
    labels = base.pred.labels[positions].copy()
    has_nan = base.pred.has_nan[positions].copy()
    has_inf = base.pred.has_inf[positions].copy()
    start = model.first_stage(group.tensors)
    if start == len(model.stages):
        return labels, has_nan, has_inf
    last = max(i for i, st in enumerate(model.stages) if set(st.uses) & set(group.tensors))

    active = np.array([len(p) > 0 for p in plans], dtype=bool)
    todo = np.flatnonzero(active)
    batch = max(1, min(256, _MAX_BATCH_WORDS // group.n_elements))
    for s in range(0, todo.size, batch):
        rows = todo[s:s + batch]
        b = rows.size
        params = dict(model.params)
        for ti, name in enumerate(group.tensors):
            base_t = model.params[name]
            stacked = np.empty((b,) + base_t.shape, dtype=np.float32)
            stacked[...] = base_t
            params[name] = stacked
        # scatter every flip of the batch into the stacked copies
        per_tensor: dict[str, list] = {}
        for r, j in enumerate(rows):
            for name, (flat, bits) in plans[j].per_tensor().items():
                per_tensor.setdefault(name, []).append((np.full(flat.size, r), flat, bits))
        for name, parts in per_tensor.items():
            rr = np.concatenate([p[0] for p in parts])
            ff = np.concatenate([p[1] for p in parts])
            bb = np.concatenate([p[2] for p in parts]).astype(np.uint32)
            view = params[name].view(np.uint32).reshape(b, -1)
            np.bitwise_xor.at(view, (rr, ff), np.left_shift(np.uint32(1), bb))

        pos = positions[rows]
        live = np.arange(b)
        state = base.state_at(start, pos)
        for i in range(start, len(model.stages)):
            state = model.stages[i].fn(params, state)
            if i >= last and i + 1 < len(model.stages):
                same = _same_rows(state, base.state_at(i + 1, pos[live]))
                if same.any():
                    keep = ~same
                    live = live[keep]
                    if live.size == 0:
                        break
                    state = {k: v[keep] for k, v in state.items()}
                    for name in group.tensors:
                        params[name] = params[name][keep]
        if live.size:
            pred = model.predictions(state["out"])
            idx = rows[live]
            labels[idx] = pred.labels
            has_nan[idx] = pred.has_nan
            has_inf[idx] = pred.has_inf
    return labels, has_nan, has_inf


def _flip_records(model: ModelGraph, plan: FaultPlan) -> tuple[tuple[str, int, int, int], ...]:
    out = []
    for name, (flat, bits) in plan.per_tensor().items():
        words = model.params[name].view(np.uint32).reshape(-1)
        masks: dict[int, int] = {}
        for f, bt in zip(flat.tolist(), bits.tolist()):
            masks[f] = masks.get(f, 0) ^ (1 << bt)
        for f, m in masks.items():
            old = int(words[f])
            out.append((name, f, old, old ^ m))
    return tuple(out)


def run_trials(base: Baseline, group: TargetGroup, spec: FaultModelSpec, seed: int, trials: Sequence[int],
               bit: int | None = None, detail: bool = True) -> tuple[np.ndarray, list[TrialOutcome] | None]:
    """Evaluate the given trial indices; returns (verdict codes, outcomes or None)."""
    trials = list(trials)
    positions, plans = _draw(spec, group, seed, trials, len(base), bit)
    labels, has_nan, has_inf = evaluate_plans(base, group, plans, positions)
    truth = base.labels[positions]
    codes = np.where(has_nan, 2, np.where(labels != truth, 1, 0)).astype(np.int8)
    if not detail:
        return codes, None
    outcomes = [
        TrialOutcome(t, int(base.eligible[positions[i]]), plans[i].digest(), int(labels[i]), bool(has_nan[i]),
                     bool(has_inf[i]), VERDICTS[codes[i]], _flip_records(base.model, plans[i]),
                     tuple((a.tensor, a.flat_index, a.bit) for a in plans[i].flips))
        for i, t in enumerate(trials)
    ]
    return codes, outcomes


_WORKER: dict = {}


def _worker_init(payload):
    _WORKER.update(payload)


def _worker_run(trials):
    w = _WORKER
    return trials[0], run_trials(w["base"], w["group"], w["spec"], w["seed"], trials, w["bit"], w["detail"])


def default_workers() -> int:
    try:
        return max(1, int(os.environ.get("PVF_WORKERS", "1")))
    except ValueError:
        return 1


def execute(base: Baseline, group: TargetGroup, spec: FaultModelSpec, trials: int, seed: int,
            bit: int | None = None, workers: int = 1, detail: bool = True,
            chunk: int = 2048) -> tuple[np.ndarray, list[TrialOutcome] | None]:
    """Run trials 0..trials-1, optionally across worker processes, merged by trial index."""
    if trials < 1:
        raise ValueError("need at least one trial")
    chunks = [list(range(s, min(trials, s + chunk))) for s in range(0, trials, chunk)]
    if workers <= 1 or len(chunks) == 1:
        results = [(c[0], run_trials(base, group, spec, seed, c, bit, detail)) for c in chunks]
    else:
        payload = dict(base=base, group=group, spec=spec, seed=seed, bit=bit, detail=detail)
        ctx = mp.get_context("fork")
        with cf.ProcessPoolExecutor(max_workers=workers, mp_context=ctx,
                                    initializer=_worker_init, initargs=(payload,)) as pool:
            results = list(pool.map(_worker_run, chunks))
    results.sort(key=lambda r: r[0])
    codes = np.concatenate([r[1][0] for r in results])
    outcomes = None
    if detail:
        outcomes = [o for r in results for o in r[1][1]]
    return codes, outcomes


# ---------------------------------------------------------------------------
# campaigns

@dataclass
class CampaignResult:
    estimate: PvfEstimate
    target: str
    fault: str
    trials: int
    seed: int
    bit: int | None
    eligible: int
    checkpoint_digest: str
    dataset_fingerprint: str
    counts: dict = field(default_factory=dict)
    outcomes: list[TrialOutcome] | None = None


def estimate_pvf(model: ModelGraph, dataset: Dataset, target: str, fault: FaultModelSpec | str, trials: int,
                 seed: int, bit: int | None = None, workers: int = 1, detail: bool = False,
                 baseline: Baseline | None = None) -> CampaignResult:
    spec = FaultModelSpec.parse(fault) if isinstance(fault, str) else fault
    group = model.group(target)
    base = baseline or get_baseline(model, dataset)
    codes, outcomes = execute(base, group, spec, trials, seed, bit, workers, detail)
    counts = {v: int(np.sum(codes == i)) for i, v in enumerate(VERDICTS)}
    d = counts[CORRUPTED] + counts[NAN_OUTPUT]
    if tensors_digest(model.tensors()) != base.model_digest:
        raise RuntimeError("baseline checkpoint changed during the campaign")
    return CampaignResult(PvfEstimate.from_counts(d, trials), target, str(spec), trials, seed, bit, len(base),
                          base.model_digest, base.dataset_fingerprint, counts, outcomes)


def bitpos_sweep(model: ModelGraph, dataset: Dataset, target: str, trials: int, seed: int,
                 fault: FaultModelSpec | str = "sbf", workers: int = 1,
                 bits: Iterable[int] | None = None) -> list[CampaignResult]:
    """One campaign per bit position with every flip (or burst start) confined to
    that position. Bursts cannot start at bit 31, so MBBF sweeps stop at 30."""
    spec = FaultModelSpec.parse(fault) if isinstance(fault, str) else fault
    if bits is None:
        bits = range(WORD_BITS - 1 if spec.kind == "mbbf" else WORD_BITS)
    base = get_baseline(model, dataset)
    return [estimate_pvf(model, dataset, target, spec, trials, seed, bit=b, workers=workers, baseline=base)
            for b in bits]


def count_sweep(model: ModelGraph, dataset: Dataset, target: str, family: str, counts: Iterable[int],
                trials: int, seed: int, workers: int = 1) -> list[CampaignResult]:
    """MBF or MBBF campaigns over a list of flip / burst counts."""
    if family not in ("mbf", "mbbf"):
        raise ValueError("sweep family must be mbf or mbbf")
    base = get_baseline(model, dataset)
    group = model.group(target)
    counts = list(counts)
    for c in counts:
        need = c * (2 if family == "mbbf" else 1)
        if need > group.total_bits:
            raise CampaignInfeasible(f"{family}:{c} needs {need} bits; {target} has {group.total_bits}")
    return [estimate_pvf(model, dataset, target, FaultModelSpec(family, count=c), trials, seed,
                         workers=workers, baseline=base) for c in counts]


# ---------------------------------------------------------------------------
# exact single-bit-flip oracle

def exact_sbf_oracle(model: ModelGraph, dataset: Dataset, target: str,
                     limit: int = ORACLE_LIMIT) -> PvfEstimate:
    """Exact SBF PVF: the fraction of (bit, eligible input) pairs whose
    inference is incorrect, each bit flipped in turn on a private copy."""
    group = model.group(target)
    base = get_baseline(model, dataset)
    inputs = {k: v[base.eligible] for k, v in dataset.inputs.items()}
    passes = group.total_bits * len(base)
    if passes > limit:
        raise CampaignInfeasible(f"oracle needs {passes} forward passes (limit {limit})")
    work = {t: model.params[t].copy() for t in group.tensors}
    params = dict(model.params)
    params.update(work)
    bad = 0
    for e in range(group.n_elements):
        for b in range(WORD_BITS):
            with injected(work, FaultPlan(group, [e], [b])):
                pred = model.predict_batch(inputs, params)
            bad += int(np.sum(pred.has_nan | (pred.labels != base.labels)))
    return PvfEstimate(bad, passes, bad / passes, bad / passes, bad / passes)


# ---------------------------------------------------------------------------
# config-driven entry point

@dataclass
class CampaignConfig:
    checkpoint: str | Path
    target: str
    fault: str
    trials: int
    seed: int
    data: str | Path
    bit: int | None = None
    split: str = "test"
    workers: int = 1

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        FaultModelSpec.parse(self.fault)


def run_campaign(config: CampaignConfig, detail: bool = True) -> CampaignResult:
    from .io.checkpoint import load_checkpoint
    from .io.datasets import load_dataset
    from .nn.models import model_from_tensors

    tensors, digest = load_checkpoint(config.checkpoint)
    model = model_from_tensors(tensors)
    dataset = load_dataset(config.data).split(config.split)
    result = estimate_pvf(model, dataset, config.target, config.fault, config.trials, config.seed,
                          config.bit, config.workers, detail)
    if result.checkpoint_digest != digest:
        raise RuntimeError("in-memory checkpoint digest differs from the file digest")
    return result
