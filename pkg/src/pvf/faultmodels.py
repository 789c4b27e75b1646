"""Fault-model samplers: turn a fault specification and a target parameter
group into the concrete set of bit flips applied during one trial."""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

from .bitops import WORD_BITS, check_bit

KINDS = ("sbf", "mbf", "ber", "mbbf")
BURST_LEN = 2


class InvalidFaultSpec(ValueError):
    pass


class InfeasiblePlanError(ValueError):
    """The requested number of flips does not fit in the target group."""


@dataclass(frozen=True)
class FaultModelSpec:
    kind: str
    count: int = 1
    rate: float | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidFaultSpec(f"unknown fault model {self.kind!r}; expected one of {KINDS}")
        if self.kind == "sbf" and self.count != 1:
            raise InvalidFaultSpec("sbf always flips exactly one bit")
        if self.kind in ("mbf", "mbbf"):
            if isinstance(self.count, bool) or int(self.count) != self.count or self.count < 1:
                raise InvalidFaultSpec(f"{self.kind} count must be an integer >= 1, got {self.count!r}")
        if self.kind == "ber":
            if self.rate is None or not (0.0 < self.rate < 1.0):
                raise InvalidFaultSpec(f"bit error rate must lie in (0, 1), got {self.rate!r}")

    @classmethod
    def parse(cls, text: str) -> FaultModelSpec:
        """Parse ``sbf``, ``mbf:<k>``, ``ber:<r>`` or ``mbbf:<b>``."""
        kind, _, arg = text.strip().lower().partition(":")
        if kind == "sbf":
            if arg:
                raise InvalidFaultSpec("sbf takes no argument")
            return cls("sbf")
        if kind in ("mbf", "mbbf"):
            try:
                count = int(arg)
            except ValueError:
                raise InvalidFaultSpec(f"{kind} needs an integer count, got {arg!r}") from None
            return cls(kind, count=count)
        if kind == "ber":
            try:
                rate = float(arg)
            except ValueError:
                raise InvalidFaultSpec(f"ber needs a rate, got {arg!r}") from None
            return cls("ber", rate=rate)
        raise InvalidFaultSpec(f"unknown fault model {text!r}; expected sbf, mbf:<k>, ber:<r> or mbbf:<b>")

    def __str__(self) -> str:
        if self.kind == "sbf":
            return "sbf"
        if self.kind == "ber":
            return f"ber:{self.rate!r}"
        return f"{self.kind}:{self.count}"


@dataclass(frozen=True, order=True)
class BitAddress:
    tensor: str
    flat_index: int
    bit: int


@dataclass(frozen=True)
class TargetGroup:
    """A named set of parameter tensors treated as one injection target.

    Bits are addressed globally as ``element * 32 + bit`` where elements run
    over the tensors in order, each flattened row-major.
    """

    name: str
    tensors: tuple[str, ...]
    sizes: tuple[int, ...]
    offsets: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if len(self.tensors) != len(self.sizes) or not self.tensors:
            raise ValueError("a target group needs at least one tensor and one size per tensor")
        if len(set(self.tensors)) != len(self.tensors):
            raise ValueError(f"duplicate tensor in group {self.name!r}")
        if any(s < 1 for s in self.sizes):
            raise ValueError(f"group {self.name!r} has an empty tensor")
        object.__setattr__(self, "offsets", np.concatenate([[0], np.cumsum(self.sizes)]).astype(np.int64))

    @classmethod
    def from_params(cls, name: str, tensor_names: Iterable[str], params: Mapping[str, np.ndarray]) -> TargetGroup:
        names = tuple(tensor_names)
        missing = [t for t in names if t not in params]
        if missing:
            raise KeyError(f"group {name!r} refers to unknown tensors {missing}")
        return cls(name, names, tuple(int(params[t].size) for t in names))

    @property
    def n_elements(self) -> int:
        return int(self.offsets[-1])

    @property
    def total_bits(self) -> int:
        return self.n_elements * WORD_BITS

    def split(self, elements: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Map global element indices to (tensor position, flat index)."""
        elements = np.asarray(elements, dtype=np.int64)
        pos = np.searchsorted(self.offsets, elements, side="right") - 1
        return pos, elements - self.offsets[pos]

    def element_of(self, addr: BitAddress) -> int:
        try:
            pos = self.tensors.index(addr.tensor)
        except ValueError:
            raise ValueError(f"{addr} is outside group {self.name!r}") from None
        if not 0 <= addr.flat_index < self.sizes[pos]:
            raise ValueError(f"{addr} flat index out of range for tensor of {self.sizes[pos]} elements")
        check_bit(addr.bit)
        return int(self.offsets[pos]) + addr.flat_index


class FaultPlan:
    """The deduplicated bit flips of one trial, ordered by global bit index."""

    __slots__ = ("group", "elements", "bits", "degenerate")

    def __init__(self, group: TargetGroup, elements, bits, degenerate: bool = False):
        elements = np.asarray(elements, dtype=np.int64).reshape(-1)
        bits = np.asarray(bits, dtype=np.int64).reshape(-1)
        if elements.shape != bits.shape:
            raise ValueError("elements and bits must pair up")
        if elements.size and (elements.min() < 0 or elements.max() >= group.n_elements):
            raise ValueError("flip outside target group")
        if bits.size and (bits.min() < 0 or bits.max() >= WORD_BITS):
            raise ValueError("bit position must be in [0, 31]")
        key = elements * WORD_BITS + bits
        key = np.unique(key)
        self.group = group
        self.elements = key // WORD_BITS
        self.bits = key % WORD_BITS
        self.degenerate = bool(degenerate)

    @classmethod
    def from_addresses(cls, group: TargetGroup, addrs: Iterable[BitAddress]) -> FaultPlan:
        addrs = list(addrs)
        return cls(group, [group.element_of(a) for a in addrs], [a.bit for a in addrs])

    @classmethod
    def empty(cls, group: TargetGroup, degenerate: bool = True) -> FaultPlan:
        return cls(group, [], [], degenerate=degenerate)

    def __len__(self) -> int:
        return int(self.elements.size)

    @property
    def flips(self) -> tuple[BitAddress, ...]:
        pos, flat = self.group.split(self.elements)
        return tuple(BitAddress(self.group.tensors[p], int(f), int(b)) for p, f, b in zip(pos, flat, self.bits))

    def per_tensor(self) -> dict[str, tuple[np.ndarray, np.ndarray]]:
        """tensor name -> (flat indices, bit positions)."""
        pos, flat = self.group.split(self.elements)
        out = {}
        for p in np.unique(pos):
            sel = pos == p
            out[self.group.tensors[p]] = (flat[sel], self.bits[sel])
        return out

    def digest(self) -> str:
        h = hashlib.blake2b(digest_size=8)
        h.update(self.group.name.encode())
        h.update((self.elements * WORD_BITS + self.bits).astype("<i8").tobytes())
        return h.hexdigest()

    def __eq__(self, other):
        if not isinstance(other, FaultPlan):
            return NotImplemented
        return (self.group == other.group and self.degenerate == other.degenerate
                and np.array_equal(self.elements, other.elements) and np.array_equal(self.bits, other.bits))

    def __repr__(self) -> str:
        return f"FaultPlan({self.group.name!r}, {list(self.flips)!r}{', degenerate' if self.degenerate else ''})"


def ber_to_count(rate: float, group: TargetGroup) -> int:
    """Number of flips a bit error rate implies for `group` (round half up).

    A result of 0 is returned as-is; the resulting plan is degenerate.
    """
    if not 0.0 < rate < 1.0:
        raise InvalidFaultSpec(f"bit error rate must lie in (0, 1), got {rate!r}")
    return int(math.floor(rate * group.total_bits + 0.5))


def sample_plan(spec: FaultModelSpec, group: TargetGroup, rng: np.random.Generator,
                bit: int | None = None) -> FaultPlan:
    """Draw the flips of one trial.

    With `bit` set, every flip (or every burst start) is confined to that bit
    position and only the scalar words are sampled.
    """
    if bit is not None:
        bit = check_bit(bit)
    n_el = group.n_elements

    if spec.kind == "mbbf":
        return _sample_bursts(spec.count, group, rng, bit)

    if spec.kind == "sbf":
        k = 1
    elif spec.kind == "mbf":
        k = spec.count
    else:
        k = ber_to_count(spec.rate, group)
        if k == 0:
            return FaultPlan.empty(group)

    if bit is not None:
        if k > n_el:
            raise InfeasiblePlanError(f"{k} flips at bit {bit} need {k} words; group {group.name!r} has {n_el}")
        elements = rng.integers(n_el, size=1) if k == 1 else rng.choice(n_el, size=k, replace=False)
        return FaultPlan(group, elements, np.full(k, bit))

    total = group.total_bits
    if k > total:
        raise InfeasiblePlanError(f"{k} flips requested; group {group.name!r} has only {total} bits")
    g = rng.integers(total, size=1) if k == 1 else rng.choice(total, size=k, replace=False)
    return FaultPlan(group, g // WORD_BITS, g % WORD_BITS)


def _sample_bursts(b: int, group: TargetGroup, rng: np.random.Generator, bit: int | None) -> FaultPlan:
    n_el = group.n_elements
    starts_per_word = WORD_BITS - BURST_LEN + 1
    if BURST_LEN * b > group.total_bits:
        raise InfeasiblePlanError(f"{b} bursts need {BURST_LEN * b} bits; group {group.name!r} has {group.total_bits}")

    if bit is not None:
        if bit > WORD_BITS - BURST_LEN:
            raise InfeasiblePlanError(f"a burst starting at bit {bit} would leave the word")
        if b > n_el:
            raise InfeasiblePlanError(f"{b} bursts at bit {bit} need {b} words; group {group.name!r} has {n_el}")
        elements = rng.integers(n_el, size=1) if b == 1 else rng.choice(n_el, size=b, replace=False)
        starts = np.full(b, bit)
    else:
        # sequential draws, redrawing any start that overlaps an accepted burst
        taken: set[int] = set()
        elements = np.empty(b, dtype=np.int64)
        starts = np.empty(b, dtype=np.int64)
        n = 0
        misses = 0
        while n < b:
            s = int(rng.integers(n_el * starts_per_word))
            e, s_bit = divmod(s, starts_per_word)
            cells = {e * WORD_BITS + s_bit + i for i in range(BURST_LEN)}
            if cells & taken:
                misses += 1
                if misses > 64 * b + 1024:
                    e, s_bit = _free_burst(n_el, taken, rng)
                    cells = {e * WORD_BITS + s_bit + i for i in range(BURST_LEN)}
                else:
                    continue
            taken |= cells
            elements[n], starts[n] = e, s_bit
            n += 1

    el = np.repeat(elements, BURST_LEN)
    bits = (starts[:, None] + np.arange(BURST_LEN)).reshape(-1)
    return FaultPlan(group, el, bits)


def _free_burst(n_el: int, taken: set[int], rng: np.random.Generator) -> tuple[int, int]:
    # exhaustive fallback once rejection stalls near capacity
    starts_per_word = WORD_BITS - BURST_LEN + 1
    free = [(e, s) for e in range(n_el) for s in range(starts_per_word)
            if all(e * WORD_BITS + s + i not in taken for i in range(BURST_LEN))]
    if not free:
        raise InfeasiblePlanError("no non-overlapping burst position left in the group")
    return free[int(rng.integers(len(free)))]
