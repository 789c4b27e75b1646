"""Bit-exact manipulation of IEEE-754 binary32 parameter words.

All operations act on the unsigned 32-bit pattern, never on the float value,
so NaN payloads, signed zeros and subnormals survive untouched.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

SIGN_BIT = 31
EXPONENT_BITS = range(23, 31)
MANTISSA_BITS = range(0, 23)
WORD_BITS = 32

_EXP_MASK = 0x7F800000
_MAN_MASK = 0x007FFFFF


class FloatClass(str, enum.Enum):
    NORMAL = "normal"
    SUBNORMAL = "subnormal"
    ZERO = "zero"
    INFINITY = "infinity"
    NAN = "nan"


@dataclass(frozen=True)
class FloatWord:
    """One FP32 scalar identified by its bit pattern."""

    bits: int

    def __post_init__(self):
        if not 0 <= self.bits <= 0xFFFFFFFF:
            raise ValueError(f"bit pattern out of range: {self.bits!r}")

    @classmethod
    def from_value(cls, value) -> FloatWord:
        return cls(int(np.array(value, dtype=np.float32).view(np.uint32)))

    @property
    def value(self) -> np.float32:
        return np.array(self.bits, dtype=np.uint32).view(np.float32)[()]

    @property
    def sign(self) -> int:
        return self.bits >> 31

    @property
    def exponent(self) -> int:
        return (self.bits & _EXP_MASK) >> 23

    @property
    def mantissa(self) -> int:
        return self.bits & _MAN_MASK

    def __repr__(self) -> str:
        return f"FloatWord(0x{self.bits:08X} = {self.value!r})"


def check_bit(bit: int) -> int:
    if isinstance(bit, bool) or not isinstance(bit, (int, np.integer)):
        raise TypeError(f"bit position must be an integer, got {type(bit).__name__}")
    if not 0 <= bit < WORD_BITS:
        raise ValueError(f"bit position must be in [0, 31], got {bit}")
    return int(bit)


def flip_bit(word: FloatWord, bit: int) -> FloatWord:
    """Return `word` with bit position `bit` inverted (31 is the sign bit)."""
    bit = check_bit(bit)
    return FloatWord(word.bits ^ (1 << bit))


def classify_special(word: FloatWord) -> FloatClass:
    exp, man = word.exponent, word.mantissa
    if exp == 0xFF:
        return FloatClass.NAN if man else FloatClass.INFINITY
    if exp == 0:
        return FloatClass.SUBNORMAL if man else FloatClass.ZERO
    return FloatClass.NORMAL


def as_bits(arr: np.ndarray) -> np.ndarray:
    """uint32 view of a float32 array (shares memory)."""
    if arr.dtype != np.float32:
        raise TypeError(f"expected float32 array, got {arr.dtype}")
    return arr.view(np.uint32)


def flip_bits_inplace(arr: np.ndarray, flat_index, bit) -> None:
    """XOR single-bit masks into a float32 array at flattened offsets.

    Repeated offsets are combined correctly (two bits in one word, or the
    same bit twice which cancels), so the call is its own inverse.
    """
    if not arr.flags.c_contiguous:
        raise ValueError("in-place flips need a C-contiguous array")
    flat = as_bits(arr).reshape(-1)
    idx = np.asarray(flat_index, dtype=np.int64)
    bits = np.asarray(bit, dtype=np.uint32)
    if np.any(bits > 31):
        raise ValueError("bit position must be in [0, 31]")
    np.bitwise_xor.at(flat, idx, np.left_shift(np.uint32(1), bits))
