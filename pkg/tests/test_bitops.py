import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pvf.bitops import (FloatClass, FloatWord, as_bits, check_bit, classify_special, flip_bit,
                        flip_bits_inplace)

from conftest import decode_f32, struct_bits

patterns = st.integers(min_value=0, max_value=0xFFFFFFFF)
positions = st.integers(min_value=0, max_value=31)


def same(a: float, b: float) -> bool:
    return (math.isnan(a) and math.isnan(b)) or a == b


def test_sign_flip_of_one():
    w = flip_bit(FloatWord.from_value(1.0), 31)
    assert w.bits == 0xBF800000
    assert decode_f32(w.bits) == -1.0
    assert float(w.value) == -1.0


def test_bit30_on_one_point_five_is_nan():
    w = flip_bit(FloatWord(0x3FC00000), 30)
    assert w.bits == 0x7FC00000
    assert math.isnan(decode_f32(w.bits))
    assert classify_special(w) is FloatClass.NAN
    assert np.isnan(w.value)


def test_bit30_on_one_is_infinity():
    w = flip_bit(FloatWord(0x3F800000), 30)
    assert w.bits == 0x7F800000
    assert decode_f32(w.bits) == math.inf
    assert classify_special(w) is FloatClass.INFINITY


@pytest.mark.parametrize("bits,cls", [
    (0x7FC00000, FloatClass.NAN), (0x00000001, FloatClass.SUBNORMAL), (0x00000000, FloatClass.ZERO),
    (0x80000000, FloatClass.ZERO), (0xFF800000, FloatClass.INFINITY), (0x3F800000, FloatClass.NORMAL),
    (0x007FFFFF, FloatClass.SUBNORMAL), (0xFFFFFFFF, FloatClass.NAN),
])
def test_classify_examples(bits, cls):
    assert classify_special(FloatWord(bits)) is cls


@pytest.mark.parametrize("bad", [-1, 32, 100])
def test_bit_out_of_range(bad):
    with pytest.raises(ValueError):
        flip_bit(FloatWord(0), bad)


@pytest.mark.parametrize("bad", [1.0, "3", True, None])
def test_bit_wrong_type(bad):
    with pytest.raises(TypeError):
        check_bit(bad)


def test_pattern_range():
    with pytest.raises(ValueError):
        FloatWord(1 << 32)


@given(patterns)
def test_roundtrip_every_pattern(bits):
    w = FloatWord(bits)
    assert FloatWord.from_value(w.value).bits == bits  # NaN payloads survive
    assert same(float(w.value), decode_f32(bits))


@given(patterns, positions)
def test_flip_is_involution_and_single_bit(bits, bit):
    w = FloatWord(bits)
    f = flip_bit(w, bit)
    assert bin(f.bits ^ bits).count("1") == 1
    assert (f.bits ^ bits) == 1 << bit
    assert flip_bit(f, bit) == w


@given(st.floats(width=32, allow_nan=False, allow_infinity=False), st.integers(0, 22))
def test_mantissa_flip_keeps_normals_finite(x, bit):
    w = FloatWord.from_value(x)
    if classify_special(w) is not FloatClass.NORMAL:
        return
    f = flip_bit(w, bit)
    assert math.isfinite(decode_f32(f.bits))
    assert classify_special(f) is FloatClass.NORMAL


@given(patterns)
def test_classification_matches_decoder(bits):
    c = classify_special(FloatWord(bits))
    v = decode_f32(bits)
    if math.isnan(v):
        assert c is FloatClass.NAN
    elif math.isinf(v):
        assert c is FloatClass.INFINITY
    elif v == 0:
        assert c is FloatClass.ZERO
    elif abs(v) < 2.0 ** -126:
        assert c is FloatClass.SUBNORMAL
    else:
        assert c is FloatClass.NORMAL


def test_bit30_grid_against_decoder():
    # 10^4 patterns with bit 30 clear: the flip lands at >= 2^1 times the magnitude
    # scale (exponent + 128), or on Inf/NaN when the exponent becomes all ones
    rng = np.random.default_rng(7)
    pats = rng.integers(0, 1 << 32, size=10_000, dtype=np.uint64) & ~np.uint64(1 << 30)
    for p in pats.tolist():
        before = decode_f32(p)
        after_bits = flip_bit(FloatWord(p), 30).bits
        after = decode_f32(after_bits)
        exp_after = (after_bits >> 23) & 0xFF
        assert exp_after == ((p >> 23) & 0xFF) + 128
        if exp_after == 0xFF:
            assert math.isinf(after) or math.isnan(after)
        elif before != 0:
            assert abs(after) >= 2.0 ** 1
            assert abs(after) / abs(before) >= 2.0 ** 104
        else:
            assert abs(after) == 2.0 ** 1  # +-0 becomes +-2


def test_value_matches_struct():
    for x in (0.1, -2.5, 3.4e38, 1e-45):
        assert FloatWord.from_value(x).bits == struct_bits(x)


def test_flip_bits_inplace_and_revert():
    a = np.arange(6, dtype=np.float32).reshape(2, 3)
    ref = a.copy()
    flip_bits_inplace(a, [1, 1, 4], [30, 0, 31])
    assert as_bits(a)[0, 1] == as_bits(ref)[0, 1] ^ ((1 << 30) | 1)
    assert a[1, 1] == -4.0
    flip_bits_inplace(a, [1, 1, 4], [30, 0, 31])
    assert np.array_equal(as_bits(a), as_bits(ref))


def test_flip_bits_inplace_rejects_views():
    a = np.zeros((4, 4), dtype=np.float32)[:, ::2]
    with pytest.raises(ValueError):
        flip_bits_inplace(a, [0], [1])
    with pytest.raises(TypeError):
        as_bits(np.zeros(2))


@settings(max_examples=50)
@given(st.lists(st.tuples(st.integers(0, 11), positions), min_size=1, max_size=20))
def test_inplace_flips_match_scalar_flips(flips):
    a = np.random.default_rng(0).normal(size=12).astype(np.float32)
    expect = [FloatWord.from_value(v) for v in a]
    for i, b in flips:
        expect[i] = flip_bit(expect[i], b)
    idx, bits = zip(*flips)
    flip_bits_inplace(a, list(idx), list(bits))
    assert [int(x) for x in as_bits(a)] == [w.bits for w in expect]
