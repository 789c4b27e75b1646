import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pvf.faultmodels import (BitAddress, FaultModelSpec, FaultPlan, InfeasiblePlanError, InvalidFaultSpec,
                             TargetGroup, ber_to_count, sample_plan)


def group(*sizes, name="g"):
    return TargetGroup(name, tuple(f"t{i}" for i in range(len(sizes))), tuple(sizes))


@pytest.mark.parametrize("text,spec", [
    ("sbf", FaultModelSpec("sbf")), ("mbf:4", FaultModelSpec("mbf", 4)), ("MBBF:2", FaultModelSpec("mbbf", 2)),
    ("ber:1e-3", FaultModelSpec("ber", rate=1e-3)),
])
def test_parse(text, spec):
    assert FaultModelSpec.parse(text) == spec
    assert FaultModelSpec.parse(str(spec)) == spec


@pytest.mark.parametrize("text", ["mbf:0", "mbf:-2", "mbf:x", "mbbf:0", "ber:0", "ber:1", "ber:abc", "sbf:2",
                                  "flip", ""])
def test_parse_rejects(text):
    with pytest.raises(InvalidFaultSpec):
        FaultModelSpec.parse(text)


def test_sbf_among_3200_bits():
    g = group(100)
    assert g.total_bits == 3200
    p = sample_plan(FaultModelSpec("sbf"), g, np.random.default_rng(0))
    assert len(p) == 1
    (a,) = p.flips
    assert 0 <= a.flat_index < 100 and 0 <= a.bit < 32


def test_mbf32_distinct():
    g = group(16 * 8, name="emb")
    p = sample_plan(FaultModelSpec("mbf", 32), g, np.random.default_rng(1))
    assert len(p) == 32
    assert len(set(p.flips)) == 32


def test_mbbf1_is_one_burst():
    p = sample_plan(FaultModelSpec("mbbf", 1), group(10), np.random.default_rng(2))
    a, b = p.flips
    assert a.tensor == b.tensor and a.flat_index == b.flat_index and b.bit == a.bit + 1


@pytest.mark.parametrize("rate,sizes,count", [(1 / 3200, (100,), 1), (1e-10, (48,), 0), (0.5, (1,), 16)])
def test_ber_to_count(rate, sizes, count):
    assert ber_to_count(rate, group(*sizes)) == count


def test_ber_zero_is_degenerate():
    p = sample_plan(FaultModelSpec("ber", rate=1e-10), group(48), np.random.default_rng(0))
    assert len(p) == 0 and p.degenerate


def test_infeasible():
    g = group(2)
    with pytest.raises(InfeasiblePlanError):
        sample_plan(FaultModelSpec("mbf", 65), g, np.random.default_rng(0))
    with pytest.raises(InfeasiblePlanError):
        sample_plan(FaultModelSpec("mbbf", 33), g, np.random.default_rng(0))
    with pytest.raises(InfeasiblePlanError):
        sample_plan(FaultModelSpec("mbbf", 1), g, np.random.default_rng(0), bit=31)
    with pytest.raises(InfeasiblePlanError):
        sample_plan(FaultModelSpec("mbf", 3), g, np.random.default_rng(0), bit=4)


@settings(max_examples=60)
@given(st.sampled_from(["sbf", "mbf:7", "mbbf:3", "ber:0.01"]), st.integers(0, 2 ** 32 - 1))
def test_determinism(text, seed):
    g = group(5, 30, 2)
    spec = FaultModelSpec.parse(text)
    a = sample_plan(spec, g, np.random.default_rng(seed))
    b = sample_plan(spec, g, np.random.default_rng(seed))
    assert a == b and a.digest() == b.digest()


@settings(max_examples=60)
@given(st.integers(1, 40), st.integers(0, 2 ** 32 - 1))
def test_mbbf_structure(b, seed):
    g = group(3, 4)
    p = sample_plan(FaultModelSpec("mbbf", b), g, np.random.default_rng(seed))
    assert len(p) == 2 * b
    key = p.elements * 32 + p.bits
    assert len(np.unique(key)) == 2 * b
    # pair up the flips word by word: every word holds disjoint consecutive pairs
    for e in np.unique(p.elements):
        bits = sorted(p.bits[p.elements == e])
        assert len(bits) % 2 == 0
        for lo, hi in zip(bits[0::2], bits[1::2]):
            assert hi == lo + 1


@settings(max_examples=60)
@given(st.integers(1, 64), st.integers(0, 2 ** 32 - 1), st.integers(0, 31))
def test_plans_stay_inside_group(k, seed, bit):
    g = group(1, 2)
    p = sample_plan(FaultModelSpec("mbf", min(k, 96)), g, np.random.default_rng(seed))
    for a in p.flips:
        assert g.element_of(a) < g.n_elements
    q = sample_plan(FaultModelSpec("mbf", min(k, 3)), g, np.random.default_rng(seed), bit=bit)
    assert set(q.bits.tolist()) == {bit}


def test_sbf_uniform_chi_square():
    # 10^5 samples over a 64-bit group: each bit within 5 sd of 1/64, chi-square sane
    g = group(2)
    rng = np.random.default_rng(2024)
    n = 100_000
    counts = np.zeros(64, dtype=np.int64)
    for _ in range(n):
        p = sample_plan(FaultModelSpec("sbf"), g, rng)
        counts[p.elements[0] * 32 + p.bits[0]] += 1
    expect = n / 64
    sd = np.sqrt(n * (1 / 64) * (63 / 64))
    assert np.all(np.abs(counts - expect) < 5 * sd)
    chi2 = float(((counts - expect) ** 2 / expect).sum())
    assert chi2 < 63 + 5 * np.sqrt(2 * 63)


def test_mbbf_start_uniform():
    g = group(1)
    rng = np.random.default_rng(3)
    counts = np.zeros(31)
    for _ in range(31_000):
        p = sample_plan(FaultModelSpec("mbbf", 1), g, rng)
        counts[p.bits[0]] += 1
    sd = np.sqrt(31_000 * (1 / 31) * (30 / 31))
    assert np.all(np.abs(counts - 1000) < 5 * sd)


def test_plan_dedup_and_addresses():
    g = group(4, 4)
    p = FaultPlan.from_addresses(g, [BitAddress("t1", 2, 5), BitAddress("t0", 0, 1), BitAddress("t1", 2, 5)])
    assert p.flips == (BitAddress("t0", 0, 1), BitAddress("t1", 2, 5))
    assert set(p.per_tensor()) == {"t0", "t1"}
    with pytest.raises(ValueError):
        FaultPlan.from_addresses(g, [BitAddress("t9", 0, 0)])
    with pytest.raises(ValueError):
        FaultPlan.from_addresses(g, [BitAddress("t0", 4, 0)])


def test_group_validation():
    with pytest.raises(ValueError):
        TargetGroup("g", (), ())
    with pytest.raises(ValueError):
        TargetGroup("g", ("a", "a"), (1, 1))
    with pytest.raises(KeyError):
        TargetGroup.from_params("g", ["w"], {})
