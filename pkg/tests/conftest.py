import struct
from pathlib import Path

import numpy as np
import pytest

from pvf.io.checkpoint import load_checkpoint
from pvf.io.datasets import load_dataset
from pvf.nn.models import model_from_tensors

ROOT = Path(__file__).resolve().parents[1]
FIXTURES = ROOT / "fixtures"

DATA = {
    "dlrm_mini": FIXTURES / "ctr.npz",
    "bert_mini": FIXTURES / "tokens.npz",
    "lenet_mini": FIXTURES / "mnist5k",
    "toy_linear": FIXTURES / "toy.npz",
}


def decode_f32(bits: int) -> float:
    """Independent IEEE-754 binary32 decoder written from the format definition."""
    sign = -1.0 if bits >> 31 else 1.0
    exp = (bits >> 23) & 0xFF
    man = bits & 0x7FFFFF
    if exp == 0xFF:
        return float("nan") if man else sign * float("inf")
    if exp == 0:
        return sign * man * 2.0 ** -149
    return sign * (1 + man / 2 ** 23) * 2.0 ** (exp - 127)


def struct_bits(x: float) -> int:
    return struct.unpack("<I", struct.pack("<f", x))[0]


@pytest.fixture(scope="session")
def trained():
    """Loader for the shipped checkpoints and their held-out evaluation splits."""
    cache = {}

    def get(kind):
        if kind not in cache:
            tensors, digest = load_checkpoint(FIXTURES / f"{kind}.pvfw")
            cache[kind] = (model_from_tensors(tensors), load_dataset(DATA[kind]).test, digest)
        return cache[kind]
    return get


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
