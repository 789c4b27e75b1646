import gzip
import json
import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pvf.campaign import PvfEstimate
from pvf.io.checkpoint import (CheckpointError, decode_checkpoint, encode_checkpoint, fnv1a64, load_checkpoint,
                               save_checkpoint, tensors_digest)
from pvf.io.datasets import (Dataset, ctr_bayes_accuracy, gen_ctr, gen_tokens, gen_toy, load_dataset,
                             load_mnist_dir, save_dataset, tokens_bayes_accuracy)
from pvf.io.idx import IdxError, encode_idx, read_idx, read_idx_images, read_idx_labels, write_idx
from pvf.io.report import (EstimateRow, ReportDocument, ReportError, dumps, merge_reports, read_report,
                           report_schema, write_report)
from pvf.io.svg import svg_bars, svg_lines

from conftest import ROOT


# ---- checkpoint -------------------------------------------------------------

def test_fnv_reference_values():
    assert fnv1a64(b"") == 0xCBF29CE484222325
    assert fnv1a64(b"a") == 0xAF63DC4C8601EC8C
    assert fnv1a64(b"foobar") == 0x85944171F73967E8


def test_roundtrip_with_nan_payloads(tmp_path):
    w = np.arange(12, dtype=np.float32).reshape(3, 4)
    bits = w.view(np.uint32)
    bits[0, 0] = 0x7FC00001  # quiet NaN with payload
    bits[0, 1] = 0xFFA00005  # signalling-pattern NaN
    bits[0, 2] = 0x7F800000
    bits[0, 3] = 0x80000000
    bits[1, 0] = 0x00000001
    tensors = {"w": w, "b": np.zeros(0, np.float32).reshape(0), "scalar": np.float32(2.5).reshape(())}
    digest = save_checkpoint(tmp_path / "c.pvfw", tensors)
    back, d2 = load_checkpoint(tmp_path / "c.pvfw")
    assert d2 == digest == tensors_digest(tensors)
    assert list(back) == list(tensors)
    for k in tensors:
        assert back[k].shape == tensors[k].shape
        assert np.array_equal(back[k].view(np.uint32), np.asarray(tensors[k]).view(np.uint32))


def test_layout_is_little_endian():
    blob = encode_checkpoint({"ab": np.array([1.0], np.float32)})
    assert blob[:4] == b"PVFW"
    assert struct.unpack("<II", blob[4:12]) == (1, 1)
    assert struct.unpack("<I", blob[12:16]) == (2,)
    assert blob[16:18] == b"ab"
    assert struct.unpack("<IQ", blob[18:30]) == (1, 1)
    assert blob[30:34] == struct.pack("<f", 1.0)
    assert struct.unpack("<Q", blob[34:]) == (fnv1a64(blob[:34]),)


@settings(max_examples=100, deadline=None)
@given(st.data())
def test_any_single_bit_corruption_detected(data):
    blob = bytearray(encode_checkpoint({"w": np.linspace(-1, 1, 9, dtype=np.float32).reshape(3, 3),
                                        "v": np.ones(2, np.float32)}))
    pos = data.draw(st.integers(0, len(blob) * 8 - 1))
    blob[pos // 8] ^= 1 << (pos % 8)
    with pytest.raises(CheckpointError):
        decode_checkpoint(bytes(blob))


def _with_digest(body: bytes) -> bytes:
    return body + struct.pack("<Q", fnv1a64(body))


def test_structural_errors():
    good = encode_checkpoint({"w": np.ones(2, np.float32)})
    body = good[:-8]
    with pytest.raises(CheckpointError, match="magic"):
        decode_checkpoint(b"XXXX" + good[4:])
    with pytest.raises(CheckpointError, match="version"):
        decode_checkpoint(_with_digest(body[:4] + struct.pack("<I", 2) + body[8:]))
    with pytest.raises(CheckpointError, match="truncat"):
        decode_checkpoint(_with_digest(body[:-4]))
    with pytest.raises(CheckpointError, match="trailing"):
        decode_checkpoint(_with_digest(body + b"\0"))
    dup = body[:8] + struct.pack("<I", 2) + body[12:] + body[12:]
    with pytest.raises(CheckpointError, match="duplicate"):
        decode_checkpoint(_with_digest(dup))
    with pytest.raises(CheckpointError):
        encode_checkpoint({"w": np.ones(2)})


def test_shipped_checkpoints_verify():
    for kind in ("dlrm_mini", "bert_mini", "lenet_mini", "toy_linear"):
        tensors, digest = load_checkpoint(ROOT / "fixtures" / f"{kind}.pvfw")
        assert f"__meta__.{kind}" in tensors
        assert tensors_digest(tensors) == digest


# ---- IDX --------------------------------------------------------------------

def _images(n=3, seed=0):
    return np.random.default_rng(seed).integers(0, 256, size=(n, 28, 28), dtype=np.uint8)


def test_idx_roundtrip(tmp_path):
    imgs, labs = _images(), np.array([9, 0, 3], np.uint8)
    write_idx(tmp_path / "i", imgs)
    write_idx(tmp_path / "l.gz", labs)
    x, y = read_idx(tmp_path / "i", tmp_path / "l.gz")
    assert x.dtype == np.float32 and x.shape == (3, 28, 28)
    assert np.array_equal(x, imgs.astype(np.float32) / 255)
    assert x.min() >= 0 and x.max() <= 1
    assert y.tolist() == [9, 0, 3]


def test_idx_header_is_big_endian():
    raw = encode_idx(_images(2))
    assert struct.unpack(">IIII", raw[:16]) == (0x803, 2, 28, 28)
    assert struct.unpack(">II", encode_idx(np.array([1, 2], np.uint8))[:8]) == (0x801, 2)


def test_idx_errors(tmp_path):
    raw = encode_idx(_images(2))
    (tmp_path / "trunc").write_bytes(raw[:-1])
    with pytest.raises(IdxError, match="truncated"):
        read_idx_images(tmp_path / "trunc")
    (tmp_path / "hdr").write_bytes(raw[:10])
    with pytest.raises(IdxError, match="truncated"):
        read_idx_images(tmp_path / "hdr")
    (tmp_path / "labels").write_bytes(encode_idx(np.arange(10, dtype=np.uint8)))
    with pytest.raises(IdxError, match="magic"):
        read_idx_images(tmp_path / "labels")
    with pytest.raises(IdxError, match="magic"):
        read_idx_labels(tmp_path / "trunc")
    (tmp_path / "imgs").write_bytes(raw)
    with pytest.raises(IdxError, match="labels"):
        read_idx(tmp_path / "imgs", tmp_path / "labels")
    (tmp_path / "extra").write_bytes(raw + b"\0")
    with pytest.raises(IdxError, match="trailing"):
        read_idx_images(tmp_path / "extra")
    (tmp_path / "bad.gz").write_bytes(gzip.compress(raw)[:-12])
    with pytest.raises(IdxError):
        read_idx_images(tmp_path / "bad.gz")


def test_mnist_folder(tmp_path):
    write_idx(tmp_path / "train-images-idx3-ubyte.gz", _images(4))
    write_idx(tmp_path / "train-labels-idx1-ubyte.gz", np.arange(4, dtype=np.uint8))
    write_idx(tmp_path / "t10k-images-idx3-ubyte", _images(2, 1))
    write_idx(tmp_path / "t10k-labels-idx1-ubyte", np.array([7, 8], np.uint8))
    ds = load_mnist_dir(tmp_path)
    assert ds.inputs["image"].shape == (6, 1, 28, 28)
    assert ds.test.labels.tolist() == [7, 8]
    with pytest.raises(FileNotFoundError):
        load_mnist_dir(tmp_path / "nope")


def test_shipped_mnist_subset():
    ds = load_dataset(ROOT / "fixtures" / "mnist5k")
    assert len(ds) == 5000 and len(ds.test) == 1000
    assert sorted(set(ds.labels.tolist())) == list(range(10))


# ---- datasets ---------------------------------------------------------------

def test_ctr_generator():
    a, b = gen_ctr(4, 10_000), gen_ctr(4, 10_000)
    assert a.fingerprint() == b.fingerprint()
    assert gen_ctr(5, 100).fingerprint() != gen_ctr(4, 100).fingerprint()
    assert 0.4 <= a.labels.mean() <= 0.6
    assert ctr_bayes_accuracy(a) >= 0.70
    assert np.all(a.inputs["cats"].max(axis=0) < np.array([16, 32, 64, 128, 256, 512, 1024, 4096]))
    with pytest.raises(ValueError):
        gen_ctr(1, 0)


def test_tokens_generator():
    a = gen_tokens(4, 4000)
    assert a.fingerprint() == gen_tokens(4, 4000).fingerprint()
    assert a.inputs["tokens"].shape == (4000, 16)
    assert a.inputs["tokens"].max() < 1000
    assert np.bincount(a.labels).tolist() == [1000] * 4
    assert tokens_bayes_accuracy(a) >= 0.85
    markers = np.asarray(a.meta["markers"])
    assert len(np.unique(markers)) == markers.size


def test_dataset_persistence(tmp_path):
    ds = gen_ctr(2, 50)
    save_dataset(tmp_path / "d.npz", ds)
    back = load_dataset(tmp_path / "d.npz")
    assert back.fingerprint() == ds.fingerprint() and back.test_start == ds.test_start
    assert ctr_bayes_accuracy(back) == ctr_bayes_accuracy(ds)
    with pytest.raises(FileNotFoundError):
        load_dataset(tmp_path / "missing.npz")


def test_dataset_splits():
    ds = gen_toy(1, 10)
    assert len(ds.train) == 8 and len(ds.test) == 2
    assert ds.split("all") is ds
    with pytest.raises(ValueError):
        ds.split("val")
    with pytest.raises(ValueError):
        Dataset("toy", {"x": np.zeros((3, 4))}, np.zeros(2))


# ---- reports and SVG ------------------------------------------------------------

def _doc(n=3, kind="campaign", bits=False):
    rows = []
    for i in range(n):
        est = PvfEstimate.from_counts(i, 1000)
        rows.append(EstimateRow.from_estimate(est, f"g{i}", f"g{i}", "sbf", bit=i if bits else None,
                                              count=2 ** i if kind == "sweep" else None,
                                              verdicts={"still_correct": 1000 - i, "corrupted": i, "nan_output": 0}))
    return ReportDocument(kind, "toy_linear", "0123456789abcdef", "fp", 50, {"seed": 1}, rows)


def test_report_roundtrip(tmp_path):
    doc = _doc()
    write_report(tmp_path / "r.json", doc)
    back = read_report(tmp_path / "r.json")
    assert back == doc
    assert dumps(back) == (tmp_path / "r.json").read_text()


def test_report_duration_optional(tmp_path):
    doc = _doc()
    doc.duration_s = 1.25
    write_report(tmp_path / "r.json", doc)
    assert read_report(tmp_path / "r.json").duration_s == 1.25
    assert "duration_s" not in _doc().to_dict()


def test_report_validation(tmp_path):
    d = _doc().to_dict()
    d["estimates"] = []
    (tmp_path / "e.json").write_text(json.dumps(d))
    with pytest.raises(ReportError):
        read_report(tmp_path / "e.json")
    d = _doc().to_dict()
    d["estimates"][1]["pvf"] = 0.5
    (tmp_path / "x.json").write_text(json.dumps(d))
    with pytest.raises(ReportError, match="inconsistent"):
        read_report(tmp_path / "x.json")
    (tmp_path / "j.json").write_text("{")
    with pytest.raises(ReportError):
        read_report(tmp_path / "j.json")


def test_schema_shipped_in_docs():
    assert json.loads((ROOT / "docs" / "report.schema.json").read_text()) == report_schema()


def test_merge_reports():
    m = merge_reports([_doc(2), _doc(3)])
    assert len(m.estimates) == 5 and m.kind == "merged"
    other = _doc(1)
    other.checkpoint_digest = "f" * 16
    with pytest.raises(ReportError):
        merge_reports([_doc(1), other])


def test_svg_bar_per_bit_position():
    svg = svg_bars(_doc(32, bits=True), log=True)
    assert svg.count('class="bar"') == 32
    assert svg.count('class="ci"') == 32
    assert svg.startswith("<svg") and svg.rstrip().endswith("</svg>")


def test_svg_lines():
    doc = _doc(4, kind="sweep")
    assert svg_lines(doc).count('class="series"') == 4
    for row in doc.estimates:
        row.target = "g0"
    svg = svg_lines(doc)
    assert svg.count('class="series"') == 1 and svg.count('class="ci"') == 4
    with pytest.raises(ReportError):
        svg_lines(_doc(2))
