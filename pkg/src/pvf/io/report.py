"""Report documents: JSON files validated against the shipped schema.

A report echoes the run configuration and carries one row per estimate
(a target group, a bit position or a sweep point). Rows are written in a
fixed key order and floats in shortest round-trip form, so two runs with
the same inputs produce byte-identical files. Wall-clock time is left out
unless explicitly requested for the same reason.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from pathlib import Path

import jsonschema

from .. import __version__

FORMAT = "pvf-report"
FORMAT_VERSION = 1


class ReportError(ValueError):
    pass


@lru_cache(maxsize=1)
def report_schema() -> dict:
    return json.loads(resources.files("pvf.io").joinpath("report.schema.json").read_text())


@dataclass
class EstimateRow:
    label: str
    target: str
    fault: str
    D: int
    N: int
    pvf: float
    ci_low: float
    ci_high: float
    bit: int | None = None
    count: int | None = None
    exact: bool = False
    verdicts: dict | None = None

    @classmethod
    def from_estimate(cls, est, label: str, target: str, fault: str, bit=None, count=None,
                      exact: bool = False, verdicts: dict | None = None) -> EstimateRow:
        return cls(label, target, fault, est.D, est.N, est.pvf, est.ci_low, est.ci_high, bit, count, exact,
                   dict(verdicts) if verdicts else None)

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in ("label", "target", "fault", "bit", "count", "D", "N", "pvf",
                                           "ci_low", "ci_high", "exact")}
        if self.verdicts is not None:
            d["verdicts"] = {k: self.verdicts[k] for k in ("still_correct", "corrupted", "nan_output")}
        return d


@dataclass
class ReportDocument:
    kind: str
    model: str
    checkpoint_digest: str
    dataset_fingerprint: str
    eligible: int
    config: dict
    estimates: list[EstimateRow]
    tool_version: str = __version__
    duration_s: float | None = None

    def to_dict(self) -> dict:
        d = {
            "format": FORMAT,
            "format_version": FORMAT_VERSION,
            "tool_version": self.tool_version,
            "kind": self.kind,
            "model": self.model,
            "checkpoint_digest": self.checkpoint_digest,
            "dataset_fingerprint": self.dataset_fingerprint,
            "eligible": self.eligible,
            "config": self.config,
            "estimates": [e.to_dict() for e in self.estimates],
        }
        if self.duration_s is not None:
            d["duration_s"] = self.duration_s
        return d

    @classmethod
    def from_dict(cls, d: dict) -> ReportDocument:
        validate(d)
        rows = [EstimateRow(**e) for e in d["estimates"]]
        return cls(d["kind"], d["model"], d["checkpoint_digest"], d["dataset_fingerprint"], d["eligible"],
                   d["config"], rows, d["tool_version"], d.get("duration_s"))


def validate(d: dict) -> None:
    try:
        jsonschema.validate(d, report_schema())
    except jsonschema.ValidationError as e:
        where = "/".join(str(p) for p in e.absolute_path) or "<root>"
        raise ReportError(f"report does not match schema at {where}: {e.message}") from None
    for e in d["estimates"]:
        if not e["ci_low"] <= e["pvf"] <= e["ci_high"] or e["D"] > e["N"]:
            raise ReportError(f"inconsistent estimate {e['label']!r}")


def dumps(doc: ReportDocument) -> str:
    d = doc.to_dict()
    validate(d)
    return json.dumps(d, indent=2) + "\n"


def write_report(path, doc: ReportDocument) -> None:
    text = dumps(doc)
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def read_report(path) -> ReportDocument:
    try:
        d = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise ReportError(f"{path}: not JSON ({e})") from None
    return ReportDocument.from_dict(d)


def merge_reports(docs: list[ReportDocument]) -> ReportDocument:
    """Concatenate the rows of several reports on the same checkpoint."""
    if not docs:
        raise ReportError("nothing to merge")
    first = docs[0]
    for d in docs[1:]:
        if d.checkpoint_digest != first.checkpoint_digest:
            raise ReportError("reports come from different checkpoints")
    if len(docs) == 1:
        return first
    rows = [r for d in docs for r in d.estimates]
    return ReportDocument("merged", first.model, first.checkpoint_digest, first.dataset_fingerprint,
                          first.eligible, {"parts": [d.config for d in docs]}, rows)
