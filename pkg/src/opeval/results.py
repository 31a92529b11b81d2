"""Typed result rows and their lossless CSV/JSON round trip.

Floats are written with ``repr`` (shortest round-tripping form); ``None``
becomes an empty cell and ``null`` in JSON.
"""
from __future__ import annotations

import csv
import dataclasses
import io
import json
import typing
from dataclasses import dataclass
from pathlib import Path
from typing import Optional


@dataclass(frozen=True)
class EstimateRecord:
    dataset_id: str
    behavior: str
    policy: str
    estimator: str
    value: float
    ci_lower: float
    ci_upper: float
    alpha: float
    method: str


@dataclass(frozen=True)
class CdfRecord:
    dataset_id: str
    behavior: str
    policy: str
    estimator: str
    threshold: float
    value: float
    raw_value: float


@dataclass(frozen=True)
class RiskRecord:
    dataset_id: str
    behavior: str
    policy: str
    estimator: str
    mean: float
    variance: float
    lower_quartile: float
    median: float
    upper_quartile: float
    cvar: float
    alpha: float


@dataclass(frozen=True)
class TruthRecord:
    policy: str
    role: str
    policy_value: float
    cdf_mean: float
    variance: float
    lower_quartile: float
    median: float
    upper_quartile: float
    cvar: float


@dataclass(frozen=True)
class MetricRecord:
    dataset_id: str
    behavior: str
    estimator: str
    target: str
    mse: float
    rank_correlation: Optional[float]
    regret_at_1: float
    type1_error: Optional[float]
    type2_error: Optional[float]


@dataclass(frozen=True)
class MetricSummaryRecord:
    behavior: str
    estimator: str
    target: str
    metric: str
    mean: Optional[float]
    std: Optional[float]
    n: int


@dataclass(frozen=True)
class TopkRecord:
    dataset_id: str
    behavior: str
    estimator: str
    target: str
    k: int
    best: float
    worst: float
    mean: float
    std: float
    safety_violation_rate: float
    sharpe_ratio: Optional[float]


@dataclass(frozen=True)
class TopkSummaryRecord:
    behavior: str
    estimator: str
    target: str
    k: int
    statistic: str
    mean: Optional[float]
    std: Optional[float]
    n: int


@dataclass(frozen=True)
class RankingRecord:
    dataset_id: str
    behavior: str
    estimator: str
    criterion: str
    rank: int
    policy: str
    estimated: float
    true: Optional[float]


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse(text: str, hint):
    args = typing.get_args(hint)
    if type(None) in args:
        if text == "":
            return None
        hint = next(a for a in args if a is not type(None))
    if hint is float:
        return float(text)
    if hint is int:
        return int(text)
    return text


def to_csv_text(records, cls) -> str:
    names = [f.name for f in dataclasses.fields(cls)]
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(names)
    for r in records:
        writer.writerow([_fmt(getattr(r, n)) for n in names])
    return buf.getvalue()


def write_csv(path, records, cls) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(to_csv_text(records, cls))
    return path


def read_csv(path, cls) -> list:
    hints = typing.get_type_hints(cls)
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        expected = [f.name for f in dataclasses.fields(cls)]
        if reader.fieldnames != expected:
            raise ValueError(f"{path}: columns {reader.fieldnames} do not match {cls.__name__}")
        return [cls(**{k: _parse(v, hints[k]) for k, v in row.items()}) for row in reader]


def dump_json(path, doc) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=1, sort_keys=True, allow_nan=False) + "\n")
    return path


def records_to_json(records) -> list:
    return [dataclasses.asdict(r) for r in records]
