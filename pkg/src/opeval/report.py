"""Plot-ready data files and minimal SVG line charts built from stage outputs.

Values are copied verbatim from the stage CSVs, never recomputed, so a
series file always agrees with the table it came from.
"""
from __future__ import annotations

import csv
from pathlib import Path
from typing import Optional, Sequence

from .errors import ArgumentError, MissingArtifactError

KINDS = ("cdf", "topk", "validation_scatter")
TOPK_ESTIMATORS = ("DM", "SNPDIS", "SNDR", "DRL")
TOPK_STATISTICS = ("best", "worst", "std", "sharpe_ratio")


def _rows(path: Path, producer: str) -> list[dict]:
    if not path.exists():
        raise MissingArtifactError(f"missing {path}; run `opeval {producer}` first")
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _write(path: Path, header: Sequence[str], rows: list) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    return path


def _safe(name: str) -> str:
    return "".join(c if c.isalnum() or c in "._-" else "_" for c in name)


# -- svg ----------------------------------------------------------------------
_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f")


def render_svg(series: dict, path, title: str = "", points: bool = False,
               width: int = 480, height: int = 320) -> Path:
    """Polylines (or dots) with a bounding box and min/max axis labels.

    ``series`` maps a label to ``(xs, ys)``; ``None`` entries are skipped.
    """
    pts = {k: [(float(x), float(y)) for x, y in zip(*v) if x is not None and y is not None]
           for k, v in series.items()}
    flat = [p for v in pts.values() for p in v]
    pad = 40
    if flat:
        x0, x1 = min(p[0] for p in flat), max(p[0] for p in flat)
        y0, y1 = min(p[1] for p in flat), max(p[1] for p in flat)
    else:
        x0, x1, y0, y1 = 0.0, 1.0, 0.0, 1.0
    x1, y1 = (x1 if x1 > x0 else x0 + 1.0), (y1 if y1 > y0 else y0 + 1.0)

    def sx(x):
        return pad + (x - x0) / (x1 - x0) * (width - 2 * pad)

    def sy(y):
        return height - pad - (y - y0) / (y1 - y0) * (height - 2 * pad)

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
           f'<rect x="{pad}" y="{pad}" width="{width - 2 * pad}" height="{height - 2 * pad}" '
           'fill="none" stroke="black"/>',
           f'<text x="{width / 2:.1f}" y="20" text-anchor="middle" font-size="12">{title}</text>',
           f'<text x="{pad}" y="{height - pad + 14}" font-size="10">{x0:.4g}</text>',
           f'<text x="{width - pad}" y="{height - pad + 14}" font-size="10" text-anchor="end">{x1:.4g}</text>',
           f'<text x="{pad - 4}" y="{height - pad}" font-size="10" text-anchor="end">{y0:.4g}</text>',
           f'<text x="{pad - 4}" y="{pad + 8}" font-size="10" text-anchor="end">{y1:.4g}</text>']
    for i, (label, v) in enumerate(pts.items()):
        color = _PALETTE[i % len(_PALETTE)]
        if points:
            out += [f'<circle cx="{sx(x):.2f}" cy="{sy(y):.2f}" r="2" fill="{color}"/>' for x, y in v]
        elif v:
            coords = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in v)
            out.append(f'<polyline points="{coords}" fill="none" stroke="{color}"/>')
        out.append(f'<text x="{width - pad + 2}" y="{pad + 12 * (i + 1)}" font-size="9" '
                   f'fill="{color}">{label}</text>')
    out.append("</svg>")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(out) + "\n")
    return path


def _num(text: str) -> Optional[float]:
    return None if text == "" else float(text)


# -- exports ------------------------------------------------------------------
def _emit_cdf(out: Path, dest: Path, dataset: Optional[str], svg: bool) -> list[Path]:
    rows = _rows(out / "cdope" / "cdf.csv", "cdope")
    if not rows:
        return []
    dataset = dataset or rows[0]["dataset_id"]
    series: dict = {}
    for r in rows:
        if r["dataset_id"] == dataset:
            series.setdefault((r["policy"], r["estimator"]), []).append((r["threshold"], r["value"]))
    if not series:
        raise ArgumentError(f"no CDF rows for dataset {dataset!r}")
    files = [_write(dest / _safe(dataset) / f"{_safe(p)}__{_safe(e)}.csv", ("threshold", "value"), v)
             for (p, e), v in series.items()]
    if svg:
        for policy in dict.fromkeys(p for p, _ in series):
            lines = {e: ([x for x, _ in v], [y for _, y in v]) for (p, e), v in series.items() if p == policy}
            render_svg(lines, dest / _safe(dataset) / f"{_safe(policy)}.svg", f"CDF {policy}")
    return files


def _emit_topk(out: Path, dest: Path, behavior: Optional[str], target: str, estimators, statistics,
               svg: bool) -> list[Path]:
    rows = _rows(out / "ops" / "topk_summary.csv", "ops")
    if not rows:
        return []
    behavior = behavior or rows[0]["behavior"]
    rows = [r for r in rows if r["behavior"] == behavior and r["target"] == target]
    present = list(dict.fromkeys(r["estimator"] for r in rows))
    if estimators is None:
        estimators = [e for e in TOPK_ESTIMATORS if e in present] or present
    missing = [e for e in estimators if e not in present]
    if missing:
        raise ArgumentError(f"no top-k rows for estimators {missing}")
    files = []
    for stat in statistics:
        lines = {}
        for est in estimators:
            v = [(r["k"], r["mean"], r["std"]) for r in rows if r["estimator"] == est and r["statistic"] == stat]
            files.append(_write(dest / _safe(behavior) / target / f"{_safe(est)}__{stat}.csv",
                                ("k", "mean", "std"), v))
            lines[est] = ([int(k) for k, _, _ in v], [_num(m) for _, m, _ in v])
        if svg:
            render_svg(lines, dest / _safe(behavior) / target / f"{stat}.svg", f"{stat}@k")
    return files


def _emit_scatter(out: Path, dest: Path, estimators, svg: bool) -> list[Path]:
    est_rows = _rows(out / "ope" / "estimates.csv", "ope")
    truth = {r["policy"]: r["policy_value"] for r in _rows(out / "cdope" / "truth.csv", "cdope")}
    series: dict = {}
    for r in est_rows:
        if estimators is None or r["estimator"] in estimators:
            series.setdefault(r["estimator"], []).append(
                (r["dataset_id"], r["policy"], truth[r["policy"]], r["value"]))
    if estimators is None or "oracle" in estimators:
        # the perfect-estimator reference: J against itself on the same cells
        cells = dict.fromkeys((r["dataset_id"], r["policy"]) for r in est_rows)
        series["oracle"] = [(d, p, truth[p], truth[p]) for d, p in cells]
    files = [_write(dest / f"{_safe(e)}.csv", ("dataset_id", "policy", "true_value", "estimated_value"), v)
             for e, v in series.items()]
    if svg:
        for e, v in series.items():
            render_svg({e: ([x for _, _, x, _ in v], [y for _, _, _, y in v])},
                       dest / f"{_safe(e)}.svg", f"true vs estimated ({e})", points=True)
    return files


def emit_plot_data(out, kind: str, dest=None, *, dataset: Optional[str] = None,
                   behavior: Optional[str] = None, target: str = "policy_value",
                   estimators: Optional[Sequence[str]] = None,
                   statistics: Sequence[str] = TOPK_STATISTICS, svg: bool = True) -> list[Path]:
    """Write one CSV per figure series under ``dest`` (default ``<out>/report/<kind>``).

    Returns the series files. ``cdf`` exports one dataset (the first by
    default), ``topk`` one behavior policy, ``validation_scatter`` pairs
    ``(J, J_hat)`` for every dataset and candidate, plus an ``oracle``
    series on the diagonal.
    """
    if kind not in KINDS:
        raise ArgumentError(f"unknown plot kind {kind!r}; choose from {list(KINDS)}")
    out = Path(out)
    dest = Path(dest) if dest is not None else out / "report" / kind
    if kind == "cdf":
        return _emit_cdf(out, dest, dataset, svg)
    if kind == "topk":
        return _emit_topk(out, dest, behavior, target, estimators, statistics, svg)
    return _emit_scatter(out, dest, estimators, svg)
