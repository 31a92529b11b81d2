import csv
from pathlib import Path

import pytest

from opeval.config import ExperimentConfig
from opeval.errors import ArgumentError
from opeval.pipeline import run_pipeline
from opeval.report import TOPK_STATISTICS, emit_plot_data, render_svg

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture(scope="module")
def out(tmp_path_factory):
    cfg = ExperimentConfig.load(CONFIGS / "minimal.json")
    cfg = cfg.from_dict(dict(cfg.to_dict(), ope=dict(cfg.to_dict()["ope"],
                                                      estimators=["DM", "SNPDIS", "SNDR", "DRL"])))
    root = tmp_path_factory.mktemp("report")
    run_pipeline(cfg, root)
    return root


def test_topk_export_grid(out):
    files = emit_plot_data(out, "topk")
    assert len(files) == 4 * len(TOPK_STATISTICS) == 16
    svgs = list((out / "report" / "topk").rglob("*.svg"))
    assert len(svgs) == len(TOPK_STATISTICS)
    k = [int(r["k"]) for r in rows(files[0])]
    assert k == [1, 2]


def test_scatter_oracle_on_diagonal(out):
    files = emit_plot_data(out, "validation_scatter", estimators=["oracle"], svg=False)
    assert [f.stem for f in files] == ["oracle"]
    pts = rows(files[0])
    assert len(pts) == 2 * 2
    assert max(abs(float(r["true_value"]) - float(r["estimated_value"])) for r in pts) == 0.0


def test_scatter_all_estimators(out):
    files = emit_plot_data(out, "validation_scatter", svg=False)
    assert {f.stem for f in files} == {"DM", "SNPDIS", "SNDR", "DRL", "oracle"}
    truth = {r["policy"]: r["policy_value"] for r in rows(out / "cdope" / "truth.csv")}
    for f in files:
        assert all(r["true_value"] == truth[r["policy"]] for r in rows(f))


def test_cdf_export_matches_csv(out):
    files = emit_plot_data(out, "cdf", svg=False)
    source = rows(out / "cdope" / "cdf.csv")
    ds = source[0]["dataset_id"]
    for f in files:
        policy, est = f.stem.split("__")
        want = [(r["threshold"], r["value"]) for r in source
                if r["dataset_id"] == ds and r["policy"] == policy and r["estimator"] == est]
        assert [(r["threshold"], r["value"]) for r in rows(f)] == want


def test_unknown_kind(out):
    with pytest.raises(ArgumentError):
        emit_plot_data(out, "heatmap")


def test_unknown_dataset(out):
    with pytest.raises(ArgumentError):
        emit_plot_data(out, "cdf", dataset="nope", svg=False)


def test_svg_is_wellformed(tmp_path):
    import xml.etree.ElementTree as ET
    p = render_svg({"a": ([0, 1, 2], [0.0, None, 1.0])}, tmp_path / "x.svg", "t")
    assert ET.parse(p).getroot().tag.endswith("svg")
