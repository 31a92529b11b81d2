"""Run every stage on a config and export the plot data.

    python3 scripts/run_default.py --config configs/default.json --out runs/default
"""
import argparse
import time
from pathlib import Path

from opeval.config import ExperimentConfig
from opeval.pipeline import STAGES, run_pipeline
from opeval.report import KINDS, emit_plot_data

ROOT = Path(__file__).resolve().parents[1]


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--config", type=Path, default=ROOT / "configs" / "default.json")
    ap.add_argument("--out", type=Path, default=Path("runs/default"))
    ap.add_argument("--seed", type=int, default=None)
    ap.add_argument("--workers", type=int, default=None)
    args = ap.parse_args()

    cfg = ExperimentConfig.load(args.config).with_seed(args.seed)
    t0 = time.perf_counter()
    manifest = run_pipeline(cfg, args.out, workers=args.workers)
    for stage in STAGES:
        rec = manifest["stages"][stage]
        print(f"{stage:8s} {rec['status']:7s} {rec['seconds'] or 0.0:8.2f}s")
    for kind in KINDS:
        print(f"{kind}: {len(emit_plot_data(args.out, kind))} series files")
    print(f"total {time.perf_counter() - t0:.1f}s -> {args.out}")


if __name__ == "__main__":
    main()
