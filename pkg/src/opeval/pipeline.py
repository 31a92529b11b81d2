"""Staged experiment runner: collect -> fit -> ope -> cdope -> ops.

Every stage writes into ``<out>/<stage>/`` and records a ``stage.json`` with
a SHA-256 key over its config sections, the master seed and the keys of the
stages it reads from. A stage whose recorded key matches is reported as
``cached`` and not recomputed. ``manifest.json`` is written last.
"""
from __future__ import annotations

import functools
import hashlib
import json
import os
import shutil
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from . import __version__
from .cdope import (
    CdfEstimate,
    CdfRewardModel,
    RewardGrid,
    cdf_cvar,
    cdf_interquartile,
    cdf_mean_variance,
    estimate_cdf,
    fit_cdf_reward_model,
    monotone_correct,
)
from .config import ExperimentConfig, behavior_names, candidate_names
from .data import LoggedDataset, collect, derive_seed
from .errors import MissingArtifactError, OpevalError, StageError
from .fitting import (
    FittedQ,
    MarginalWeights,
    empirical_marginal_weights,
    fit_alm,
    fit_fqe,
    fit_minimax_kernel,
    oracle_marginal_weights,
    preset,
)
from .mdp import (
    MdpSpec,
    RewardNoise,
    TabularPolicy,
    canonical_json,
    exact_policy_value,
    exact_q_function,
    make_chain2,
    make_loop_mdp,
    make_random_mdp,
    optimal_q_function,
)
from .ope import OpeInputs, confidence_interval, run_estimator
from .ops import PolicyPanel, aggregate, panel_metrics, select_by, topk_statistics
from .policies import PolicyHead
from .results import (
    CdfRecord,
    EstimateRecord,
    MetricRecord,
    MetricSummaryRecord,
    RankingRecord,
    RiskRecord,
    TopkRecord,
    TopkSummaryRecord,
    TruthRecord,
    dump_json,
    read_csv,
    records_to_json,
    write_csv,
)

STAGES = ("collect", "fit", "ope", "cdope", "ops")
UPSTREAM = {
    "collect": (),
    "fit": ("collect",),
    "ope": ("collect", "fit"),
    "cdope": ("collect", "fit"),
    "ops": ("collect", "ope", "cdope"),
}
# config sections each stage depends on directly
SECTIONS = {
    "collect": ("env", "behavior", "candidates", "data"),
    "fit": ("fit", "cdope"),
    "ope": ("ope",),
    "cdope": ("cdope",),
    "ops": ("ops", "ope"),
}
METRIC_TARGETS = ("policy_value", "lower_quartile", "cvar")
METRICS = ("mse", "rank_correlation", "regret_at_1", "type1_error", "type2_error")

# seed streams for derive_seed(master, stream, ...)
_ENV, _DATA, _FIT, _OPE, _TRUTH = range(5)


def default_workers() -> int:
    try:
        return max(1, int(os.environ.get("OPEVAL_WORKERS", "1")))
    except ValueError:
        return 1


def dataset_id(behavior: str, index: int) -> str:
    return f"{behavior}__d{index:02d}"


# -- environment and policies -------------------------------------------------
def build_mdp(cfg: ExperimentConfig) -> MdpSpec:
    env = cfg.env
    if env.kind == "chain2":
        return make_chain2(env.horizon, env.discount)
    if env.kind == "loop":
        return make_loop_mdp(env.horizon, env.discount)
    seed = env.seed if env.seed is not None else derive_seed(cfg.seed, _ENV)
    sigma = env.noise_sigma if env.reward_noise == "gaussian" else 0.0
    return make_random_mdp(env.n_states, env.n_actions, env.horizon, env.discount, seed,
                           RewardNoise(env.reward_noise, sigma))


def base_q(mdp: MdpSpec, base: str) -> np.ndarray:
    """Q-table a policy head is applied to.

    ``pessimal`` is the optimal Q of the negated-reward MDP, so its greedy
    action is the one minimizing the original return.
    """
    if base == "optimal":
        return optimal_q_function(mdp)
    if base == "myopic":
        return np.array(mdp.reward_mean)
    if base == "uniform_q":
        return exact_q_function(mdp, TabularPolicy.uniform(mdp.n_states, mdp.n_actions))[0]
    if base == "pessimal":
        lo, hi = mdp.reward_range
        return optimal_q_function(mdp.with_rewards(-mdp.reward_mean, (-hi, -lo)))
    raise OpevalError(f"unknown base {base!r}")


def build_policies(cfg: ExperimentConfig, mdp: MdpSpec) -> tuple[list, list]:
    out = []
    for group, names in ((cfg.behavior, behavior_names(cfg)), (cfg.candidates, candidate_names(cfg))):
        pols = []
        it = iter(names)
        for base in group.bases:
            q = base_q(mdp, base)
            for p in group.params:
                pols.append(PolicyHead(group.head, p, next(it)).apply(q))
        out.append(pols)
    return out[0], out[1]


# -- on-disk access ------------------------------------------------------------
@dataclass(frozen=True)
class RunContext:
    config: ExperimentConfig
    out: Path

    def stage_dir(self, stage: str) -> Path:
        return self.out / stage

    def require(self, path: Path, producer: str) -> Path:
        if not path.exists():
            raise MissingArtifactError(
                f"missing {path}; run `opeval {producer}` with the same --config/--seed/--out first")
        return path


@functools.lru_cache(maxsize=8)
def _load_collect(out: str):
    root = Path(out) / "collect"
    mdp = MdpSpec.from_dict(json.loads((root / "mdp.json").read_text()))
    doc = json.loads((root / "policies.json").read_text())
    behaviors = [TabularPolicy.from_dict(p) for p in doc["behaviors"]]
    candidates = [TabularPolicy.from_dict(p) for p in doc["candidates"]]
    return mdp, behaviors, candidates, doc


def load_collect(ctx: RunContext):
    """(mdp, behaviors, candidates, policies document) from the collect stage."""
    root = ctx.stage_dir("collect")
    ctx.require(root / "mdp.json", "collect")
    ctx.require(root / "policies.json", "collect")
    return _load_collect(str(ctx.out.resolve()))


def dataset_cells(ctx: RunContext) -> list[tuple[int, int, str]]:
    """(behavior index, dataset index, dataset id) in behavior-major order."""
    names = behavior_names(ctx.config)
    return [(b, d, dataset_id(name, d)) for b, name in enumerate(names)
            for d in range(ctx.config.data.n_datasets)]


def load_dataset(ctx: RunContext, ds_id: str) -> LoggedDataset:
    path = ctx.stage_dir("collect") / "datasets" / ds_id
    ctx.require(path / "manifest.json", "collect")
    return LoggedDataset.load(path)


def fit_cell_path(ctx: RunContext, ds_id: str, policy: str) -> Path:
    return ctx.stage_dir("fit") / "cells" / ds_id / f"{policy}.json"


def load_fit_cell(ctx: RunContext, ds_id: str, policy: str, grid: RewardGrid):
    doc = json.loads(ctx.require(fit_cell_path(ctx, ds_id, policy), "fit").read_text())
    m = doc["cdf_model"]
    model = CdfRewardModel(grid, np.array(m["cdf"]), m["source"], m["meta"])
    return FittedQ.from_dict(doc["fqe"]), MarginalWeights.from_dict(doc["weights"]), model


def grid_of(cfg: ExperimentConfig) -> RewardGrid:
    c = cfg.cdope
    return RewardGrid(c.scale_min, c.scale_max, c.n_partition)


def _pmap(fn: Callable, items: Sequence, workers: int) -> list:
    """Ordered map, in worker processes when ``workers > 1``."""
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, items, chunksize=max(1, len(items) // (4 * workers))))


def _guard(stage: str, label: str, fn: Callable, *args):
    try:
        return fn(*args)
    except MissingArtifactError:
        raise
    except OpevalError as err:
        raise StageError(f"{stage} [{label}]: {type(err).__name__}: {err}") from err


# -- collect ------------------------------------------------------------------
def stage_collect(ctx: RunContext, workers: int) -> list[str]:
    cfg = ctx.config
    root = ctx.stage_dir("collect")
    mdp = build_mdp(cfg)
    behaviors, candidates = build_policies(cfg, mdp)
    dump_json(root / "mdp.json", mdp.to_dict())
    doc = {
        "behaviors": [dict(p.to_dict(), value=exact_policy_value(mdp, p)) for p in behaviors],
        "candidates": [dict(p.to_dict(), value=exact_policy_value(mdp, p)) for p in candidates],
    }
    dump_json(root / "policies.json", doc)
    artifacts = ["collect/mdp.json", "collect/policies.json"]
    for b, d, ds_id in dataset_cells(ctx):
        seed = derive_seed(cfg.seed, _DATA, b, d)
        collect(mdp, behaviors[b], cfg.data.n_trajectories, seed).save(root / "datasets" / ds_id)
        artifacts.append(f"collect/datasets/{ds_id}")
    return artifacts


# -- fit ----------------------------------------------------------------------
def _fit_cell(ctx: RunContext, cell) -> dict:
    b, d, ds_id, p = cell
    cfg = ctx.config
    mdp, behaviors, candidates, _ = load_collect(ctx)
    ds = load_dataset(ctx, ds_id)
    pi = candidates[p]
    f = cfg.fit
    fqe = fit_fqe(ds, pi)
    if f.weights == "alm":
        hp = preset(f.alm_preset, max_iters=f.alm_max_iters)
        weights, _, _ = fit_alm(ds, pi, hp, seed=derive_seed(cfg.seed, _FIT, b, d, p))
    elif f.weights == "empirical":
        weights = empirical_marginal_weights(ds, pi, mdp)
    elif f.weights == "oracle":
        weights = oracle_marginal_weights(mdp, pi, behaviors[b])
    else:
        sub = ds.subset(np.arange(min(ds.n_trajectories, f.mwl_max_trajectories)))
        weights = fit_minimax_kernel(sub, pi, "weight", f.kernel_bandwidth)
    model = fit_cdf_reward_model(ds, pi, grid_of(cfg))
    doc = {
        "dataset_id": ds_id,
        "policy": pi.name,
        "fqe": fqe.to_dict(),
        "weights": weights.to_dict(),
        "cdf_model": {"cdf": model.cdf.tolist(), "source": model.source, "meta": model.meta},
    }
    path = fit_cell_path(ctx, ds_id, pi.name)
    dump_json(path, doc)
    return str(path.relative_to(ctx.out))


def _fit_cell_guarded(ctx, cell):
    return _guard("fit", f"{cell[2]} / policy {cell[3]}", _fit_cell, ctx, cell)


def stage_fit(ctx: RunContext, workers: int) -> list[str]:
    _, _, candidates, _ = load_collect(ctx)
    cells = [(b, d, ds_id, p) for b, d, ds_id in dataset_cells(ctx) for p in range(len(candidates))]
    return _pmap(functools.partial(_fit_cell_guarded, ctx), cells, workers)


# -- ope ----------------------------------------------------------------------
def _ope_cell(ctx: RunContext, cell) -> list[EstimateRecord]:
    b, d, ds_id, p = cell
    cfg = ctx.config
    o = cfg.ope
    mdp, behaviors, candidates, _ = load_collect(ctx)
    pi = candidates[p]
    ds = load_dataset(ctx, ds_id)
    fqe, weights, _ = load_fit_cell(ctx, ds_id, pi.name, grid_of(cfg))
    inputs = OpeInputs(ds, pi, fqe, weights)
    rows = []
    for e, name in enumerate(o.estimators):
        options = {}
        if name == "DRL":
            options = {"k_folds": o.drl_folds, "seed": derive_seed(cfg.seed, _OPE, b, d, p, e), "mdp": mdp}
        elif name.startswith("SOPE-"):
            options = {"k_recent": min(o.sope_k, ds.horizon)}
        est = run_estimator(name, inputs, **options)
        ci = confidence_interval(est.per_trajectory_values, o.ci_method, o.alpha,
                                 bootstrap_b=o.bootstrap_b,
                                 seed=derive_seed(cfg.seed, _OPE, b, d, p, e, 1))
        rows.append(EstimateRecord(ds_id, behaviors[b].name, pi.name, name, float(est.value),
                                   float(ci.lower), float(ci.upper), float(o.alpha), o.ci_method))
    return rows


def _ope_cell_guarded(ctx, cell):
    return _guard("ope", f"{cell[2]} / policy {cell[3]}", _ope_cell, ctx, cell)


def stage_ope(ctx: RunContext, workers: int) -> list[str]:
    _, _, candidates, _ = load_collect(ctx)
    cells = [(b, d, ds_id, p) for b, d, ds_id in dataset_cells(ctx) for p in range(len(candidates))]
    records = [r for rows in _pmap(functools.partial(_ope_cell_guarded, ctx), cells, workers) for r in rows]
    root = ctx.stage_dir("ope")
    write_csv(root / "estimates.csv", records, EstimateRecord)
    dump_json(root / "estimates.json", records_to_json(records))
    return ["ope/estimates.csv", "ope/estimates.json"]


# -- cdope --------------------------------------------------------------------
def _risk(cdf: CdfEstimate, alpha: float) -> dict:
    mean, var = cdf_mean_variance(cdf)
    lq, med, uq = cdf_interquartile(cdf, alpha)
    return {"mean": mean, "variance": var, "lower_quartile": lq, "median": med,
            "upper_quartile": uq, "cvar": cdf_cvar(cdf, alpha)}


def _truth_cell(ctx: RunContext, item) -> TruthRecord:
    i, role, policy_doc = item
    cfg = ctx.config
    mdp, _, _, _ = load_collect(ctx)
    pi = TabularPolicy.from_dict({"name": policy_doc["name"], "probs": policy_doc["probs"]})
    grid = grid_of(cfg)
    # Monte-Carlo returns give the reference CDF; noise makes exact enumeration infeasible
    returns = collect(mdp, pi, cfg.cdope.truth_rollouts, derive_seed(cfg.seed, _TRUTH, i)).returns
    F = monotone_correct(grid.indicator(returns).mean(axis=0), "dm")
    if returns.max() <= grid.scale_max:
        F[-1] = 1.0
    r = _risk(CdfEstimate(grid, F, "oracle", True), cfg.cdope.risk_alpha)
    return TruthRecord(pi.name, role, float(policy_doc["value"]), r["mean"], r["variance"],
                       r["lower_quartile"], r["median"], r["upper_quartile"], r["cvar"])


def _cdope_cell(ctx: RunContext, cell):
    b, d, ds_id, p = cell
    cfg = ctx.config
    c = cfg.cdope
    _, behaviors, candidates, _ = load_collect(ctx)
    pi = candidates[p]
    grid = grid_of(cfg)
    ds = load_dataset(ctx, ds_id)
    _, _, model = load_fit_cell(ctx, ds_id, pi.name, grid)
    inputs = OpeInputs(ds, pi)
    cdf_rows, risk_rows = [], []
    for name in c.estimators:
        est = estimate_cdf(inputs, grid, name, model)
        for m, v, raw in zip(grid.thresholds, est.values, est.raw_values):
            cdf_rows.append(CdfRecord(ds_id, behaviors[b].name, pi.name, est.estimator_name,
                                      float(m), float(v), float(raw)))
        r = _risk(est, c.risk_alpha)
        risk_rows.append(RiskRecord(ds_id, behaviors[b].name, pi.name, est.estimator_name,
                                    r["mean"], r["variance"], r["lower_quartile"], r["median"],
                                    r["upper_quartile"], r["cvar"], float(c.risk_alpha)))
    return cdf_rows, risk_rows


def _cdope_cell_guarded(ctx, cell):
    return _guard("cdope", f"{cell[2]} / policy {cell[3]}", _cdope_cell, ctx, cell)


def stage_cdope(ctx: RunContext, workers: int) -> list[str]:
    _, _, candidates, doc = load_collect(ctx)
    items = [(i, role, pd) for i, (role, pd) in enumerate(
        [("behavior", x) for x in doc["behaviors"]] + [("candidate", x) for x in doc["candidates"]])]
    truths = _pmap(functools.partial(_truth_cell, ctx), items, workers)
    cells = [(b, d, ds_id, p) for b, d, ds_id in dataset_cells(ctx) for p in range(len(candidates))]
    out = _pmap(functools.partial(_cdope_cell_guarded, ctx), cells, workers)
    cdf = [r for rows, _ in out for r in rows]
    risk = [r for _, rows in out for r in rows]
    root = ctx.stage_dir("cdope")
    write_csv(root / "cdf.csv", cdf, CdfRecord)
    write_csv(root / "risk.csv", risk, RiskRecord)
    write_csv(root / "truth.csv", truths, TruthRecord)
    dump_json(root / "truth.json", records_to_json(truths))
    return ["cdope/cdf.csv", "cdope/risk.csv", "cdope/truth.csv", "cdope/truth.json"]


# -- ops ----------------------------------------------------------------------
def build_panels(ctx: RunContext) -> dict[str, PolicyPanel]:
    """One panel per dataset id, holding every OPE and CD-OPE estimator."""
    cfg = ctx.config
    ope = read_csv(ctx.require(ctx.stage_dir("ope") / "estimates.csv", "ope"), EstimateRecord)
    risk = read_csv(ctx.require(ctx.stage_dir("cdope") / "risk.csv", "cdope"), RiskRecord)
    truth = {t.policy: t for t in read_csv(ctx.require(ctx.stage_dir("cdope") / "truth.csv", "cdope"),
                                           TruthRecord)}
    names = candidate_names(cfg)
    col = {n: i for i, n in enumerate(names)}

    def targets(t: TruthRecord) -> dict:
        return {"policy_value": t.policy_value, "lower_bound": t.policy_value,
                "lower_quartile": t.lower_quartile, "cvar": t.cvar}

    true_targets = {k: np.array([targets(truth[n])[k] for n in names]) for k in targets(truth[names[0]])}
    tables: dict[str, dict] = {}

    def put(ds, est, target, policy, value):
        tables.setdefault(ds, {}).setdefault(est, {}).setdefault(target, np.full(len(names), np.nan))
        tables[ds][est][target][col[policy]] = value

    for r in ope:
        put(r.dataset_id, r.estimator, "policy_value", r.policy, r.value)
        put(r.dataset_id, r.estimator, "lower_bound", r.policy, r.ci_lower)
    for r in risk:
        put(r.dataset_id, r.estimator, "lower_quartile", r.policy, r.lower_quartile)
        put(r.dataset_id, r.estimator, "cvar", r.policy, r.cvar)
    panels = {}
    for b, d, ds_id in dataset_cells(ctx):
        est = tables.get(ds_id)
        if est is None:
            raise MissingArtifactError(f"no estimates for dataset {ds_id}; run `opeval ope` and `opeval cdope`")
        for e, per in est.items():
            for target, v in per.items():
                if np.isnan(v).any():
                    raise StageError(f"ops: estimator {e} has no {target} for some policy on {ds_id}")
        if cfg.ops.include_oracle:
            est = dict(est, oracle={k: v.copy() for k, v in true_targets.items()})
        behavior = behavior_names(cfg)[b]
        panels[ds_id] = PolicyPanel(tuple(names), true_targets, est, targets(truth[behavior]),
                                    cfg.ops.relative_safety_criteria)
    return panels


def stage_ops(ctx: RunContext, workers: int) -> list[str]:
    cfg = ctx.config
    panels = build_panels(ctx)
    bnames = behavior_names(cfg)
    metrics, topk, rankings = [], [], []
    for b, d, ds_id in dataset_cells(ctx):
        panel = panels[ds_id]
        behavior = bnames[b]
        for est in panel.estimates:
            for target in METRIC_TARGETS:
                if target not in panel.estimates[est]:
                    continue
                m = panel_metrics(panel, est, target)
                metrics.append(MetricRecord(ds_id, behavior, est, target, m["mse"], m["rank_correlation"],
                                            m["regret_at_1"], m["type1_error"], m["type2_error"]))
                for row in topk_statistics(panel, est, target).rows():
                    topk.append(TopkRecord(ds_id, behavior, **row))
            for criterion in cfg.ops.criteria:
                if criterion not in panel.estimates[est]:
                    continue
                sel = select_by(panel, est, criterion)
                for rank, (name, e, t) in enumerate(zip(sel.ranking, sel.estimated, sel.true), start=1):
                    rankings.append(RankingRecord(ds_id, behavior, est, criterion, rank, name, e, t))
    metric_summary = []
    groups: dict = {}
    for r in metrics:
        groups.setdefault((r.behavior, r.estimator, r.target), []).append(r)
    for (behavior, est, target), rows in groups.items():
        for metric in METRICS:
            a = aggregate([getattr(r, metric) for r in rows])
            metric_summary.append(MetricSummaryRecord(behavior, est, target, metric, a["mean"], a["std"], a["n"]))
    topk_summary = []
    groups = {}
    for r in topk:
        groups.setdefault((r.behavior, r.estimator, r.target, r.k), []).append(r)
    for (behavior, est, target, k), rows in groups.items():
        for stat in ("best", "worst", "mean", "std", "safety_violation_rate", "sharpe_ratio"):
            a = aggregate([getattr(r, stat) for r in rows])
            topk_summary.append(TopkSummaryRecord(behavior, est, target, k, stat, a["mean"], a["std"], a["n"]))
    root = ctx.stage_dir("ops")
    write_csv(root / "metrics.csv", metrics, MetricRecord)
    write_csv(root / "metrics_summary.csv", metric_summary, MetricSummaryRecord)
    write_csv(root / "topk.csv", topk, TopkRecord)
    write_csv(root / "topk_summary.csv", topk_summary, TopkSummaryRecord)
    write_csv(root / "rankings.csv", rankings, RankingRecord)
    dump_json(root / "ops.json", {
        "relative_safety_criteria": cfg.ops.relative_safety_criteria,
        "metrics_summary": records_to_json(metric_summary),
        "topk_summary": records_to_json(topk_summary),
    })
    return ["ops/metrics.csv", "ops/metrics_summary.csv", "ops/topk.csv",
            "ops/topk_summary.csv", "ops/rankings.csv", "ops/ops.json"]


STAGE_FUNCS = {
    "collect": stage_collect,
    "fit": stage_fit,
    "ope": stage_ope,
    "cdope": stage_cdope,
    "ops": stage_ops,
}


# -- keys, caching and the manifest ------------------------------------------
def stage_keys(cfg: ExperimentConfig) -> dict[str, str]:
    """Chained content keys: each covers its own config sections and its upstream keys."""
    doc = cfg.to_dict()
    keys: dict[str, str] = {}
    for stage in STAGES:
        payload = {
            "stage": stage,
            "version": __version__,
            "seed": cfg.seed,
            "sections": {s: doc[s] for s in SECTIONS[stage]},
            "upstream": {u: keys[u] for u in UPSTREAM[stage]},
        }
        keys[stage] = hashlib.sha256(canonical_json(payload).encode()).hexdigest()
    return keys


def read_stage_record(ctx: RunContext, stage: str) -> Optional[dict]:
    path = ctx.stage_dir(stage) / "stage.json"
    if not path.exists():
        return None
    return json.loads(path.read_text())


def is_cached(ctx: RunContext, stage: str, key: str) -> bool:
    rec = read_stage_record(ctx, stage)
    if rec is None or rec.get("key") != key or rec.get("status") != "complete":
        return False
    return all((ctx.out / a).exists() for a in rec.get("artifacts", []))


def check_upstream(ctx: RunContext, stage: str, keys: dict) -> None:
    for up in UPSTREAM[stage]:
        rec = read_stage_record(ctx, up)
        if rec is None or rec.get("status") != "complete":
            raise MissingArtifactError(
                f"{stage} needs the {up} stage outputs in {ctx.out}; run `opeval {up}` first")
        if rec.get("key") != keys[up]:
            raise MissingArtifactError(
                f"{up} outputs in {ctx.out} were produced by a different config or seed; "
                f"rerun `opeval {up}`")


@dataclass
class StageOutcome:
    stage: str
    status: str          # ran | cached | failed
    key: str
    seconds: float
    artifacts: list
    error: Optional[str] = None


def run_stage(ctx: RunContext, stage: str, workers: int = 1, force: bool = False,
              keys: Optional[dict] = None) -> StageOutcome:
    keys = keys or stage_keys(ctx.config)
    key = keys[stage]
    check_upstream(ctx, stage, keys)
    if not force and is_cached(ctx, stage, key):
        rec = read_stage_record(ctx, stage)
        return StageOutcome(stage, "cached", key, 0.0, rec["artifacts"])
    root = ctx.stage_dir(stage)
    if root.exists():
        shutil.rmtree(root)
    root.mkdir(parents=True)
    _load_collect.cache_clear()
    t0 = time.perf_counter()
    try:
        artifacts = STAGE_FUNCS[stage](ctx, workers)
    except (MissingArtifactError, StageError):
        raise
    except OpevalError as err:
        raise StageError(f"{stage}: {type(err).__name__}: {err}") from err
    seconds = time.perf_counter() - t0
    dump_json(root / "stage.json", {"stage": stage, "key": key, "status": "complete",
                                    "upstream": {u: keys[u] for u in UPSTREAM[stage]},
                                    "artifacts": artifacts})
    return StageOutcome(stage, "ran", key, seconds, artifacts)


def write_manifest(ctx: RunContext, outcomes: list[StageOutcome], status: str,
                   error: Optional[str] = None) -> Path:
    cfg = ctx.config
    keys = stage_keys(cfg)
    done = {o.stage: o for o in outcomes}
    stages = {}
    for stage in STAGES:
        o = done.get(stage)
        if o is not None:
            stages[stage] = {"status": o.status, "key": o.key, "seconds": round(o.seconds, 3),
                             "artifacts": o.artifacts, "error": o.error}
            continue
        rec = read_stage_record(ctx, stage)
        if rec is not None and rec.get("key") == keys[stage]:
            stages[stage] = {"status": "present", "key": rec["key"], "seconds": None,
                             "artifacts": rec["artifacts"], "error": None}
        else:
            stages[stage] = {"status": "pending", "key": keys[stage], "seconds": None,
                             "artifacts": [], "error": None}
    if status == "complete" and any(s["status"] == "pending" for s in stages.values()):
        status = "partial"
    doc = {
        "status": status,
        "version": __version__,
        "config_hash": cfg.hash(),
        "seeds": {
            "master": cfg.seed,
            "env": cfg.env.seed if cfg.env.seed is not None else derive_seed(cfg.seed, _ENV),
            "streams": {"env": _ENV, "data": _DATA, "fit": _FIT, "ope": _OPE, "truth": _TRUTH},
        },
        "stages": stages,
        "error": error,
    }
    return dump_json(ctx.out / "manifest.json", doc)


def run_pipeline(config: ExperimentConfig, out, stages: Sequence[str] = STAGES,
                 workers: Optional[int] = None, force: bool = False) -> dict:
    """Run ``stages`` in order and return the manifest document.

    A failing stage leaves the completed stages on disk, writes a manifest
    with ``status = "failed"`` and re-raises.
    """
    ctx = RunContext(config, Path(out))
    ctx.out.mkdir(parents=True, exist_ok=True)
    (ctx.out / "config.json").write_text(config.to_json())
    workers = default_workers() if workers is None else max(1, int(workers))
    keys = stage_keys(config)
    outcomes: list[StageOutcome] = []
    for stage in STAGES:
        if stage not in stages:
            continue
        try:
            outcomes.append(run_stage(ctx, stage, workers, force, keys))
        except Exception as err:
            outcomes.append(StageOutcome(stage, "failed", keys[stage], 0.0, [], str(err)))
            write_manifest(ctx, outcomes, "failed", str(err))
            raise
    write_manifest(ctx, outcomes, "complete")
    return json.loads((ctx.out / "manifest.json").read_text())
