"""Configuration-driven experiment runner and summarizer.

A run evaluates one method over a seed list: per seed it builds (or
resumes) a pool, selects an ensemble on the validation split at each
requested severity, and reports all metrics on the test split at the
matching severity, one CSV row per (seed, method, M, severity).
"""

from __future__ import annotations

import csv
import os
import time
from dataclasses import dataclass, field

import numpy as np
import yaml

from . import metrics, search
from .selection import EnsembleSelection, forward_select
from .space import Architecture, MlpCellSpace
from .store import PredictionStore
from .synthetic import SyntheticModel, SyntheticSpec
from .toy import AnchoredConfig, CellSpaceSpec, TrainConfig, make_shifted_splits, make_toy_task

METHODS = ("nes-rs", "nes-re", "deepens-fixed", "deepens-rs", "deepens-best",
           "deepens+es", "anchored")

CSV_COLUMNS = ("seed", "method", "space", "K", "M", "severity", "nll", "error",
               "ece", "oracle_nll", "avg_bsl_nll", "pred_disagreement",
               "nets_trained", "wall_seconds")


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    method: str
    output_dir: str
    seeds: list
    K: int = 200
    ensemble_sizes: list = field(default_factory=lambda: [3])
    severities: list = field(default_factory=lambda: [0])
    P: int = 50
    m: int = 10
    severity_mix: str = "clean"
    esa_diversity_strength: float = 0.0
    n_workers: int = 1
    # benchmark source: either a synthetic model spec or a toy-trainer setup
    source: str = "synthetic"          # synthetic | store | toy
    store_path: str | None = None      # for source=store
    gen_seed: int = 0                  # for source=synthetic
    fixed_arch: str | None = None      # arch key for deepens-fixed/+es/anchored
    task_seed: int = 0                 # toy-trainer task
    trainer: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}")
        if not self.seeds:
            raise ConfigError("seeds must be nonempty")
        if self.source not in ("synthetic", "store", "toy"):
            raise ConfigError(f"unknown source {self.source!r}")
        if self.source == "store" and not self.store_path:
            raise ConfigError("source=store requires store_path")
        if self.method in ("deepens-fixed", "deepens+es", "anchored") \
                and not self.fixed_arch:
            raise ConfigError(f"method {self.method} requires fixed_arch")
        if max(self.ensemble_sizes) > self.K:
            raise ConfigError("ensemble sizes must not exceed K")
        bad = [s for s in self.severities if s not in range(6)]
        if bad:
            raise ConfigError(f"severities out of range: {bad}")

    @classmethod
    def from_file(cls, path: str) -> "ExperimentConfig":
        with open(path, "r", encoding="utf-8") as fh:
            raw = yaml.safe_load(fh)
        if not isinstance(raw, dict):
            raise ConfigError(f"{path} does not hold a mapping")
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            return cls(**raw)
        except TypeError as exc:
            raise ConfigError(str(exc))


def _build_environment(config: ExperimentConfig, run_seed: int):
    """Returns (space, evaluator, model-or-None, space_name)."""
    if config.source == "synthetic":
        model = SyntheticModel(SyntheticSpec(gen_seed=config.gen_seed))
        evaluator = search.TabularEvaluator(model=model)
        return model.space, evaluator, model, model.space.space_id
    if config.source == "store":
        store = PredictionStore.open(config.store_path)
        evaluator = search.TabularEvaluator(store=store)
        # only stored genomes can be looked up, so restrict the space
        space = search.StoreSpace(store)
        return space, evaluator, None, store.space_id
    # toy trainer
    t = dict(config.trainer)
    spec = CellSpaceSpec(
        num_intermediate_nodes=t.get("num_intermediate_nodes", 4),
        hidden_width=t.get("hidden_width", 16),
        macro_depth=t.get("macro_depth", 2),
    )
    train_ds, val_ds, test_ds = make_toy_task(
        config.task_seed,
        n_train=t.get("n_train", 2048), n_val=t.get("n_val", 512),
        n_test=t.get("n_test", 2048), num_classes=t.get("num_classes", 10),
        num_features=t.get("num_features", 16),
        class_sep=t.get("class_sep", 2.0),
    )
    eval_sets = make_shifted_splits(val_ds, test_ds, seed=config.task_seed)
    anchored = AnchoredConfig(t["anchored_strength"]) \
        if config.method == "anchored" or "anchored_strength" in t else None
    tc = TrainConfig(
        epochs=t.get("epochs", 30), batch_size=t.get("batch_size", 128),
        learning_rate=t.get("learning_rate", 0.05),
        momentum=t.get("momentum", 0.9), l2=t.get("l2", 1e-4),
        anchored=AnchoredConfig(t.get("anchored_strength", 0.4))
        if config.method == "anchored" else anchored,
    )
    space = MlpCellSpace(spec)
    store = None
    pool_dir = os.path.join(config.output_dir, f"pool_seed{run_seed}")
    store = PredictionStore.open_or_create(pool_dir, space.space_id)
    for (split, sev), ds in eval_sets.items():
        store.set_labels(split, sev, ds.labels)
    evaluator = search.ToyEvaluator(spec, train_ds, eval_sets, tc, store=store)
    return space, evaluator, None, space.space_id


def _build_pool(config: ExperimentConfig, space, evaluator, run_seed: int):
    """Run the configured method once; returns (result-per-severity fn, nets)."""
    mmax = max(config.ensemble_sizes)
    if config.method == "nes-rs":
        budget = search.SearchBudget(K=config.K, M=mmax, P=min(config.P, config.K),
                                     m=min(config.m, config.P), seed=run_seed)
        result = search.nes_rs(space, evaluator, budget,
                               n_workers=config.n_workers)
        return result.pool, config.K
    if config.method == "nes-re":
        budget = search.SearchBudget(K=config.K, M=mmax, P=min(config.P, config.K),
                                     m=min(config.m, config.P), seed=run_seed)
        result = search.nes_re(space, evaluator, budget,
                               severity_mix=config.severity_mix,
                               n_workers=config.n_workers)
        return result.pool, config.K
    if config.method == "deepens-rs":
        result = search.deep_ens_rs(space, evaluator, config.K, mmax,
                                    seed=run_seed, n_workers=config.n_workers)
        return result.pool, config.K + mmax
    if config.method in ("deepens-fixed", "anchored"):
        arch = Architecture.from_key(config.fixed_arch)
        result = search.deep_ens_fixed(arch, evaluator, mmax, seed=run_seed,
                                       n_workers=config.n_workers)
        return result.pool, mmax
    if config.method == "deepens+es":
        arch = Architecture.from_key(config.fixed_arch)
        result = search.deep_ens_plus_es(arch, evaluator, config.K, mmax,
                                         seed=run_seed,
                                         n_workers=config.n_workers)
        return result.pool, config.K
    if config.method == "deepens-best":
        if config.source == "synthetic":
            raise ConfigError("deepens-best requires a materialized store "
                              "(source=store)")
        store = PredictionStore.open(config.store_path)
        result = search.deep_ens_best_arch(store, mmax)
        return result.pool, mmax
    raise ConfigError(f"unhandled method {config.method}")


def _select(config: ExperimentConfig, pool, y_val, severity: int, M: int):
    if config.method in ("deepens-fixed", "deepens-best", "anchored"):
        # deep ensembles take all members, no selection step
        ids = sorted(pool)[:M]
        return EnsembleSelection(tuple(ids))
    preds = {i: m.preds[("val", severity)] for i, m in pool.items()}
    return forward_select(preds, y_val, M,
                          diversity_strength=config.esa_diversity_strength)


def run_experiment(config: ExperimentConfig) -> str:
    """Execute every (seed, severity, M) cell; returns the run directory."""
    os.makedirs(config.output_dir, exist_ok=True)
    with open(os.path.join(config.output_dir, "config.yaml"), "w") as fh:
        yaml.safe_dump({k: getattr(config, k)
                        for k in config.__dataclass_fields__}, fh)
    rows = []
    for run_seed in config.seeds:
        t0 = time.perf_counter()
        space, evaluator, _, space_name = _build_environment(config, run_seed)
        pool, nets_trained = _build_pool(config, space, evaluator, run_seed)
        build_seconds = time.perf_counter() - t0
        for severity in config.severities:
            y_val = evaluator.labels("val", severity)
            y_test = evaluator.labels("test", severity)
            for M in config.ensemble_sizes:
                t1 = time.perf_counter()
                selection = _select(config, pool, y_val, severity, M)
                # selection severity and evaluation severity must match
                members = [pool[i].preds[("test", severity)]
                           for i in selection.member_ids]
                report = metrics.evaluate_ensemble(members, y_test)
                wall = build_seconds + (time.perf_counter() - t1)
                rows.append({
                    "seed": run_seed, "method": config.method,
                    "space": space_name, "K": config.K, "M": M,
                    "severity": severity, "nll": report.nll,
                    "error": report.error, "ece": report.ece,
                    "oracle_nll": report.oracle_nll,
                    "avg_bsl_nll": report.avg_bsl_nll,
                    "pred_disagreement": report.pred_disagreement,
                    "nets_trained": nets_trained,
                    "wall_seconds": round(wall, 3),
                })
    out_csv = os.path.join(config.output_dir, "results.csv")
    with open(out_csv, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=CSV_COLUMNS)
        writer.writeheader()
        writer.writerows(rows)
    return config.output_dir


METRIC_COLUMNS = ("nll", "error", "ece", "oracle_nll", "avg_bsl_nll",
                  "pred_disagreement")


def load_rows(run_dirs) -> list:
    rows = []
    for d in run_dirs:
        path = os.path.join(d, "results.csv")
        if not os.path.exists(path):
            raise FileNotFoundError(f"no results.csv under {d}")
        with open(path, newline="") as fh:
            for rec in csv.DictReader(fh):
                rows.append(rec)
    return rows


def summarize(run_dirs, out_dir: str) -> str:
    """Mean and 95% CI (1.96 * stderr across seeds) per experiment cell."""
    rows = load_rows(run_dirs)
    if not rows:
        raise ValueError("no rows to summarize")
    groups = {}
    for rec in rows:
        key = (rec["method"], rec["space"], rec["K"], rec["M"], rec["severity"])
        groups.setdefault(key, []).append(rec)
    os.makedirs(out_dir, exist_ok=True)
    out_csv = os.path.join(out_dir, "summary.csv")
    header = ["method", "space", "K", "M", "severity", "num_seeds"]
    for m in METRIC_COLUMNS:
        header += [f"{m}_mean", f"{m}_ci95"]
    summary_rows = []
    for key in sorted(groups):
        cell = groups[key]
        out = dict(zip(("method", "space", "K", "M", "severity"), key))
        out["num_seeds"] = len(cell)
        for m in METRIC_COLUMNS:
            vals = np.array([float(r[m]) for r in cell])
            mean = float(vals.mean())
            ci = 0.0 if len(vals) < 2 else float(
                1.96 * vals.std(ddof=1) / np.sqrt(len(vals))
            )
            out[f"{m}_mean"] = mean
            out[f"{m}_ci95"] = ci
        summary_rows.append(out)
    with open(out_csv, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=header)
        writer.writeheader()
        writer.writerows(summary_rows)
    _emit_plot_series(summary_rows, out_dir)
    return out_csv


def _emit_plot_series(summary_rows, out_dir: str):
    """Plot-series CSVs plus SVG charts of NLL vs M and vs severity."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    for xcol, fname in (("M", "nll_vs_M"), ("severity", "nll_vs_severity")):
        series_path = os.path.join(out_dir, f"{fname}.csv")
        with open(series_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["method", xcol, "nll_mean", "nll_ci95"])
            for r in summary_rows:
                writer.writerow([r["method"], r[xcol], r["nll_mean"], r["nll_ci95"]])
        fig, ax = plt.subplots(figsize=(5, 3.5))
        by_method = {}
        for r in summary_rows:
            by_method.setdefault(r["method"], []).append(
                (int(r[xcol]), r["nll_mean"], r["nll_ci95"])
            )
        for method, pts in sorted(by_method.items()):
            pts.sort()
            xs = [p[0] for p in pts]
            ys = [p[1] for p in pts]
            es = [p[2] for p in pts]
            ax.errorbar(xs, ys, yerr=es, marker="o", capsize=3, label=method)
        ax.set_xlabel(xcol)
        ax.set_ylabel("test NLL")
        ax.legend(fontsize=8)
        fig.tight_layout()
        fig.savefig(os.path.join(out_dir, f"{fname}.svg"))
        plt.close(fig)
