"""End-to-end MovieLens application: pool, temporal replications, selectors, reports."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from ..core import BURDEN_MODES, uniform_policy
from ..errors import ConfigError
from ..estimate import estimate_policies, estimate_policy, rescore_burden
from ..nuisance import NuisanceBundle, fit_reward_crossfit, fit_reward_table, propensity_source
from ..report import write_csv, write_manifest
from ..select import DEFAULT_LAMBDA_GRID, build_library, mode_summary, select_baselines, select_casp
from .contexts import build_contexts, even_subsample, temporal_split
from .diagnostics import pool_diagnostics, write_diagnostics
from .generators import GENERATOR_NAMES, GeneratorConfig
from .ingest import MovieLensTables, ingest
from .logger import ReconstructedLogger, build_support_pool, reconstructed_log

APP_METHODS = ("casp", "dr_only", "dr_lcb", "plugin", "stagewise", "ma_style", "wang_style")
REFERENCE_ROWS = ("behavior", "random")


@dataclass(frozen=True)
class AppConfig:
    L: int = 30
    warm_start: int = 20
    max_contexts: int = 25_000
    oversample: float = 1.25
    threshold: int = 4
    epsilon: float = 0.10
    tau: float = 1.0
    stage2_epsilon: float = 0.10
    stage2_tau: float = 1.0
    label_mode: str = "aligned"
    reps: int = 20
    train_fraction: float = 0.8
    jitter: float = 0.02
    max_eval: int | None = 5000
    lam: float = 0.05
    beta: float = 0.5
    lambdas: tuple = DEFAULT_LAMBDA_GRID
    burden_mode: str = "normalized_full"
    floor: float = 1e-9
    folds: int = 5
    smoothing: float = 1.0
    seed: int = 20240601
    snapshot_every: int = 500

    def __post_init__(self):
        object.__setattr__(self, "lambdas", tuple(float(v) for v in self.lambdas))
        if self.reps < 1:
            raise ConfigError("reps must be >= 1")
        if self.burden_mode not in BURDEN_MODES:
            raise ConfigError(f"unknown burden mode {self.burden_mode!r}")
        if self.floor <= 0:
            raise ConfigError("the application needs a positive denominator floor")
        if self.oversample < 1:
            raise ConfigError("oversample must be >= 1")
        if not self.lambdas or min(self.lambdas) < 0:
            raise ConfigError("lambda grid must be nonempty and nonnegative")

    def generator_config(self) -> GeneratorConfig:
        return GeneratorConfig(L=self.L, snapshot_every=self.snapshot_every, smoothing=self.smoothing)

    def logger(self) -> ReconstructedLogger:
        return ReconstructedLogger(self.epsilon, self.tau, self.stage2_epsilon, self.stage2_tau)


def build_pool(tables: MovieLensTables, cfg: AppConfig):
    """Contexts, support pool and one reconstructed log, thinned to ``max_contexts``."""
    stream = build_contexts(tables, cfg.warm_start, int(np.ceil(cfg.max_contexts * cfg.oversample)), cfg.threshold)
    pool = build_support_pool(tables, stream, cfg.generator_config())
    if len(pool) > cfg.max_contexts:
        pool = pool.take(even_subsample(len(pool), cfg.max_contexts))
    return reconstructed_log(pool, cfg.logger(), cfg.seed, cfg.label_mode)


@dataclass
class AppResult:
    cfg: AppConfig
    rows: list[dict] = field(default_factory=list)
    lambda_rows: list[dict] = field(default_factory=list)
    diagnostics: dict = field(default_factory=dict)
    positive_rate: float = float("nan")
    n_ratings: int = 0

    def _agg(self, rows, key: str):
        out = []
        for name in dict.fromkeys(r[key] for r in rows):
            rs = [r for r in rows if r[key] == name]
            mode, freq, uniq = mode_summary([r["selected"] for r in rs])
            row = {key: name, "mode_policy": mode, "mode_freq": freq, "unique_policies": uniq}
            for k in ("dr_value", "burden", "ess", "max_w", "off_support_mass"):
                row[k] = float(np.mean([r[k] for r in rs]))
            for j, gname in enumerate(GENERATOR_NAMES):
                row[f"share_{gname}"] = float(np.mean([r["share"][j] for r in rs]))
            out.append(row)
        return out

    def comparators(self):
        return self._agg([r for r in self.rows if not r["method"].startswith("casp_")], "method")

    def ablation(self):
        rows = [dict(r, method=r["method"][len("casp_"):]) for r in self.rows if r["method"].startswith("casp_")]
        return self._agg(rows, "method")

    def lambda_path(self):
        return self._agg(self.lambda_rows, "lambda")


def _row(method, rep, est):
    return {
        "method": method,
        "rep": rep,
        "selected": est.policy_id,
        "dr_value": est.v_dr,
        "burden": est.burden,
        "ess": est.ess,
        "max_w": est.max_weight,
        "off_support_mass": est.off_support_mass,
        "share": est.generator_share,
    }


def run_replication(rpool, cfg: AppConfig, rep: int):
    train_idx, eval_idx = temporal_split(rpool.data.timestamp, cfg.train_fraction, rep=rep, seed=cfg.seed,
                                         jitter=cfg.jitter)
    if cfg.max_eval is not None:
        eval_idx = eval_idx[: cfg.max_eval]
    train, ev = rpool.subset(train_idx), rpool.subset(eval_idx)
    data = ev.data
    q0 = fit_reward_table(data, cfg.smoothing, "item", train=np.zeros(data.n, dtype=bool), background=train.data)
    library = build_library(ev.feasible, q0, ev.behavior, reward_bound=1.0)
    reward = fit_reward_crossfit(data, cfg.folds, cfg.smoothing, seed=cfg.seed + rep, cells="item",
                                 background=train.data)
    bundle = NuisanceBundle(reward, propensity_source(data, "reconstructed", cfg.floor, behavior=ev.behavior))
    ests = estimate_policies(data, library, bundle, cfg.burden_mode)
    by_id = {e.policy_id: e for e in ests}
    rows, lam_rows = [], []
    params = {"beta": cfg.beta, "lam": cfg.lam}
    for m in APP_METHODS:
        pick = select_baselines(m, library, data, bundle, params, ests, burden_mode=cfg.burden_mode).selected
        rows.append(_row(m, rep, by_id[pick]))
    for mode in BURDEN_MODES:
        e2 = ests if mode == cfg.burden_mode else rescore_burden(ests, data, library, bundle, mode)
        pick = select_casp(library, data, bundle, cfg.lam, mode, e2).selected
        rows.append(_row(f"casp_{mode}", rep, by_id[pick]))
    rows.append(_row("behavior", rep, by_id["behavior"]))
    rows.append(_row("random", rep, estimate_policy(data, uniform_policy(ev.feasible, "random"), bundle,
                                                    cfg.burden_mode)))
    for lam in cfg.lambdas:
        pick = select_casp(library, data, bundle, lam, cfg.burden_mode, ests).selected
        lam_rows.append(dict(_row("casp", rep, by_id[pick]), **{"lambda": lam}))
    return rows, lam_rows


def run_app(path_or_tables, cfg: AppConfig = AppConfig()) -> AppResult:
    tables = path_or_tables if isinstance(path_or_tables, MovieLensTables) else ingest(path_or_tables)
    rpool = build_pool(tables, cfg)
    res = AppResult(cfg)
    res.n_ratings = len(tables.ratings)
    res.positive_rate = tables.ratings.positive_rate(cfg.threshold)
    res.diagnostics = pool_diagnostics(rpool)
    for rep in range(cfg.reps):
        rows, lam_rows = run_replication(rpool, cfg, rep)
        res.rows.extend(rows)
        res.lambda_rows.extend(lam_rows)
    res.pool = rpool
    return res


COMPARATOR_HEADER = ["comparator", "dr_value", "burden", "ess", "max_w", "off_support_mass", "mode_freq",
                     "unique_policies", "mode_policy"]


def write_app_reports(res: AppResult, out_dir) -> list[str]:
    out = Path(out_dir)
    files = []
    comp = [dict(r, comparator=r["method"]) for r in res.comparators()]
    files.append(write_csv(out / "app_comparators.csv", COMPARATOR_HEADER, comp).name)
    files.append(write_csv(out / "app_lambda_path.csv", ["lambda", "mode_policy", "dr_value", "burden", "ess", "max_w", "mode_freq"],
                           res.lambda_path()).name)
    abl = [dict(r, burden_mode=r["method"]) for r in res.ablation()]
    files.append(write_csv(out / "app_ablation.csv",
                           ["burden_mode", "dr_value", "burden", "ess", "max_w", "mode_freq", "unique_policies"], abl).name)
    by = {r["method"]: r for r in res.comparators()}
    delta = [{"generator": g, "dr_share": by["dr_only"][f"share_{g}"], "casp_share": by["casp"][f"share_{g}"]}
             for g in GENERATOR_NAMES]
    files.append(write_csv(out / "policy_delta_generator_shares.csv", ["generator", "dr_share", "casp_share"], delta).name)
    zero = [{"generator": g, "zero_support_share": res.diagnostics[f"zero_support_share_{g}"],
             "dr_selected_share": by["dr_only"][f"share_{g}"], "casp_selected_share": by["casp"][f"share_{g}"]}
            for g in GENERATOR_NAMES]
    files.append(write_csv(out / "app_support_violation.csv",
                           ["generator", "zero_support_share", "dr_selected_share", "casp_selected_share"], zero).name)
    diag = dict(res.diagnostics, ratings=res.n_ratings, raw_positive_rate=res.positive_rate)
    write_diagnostics(diag, out / "support_diagnostics.csv", out / "support_diagnostics.txt")
    files += ["support_diagnostics.csv", "support_diagnostics.txt"]
    res.pool.to_csv(out / "reconstructed_pool.csv")
    res.pool.support_map_csv(out / "support_map.csv")
    files += ["reconstructed_pool.csv", "support_map.csv"]

    lines = [f"ratings {res.n_ratings}, positive rate (rating >= {res.cfg.threshold}) {res.positive_rate:.4f}",
             f"pool contexts {res.diagnostics['contexts']}, replications {res.cfg.reps}",
             f"{'comparator':<22}{'DR value':>10}{'burden':>12}{'ESS':>10}{'max w':>10}{'mode freq':>11}"]
    for r in comp:
        lines.append(f"{r['comparator']:<22}{r['dr_value']:>10.4f}{r['burden']:>12.4g}{r['ess']:>10.1f}"
                     f"{r['max_w']:>10.2f}{r['mode_freq']:>11.2f}")
    (out / "summary.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    files.append("summary.txt")
    config = {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(res.cfg).items()}
    write_manifest(out, "app", config, files + ["manifest.json"])
    return files


def app_config_from(overrides: dict | None = None) -> AppConfig:
    overrides = dict(overrides or {})
    bad = set(overrides) - set(AppConfig.__dataclass_fields__)
    if bad:
        raise ConfigError(f"unknown app config keys: {sorted(bad)}")
    return replace(AppConfig(), **overrides)
