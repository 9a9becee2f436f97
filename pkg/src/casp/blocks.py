"""Simulation harness: sweep points x replications x selectors.

Each replication draws ``n`` logged records, fits the library's reward table
on the first half and runs every selector on the second half with a
cross-fitted nuisance bundle. Results are judged with the environment's true
values and burdens.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np

from . import rng as rngmod
from .core import BURDEN_MODES, burden, policy_value
from .errors import ConfigError
from .estimate import estimate_policies, rescore_burden
from .nuisance import fit_reward_table, make_bundle
from .report import sweep_header, write_csv, write_manifest
from .select import (
    DEFAULT_LAMBDA_GRID,
    build_library,
    generator_library,
    lambda_sweep,
    mode_summary,
    select_baselines,
    select_casp,
)
from .simulate import BLOCK_LABELS, BlockConfig, build_block_env, sample_log

METHODS = ("casp", "dr_only", "dr_lcb", "plugin", "stagewise", "ma_style", "wang_style", "oracle")
# Learners that use the coupled (two-stage) structure when scoring policies.
COUPLED = ("casp", "dr_only", "dr_lcb", "ma_style", "wang_style")


@dataclass(frozen=True)
class RunSettings:
    reps: int = 24
    lam: float = 0.05
    beta: float = 0.5
    burden_mode: str = "normalized_full"
    folds: int = 5
    smoothing: float = 1.0
    floor: float = 0.0
    ablation: bool = True
    workers: int = 1

    def __post_init__(self):
        if self.reps < 1:
            raise ConfigError("reps must be >= 1")
        if self.lam < 0 or self.beta < 0:
            raise ConfigError("lambda and beta must be >= 0")
        if self.burden_mode not in BURDEN_MODES:
            raise ConfigError(f"unknown burden mode {self.burden_mode!r}")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")


def replication_inputs(cfg: BlockConfig, point: int, rep: int, settings: RunSettings):
    """Environment, selection half, library, nuisance bundle and estimates for one replication."""
    env = build_block_env(cfg)
    data = sample_log(env, max(cfg.n, 2 * settings.folds), rng=rngmod.stream(cfg.seed, rngmod.PURPOSE_SAMPLE, point, rep))
    half = data.n // 2
    train, sel = data.subset(np.arange(half)), data.subset(np.arange(half, data.n))
    qtab = fit_reward_table(train, settings.smoothing, "triple")
    if cfg.block == "counterexample":
        library = generator_library(env.feasible, qtab, env.behavior)
    else:
        library = build_library(env.feasible, qtab, env.behavior, reward_bound=env.reward_bound)
    bundle = make_bundle(
        sel, env.behavior, folds=settings.folds, smoothing=settings.smoothing,
        seed=int(rngmod.stream(cfg.seed, rngmod.PURPOSE_FOLDS, point, rep).integers(2**62)),
        floor=settings.floor,
    )
    ests = estimate_policies(sel, library, bundle, settings.burden_mode)
    return env, sel, library, bundle, ests


def run_replication(cfg: BlockConfig, point: int, rep: int, settings: RunSettings) -> list[dict]:
    """All selectors on one fresh dataset; one row per method."""
    env, sel, library, bundle, ests = replication_inputs(cfg, point, rep, settings)
    values = {pi.id: policy_value(env, pi) for pi in library}
    burdens = {pi.id: burden(env, pi, floor=settings.floor)[1] for pi in library}
    best = max(values.values())
    params = {"beta": settings.beta, "lam": settings.lam, "proxy": env.proxy_score}

    picks = {}
    for m in METHODS:
        picks[m] = select_baselines(m, library, sel, bundle, params, ests, env=env,
                                    burden_mode=settings.burden_mode).selected
    if settings.ablation:
        for mode in BURDEN_MODES:
            e2 = ests if mode == settings.burden_mode else rescore_burden(ests, sel, library, bundle, mode)
            picks[f"casp_{mode}"] = select_casp(library, sel, bundle, settings.lam, mode, e2).selected
    return [
        {
            "point": point,
            "rep": rep,
            "method": m,
            "selected": pid,
            "value": values[pid],
            "regret": best - values[pid],
            "burden": burdens[pid],
        }
        for m, pid in picks.items()
    ]


def _job(args):
    return run_replication(*args)


@dataclass
class BlockResult:
    cfg: BlockConfig
    settings: RunSettings
    rows: list[dict]

    @property
    def label(self) -> str:
        return BLOCK_LABELS[self.cfg.block]

    def methods(self) -> list[str]:
        seen = []
        for r in self.rows:
            if r["method"] not in seen:
                seen.append(r["method"])
        return seen

    def cell(self, point: int, method: str) -> dict:
        """Mean value, regret and burden plus selection stability at one sweep point."""
        rs = [r for r in self.rows if r["point"] == point and r["method"] == method]
        _, freq, _ = mode_summary([r["selected"] for r in rs])
        return {
            "value": float(np.mean([r["value"] for r in rs])),
            "regret": float(np.mean([r["regret"] for r in rs])),
            "burden": float(np.mean([r["burden"] for r in rs])),
            "stability": freq,
        }

    def overall(self, method: str) -> dict:
        cells = [self.cell(p, method) for p in range(len(self.cfg.grid))]
        return {k: float(np.mean([c[k] for c in cells])) for k in ("value", "regret", "burden", "stability")}


def run_block(cfg: BlockConfig, settings: RunSettings = RunSettings()) -> BlockResult:
    jobs = [(cfg.at(v), p, r, settings) for p, v in enumerate(cfg.grid) for r in range(settings.reps)]
    if settings.workers > 1:
        with ProcessPoolExecutor(settings.workers) as ex:
            parts = list(ex.map(_job, jobs))
    else:
        parts = [_job(j) for j in jobs]
    return BlockResult(cfg, settings, [row for part in parts for row in part])


def write_block_reports(result: BlockResult, out_dir) -> list[str]:
    """Sweep, frontier, comparator, ablation and replication tables plus a text summary."""
    out = Path(out_dir)
    label = result.label
    main = [m for m in METHODS if m in result.methods()]
    files = []

    sweep_rows = []
    for p, v in enumerate(result.cfg.grid):
        row = {"sweep_value": v}
        for m in main:
            c = result.cell(p, m)
            for k in ("value", "burden", "stability"):
                row[f"{m}_{k}"] = c[k]
        sweep_rows.append(row)
    files.append(write_csv(out / f"sweep_{label}.csv", sweep_header(main), sweep_rows).name)

    front = {"block_label": label}
    for m in main:
        o = result.overall(m)
        for k in ("value", "burden", "stability"):
            front[f"{m}_{k}"] = o[k]
    files.append(write_csv(out / f"frontier_{label}.csv", sweep_header(main, "block_label"), [front]).name)

    comp = [{"method": m, **result.overall(m)} for m in main]
    files.append(write_csv(out / f"comparators_{label}.csv", ["method", "value", "regret", "burden", "stability"], comp).name)

    abl = [{"burden_mode": m[len("casp_"):], **result.overall(m)} for m in result.methods() if m.startswith("casp_")]
    if abl:
        files.append(write_csv(out / f"ablation_{label}.csv", ["burden_mode", "value", "regret", "burden", "stability"], abl).name)

    files.append(write_csv(
        out / f"replications_{label}.csv",
        ["point", "rep", "method", "selected", "value", "regret", "burden"],
        result.rows,
    ).name)

    lines = [f"block {result.cfg.block} ({label}), {len(result.cfg.grid)} sweep points x {result.settings.reps} reps",
             f"{'method':<12}{'value':>10}{'regret':>10}{'burden':>12}{'stability':>11}"]
    for c in comp:
        lines.append(f"{c['method']:<12}{c['value']:>10.4f}{c['regret']:>10.4f}{c['burden']:>12.4g}{c['stability']:>11.3f}")
    (out / "summary.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    files.append("summary.txt")

    config = {"block": _plain(asdict(result.cfg)), "settings": asdict(result.settings)}
    write_manifest(out, f"simulate {result.cfg.block}", config, files + ["manifest.json"])
    return files


def _plain(d: dict) -> dict:
    return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}


def block_config_from(block: str, overrides: dict | None = None) -> BlockConfig:
    overrides = dict(overrides or {})
    known = set(BlockConfig.__dataclass_fields__)
    bad = set(overrides) - known
    if bad:
        raise ConfigError(f"unknown block config keys: {sorted(bad)}")
    if "grid" in overrides:
        overrides["grid"] = tuple(overrides["grid"])
    return replace(BlockConfig(block=block), **overrides)


LAMBDA_PATH_HEADER = ["point", "lambda", "mode_policy", "mode_freq", "dr_value", "true_value", "regret", "burden",
                      "true_burden", "ess", "max_w"]


def block_lambda_path(cfg: BlockConfig, settings: RunSettings = RunSettings(), lambdas=DEFAULT_LAMBDA_GRID,
                      points=None) -> list[dict]:
    """CASP along a lambda grid on the same replications ``run_block`` would draw.

    One row per (sweep point, lambda): estimated and true value and burden of
    the pick, averaged over replications, plus the modal pick and its share.
    """
    points = range(len(cfg.grid)) if points is None else points
    out = []
    for p in points:
        point_cfg = cfg.at(cfg.grid[p])
        per = {lam: [] for lam in lambdas}
        for r in range(settings.reps):
            env, sel, library, bundle, ests = replication_inputs(point_cfg, p, r, settings)
            best = max(policy_value(env, pi) for pi in library)
            for row in lambda_sweep(library, sel, bundle, lambdas, settings.burden_mode, ests):
                pi = library[row["selected"]]
                row["true_value"] = policy_value(env, pi)
                row["regret"] = best - row["true_value"]
                row["true_burden"] = burden(env, pi, floor=settings.floor)[1]
                per[row["lambda"]].append(row)
        for lam, rows in per.items():
            mode, freq, _ = mode_summary([r["selected"] for r in rows])
            agg = {k: float(np.mean([r[k] for r in rows]))
                   for k in ("dr_value", "true_value", "regret", "burden", "true_burden", "ess", "max_w")}
            out.append({"point": p, "lambda": lam, "mode_policy": mode, "mode_freq": freq, **agg})
    return out
