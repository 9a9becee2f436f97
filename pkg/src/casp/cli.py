"""Command-line harness: ``casp simulate|app|sweep-lambda|theory-check|report``.

Settings come from defaults, then an optional JSON ``--config`` file, then
command-line flags. Every run writes into its own directory under ``--out``
(default ``$CASP_OUT`` or ``./casp-runs``) and refuses to reuse a nonempty
directory without ``--force``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 failed check.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import asdict, fields
from pathlib import Path

from . import __version__
from .blocks import LAMBDA_PATH_HEADER, RunSettings, block_config_from, block_lambda_path, run_block, write_block_reports
from .core import BURDEN_MODES
from .errors import ConfigError, DataError
from .report import prepare_out_dir, write_csv, write_manifest
from .select import DEFAULT_LAMBDA_GRID
from .simulate import BLOCK_LABELS, BLOCKS

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_CHECK = 0, 2, 3, 4
OUT_ENV = "CASP_OUT"
DEFAULT_ROOT = "casp-runs"

_RUN_KEYS = {f.name for f in fields(RunSettings)}


class _Parser(argparse.ArgumentParser):
    """Argument errors exit with the configuration code instead of argparse's default."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _block_name(text: str) -> str:
    labels = {v.lower(): k for k, v in BLOCK_LABELS.items()}
    name = labels.get(text.lower(), text)
    if name not in BLOCKS:
        raise argparse.ArgumentTypeError(f"unknown block {text!r}; choose from {', '.join(BLOCKS)} or B1-B5")
    return name


def _lambdas(text: str) -> tuple:
    try:
        return tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad lambda grid {text!r}") from exc


def _common(p: argparse.ArgumentParser, lam: bool = True) -> None:
    p.add_argument("--out", help=f"output directory (default ${OUT_ENV}/<run> or ./{DEFAULT_ROOT}/<run>)")
    p.add_argument("--force", action="store_true", help="write into a nonempty output directory")
    p.add_argument("--config", help="JSON file of settings; command-line flags take precedence")
    p.add_argument("--seed", type=int)
    p.add_argument("--reps", type=int)
    p.add_argument("--burden-mode", choices=BURDEN_MODES)
    p.add_argument("--floor", type=float)
    if lam:
        p.add_argument("--lambda", dest="lam", type=float, help="CASP penalty weight (default 0.05)")
        p.add_argument("--beta", type=float, help="DR-LCB width multiplier (default 0.5)")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="casp", description="Offline selection of two-stage recommender policies.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", help="run one simulation block and write its tables")
    p.add_argument("block", type=_block_name, help="block name or label B1-B5")
    _common(p)
    p.add_argument("--workers", type=int, help="replications run in this many processes")
    p.add_argument("--no-ablation", action="store_true", help="skip the burden-mode ablation rows")

    p = sub.add_parser("app", help="run the MovieLens 1M application")
    p.add_argument("path", nargs="?", help="directory holding ratings.dat, movies.dat and users.dat")
    _common(p)
    p.add_argument("--l", dest="L", type=int, help="slots per generator set (default 30)")
    p.add_argument("--threshold", type=int, help="ratings at or above this are positive (default 4)")
    p.add_argument("--max-contexts", type=int)
    p.add_argument("--lambdas", type=_lambdas, help="comma-separated lambda grid")

    p = sub.add_parser("sweep-lambda", help="CASP along a lambda grid on a simulation block")
    p.add_argument("block", nargs="?", default="coupling", type=_block_name)
    _common(p, lam=False)
    p.add_argument("--lambdas", type=_lambdas, help="comma-separated lambda grid")
    p.add_argument("--point", type=int, action="append", help="sweep point index (repeatable; default all)")

    p = sub.add_parser("theory-check", help="run the property suites and print a pass/fail table")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--only", action="append", help="run only this check (repeatable)")
    p.add_argument("--quick", action="store_true", help="smaller Monte Carlo sizes")
    p.add_argument("--mutate-burden", type=float, default=1.0, metavar="SCALE",
                   help="multiply estimated burdens by SCALE (harness self-test)")
    p.add_argument("--out", help="also write the table as CSV into this directory")
    p.add_argument("--force", action="store_true")

    p = sub.add_parser("report", help="print the summary of a finished run and verify its manifest")
    p.add_argument("run_dir")
    return ap


def _load_config(path) -> dict:
    if path is None:
        return {}
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError("config file must hold a JSON object")
    return doc


def _merge(args, keys: dict) -> dict:
    """File settings overridden by every flag that was given on the command line."""
    merged = _load_config(args.config)
    for flag, key in keys.items():
        v = getattr(args, flag, None)
        if v is not None:
            merged[key] = v
    return merged


def _out_dir(args, name: str) -> Path:
    if args.out:
        path = Path(args.out)
    else:
        path = Path(os.environ.get(OUT_ENV, DEFAULT_ROOT)) / name
    return prepare_out_dir(path, args.force)


def _split(merged: dict, allowed_block: set) -> tuple[dict, dict]:
    run = {k: v for k, v in merged.items() if k in _RUN_KEYS}
    rest = {k: v for k, v in merged.items() if k not in _RUN_KEYS}
    bad = set(rest) - allowed_block
    if bad:
        raise ConfigError(f"unknown config keys: {sorted(bad)}")
    return run, rest


_SIM_FLAGS = {"seed": "seed", "reps": "reps", "burden_mode": "burden_mode", "floor": "floor", "lam": "lam",
              "beta": "beta", "workers": "workers"}


def _block_setup(args, extra=()):
    from .simulate import BlockConfig

    merged = _merge(args, _SIM_FLAGS)
    if getattr(args, "no_ablation", False):
        merged["ablation"] = False
    extra_vals = {k: merged.pop(k) for k in extra if k in merged}
    run, block = _split(merged, set(BlockConfig.__dataclass_fields__) - {"block"})
    return block_config_from(args.block, block), RunSettings(**run), extra_vals


def cmd_simulate(args) -> int:
    cfg, settings, _ = _block_setup(args)
    out = _out_dir(args, f"simulate_{BLOCK_LABELS[cfg.block]}")
    result = run_block(cfg, settings)
    write_block_reports(result, out)
    print((out / "summary.txt").read_text(encoding="utf-8"), end="")
    print(f"wrote {out}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg, settings, extra = _block_setup(args, extra=("lambdas", "points"))
    lambdas = tuple(args.lambdas or extra.get("lambdas", DEFAULT_LAMBDA_GRID))
    if not lambdas or min(lambdas) < 0:
        raise ConfigError("lambda grid must be nonempty and nonnegative")
    points = args.point or extra.get("points")
    if points is not None and any(not 0 <= p < len(cfg.grid) for p in points):
        raise ConfigError(f"sweep point index out of range 0..{len(cfg.grid) - 1}")
    out = _out_dir(args, f"sweep_lambda_{BLOCK_LABELS[cfg.block]}")
    rows = block_lambda_path(cfg, settings, lambdas, points)
    name = f"lambda_path_{BLOCK_LABELS[cfg.block]}.csv"
    write_csv(out / name, LAMBDA_PATH_HEADER, rows)
    config = {"block": {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(cfg).items()},
              "settings": asdict(settings), "lambdas": list(lambdas), "points": points}
    write_manifest(out, f"sweep-lambda {cfg.block}", config, [name, "manifest.json"])
    for r in rows:
        print(f"point {r['point']}  lambda {r['lambda']:<5g} {r['mode_policy']:<20} value {r['true_value']:.4f}"
              f"  burden {r['true_burden']:.4g}")
    print(f"wrote {out / name}")
    return EXIT_OK


_APP_FLAGS = {"seed": "seed", "reps": "reps", "burden_mode": "burden_mode", "floor": "floor", "lam": "lam",
              "beta": "beta", "L": "L", "threshold": "threshold", "max_contexts": "max_contexts", "lambdas": "lambdas"}


def cmd_app(args) -> int:
    from .movielens.app import app_config_from, run_app, write_app_reports

    merged = _merge(args, _APP_FLAGS)
    path = args.path or merged.pop("path", None)
    merged.pop("path", None)
    if not path:
        raise ConfigError("the app command needs the ml-1m directory")
    if not Path(path).is_dir():
        raise ConfigError(f"dataset directory {path} does not exist")
    cfg = app_config_from(merged)
    out = _out_dir(args, "app")
    result = run_app(path, cfg)
    write_app_reports(result, out)
    print((out / "summary.txt").read_text(encoding="utf-8"), end="")
    print(f"wrote {out}")
    return EXIT_OK


def cmd_theory(args) -> int:
    from .theory import CHECKS, run_all

    unknown = set(args.only or ()) - set(CHECKS)
    if unknown:
        raise ConfigError(f"unknown checks {sorted(unknown)}; choose from {sorted(CHECKS)}")
    if not args.mutate_burden > 0:
        raise ConfigError("--mutate-burden must be positive")
    results = run_all(args.seed, args.only, args.mutate_burden, args.quick)
    header = ["check", "status", "statistic", "threshold", "seconds", "detail"]
    rows = [[r.name, "PASS" if r.passed else "FAIL", r.statistic, r.threshold, round(r.seconds, 3), r.detail]
            for r in results]
    print("\t".join(header))
    for r in rows:
        print("\t".join(f"{v:.6g}" if isinstance(v, float) else str(v) for v in r))
    if args.out:
        out = prepare_out_dir(args.out, args.force)
        write_csv(out / "theory_checks.csv", header, rows)
        write_manifest(out, "theory-check", {"seed": args.seed, "only": args.only, "quick": args.quick,
                                             "mutate_burden": args.mutate_burden},
                       ["theory_checks.csv", "manifest.json"])
    return EXIT_OK if all(r.passed for r in results) else EXIT_CHECK


def cmd_report(args) -> int:
    run = Path(args.run_dir)
    manifest = run / "manifest.json"
    if not manifest.is_file():
        raise DataError(f"{run} has no manifest.json")
    doc = json.loads(manifest.read_text(encoding="utf-8"))
    missing = [f for f in doc.get("files", []) if not (run / f).is_file()]
    print(f"command {doc.get('command')}  version {doc.get('version')}  config {doc.get('config_hash', '')[:12]}")
    summary = run / "summary.txt"
    if summary.is_file():
        print(summary.read_text(encoding="utf-8"), end="")
    for f in doc.get("files", []):
        print(f"  {f}{'  MISSING' if f in missing else ''}")
    if missing:
        raise DataError(f"{len(missing)} file(s) listed in the manifest are missing")
    return EXIT_OK


COMMANDS = {"simulate": cmd_simulate, "app": cmd_app, "sweep-lambda": cmd_sweep, "theory-check": cmd_theory,
            "report": cmd_report}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"casp: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"casp: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except TypeError as exc:
        # wrong value types from a config file surface here
        print(f"casp: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
