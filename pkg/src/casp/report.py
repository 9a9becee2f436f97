"""Deterministic CSV, summary and manifest writers."""

from __future__ import annotations

import csv
import hashlib
import json
import math
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError

SWEEP_METRICS = ("value", "burden", "stability")


def fmt(v) -> str:
    """Shortest round-trip text for numbers; plain ``str`` otherwise."""
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return "nan"
        return repr(v)
    return "" if v is None else str(v)


def write_csv(path, header: Sequence[str], rows: Iterable) -> Path:
    """Write ``rows`` (dicts keyed by ``header`` or sequences) with a fixed header."""
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            if isinstance(r, dict):
                r = [r.get(h) for h in header]
            w.writerow([fmt(v) for v in r])
    return path


def read_csv(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def write_manifest(out_dir, command: str, config: dict, files: Sequence[str]) -> Path:
    from . import __version__

    doc = {
        "command": command,
        "version": __version__,
        "config": config,
        "config_hash": config_hash(config),
        "files": sorted(files),
    }
    path = Path(out_dir) / "manifest.json"
    path.write_text(json.dumps(doc, indent=1, sort_keys=True, default=str) + "\n", encoding="utf-8")
    return path


def prepare_out_dir(path, force: bool = False) -> Path:
    """Create ``path``; refuse to reuse a nonempty directory unless ``force``."""
    path = Path(path)
    if path.exists() and any(path.iterdir()) and not force:
        raise ConfigError(f"output directory {path} is not empty (use --force to overwrite)")
    path.mkdir(parents=True, exist_ok=True)
    return path


def sweep_header(methods: Sequence[str], first: str = "sweep_value") -> list[str]:
    return [first] + [f"{m}_{k}" for m in methods for k in SWEEP_METRICS]
