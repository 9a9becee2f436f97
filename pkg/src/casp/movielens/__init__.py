"""Reconstructed two-stage logging on top of MovieLens 1M rating histories."""

from .app import AppConfig, build_pool, run_app, write_app_reports
from .contexts import ContextStream, build_contexts, temporal_split
from .diagnostics import support_diagnostics
from .generators import GENERATOR_NAMES, GeneratorConfig, PrefixScanner, feasible_sets
from .ingest import MovieLensTables, ingest, read_movies, read_ratings, read_users
from .logger import ReconstructedLogger, ReconstructedPool, SupportPool, build_support_pool, reconstructed_log

__all__ = [
    "AppConfig",
    "ContextStream",
    "GENERATOR_NAMES",
    "GeneratorConfig",
    "MovieLensTables",
    "PrefixScanner",
    "ReconstructedLogger",
    "ReconstructedPool",
    "SupportPool",
    "build_contexts",
    "build_pool",
    "build_support_pool",
    "feasible_sets",
    "ingest",
    "read_movies",
    "read_ratings",
    "read_users",
    "reconstructed_log",
    "run_app",
    "support_diagnostics",
    "temporal_split",
    "write_app_reports",
]
