"""Numerical toolkit for Kac's walk on SO(n) and the experiments that check it."""

__version__ = "0.1.0"

from .block import BlockAnalysis, Scales, UpdateBlock, analyze_block  # noqa: E402
from .chain import ChainState, Update, haar_sample, run, run_many, synchronous_couple  # noqa: E402
from .errors import DomainError, RegimeError  # noqa: E402
from .lie import geodesic_distance, mat_exp, principal_log, riem_dist  # noqa: E402
from .rng import make_rng  # noqa: E402
from .stats import TestReport, projection_tv  # noqa: E402

__all__ = [
    "BlockAnalysis", "ChainState", "DomainError", "RegimeError", "Scales", "TestReport",
    "Update", "UpdateBlock", "analyze_block", "geodesic_distance", "haar_sample",
    "make_rng", "mat_exp", "principal_log", "projection_tv", "riem_dist", "run",
    "run_many", "synchronous_couple",
]
