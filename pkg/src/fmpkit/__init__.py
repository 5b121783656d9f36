"""Fractional matrix programming toolkit: surrogate-based MM for ratio objectives."""
from .fbl_metrics import NetworkState, SystemParams
from .fmp_core import FeasibleSet, FmpProblem, FractionalTerm, PlainTerm, run_mm
from .problems import KINDS, make_problem, solve_kind

__all__ = [
    "FeasibleSet", "FmpProblem", "FractionalTerm", "KINDS", "NetworkState", "PlainTerm",
    "SystemParams", "make_problem", "run_mm", "solve_kind",
]
