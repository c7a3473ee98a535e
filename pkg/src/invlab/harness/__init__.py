"""Experiment orchestration: archives, cross-validation splits, sweeps and reports."""

from .archive import ArchiveError, audit_archive, read_archive, write_archive
from .splits import SplitPlan, check_plans, make_splits
from .sweep import SweepResult, cell_seed, read_results, run_sweep

__all__ = [
    "ArchiveError", "audit_archive", "read_archive", "write_archive",
    "SplitPlan", "check_plans", "make_splits",
    "SweepResult", "cell_seed", "read_results", "run_sweep",
]
