"""Self-correcting variable-metric methods for nonsmooth minimization."""

from .harness import Exit, FrameworkParams, Limits, RunRecord, check_termination, run
from .problems import NAMES, get_problem

__all__ = ["Exit", "FrameworkParams", "Limits", "NAMES", "RunRecord", "check_termination",
           "get_problem", "run"]
__version__ = "0.1.0"
