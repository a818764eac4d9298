"""Temperature-scaled surprisal, calibration metrics, and reading-time
regressions over language-model logit archives."""

from . import analysis, calibration, cli, distrib, errors, lme, store

__all__ = ["analysis", "calibration", "cli", "distrib", "errors", "lme", "store"]
__version__ = "0.1.0"
