"""Closed-loop scenarios: configuration, driver, logs and metrics."""

from .config import ConfigError, Scenario, load_gains, load_scenario, parse_gains, parse_scenario
from .logs import RunLog, log_columns, read_log, write_log
from .loop import ClosedLoop, RunResult, run_scenario
from .metrics import Metrics, compute_metrics, compute_rmse

__all__ = [
    "ClosedLoop",
    "ConfigError",
    "Metrics",
    "RunLog",
    "RunResult",
    "Scenario",
    "compute_metrics",
    "compute_rmse",
    "load_gains",
    "load_scenario",
    "log_columns",
    "parse_gains",
    "parse_scenario",
    "read_log",
    "run_scenario",
    "write_log",
]
