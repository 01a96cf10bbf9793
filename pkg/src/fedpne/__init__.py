"""Federated X-armed bandits with phased node elimination."""

from .harness import (ObjectiveConfig, RunSetup, RunTrace, aggregate_runs, communication_check,
                      cumulative_regret, estimate_fstar, run_experiment, run_grid_baseline)
from .partition import NodeId, PartitionSpec
from .privacy import DpConfig
from .protocol import ServerConfig

__version__ = "0.1.0"

__all__ = [
    "DpConfig", "NodeId", "ObjectiveConfig", "PartitionSpec", "RunSetup", "RunTrace",
    "ServerConfig", "aggregate_runs", "communication_check", "cumulative_regret",
    "estimate_fstar", "run_experiment", "run_grid_baseline",
]
