"""Configured-grant uplink simulator and analytical toolkit for 5G NR and NR-U."""
from .cg_core import CgConfig, FeatureProfile, RvPattern
from .compare import Comparison, compare_with_oracle
from .engine import Simulation, run_replications, run_scenario
from .errors import ConfigurationError, ModelViolation, ProfileViolation, ScenarioError
from .gnb_model import BlerModel, LinkModel
from .metrics import CSV_COLUMNS, MetricsReport
from .oracle import (
    DedicatedCgSummary,
    SharedPoolConfig,
    composed_error,
    find_min_kplus,
    mean_alignment_delay,
    p_at_least_one_rep,
    p_common_nack_recovery,
    p_shared_collision,
    p_unknown_detection,
)
from .scenario import Scenario, load_scenario
from .time_grid import Numerology, TddPattern

__version__ = "0.1.0"

__all__ = [
    "CgConfig",
    "FeatureProfile",
    "RvPattern",
    "Comparison",
    "compare_with_oracle",
    "Simulation",
    "run_replications",
    "run_scenario",
    "ConfigurationError",
    "ModelViolation",
    "ProfileViolation",
    "ScenarioError",
    "BlerModel",
    "LinkModel",
    "CSV_COLUMNS",
    "MetricsReport",
    "DedicatedCgSummary",
    "SharedPoolConfig",
    "composed_error",
    "find_min_kplus",
    "mean_alignment_delay",
    "p_at_least_one_rep",
    "p_common_nack_recovery",
    "p_shared_collision",
    "p_unknown_detection",
    "Scenario",
    "load_scenario",
    "Numerology",
    "TddPattern",
]
