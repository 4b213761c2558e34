"""
Configuration and report schemas for the poisoning lab.
"""

from .model import (
    AttackSettings,
    BayesCleanSettings,
    CellRecord,
    CellSummary,
    DefenseName,
    DefenseSettings,
    ExperimentConfig,
    ExperimentReport,
    ExplicitDomain,
    RecordStatus,
    TrainSettings,
    preset,
)

__all__ = [
    "AttackSettings",
    "BayesCleanSettings",
    "CellRecord",
    "CellSummary",
    "DefenseName",
    "DefenseSettings",
    "ExperimentConfig",
    "ExperimentReport",
    "ExplicitDomain",
    "RecordStatus",
    "TrainSettings",
    "preset",
]
