"""Autotuning strategy tournaments on a constrained six-parameter GPU tuning space."""

from .objective import FinalScore, Measurement, ObjectiveSpec
from .space import Configuration, SearchSpace
from .strategies import ExperimentOutcome
from .tournament import StrategySpec, TournamentPlan

__all__ = ["Configuration", "SearchSpace", "ObjectiveSpec", "Measurement", "FinalScore",
           "ExperimentOutcome", "StrategySpec", "TournamentPlan"]
__version__ = "0.1.0"
