"""Sensitivity-informed repeated retraining for decision-dependent games."""

from perfgame.algorithms import AlgorithmConfig, RunTrace, run, run_baseline, run_sir2
from perfgame.game import GameSpec, JointDecision, PlayerSpec, SampleBatch
from perfgame.maps import DistributionMap, induce, sample
from perfgame.nash import NashProblem, solve_nash

__version__ = "0.1.0"

__all__ = [
    "AlgorithmConfig",
    "RunTrace",
    "run",
    "run_baseline",
    "run_sir2",
    "GameSpec",
    "JointDecision",
    "PlayerSpec",
    "SampleBatch",
    "DistributionMap",
    "induce",
    "sample",
    "NashProblem",
    "solve_nash",
]
