"""Distributed MPC for wind-farm power tracking."""
from .controller import CentralizedMPC, ConvergenceWarning, JacobiDMPC
from .plant import PlantParams, WakePlant, greedy_power, steady_state
from .topology import FarmLayout, build_layout, compute_delays, interaction_sets

__version__ = "0.1.0"

__all__ = [
    "CentralizedMPC",
    "ConvergenceWarning",
    "FarmLayout",
    "JacobiDMPC",
    "PlantParams",
    "WakePlant",
    "build_layout",
    "compute_delays",
    "greedy_power",
    "interaction_sets",
    "steady_state",
]
