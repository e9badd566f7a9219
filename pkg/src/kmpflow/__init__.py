"""Simulation and verification workbench for the KMP energy process,
its kernel flow, and the associated scaling-limit reference statistics."""

__version__ = "0.1.0"

from .env import BondEvent, EnvParams, Environment
from .kmp import EnergyConfig, Trajectory
from .flow import DualConfig, KernelMatrix

__all__ = ["BondEvent", "EnvParams", "Environment", "__version__"]
