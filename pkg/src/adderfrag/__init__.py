"""Adder-model cell division: eigenproblem, transport and verification tools."""
from ._backend import NAME as BACKEND
from .errors import ConfigError, ConvergenceError, DomainError, HypothesisError
from .grid import Grid1D, GridFunction
from .model import (
    DivisionRate,
    FragmentationKernel,
    SurvivorPair,
    b_theta,
    check_hypotheses,
    phi,
    survivor,
)
from .operator import TransitionOperator, apply, weighted_gain

__version__ = "0.1.0"
