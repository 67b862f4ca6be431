"""Futures pricing, filtering and indifference hedging under a hidden-parameter OU model.

The log futures price follows an Ornstein-Uhlenbeck process whose level and
speed are unknown and carry a discrete prior. Submodules:

- ``model``: parameters, priors, states and payoffs
- ``simulate``: exact path simulation and gains accrual
- ``filtering``: closed-form posterior over the parameter atoms
- ``futures``: complete-market pricing of futures derivatives
- ``indifference``: exponential-utility indifference prices and hedges
- ``density``: joint law of (Y, int Y, int Y^2) by Laplace inversion
- ``cumulants``: cumulants of the log futures price
- ``cli``: command-line front end
"""

from .model import (
    AugmentedState,
    DomainError,
    ModelParams,
    PayoffSpec,
    Prior,
    ThetaAtom,
    evaluate_payoff,
    spot_from_futures,
)
from .simulate import PathGrid, RngConfig

__all__ = [
    "AugmentedState",
    "DomainError",
    "ModelParams",
    "PathGrid",
    "PayoffSpec",
    "Prior",
    "RngConfig",
    "ThetaAtom",
    "evaluate_payoff",
    "spot_from_futures",
]
__version__ = "0.1.0"
