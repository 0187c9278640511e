"""Stochastic spikes in small-noise diffusions near an absorbing boundary.

Submodules
----------
model
    Diffusion models, coefficient presets, cycle boundaries and the Feller transform.
analytic
    Scale functions, hitting probabilities, Green kernels, exit-time moments
    and the h-transform, all by log-domain quadrature.
simulate
    Adaptive Euler-Maruyama sampling of paths, cycles, spike trains and
    hitting times with per-path counter-based random streams.
limits
    Scaling-limit quantities: kappa, alpha_xz, q(z) and the limit laws.
stats
    Tests of samples against the limit laws.
config, cli
    Experiment configuration and the ``spikesim`` command.
"""

__version__ = "0.1.0"

from .errors import DomainError, QuadratureError, RejectionBudgetExceeded, StepBudgetExceeded
from .model import CycleBoundaries, DiffusionModel, Family, TaylorBounds, validate_model
from .simulate import Scheme, SimConfig

__all__ = [
    "__version__",
    "CycleBoundaries",
    "DiffusionModel",
    "DomainError",
    "Family",
    "QuadratureError",
    "RejectionBudgetExceeded",
    "Scheme",
    "SimConfig",
    "StepBudgetExceeded",
    "TaylorBounds",
    "validate_model",
]
