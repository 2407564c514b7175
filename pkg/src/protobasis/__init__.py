"""Prototype-basis selection and simplex-constrained mixture fitting.

Pick K representative curves from a large dictionary of model curves, fit
noisy observations as scaled convex combinations of those prototypes, and
estimate physical parameters as the matching weighted averages.
"""

from .errors import ConvergenceError, ProtobasisError, ValidationError
from .model import Dictionary, MixtureFit, Observation, PrototypeBasis

__version__ = "0.1.0"

__all__ = [
    "ConvergenceError",
    "Dictionary",
    "MixtureFit",
    "Observation",
    "PrototypeBasis",
    "ProtobasisError",
    "ValidationError",
    "__version__",
]
