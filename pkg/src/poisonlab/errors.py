"""
Exception hierarchy for the poisoning lab.

Every domain failure is a ``ValueError`` subclass so callers that only care
about "bad input" can keep catching ``ValueError``.
"""

from typing import Optional


class PoisonLabError(ValueError):
    """Base class for all errors raised by the engine."""


class DatasetError(PoisonLabError):
    """CSV ingestion, splitting or dataset shape problems."""


class ModelError(PoisonLabError):
    """Architecture/parameter shape problems or an under-determined estimate."""


class DivergenceError(PoisonLabError):
    """Training produced a non-finite parameter."""

    def __init__(self, iteration: int, message: Optional[str] = None):
        self.iteration = iteration
        super().__init__(message or f"non-finite parameters at SGD iteration {iteration}")


class HypergradientError(PoisonLabError):
    """The reverse pass produced a non-finite value."""

    def __init__(self, iteration: int, message: Optional[str] = None):
        self.iteration = iteration
        super().__init__(message or f"non-finite hypergradient at reverse iteration {iteration}")


class AttackError(PoisonLabError):
    """Attack planning or crafting failed."""


class DefenseError(PoisonLabError):
    """A defense received invalid settings or ran out of points."""


class BayesError(PoisonLabError):
    """Bayesian regression failure."""


class MetricError(PoisonLabError):
    """A metric is undefined for the given inputs."""
