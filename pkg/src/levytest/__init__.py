"""Sequential hypothesis tests for Levy-driven queues observed at Poisson epochs."""

from .models import CompoundPoissonExp, GammaSubordinator, HypothesisPair, ModelError, model_from_dict

__all__ = ["CompoundPoissonExp", "GammaSubordinator", "HypothesisPair", "ModelError", "model_from_dict"]
__version__ = "0.1.0"
