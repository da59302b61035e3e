"""Automated selection of adaptive additive forecasting models.

Subpackages: formula (the search genome), dsl (text and JSON forms),
features (engineering), basis (design/penalty blocks), fit (penalized
least squares), adapt (state-space adaptation), search (evolutionary
selection), data (datasets, synthesis, replay), presets (reference
models), cli (command line).
"""

from .formula import (
    AdaptiveModel,
    BasisSpec,
    Covariate,
    CovariateRegistry,
    Effect,
    FeatureEngineering,
    Formula,
    canonical_signature,
    validate,
)
from .dsl import deserialize, serialize

__all__ = [
    "AdaptiveModel", "BasisSpec", "Covariate", "CovariateRegistry",
    "Effect", "FeatureEngineering", "Formula", "canonical_signature",
    "validate", "serialize", "deserialize",
]

__version__ = "0.1.0"
