"""Causal effect estimation with a single proxy for a hidden confounder.

The proxy ``W`` is a noisy measurement of the confounder ``U`` through a
known error mechanism.  The package provides benchmark simulators, a
two-step neural estimator (a noise-injected generator for ``U`` given
``(X, Y)`` followed by regression adjustment), closed-form discrete and
linear Gaussian estimators, and numerical checks of the conditions under
which the mechanism determines the effect.
"""

__version__ = "0.1.0"

from .errors import (ConfigurationError, DataError, ExtrapolationWarning, NumericError,
                     SpiceError)
from .estimate import CausalEstimate, ace, mse_eval
from .scm import (AdditiveMechanism, Dataset, NoiseDistribution, PcScmSpec, benchmark_spec,
                  destandardize, interventional_oracle, sample_dataset, standardize,
                  true_ace, true_causal_function)
from .spicenet import EstimateConfig, RegressionConfig, estimate

__all__ = [
    "AdditiveMechanism", "CausalEstimate", "ConfigurationError", "DataError", "Dataset",
    "EstimateConfig", "ExtrapolationWarning", "NoiseDistribution", "NumericError",
    "PcScmSpec", "RegressionConfig", "SpiceError", "ace", "benchmark_spec", "destandardize",
    "estimate", "interventional_oracle", "mse_eval", "sample_dataset", "standardize",
    "true_ace", "true_causal_function",
]
