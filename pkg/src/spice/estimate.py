"""Evaluable causal-function estimates and the scores computed from them."""

import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import ConfigurationError, ExtrapolationWarning
from .scm import benchmark_id, true_causal_function


@dataclass(frozen=True)
class CausalEstimate:
    """An estimated causal function ``x -> E[Y | do(X := x)]``.

    ``func`` maps a 1-d array of treatment values to estimates.  ``x_hull``
    is the observed treatment range; evaluations outside it are allowed but
    flagged.
    """

    func: Callable
    treatment_kind: str = "continuous"
    x_hull: tuple = (-np.inf, np.inf)
    provenance: dict = field(default_factory=dict)
    scale: str = "raw"
    artifacts: dict = field(default_factory=dict, compare=False, repr=False)

    def evaluate(self, x, return_flags=False):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        values = np.asarray(self.func(x), dtype=float).reshape(x.shape)
        outside = (x < self.x_hull[0]) | (x > self.x_hull[1])
        if return_flags:
            return values, outside
        return values

    def __call__(self, x):
        scalar = np.ndim(x) == 0
        values = self.evaluate(x)
        return float(values[0]) if scalar else values

    def ace_binary(self):
        v = self.evaluate([0.0, 1.0])
        return float(v[1] - v[0])


def ace(est, data, h=1e-3):
    """Average causal effect of a fitted estimate.

    Binary treatments give ``theta(1) - theta(0)``; continuous ones the mean
    central difference ``(theta(x + h) - theta(x - h)) / 2h`` over the
    observed treatments of ``data`` (raw scale).  Evaluations outside the
    observed treatment range raise an `ExtrapolationWarning`.
    """
    if est.treatment_kind == "binary":
        levels = np.unique(data.x[:, 0])
        if not {0.0, 1.0} <= set(levels.tolist()):
            raise ConfigurationError("binary ACE needs both treatment levels in the data")
        return est.ace_binary()
    if not h > 0:
        raise ConfigurationError("step h must be positive")
    x = data.x[:, 0]
    up, out_up = est.evaluate(x + h, return_flags=True)
    down, out_down = est.evaluate(x - h, return_flags=True)
    if np.any(out_up | out_down):
        warnings.warn(f"{int(np.sum(out_up | out_down))} ACE evaluation points lie outside "
                      "the observed treatment range", ExtrapolationWarning, stacklevel=2)
    return float(np.mean((up - down) / (2.0 * h)))


def mse_eval(est, name, test_x):
    """Test error against a benchmark's true causal function.

    Continuous treatments: mean of ``(theta_hat(x_i) - theta(x_i))**2`` over
    the test treatments.  Binary: squared error of the ACE.
    """
    bid = benchmark_id(name)
    if est.treatment_kind == "binary" or bid == "B_binary":
        return (est.ace_binary() - 1.0) ** 2
    x = np.asarray(test_x, dtype=float).ravel()
    return float(np.mean((est.evaluate(x) - true_causal_function(bid, x)) ** 2))


def mse_against(est, reference, test_x):
    """Test error against another estimate (used when no ground truth exists)."""
    if est.treatment_kind == "binary":
        return (est.ace_binary() - reference.ace_binary()) ** 2
    x = np.asarray(test_x, dtype=float).ravel()
    return float(np.mean((est.evaluate(x) - reference.evaluate(x)) ** 2))
