"""Closed-form estimators for the univariate linear Gaussian proxy model.

The model is

    U = N_U,  W = a_uw U + E,  X = a_ux U + N_X,  Y = a_xy X + a_uy U + N_Y

with independent mean-zero Gaussian noises.  The causal function is
``theta(x) = a_xy x``, so every estimator here returns a slope.
"""

import json
from dataclasses import asdict, dataclass

import numpy as np

from ._rng import stream
from .estimate import CausalEstimate
from .errors import (CollinearityError, ConfigurationError, InvalidMechanismError,
                     UnidentifiedError)

GUARD = 1e-8


@dataclass(frozen=True)
class LinearScmParams:
    a_uw: float = 1.0
    a_ux: float = 1.0
    a_uy: float = 1.0
    a_xy: float = 1.0
    var_nu: float = 1.0
    var_e: float = 1.0
    var_nx: float = 1.0
    var_ny: float = 1.0

    def __post_init__(self):
        for name in ("var_nu", "var_e", "var_nx", "var_ny"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                raise ConfigurationError(f"{name} must be a positive finite number, got {v!r}")
        for name in ("a_uw", "a_ux", "a_uy", "a_xy"):
            if not np.isfinite(getattr(self, name)):
                raise ConfigurationError(f"{name} must be finite")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigurationError(f"unknown parameter(s): {sorted(unknown)}")
        return cls(**{k: float(v) for k, v in data.items()})

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


@dataclass(frozen=True)
class SecondMoments:
    """Covariances among (W, X, Y) and, when known, the confounder U."""

    s_xx: float
    s_ww: float
    s_wx: float
    s_wy: float
    s_xy: float
    s_uu: float = None
    s_ux: float = None
    s_uy: float = None

    def __post_init__(self):
        tol = 1e-12 * max(1.0, abs(self.s_xx), abs(self.s_ww))
        if self.s_xx < 0 or self.s_ww < 0 or self.s_xx * self.s_ww - self.s_wx ** 2 < -tol:
            raise ConfigurationError("(W, X) covariance block is not positive semidefinite")
        if self.s_uu is not None and (
                self.s_uu < 0 or self.s_xx * self.s_uu - self.s_ux ** 2 < -tol):
            raise ConfigurationError("(U, X) covariance block is not positive semidefinite")

    @property
    def has_u(self):
        return self.s_uu is not None

    def to_dict(self):
        return {k: v for k, v in asdict(self).items() if v is not None}


def population_covariance(params):
    """Exact second moments implied by ``params``."""
    p = params
    s_uu = p.var_nu
    s_ux = p.a_ux * s_uu
    s_uy = (p.a_xy * p.a_ux + p.a_uy) * s_uu
    s_xx = p.a_ux ** 2 * s_uu + p.var_nx
    return SecondMoments(
        s_xx=s_xx,
        s_ww=p.a_uw ** 2 * s_uu + p.var_e,
        s_wx=p.a_uw * s_ux,
        s_wy=p.a_uw * s_uy,
        s_xy=p.a_xy * s_xx + p.a_uy * s_ux,
        s_uu=s_uu, s_ux=s_ux, s_uy=s_uy)


def simulate(params, n, seed=0):
    """Draw ``n`` rows of ``(u, w, x, y)`` as a dict of 1-d arrays."""
    if n < 2:
        raise ConfigurationError("need at least two draws")
    rng = stream(seed, "linear_gaussian")
    g = rng.standard_normal((n, 4))
    p = params
    u = np.sqrt(p.var_nu) * g[:, 0]
    w = p.a_uw * u + np.sqrt(p.var_e) * g[:, 1]
    x = p.a_ux * u + np.sqrt(p.var_nx) * g[:, 2]
    y = p.a_xy * x + p.a_uy * u + np.sqrt(p.var_ny) * g[:, 3]
    return {"u": u, "w": w, "x": x, "y": y}


def empirical_moments(w, x, y, u=None):
    """Sample covariances with the ``n - 1`` convention."""
    cols = [np.ravel(w), np.ravel(x), np.ravel(y)]
    if u is not None:
        cols.append(np.ravel(u))
    c = np.cov(np.vstack(cols), ddof=1)
    extra = {} if u is None else {"s_uu": c[3, 3], "s_ux": c[3, 1], "s_uy": c[3, 2]}
    return SecondMoments(s_xx=c[1, 1], s_ww=c[0, 0], s_wx=c[0, 1], s_wy=c[0, 2],
                         s_xy=c[1, 2], **{k: float(v) for k, v in extra.items()})


def _two_regressor_slope(s_xx, s_zz, s_zx, s_xy, s_zy):
    den = s_xx * s_zz - s_zx ** 2
    if den <= GUARD * s_xx * s_zz:
        raise CollinearityError("treatment and adjustment variable are collinear")
    return (s_xy * s_zz - s_zy * s_zx) / den


def ols_coeff_adjust_u(moments):
    """Coefficient of X when regressing Y on X and U."""
    if not moments.has_u:
        raise ConfigurationError("moments do not include the confounder")
    m = moments
    return _two_regressor_slope(m.s_xx, m.s_uu, m.s_ux, m.s_xy, m.s_uy)


def ols_coeff_adjust_w(moments):
    """Coefficient of X when regressing Y on X and the proxy W."""
    m = moments
    return _two_regressor_slope(m.s_xx, m.s_ww, m.s_wx, m.s_xy, m.s_wy)


def bias_term(params):
    """Confounding bias left after adjusting for the proxy instead of U."""
    p = params
    den = p.a_ux ** 2 + p.a_uw ** 2 * p.var_nx / p.var_e + p.var_nx / p.var_nu
    return p.a_ux * p.a_uy / den


def corrected_estimator(moments, var_e):
    """Slope recovered from proxy moments when the error variance is known.

    Replaces ``s_ww`` by ``s_ww - var_e``, the variance of the noiseless
    part of the proxy, in the two-regressor OLS formula.
    """
    if not (np.isfinite(var_e) and var_e >= 0):
        raise ConfigurationError("error variance must be non-negative")
    m = moments
    s_signal = m.s_ww - var_e
    if s_signal <= 0:
        raise InvalidMechanismError(
            f"proxy variance {m.s_ww:.6g} does not exceed the error variance {var_e:.6g}")
    den = m.s_xx - m.s_wx ** 2 / s_signal
    if den < GUARD * m.s_xx:
        raise UnidentifiedError("corrected denominator is not positive at tolerance")
    return (m.s_xy - m.s_wy * m.s_wx / s_signal) / den


def report(params, var_e=None, n=None, seed=0):
    """All three slopes plus the bias decomposition, as a plain dict."""
    var_e = params.var_e if var_e is None else var_e
    if n is None:
        moments = population_covariance(params)
        source = "population"
    else:
        draws = simulate(params, n, seed)
        moments = empirical_moments(draws["w"], draws["x"], draws["y"], draws["u"])
        source = f"monte_carlo(n={n}, seed={seed})"
    adj_u = ols_coeff_adjust_u(moments)
    adj_w = ols_coeff_adjust_w(moments)
    return {
        "moments": source,
        "adjust_u": adj_u,
        "adjust_w": adj_w,
        "corrected": corrected_estimator(moments, var_e),
        "bias": {"formula": bias_term(params), "adjust_w_minus_adjust_u": adj_w - adj_u},
        "truth": params.a_xy,
    }


def corrected_estimate(data, var_e):
    """Linear causal function ``theta(x) = beta (x - mean x) + mean y`` from a data set.

    ``beta`` is `corrected_estimator` on the sample moments of a univariate
    proxy, treatment and outcome.  ``var_e`` is the error variance on the
    raw scale of ``w``.
    """
    if data.d != 1 or data.p != 1:
        raise ConfigurationError("the corrected estimator needs a univariate proxy and treatment")
    if data.treatment_kind != "continuous":
        raise ConfigurationError("the corrected estimator needs a continuous treatment")
    w, x, y = data.w[:, 0], data.x[:, 0], data.y
    beta = corrected_estimator(empirical_moments(w, x, y), var_e)
    x_bar, y_bar = float(x.mean()), float(y.mean())
    return CausalEstimate(lambda v: beta * (np.asarray(v, dtype=float) - x_bar) + y_bar,
                          "continuous", (float(x.min()), float(x.max())),
                          {"method": "linear_gaussian_corrected", "slope": beta,
                           "error_variance": var_e})
