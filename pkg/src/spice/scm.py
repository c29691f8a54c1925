"""Proximal-confounded structural causal models and their benchmark instances.

A model has the fixed shape U -> (W, X), (U, X) -> Y with mutually
independent noise terms.  Every noise term is drawn from its own named
random stream, so changing one term never perturbs another.
"""

import json
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from ._rng import stream
from .errors import ConfigurationError, DegenerateDataError, InvalidMechanismError

BENCHMARK_IDS = ("A_gaussian", "B_binary", "C_exponential", "D_highdim")

_ALIASES = {"A": "A_gaussian", "B": "B_binary", "C": "C_exponential", "D": "D_highdim"}

D_LOADINGS = np.array([[1.0, 1.0], [0.0, 1.0], [1.0, 0.0]])
D_OUTCOME_LOADINGS = np.array([1.0, 1.0])
D_NOISE_COV = np.array([[2.0, -0.3, 0.5], [-0.3, 1.5, 0.4], [0.5, 0.4, 1.8]])


@dataclass(frozen=True)
class NoiseDistribution:
    """A noise law: ``gaussian``, ``exponential`` or ``multivariate_gaussian``.

    Exponential draws use the inverse CDF ``-log(1 - v) / rate``.
    """

    family: str
    loc: float = 0.0
    scale: float = 1.0
    rate: float = 1.0
    mean: Optional[tuple] = None
    cov: Optional[tuple] = None

    def __post_init__(self):
        if self.family == "gaussian":
            if not (math.isfinite(self.scale) and self.scale > 0):
                raise ConfigurationError(f"gaussian scale must be > 0, got {self.scale}")
        elif self.family == "exponential":
            if not (math.isfinite(self.rate) and self.rate > 0):
                raise ConfigurationError(f"exponential rate must be > 0, got {self.rate}")
        elif self.family == "multivariate_gaussian":
            cov = np.asarray(self.cov, dtype=float)
            mean = np.zeros(len(cov)) if self.mean is None else np.asarray(self.mean, float)
            if cov.ndim != 2 or cov.shape[0] != cov.shape[1] or mean.shape != (len(cov),):
                raise ConfigurationError("mean/covariance shapes do not agree")
            if not np.allclose(cov, cov.T, atol=1e-12):
                raise ConfigurationError("covariance must be symmetric")
            try:
                np.linalg.cholesky(cov)
            except np.linalg.LinAlgError:
                raise ConfigurationError("covariance must be positive definite") from None
            object.__setattr__(self, "cov", tuple(map(tuple, cov.tolist())))
            object.__setattr__(self, "mean", tuple(mean.tolist()))
        else:
            raise ConfigurationError(f"unknown noise family {self.family!r}")

    @classmethod
    def gaussian(cls, loc=0.0, scale=1.0):
        return cls("gaussian", loc=float(loc), scale=float(scale))

    @classmethod
    def exponential(cls, rate=1.0):
        return cls("exponential", rate=float(rate))

    @classmethod
    def multivariate_gaussian(cls, mean, cov):
        return cls("multivariate_gaussian", mean=tuple(np.ravel(mean).tolist()),
                   cov=tuple(map(tuple, np.asarray(cov, float).tolist())))

    @property
    def dimension(self):
        return len(self.cov) if self.family == "multivariate_gaussian" else 1

    @property
    def variance(self):
        """Marginal variances, one per coordinate."""
        if self.family == "gaussian":
            return np.array([self.scale ** 2])
        if self.family == "exponential":
            return np.array([1.0 / self.rate ** 2])
        return np.diag(np.asarray(self.cov))

    def sample(self, rng, n):
        """Return an ``(n, dimension)`` array."""
        if self.family == "gaussian":
            return self.loc + self.scale * rng.standard_normal((n, 1))
        if self.family == "exponential":
            return -np.log1p(-rng.random((n, 1))) / self.rate
        chol = np.linalg.cholesky(np.asarray(self.cov))
        return np.asarray(self.mean) + rng.standard_normal((n, self.dimension)) @ chol.T

    def to_dict(self):
        if self.family == "gaussian":
            return {"family": "gaussian", "loc": self.loc, "scale": self.scale}
        if self.family == "exponential":
            return {"family": "exponential", "rate": self.rate}
        return {"family": "multivariate_gaussian", "mean": list(self.mean),
                "cov": [list(r) for r in self.cov]}

    @classmethod
    def from_dict(cls, data):
        family = data.get("family")
        if family == "gaussian":
            return cls.gaussian(data.get("loc", 0.0), data.get("scale", 1.0))
        if family == "exponential":
            return cls.exponential(data.get("rate", 1.0))
        if family == "multivariate_gaussian":
            cov = data.get("cov", data.get("covariance_matrix"))
            mean = data.get("mean", data.get("loc", [0.0] * len(cov)))
            return cls.multivariate_gaussian(mean, cov)
        raise ConfigurationError(f"unknown noise family {family!r}")


@dataclass(frozen=True, eq=False)
class AdditiveMechanism:
    """Known proxy mechanism ``W = A U + E`` with ``E`` independent of ``U``."""

    loadings: np.ndarray
    noise: NoiseDistribution

    def __post_init__(self):
        a = np.atleast_2d(np.asarray(self.loadings, dtype=float))
        object.__setattr__(self, "loadings", a)
        if a.shape[0] != self.noise.dimension:
            raise InvalidMechanismError(
                f"A has {a.shape[0]} rows but E has dimension {self.noise.dimension}")
        if a.shape[0] < a.shape[1] or np.linalg.matrix_rank(a) < a.shape[1]:
            raise InvalidMechanismError("A must have full column rank")

    @property
    def d(self):
        return self.loadings.shape[0]

    @property
    def k(self):
        return self.loadings.shape[1]

    def to_dict(self):
        return {"kind": "additive", "A": self.loadings.tolist(), "noise": self.noise.to_dict()}

    @classmethod
    def from_dict(cls, data):
        return cls(np.asarray(data["A"], dtype=float), NoiseDistribution.from_dict(data["noise"]))


@dataclass(frozen=True)
class PcScmSpec:
    """Structural maps and noise laws of a proximal-confounded SCM.

    ``f_w(u, e)``, ``f_x(u, n_x)`` and ``f_y(u, x, n_y)`` act row-wise on
    arrays with one row per unit; ``f_y`` returns a vector.
    """

    p: int
    k: int
    d: int
    noise_u: NoiseDistribution
    noise_e: NoiseDistribution
    noise_x: NoiseDistribution
    noise_y: NoiseDistribution
    f_w: Callable
    f_x: Callable
    f_y: Callable
    treatment_kind: str = "continuous"
    name: str = "custom"
    mechanism: Optional[AdditiveMechanism] = None

    def __post_init__(self):
        if min(self.p, self.k, self.d) < 1:
            raise ConfigurationError("dimensions p, k, d must be positive")
        if self.treatment_kind not in ("continuous", "binary"):
            raise ConfigurationError(f"unknown treatment kind {self.treatment_kind!r}")
        if self.noise_u.dimension != self.k:
            raise ConfigurationError("N_U dimension must equal k")


@dataclass(frozen=True, eq=False)
class Standardization:
    """Column means and standard deviations used to standardise a data set.

    Binary treatment columns keep mean 0 and sd 1 so that the affine maps
    act as the identity on them.
    """

    w_mean: np.ndarray
    w_sd: np.ndarray
    x_mean: np.ndarray
    x_sd: np.ndarray
    y_mean: float
    y_sd: float
    u_mean: Optional[np.ndarray] = None
    u_sd: Optional[np.ndarray] = None
    binary_treatment: bool = False

    def to_dict(self):
        out = {"w_mean": self.w_mean.tolist(), "w_sd": self.w_sd.tolist(),
               "x_mean": self.x_mean.tolist(), "x_sd": self.x_sd.tolist(),
               "y_mean": self.y_mean, "y_sd": self.y_sd,
               "binary_treatment": self.binary_treatment}
        if self.u_mean is not None:
            out["u_mean"] = self.u_mean.tolist()
            out["u_sd"] = self.u_sd.tolist()
        return out

    @classmethod
    def from_dict(cls, data):
        arr = lambda key: None if data.get(key) is None else np.asarray(data[key], float)
        return cls(arr("w_mean"), arr("w_sd"), arr("x_mean"), arr("x_sd"),
                   float(data["y_mean"]), float(data["y_sd"]), arr("u_mean"), arr("u_sd"),
                   bool(data.get("binary_treatment", False)))


@dataclass(frozen=True, eq=False)
class Dataset:
    w: np.ndarray
    x: np.ndarray
    y: np.ndarray
    u_hidden: Optional[np.ndarray] = None
    standardization: Optional[Standardization] = None
    seed: Optional[int] = None
    treatment_kind: str = "continuous"
    source: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        w = np.asarray(self.w, dtype=float)
        x = np.asarray(self.x, dtype=float)
        y = np.asarray(self.y, dtype=float).ravel()
        w = w[:, None] if w.ndim == 1 else w
        x = x[:, None] if x.ndim == 1 else x
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)
        n = len(y)
        if len(w) != n or len(x) != n:
            raise ConfigurationError("w, x and y must have the same number of rows")
        if self.u_hidden is not None:
            u = np.asarray(self.u_hidden, dtype=float)
            u = u[:, None] if u.ndim == 1 else u
            if len(u) != n:
                raise ConfigurationError("u_hidden must have one row per unit")
            object.__setattr__(self, "u_hidden", u)
        if self.treatment_kind not in ("continuous", "binary"):
            raise ConfigurationError(f"unknown treatment kind {self.treatment_kind!r}")

    @property
    def n(self):
        return len(self.y)

    @property
    def d(self):
        return self.w.shape[1]

    @property
    def p(self):
        return self.x.shape[1]

    @property
    def k(self):
        return None if self.u_hidden is None else self.u_hidden.shape[1]


def benchmark_id(name):
    """Normalise ``"A"``/``"A_gaussian"`` style names."""
    key = _ALIASES.get(name, name)
    if key not in BENCHMARK_IDS:
        raise ConfigurationError(f"unknown benchmark {name!r}; choose from {BENCHMARK_IDS}")
    return key


def _col(a):
    return a[:, 0]


def benchmark_spec(name):
    """Return one of the four simulation models A-D."""
    bid = benchmark_id(name)
    std = NoiseDistribution.gaussian(0.0, 1.0)
    if bid == "A_gaussian":
        return PcScmSpec(
            1, 1, 1, std, std, std, std,
            f_w=lambda u, e: u + e,
            f_x=lambda u, n: u + n,
            f_y=lambda u, x, n: _col(u) + _col(x) + _col(n),
            name=bid, mechanism=AdditiveMechanism(np.ones((1, 1)), std))
    if bid == "B_binary":
        return PcScmSpec(
            1, 1, 1, std, std, std, std,
            f_w=lambda u, e: u + e,
            f_x=lambda u, n: (u + n > 0).astype(float),
            f_y=lambda u, x, n: _col(u) + _col(x) + _col(n),
            treatment_kind="binary",
            name=bid, mechanism=AdditiveMechanism(np.ones((1, 1)), std))
    if bid == "C_exponential":
        ex = NoiseDistribution.exponential(1.0)
        return PcScmSpec(
            1, 1, 1, ex, ex, ex, ex,
            f_w=lambda u, e: u + e,
            f_x=lambda u, n: u + n,
            f_y=lambda u, x, n: _col(x) ** 2 + _col(u) * _col(x) + _col(n),
            name=bid, mechanism=AdditiveMechanism(np.ones((1, 1)), ex))
    e = NoiseDistribution.multivariate_gaussian(np.zeros(3), D_NOISE_COV)
    nu = NoiseDistribution.multivariate_gaussian(np.zeros(2), np.eye(2))
    return PcScmSpec(
        1, 2, 3, nu, e, std, std,
        f_w=lambda u, e_: u @ D_LOADINGS.T + e_,
        f_x=lambda u, n: (u @ D_OUTCOME_LOADINGS)[:, None] + n,
        f_y=lambda u, x, n: u @ D_OUTCOME_LOADINGS + _col(x) + _col(n),
        name=bid, mechanism=AdditiveMechanism(D_LOADINGS, e))


def true_causal_function(name, x):
    """Ground-truth ``E[Y | do(X := x)]`` for a benchmark (vectorised)."""
    bid = benchmark_id(name)
    arr = np.asarray(x, dtype=float)
    out = arr ** 2 + arr + 1.0 if bid == "C_exponential" else arr.copy()
    return float(out) if out.ndim == 0 else out


def true_ace(name):
    """ACE of a benchmark: 1 for A, B, D; ``E[2X + 1] = 5`` for C."""
    bid = benchmark_id(name)
    # C: X = U + N_X with two independent Exp(1) terms, so E[X] = 2
    return 5.0 if bid == "C_exponential" else 1.0


def sample_dataset(spec, n, seed, split="train"):
    """Draw ``n`` i.i.d. units ancestrally: U, then W and X, then Y.

    ``split`` salts every stream so that train and test draws for the same
    seed are independent.
    """
    if n < 1:
        raise ConfigurationError("n must be >= 1")
    u = spec.noise_u.sample(stream(seed, split, "N_U"), n)
    e = spec.noise_e.sample(stream(seed, split, "E"), n)
    nx = spec.noise_x.sample(stream(seed, split, "N_X"), n)
    ny = spec.noise_y.sample(stream(seed, split, "N_Y"), n)
    w = np.asarray(spec.f_w(u, e), dtype=float).reshape(n, spec.d)
    x = np.asarray(spec.f_x(u, nx), dtype=float).reshape(n, spec.p)
    y = np.asarray(spec.f_y(u, x, ny), dtype=float).reshape(n)
    return Dataset(w, x, y, u_hidden=u, seed=seed, treatment_kind=spec.treatment_kind,
                   source={"model": spec.name, "split": split})


@dataclass(frozen=True)
class OracleEstimate:
    mean: float
    se: float


def interventional_oracle(spec, x, m, seed):
    """Monte-Carlo ``E[Y | do(X := x)]`` by averaging ``f_y(U, x, N_Y)``."""
    if m < 1:
        raise ConfigurationError("m must be >= 1")
    u = spec.noise_u.sample(stream(seed, "oracle", "N_U"), m)
    ny = spec.noise_y.sample(stream(seed, "oracle", "N_Y"), m)
    xs = np.broadcast_to(np.atleast_1d(np.asarray(x, dtype=float)), (m, spec.p))
    vals = np.asarray(spec.f_y(u, xs, ny), dtype=float)
    if np.ptp(vals) == 0:
        return OracleEstimate(float(vals[0]), 0.0)
    se = float(np.std(vals, ddof=1) / math.sqrt(m)) if m > 1 else math.inf
    return OracleEstimate(float(np.mean(vals)), se)


def _moments(a, name):
    mean = a.mean(axis=0)
    sd = a.std(axis=0, ddof=1) if len(a) > 1 else np.zeros(a.shape[1])
    bad = ~(sd > 0)
    if np.any(bad):
        raise DegenerateDataError(f"column(s) {np.flatnonzero(bad).tolist()} of {name} "
                                  "have zero variance")
    return mean, sd


def standardize(data):
    """Centre and scale every non-binary column to mean 0, sd 1.

    Standard deviations use ``ddof=1``.  A binary treatment (by declared
    kind, never by inspection) is passed through unchanged.
    """
    if data.standardization is not None:
        return data
    w_mean, w_sd = _moments(data.w, "w")
    binary = data.treatment_kind == "binary"
    if binary:
        x_mean, x_sd = np.zeros(data.p), np.ones(data.p)
    else:
        x_mean, x_sd = _moments(data.x, "x")
    y_mean, y_sd = _moments(data.y[:, None], "y")
    u_mean = u_sd = u = None
    if data.u_hidden is not None:
        u_mean, u_sd = _moments(data.u_hidden, "u")
        u = (data.u_hidden - u_mean) / u_sd
    meta = Standardization(w_mean, w_sd, x_mean, x_sd, float(y_mean[0]), float(y_sd[0]),
                           u_mean, u_sd, binary)
    x = data.x if binary else (data.x - x_mean) / x_sd
    return replace(data, w=(data.w - w_mean) / w_sd, x=x,
                   y=(data.y - meta.y_mean) / meta.y_sd, u_hidden=u, standardization=meta)


def destandardize(data):
    """Invert `standardize` on a data set."""
    meta = data.standardization
    if meta is None:
        return data
    u = None if data.u_hidden is None else data.u_hidden * meta.u_sd + meta.u_mean
    return replace(data, w=data.w * meta.w_sd + meta.w_mean,
                   x=data.x * meta.x_sd + meta.x_mean,
                   y=data.y * meta.y_sd + meta.y_mean, u_hidden=u, standardization=None)


def destandardize_estimate(est, meta):
    """Map a causal function fitted on standardised data back to raw units."""
    from .estimate import CausalEstimate

    if meta is None:
        return est
    inner = est.func

    def func(x):
        x = np.asarray(x, dtype=float)
        return meta.y_sd * np.asarray(inner((x - meta.x_mean[0]) / meta.x_sd[0])) + meta.y_mean

    lo, hi = est.x_hull
    hull = (lo * meta.x_sd[0] + meta.x_mean[0], hi * meta.x_sd[0] + meta.x_mean[0])
    return CausalEstimate(func, est.treatment_kind, hull, dict(est.provenance),
                          scale="raw")


# --- CSV and manifest ---------------------------------------------------------

def dataset_columns(data):
    cols = [f"w_{i + 1}" for i in range(data.d)] + [f"x_{i + 1}" for i in range(data.p)] + ["y"]
    if data.u_hidden is not None:
        cols += [f"u_{i + 1}" for i in range(data.k)]
    return cols


def write_csv(data, path):
    """Write ``w_1..w_d,x_1..x_p,y[,u_1..u_k]`` with round-trip float formatting."""
    blocks = [data.w, data.x, data.y[:, None]]
    if data.u_hidden is not None:
        blocks.append(data.u_hidden)
    table = np.hstack(blocks)
    with open(path, "w", newline="") as fh:
        fh.write(",".join(dataset_columns(data)) + "\n")
        for row in table:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def manifest(data, spec_name=None, extra=None):
    doc = {"model": spec_name or data.source.get("model", "external"),
           "seed": data.seed, "n": data.n, "d": data.d, "p": data.p, "k": data.k,
           "treatment_kind": data.treatment_kind,
           "columns": dataset_columns(data),
           "standardization": None if data.standardization is None
           else data.standardization.to_dict()}
    doc.update(extra or {})
    return doc


def write_manifest(doc, path):
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
