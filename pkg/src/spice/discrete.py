"""Matrix adjustment for discrete confounders observed through a discrete proxy.

With a known error matrix ``F[i, j] = p(W = w_i | U = u_j)`` every
``(x, y)`` slice of the observed joint satisfies ``p(W, x, y) = F p(U, x, y)``,
so the confounder joint is recovered by solving that linear system and the
causal function follows from the adjustment formula.
"""

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .estimate import CausalEstimate
from .errors import (ConfigurationError, InconsistencyError, InvalidMechanismError,
                     NonInvertibleMechanismError, UnsupportedInterventionError)

CLIP_TOL = 1e-8
RANK_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class DiscreteMechanism:
    """Error matrix with rows indexed by proxy levels, columns by confounder levels."""

    matrix: np.ndarray
    w_labels: tuple = None
    u_labels: tuple = None
    full_support: bool = True

    def __post_init__(self):
        f = np.atleast_2d(np.asarray(self.matrix, dtype=float))
        object.__setattr__(self, "matrix", f)
        r, k = f.shape
        if r < 1 or k < 1:
            raise InvalidMechanismError("error matrix must be non-empty")
        if np.any(f < 0) or np.any(f > 1) or not np.all(np.isfinite(f)):
            raise InvalidMechanismError("error matrix entries must lie in [0, 1]")
        if self.full_support and not np.allclose(f.sum(axis=0), 1.0, rtol=0, atol=1e-10):
            raise InvalidMechanismError("columns of a full-support error matrix must sum to 1")
        object.__setattr__(self, "w_labels",
                           tuple(self.w_labels) if self.w_labels is not None else tuple(range(r)))
        object.__setattr__(self, "u_labels",
                           tuple(self.u_labels) if self.u_labels is not None else tuple(range(k)))
        if len(self.w_labels) != r or len(self.u_labels) != k:
            raise InvalidMechanismError("label counts do not match the matrix shape")

    @property
    def shape(self):
        return self.matrix.shape

    def to_dict(self):
        return {"u_labels": list(self.u_labels), "w_labels": list(self.w_labels),
                "matrix": self.matrix.tolist()}

    @classmethod
    def from_dict(cls, data):
        return cls(np.asarray(data["matrix"], dtype=float), data.get("w_labels"),
                   data.get("u_labels"), data.get("full_support", True))

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)


@dataclass(frozen=True, eq=False)
class DiscreteJoint:
    """Probability table ``p[a, x, y]``; ``a`` is the proxy or the confounder."""

    table: np.ndarray
    a_labels: tuple
    x_levels: tuple
    y_levels: tuple
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        t = np.asarray(self.table, dtype=float)
        object.__setattr__(self, "table", t)
        if t.ndim != 3:
            raise ConfigurationError("joint table must be three-dimensional")
        if t.shape != (len(self.a_labels), len(self.x_levels), len(self.y_levels)):
            raise ConfigurationError("joint table shape does not match its labels")
        if np.any(t < 0):
            raise ConfigurationError("joint table has negative mass")
        if abs(t.sum() - 1.0) > 1e-10:
            raise ConfigurationError(f"joint table sums to {t.sum()!r}, not 1")

    @classmethod
    def from_counts(cls, a, x, y):
        """Empirical joint of three discrete columns (levels taken as observed)."""
        a_levels, ai = np.unique(a, return_inverse=True)
        x_levels, xi = np.unique(x, return_inverse=True)
        y_levels, yi = np.unique(y, return_inverse=True)
        t = np.zeros((len(a_levels), len(x_levels), len(y_levels)))
        np.add.at(t, (ai, xi, yi), 1.0)
        return cls(t / t.sum(), tuple(a_levels.tolist()), tuple(x_levels.tolist()),
                   tuple(y_levels.tolist()))

    def to_csv(self, path, first="w"):
        with open(path, "w", newline="") as fh:
            out = csv.writer(fh)
            out.writerow([first, "x", "y", "prob"])
            for i, a in enumerate(self.a_labels):
                for j, x in enumerate(self.x_levels):
                    for k, y in enumerate(self.y_levels):
                        out.writerow([a, x, y, repr(float(self.table[i, j, k]))])

    @classmethod
    def from_csv(cls, path):
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        header, body = rows[0], rows[1:]
        if len(header) != 4 or header[1:] != ["x", "y", "prob"]:
            raise ConfigurationError(f"unexpected joint table header {header}")
        parse = lambda v: float(v) if _is_number(v) else v
        a_labels = tuple(dict.fromkeys(parse(r[0]) for r in body))
        x_levels = tuple(sorted({float(r[1]) for r in body}))
        y_levels = tuple(sorted({float(r[2]) for r in body}))
        t = np.zeros((len(a_labels), len(x_levels), len(y_levels)))
        for r in body:
            t[a_labels.index(parse(r[0])), x_levels.index(float(r[1])),
              y_levels.index(float(r[2]))] += float(r[3])
        return cls(t, a_labels, x_levels, y_levels)


def _is_number(v):
    try:
        float(v)
    except ValueError:
        return False
    return True


@dataclass(frozen=True)
class RankReport:
    complete: bool
    reason: str
    singular_values: tuple
    null_vector: tuple = None

    def to_dict(self):
        return {"complete": self.complete, "reason": self.reason,
                "singular_values": list(self.singular_values),
                "null_vector": None if self.null_vector is None else list(self.null_vector)}


def check_full_column_rank(mech, tol=RANK_TOL):
    """Decide completeness of a discrete error mechanism.

    Complete iff the smallest singular value exceeds ``tol`` times the
    largest.  Otherwise the report carries a unit null-space direction
    ``delta`` with ``F @ delta ~ 0``.
    """
    f = mech.matrix if isinstance(mech, DiscreteMechanism) else np.atleast_2d(mech)
    r, k = f.shape
    _, s, vt = np.linalg.svd(f)
    if r < k:
        return RankReport(False, "insufficient proxy support", tuple(s.tolist()),
                          tuple(vt[-1].tolist()))
    if s[-1] > tol * s[0]:
        return RankReport(True, "full column rank", tuple(s.tolist()))
    delta = vt[-1]
    # fix the sign so the first non-negligible entry is positive
    lead = delta[np.argmax(np.abs(delta) > 1e-12)]
    delta = delta * np.sign(lead)
    return RankReport(False, "rank deficient", tuple(s.tolist()), tuple(delta.tolist()))


def forward(joint_u, mech):
    """Push a confounder joint through the error matrix: ``p(W, x, y)``."""
    f = mech.matrix
    if f.shape[1] != joint_u.table.shape[0]:
        raise ConfigurationError("error matrix does not match the confounder support")
    table = np.einsum("ij,jxy->ixy", f, joint_u.table)
    return DiscreteJoint(table, mech.w_labels, joint_u.x_levels, joint_u.y_levels)


def matrix_adjust(joint_w, mech, clip=CLIP_TOL, tol=RANK_TOL):
    """Recover ``p(U, X, Y)`` from ``p(W, X, Y)`` and a known error matrix.

    Square mechanisms are inverted exactly; tall ones (more proxy than
    confounder levels) are solved by least squares and flagged in ``meta``.
    Recovered masses in ``[-clip, 0)`` are set to zero and the slice is
    rescaled to its observed total; anything more negative means the table
    cannot have come from this mechanism.
    """
    f = mech.matrix
    r, k = f.shape
    if r != joint_w.table.shape[0]:
        raise ConfigurationError("error matrix rows do not match the proxy support")
    report = check_full_column_rank(mech, tol)
    if not report.complete:
        raise NonInvertibleMechanismError(f"error matrix is not invertible ({report.reason})")
    obs = joint_w.table.reshape(r, -1)
    if r == k:
        rec = np.linalg.solve(f, obs)
        solver = "inverse"
    else:
        rec = np.linalg.lstsq(f, obs, rcond=None)[0]
        solver = "least_squares"
    worst = float(rec.min())
    if worst < -clip:
        raise InconsistencyError(
            f"recovered probability {worst:.3g} is below -{clip:g}; the observed table "
            "is incompatible with the error mechanism")
    clipped = int(np.sum(rec < 0))
    if clipped:
        slice_mass = obs.sum(axis=0)
        rec = np.maximum(rec, 0.0)
        totals = rec.sum(axis=0)
        scale = np.divide(slice_mass, totals, out=np.zeros_like(totals), where=totals > 0)
        rec = rec * scale
    table = rec.reshape(k, *joint_w.table.shape[1:])
    table = table / table.sum()
    meta = {"solver": solver, "clipped_cells": clipped, "clip_tolerance": clip,
            "min_recovered": worst, "rectangular": r > k}
    return DiscreteJoint(table, mech.u_labels, joint_w.x_levels, joint_w.y_levels, meta)


def causal_function_discrete(joint_u, x):
    """``theta(x) = sum_y y sum_u p(y | u, x) p(u)`` by the adjustment formula."""
    try:
        j = [float(v) for v in joint_u.x_levels].index(float(x))
    except ValueError:
        raise UnsupportedInterventionError(f"treatment level {x!r} is not in the support")
    t = joint_u.table
    p_u = t.sum(axis=(1, 2))
    p_ux = t[:, j, :].sum(axis=1)
    needed = p_u > 0
    if np.any(p_ux[needed] <= 0):
        raise UnsupportedInterventionError(
            f"p(U = u, X = {x!r}) is zero for some confounder level with positive mass")
    y = np.asarray(joint_u.y_levels, dtype=float)
    cond_mean = (t[needed, j, :] @ y) / p_ux[needed]
    return float(cond_mean @ p_u[needed])


def ace_binary_discrete(joint_u):
    return causal_function_discrete(joint_u, 1) - causal_function_discrete(joint_u, 0)


def random_column_stochastic(rng, k, r=None, max_cond=1e3):
    """Random error matrix with columns on the simplex and bounded condition number."""
    r = k if r is None else r
    while True:
        f = rng.dirichlet(np.ones(r), size=k).T
        if np.linalg.cond(f) < max_cond:
            return f


def discrete_estimate(w, x, y, mech, treatment_kind=None):
    """Causal function on the observed treatment levels via `matrix_adjust`.

    ``w`` must be a single discrete column whose observed levels are a
    subset of the mechanism's proxy labels.
    """
    w = np.asarray(w).ravel()
    labels = [float(v) for v in mech.w_labels]
    try:
        idx = np.array([labels.index(float(v)) for v in w])
    except ValueError:
        raise InconsistencyError("observed proxy levels are not all in the mechanism's labels")
    observed = DiscreteJoint.from_counts(idx, x, y)
    table = np.zeros((len(labels),) + observed.table.shape[1:])
    table[np.asarray(observed.a_labels, dtype=int)] = observed.table
    joint_w = DiscreteJoint(table, mech.w_labels, observed.x_levels, observed.y_levels)
    joint_u = matrix_adjust(joint_w, mech)
    levels = {float(v): causal_function_discrete(joint_u, v) for v in joint_u.x_levels}

    def func(v):
        v = np.asarray(v, dtype=float)
        out = np.empty(v.shape)
        for i, xi in np.ndenumerate(v):
            if float(xi) not in levels:
                raise UnsupportedInterventionError(f"treatment level {xi!r} was not observed")
            out[i] = levels[float(xi)]
        return out

    if treatment_kind is None:
        treatment_kind = "binary" if set(levels) == {0.0, 1.0} else "continuous"
    xs = sorted(levels)
    return CausalEstimate(func, treatment_kind, (xs[0], xs[-1]),
                          {"method": "discrete_matrix_adjust", "levels": levels,
                           **joint_u.meta})
