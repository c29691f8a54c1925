"""Numerical checks on the Fourier transform of an additive noise density.

A proxy ``W = g(U) + E`` carries complete information about ``U`` when the
characteristic function of ``E`` never vanishes.  This module evaluates

    f_hat(t) = (2 pi)^(-1/2) * integral f(x) exp(-i t x) dx

by composite Simpson quadrature, scans a grid of frequencies for zeros, and
evaluates the cancelling integral that shows a non-injective ``g`` breaks
completeness.  A zero scan over a finite grid is numerical evidence only.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy import optimize, stats

from .errors import ConfigurationError, CoverageError

INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)
MIN_COVERAGE = 1.0 - 1e-10
DEFAULT_FLOOR = 1e-8
# below this |f_hat| is dominated by quadrature roundoff
RESOLUTION = 1e-12
FAMILIES = ("gaussian", "laplace", "exponential", "gaussian_mixture", "uniform")

# Families whose law is infinitely divisible (a sufficient condition for a
# zero-free characteristic function).  Anything not listed is "unknown".
INFINITELY_DIVISIBLE = {
    "gaussian": "normal laws are infinitely divisible",
    "cauchy": "Cauchy laws are stable, hence infinitely divisible",
    "laplace": "Laplace is a variance mixture of normals with exponential mixing",
    "exponential": "exponential is gamma with shape 1",
    "gamma": "gamma laws are infinitely divisible",
    "stable": "stable laws are infinitely divisible",
    "lognormal": "log-normal laws are infinitely divisible",
    "generalized_hyperbolic": "generalized hyperbolic laws are infinitely divisible",
    "student_t": "Student t laws are infinitely divisible",
    "product_of_id": "convolutions of infinitely divisible laws stay infinitely divisible",
}


def infinitely_divisible(family):
    """Catalog lookup: ``("known_id", reason)`` or ``("unknown", None)``."""
    key = str(family).lower().replace("-", "_").replace(" ", "_")
    if key in INFINITELY_DIVISIBLE:
        return "known_id", INFINITELY_DIVISIBLE[key]
    return "unknown", None


@dataclass(frozen=True)
class DensitySpec:
    """A univariate noise density.

    Parameters are read according to ``family``: ``loc``/``scale`` for
    gaussian and laplace, ``rate`` for exponential, ``weights``/``locs``/
    ``scales`` for a gaussian mixture and ``low``/``high`` for uniform.
    """

    family: str
    loc: float = 0.0
    scale: float = 1.0
    rate: float = 1.0
    weights: tuple = ()
    locs: tuple = ()
    scales: tuple = ()
    low: float = -1.0
    high: float = 1.0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ConfigurationError(f"unknown density family {self.family!r}")
        if self.family in ("gaussian", "laplace") and not self.scale > 0:
            raise ConfigurationError("scale must be positive")
        if self.family == "exponential" and not self.rate > 0:
            raise ConfigurationError("rate must be positive")
        if self.family == "uniform" and not self.high > self.low:
            raise ConfigurationError("uniform needs low < high")
        if self.family == "gaussian_mixture":
            w = np.asarray(self.weights, dtype=float)
            if not (len(w) == len(self.locs) == len(self.scales) and len(w) > 0):
                raise ConfigurationError("mixture weights, locs and scales must align")
            if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-10:
                raise ConfigurationError("mixture weights must be non-negative and sum to 1")
            if min(self.scales) <= 0:
                raise ConfigurationError("mixture scales must be positive")

    @classmethod
    def gaussian(cls, loc=0.0, scale=1.0):
        return cls("gaussian", loc=loc, scale=scale)

    @classmethod
    def laplace(cls, loc=0.0, scale=1.0):
        return cls("laplace", loc=loc, scale=scale)

    @classmethod
    def exponential(cls, rate=1.0):
        return cls("exponential", rate=rate)

    @classmethod
    def gaussian_mixture(cls, weights, locs, scales):
        return cls("gaussian_mixture", weights=tuple(weights), locs=tuple(locs),
                   scales=tuple(scales))

    @classmethod
    def uniform(cls, low=-1.0, high=1.0):
        return cls("uniform", low=low, high=high)

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        family = data.pop("family", None)
        if family is None:
            raise ConfigurationError("density needs a 'family'")
        for key in ("weights", "locs", "scales"):
            if key in data:
                data[key] = tuple(float(v) for v in data[key])
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigurationError(f"unknown density field(s): {sorted(unknown)}")
        return cls(family, **data)

    def to_dict(self):
        keys = {"gaussian": ("loc", "scale"), "laplace": ("loc", "scale"),
                "exponential": ("rate",), "uniform": ("low", "high"),
                "gaussian_mixture": ("weights", "locs", "scales")}[self.family]
        out = {"family": self.family}
        out.update({k: getattr(self, k) if not isinstance(getattr(self, k), tuple)
                    else list(getattr(self, k)) for k in keys})
        return out

    @property
    def symmetric_about_zero(self):
        if self.family in ("gaussian", "laplace"):
            return self.loc == 0
        if self.family == "uniform":
            return self.low == -self.high
        if self.family == "gaussian_mixture":
            comps = sorted(zip(self.locs, self.scales, self.weights))
            mirrored = sorted((-m, s, w) for m, s, w in comps)
            return np.allclose(comps, mirrored)
        return False

    def _components(self):
        if self.family == "gaussian":
            return [(1.0, stats.norm(self.loc, self.scale))]
        if self.family == "laplace":
            return [(1.0, stats.laplace(self.loc, self.scale))]
        if self.family == "exponential":
            return [(1.0, stats.expon(scale=1.0 / self.rate))]
        if self.family == "uniform":
            return [(1.0, stats.uniform(self.low, self.high - self.low))]
        return [(w, stats.norm(m, s)) for w, m, s in zip(self.weights, self.locs, self.scales)]

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        return sum(w * d.pdf(x) for w, d in self._components())

    def cdf(self, x):
        return sum(w * d.cdf(x) for w, d in self._components())

    def mass(self, lo, hi):
        return float(self.cdf(hi) - self.cdf(lo))

    def breakpoints(self):
        """Points where the density is not smooth."""
        if self.family == "laplace":
            return [self.loc]
        if self.family == "exponential":
            return [0.0]
        if self.family == "uniform":
            return [self.low, self.high]
        return []

    def default_window(self, scales=12.0):
        """Window of ``scales`` scale units, widened until it holds 1 - 1e-10 of the mass.

        Gaussian tails are covered by 12 units; exponential tails need about
        23, so the width is grown as required.
        """
        if self.family == "uniform":
            return self.low, self.high
        if self.family == "exponential":
            s = 1.0 / self.rate
            return 0.0, s * max(scales, -np.log(1.0 - MIN_COVERAGE) + 1.0)
        if self.family == "laplace":
            half = self.scale * max(scales, -np.log(1.0 - MIN_COVERAGE) + 1.0)
            return self.loc - half, self.loc + half
        if self.family == "gaussian":
            return self.loc - scales * self.scale, self.loc + scales * self.scale
        lo = min(m - scales * s for m, s in zip(self.locs, self.scales))
        hi = max(m + scales * s for m, s in zip(self.locs, self.scales))
        return lo, hi


@dataclass(frozen=True)
class QuadratureConfig:
    panels: int = 2 ** 14
    window: tuple = None
    window_scales: float = 12.0
    min_coverage: float = MIN_COVERAGE
    chunk: int = 128

    def __post_init__(self):
        if self.panels < 2 or self.panels % 2:
            raise ConfigurationError("panel count must be even and at least 2")
        if self.window is not None and not self.window[1] > self.window[0]:
            raise ConfigurationError("window must satisfy lo < hi")


@dataclass(frozen=True)
class FourierValue:
    value: np.ndarray
    error: np.ndarray
    window: tuple
    coverage: float


def _simpson_nodes(lo, hi, panels):
    x = np.linspace(lo, hi, panels + 1)
    w = np.ones(panels + 1)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    return x, w * (hi - lo) / (3.0 * panels)


def _pieces(density, lo, hi):
    cuts = [b for b in density.breakpoints() if lo < b < hi]
    edges = [lo] + sorted(cuts) + [hi]
    return list(zip(edges[:-1], edges[1:]))


def numeric_ft(density, t, cfg=None):
    """Fourier transform of ``density`` at ``t`` (scalar or array).

    The window is split at kinks of the density and each piece integrated
    with ``cfg.panels`` Simpson panels.  The error estimate is the
    Richardson difference against the half-resolution rule.
    """
    cfg = cfg or QuadratureConfig()
    lo, hi = cfg.window if cfg.window is not None else density.default_window(cfg.window_scales)
    coverage = density.mass(lo, hi)
    if coverage < cfg.min_coverage:
        raise CoverageError(f"window [{lo:g}, {hi:g}] covers only {coverage:.12f} of the mass; "
                            f"need at least {cfg.min_coverage}")
    scalar = np.ndim(t) == 0
    t = np.atleast_1d(np.asarray(t, dtype=float))
    nodes, fine, coarse = [], [], []
    for a, b in _pieces(density, lo, hi):
        x, w = _simpson_nodes(a, b, cfg.panels)
        # endpoints take one-sided limits so jumps at piece edges are handled
        fx = density.pdf(x)
        fx[0] = density.pdf(np.nextafter(a, b))
        fx[-1] = density.pdf(np.nextafter(b, a))
        _, wc = _simpson_nodes(a, b, cfg.panels // 2) if cfg.panels % 4 == 0 else (None, None)
        nodes.append(x)
        fine.append(w * fx)
        if wc is not None:
            c = np.zeros_like(w)
            c[::2] = wc
            coarse.append(c * fx)
    x = np.concatenate(nodes)
    wf = np.concatenate(fine)
    wc = np.concatenate(coarse) if coarse else None
    value = np.empty(t.shape, dtype=complex)
    error = np.zeros(t.shape)
    for start in range(0, t.size, cfg.chunk):
        tt = t[start:start + cfg.chunk]
        phase = np.exp(-1j * np.outer(tt, x))
        v = phase @ wf
        value[start:start + cfg.chunk] = v
        if wc is not None:
            error[start:start + cfg.chunk] = np.abs(v - phase @ wc) / 15.0
    value *= INV_SQRT_2PI
    error *= INV_SQRT_2PI
    if scalar:
        return FourierValue(value[0], error[0], (lo, hi), coverage)
    return FourierValue(value, error, (lo, hi), coverage)


def gaussian_ft_magnitude(t, sigma=1.0):
    """Closed-form ``|f_hat(t)|`` of a normal density; it does not depend on the mean."""
    if not sigma > 0:
        raise ConfigurationError("sigma must be positive")
    return INV_SQRT_2PI * np.exp(-0.5 * np.square(t) * sigma ** 2)


def laplace_ft_magnitude(t, scale=1.0):
    return INV_SQRT_2PI / (1.0 + np.square(scale * np.asarray(t, dtype=float)))


@dataclass
class ZeroScan:
    status: str
    t_min: float
    min_abs: float
    floor: float
    t_range: tuple
    step: float
    candidates: list = field(default_factory=list)
    unresolved_from: float = None
    label: str = "numerical evidence"

    def to_dict(self):
        return {"status": self.status, "t_min": self.t_min, "min_abs": self.min_abs,
                "floor": self.floor, "t_range": list(self.t_range), "step": self.step,
                "candidates": self.candidates, "unresolved_from": self.unresolved_from,
                "label": self.label}


def scan_for_zeros(density, t_range=(-10.0, 10.0), step=0.01, floor=DEFAULT_FLOOR,
                   cfg=None, resolution=RESOLUTION):
    """Look for zeros of ``|f_hat|`` on a frequency grid.

    A zero shows up as a dip: a grid point no larger than its neighbours,
    with both neighbours above ``resolution`` so the dip is not quadrature
    roundoff in a decayed tail.  Each dip is polished by minimising
    ``|f_hat|^2`` between its neighbours.  The status is ``near_zero`` when a
    polished dip falls below ``floor``.  Frequencies where ``|f_hat|`` has
    already decayed below ``resolution`` cannot be judged; the smallest
    such ``|t|`` is reported as ``unresolved_from``.
    """
    if not step > 0:
        raise ConfigurationError("step must be positive")
    lo, hi = float(t_range[0]), float(t_range[1])
    if not hi > lo:
        raise ConfigurationError("t_range must satisfy lo < hi")
    grid = np.arange(lo, hi + 0.5 * step, step)
    mags = np.abs(numeric_ft(density, grid, cfg).value)
    resolved = mags > resolution
    unresolved = None if resolved.all() else float(np.min(np.abs(grid[~resolved])))
    dips = np.flatnonzero((mags[1:-1] <= mags[:-2]) & (mags[1:-1] <= mags[2:])
                          & resolved[:-2] & resolved[2:]) + 1
    sq = lambda s: float(abs(numeric_ft(density, s, cfg).value) ** 2)
    candidates = []
    for i in dips:
        res = optimize.minimize_scalar(sq, bounds=(grid[i - 1], grid[i + 1]),
                                       method="bounded", options={"xatol": 1e-12})
        candidates.append({"t": float(res.x), "abs": float(np.sqrt(res.fun))})
    below = sorted((c for c in candidates if c["abs"] < floor), key=lambda c: abs(c["t"]))
    if below:
        # report the zero closest to the origin
        return ZeroScan("near_zero", below[0]["t"], below[0]["abs"], floor, (lo, hi), step,
                        below, unresolved)
    if candidates:
        best = min(candidates, key=lambda c: c["abs"])
        t_min, m_min = best["t"], best["abs"]
    else:
        pool = np.flatnonzero(resolved) if resolved.any() else np.arange(len(grid))
        j = pool[np.argmin(mags[pool])]
        t_min, m_min = float(grid[j]), float(mags[j])
    return ZeroScan("no_zero_found", t_min, m_min, floor, (lo, hi), step,
                    sorted(candidates, key=lambda c: c["abs"])[:5], unresolved)


def noninjective_witness(density, w_grid, g=np.square, delta=np.sign, a=2.0, panels=2 ** 12):
    """Evaluate ``I(w) = integral_{-a}^{a} p_E(w - g(u)) delta(u) du`` on ``w_grid``.

    The negative half uses the mirror image of the positive-half nodes, so
    for an even ``g`` and odd ``delta`` the two halves cancel term by term.
    Returns ``(max |I|, I values)``.
    """
    if not a > 0:
        raise ConfigurationError("domain half-width must be positive")
    u, wts = _simpson_nodes(0.0, a, panels)
    w_grid = np.atleast_1d(np.asarray(w_grid, dtype=float))
    values = np.empty(w_grid.shape)
    gp, gm = g(u), g(-u)
    dp, dm = delta(u), delta(-u)
    for i, w in enumerate(w_grid):
        pos = density.pdf(w - gp) * dp
        neg = density.pdf(w - gm) * dm
        values[i] = np.sum(wts * pos) + np.sum(wts * neg)
    return float(np.max(np.abs(values))), values
