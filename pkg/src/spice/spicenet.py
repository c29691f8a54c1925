"""Two-step proxy-based estimation of a causal function.

Step one trains a noise-injected generator for ``W | (X, Y)`` whose last
layer adds a draw of the proxy noise ``E``; what the network produces before
that addition is a draw of a linear image of the confounder given
``(X, Y)``.  Step two regression-adjusts for those draws (G-computation).

The baselines share the second step: ``adj_u`` adjusts for the hidden
confounder, ``adj_w`` for the raw proxy and ``no_adj`` for nothing.
"""

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import nnet
from ._rng import derive_seed, stream
from .errors import ConfigurationError, InsufficientDataError, TrainingDivergedError
from .estimate import CausalEstimate
from .nnet import NetSpec, TrainConfig
from .scm import AdditiveMechanism, destandardize_estimate, standardize

METHODS = ("spice_net", "spice_net_approx", "adj_u", "adj_w", "no_adj")

# signal widths of the five hidden layers; one noise unit is appended to the
# input and to hidden layers 1-4, so the widths including noise are 10, 15,
# 25, 15, 10
GENERATOR_HIDDEN = (9, 14, 24, 14, 10)
GENERATOR_NOISE = (1, 1, 1, 1, 1, 0)

# SPICE-Net-Approx starting values for a three-dimensional Gaussian E
APPROX_MV_LOC = (1.0, 2.0, 3.0)
APPROX_MV_COV = ((1.0, 0.7, 0.4), (0.7, 1.0, -0.2), (0.4, -0.2, 1.0))


def _softplus(x):
    return np.logaddexp(0.0, x)


def _softplus_inv(y):
    y = np.asarray(y, dtype=float)
    return np.where(y > 30, y, np.log(np.expm1(np.minimum(y, 30))))


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


class NoiseHead:
    """Sampler for the proxy noise added in the generator's last layer.

    In ``fixed`` mode the law is known and never changes.  In ``learnable``
    mode it is reparameterised through unconstrained parameters (softplus for
    scales, rates and Cholesky diagonals) so that gradients flow through the
    draws; ``bound`` caps the marginal standard deviation of every
    coordinate, since the noise cannot vary more than the proxy itself.
    """

    FAMILIES = ("gaussian", "exponential", "multivariate_gaussian")

    def __init__(self, family, d, loc=None, scale=None, rate=None, mean=None, cov=None,
                 mode="fixed", bound=None):
        if family not in self.FAMILIES:
            raise ConfigurationError(f"unknown noise family {family!r}")
        if mode not in ("fixed", "learnable"):
            raise ConfigurationError(f"unknown head mode {mode!r}")
        self.family = family
        self.d = int(d)
        self.mode = mode
        self.bound = None if bound is None else np.broadcast_to(
            np.asarray(bound, dtype=float), (self.d,)).copy()
        if family == "gaussian":
            loc = np.broadcast_to(np.asarray(0.0 if loc is None else loc, float), (self.d,))
            scale = np.broadcast_to(np.asarray(1.0 if scale is None else scale, float), (self.d,))
            # a zero scale (point mass) is allowed only for a fixed head
            if np.any(scale < 0) or (mode == "learnable" and np.any(scale == 0)):
                raise ConfigurationError("noise scale must be positive")
            with np.errstate(divide="ignore"):
                theta = np.concatenate([loc, _softplus_inv(scale)])
        elif family == "exponential":
            rate = np.broadcast_to(np.asarray(1.0 if rate is None else rate, float), (self.d,))
            if np.any(rate <= 0):
                raise ConfigurationError("noise rate must be positive")
            theta = _softplus_inv(rate).astype(float)
        else:
            cov = np.asarray(np.eye(self.d) if cov is None else cov, dtype=float)
            mean = np.broadcast_to(np.asarray(0.0 if mean is None else mean, float), (self.d,))
            try:
                chol = np.linalg.cholesky(cov)
            except np.linalg.LinAlgError:
                raise ConfigurationError("noise covariance must be positive definite") from None
            rows, cols = np.tril_indices(self.d)
            packed = chol[rows, cols].copy()
            diag = rows == cols
            packed[diag] = _softplus_inv(packed[diag])
            theta = np.concatenate([mean, packed])
        self.theta = np.asarray(theta, dtype=float).copy()
        self.adam = nnet.Adam(self.theta.size)
        self.project()

    @property
    def learnable(self):
        return self.mode == "learnable"

    def _cholesky(self):
        rows, cols = np.tril_indices(self.d)
        packed = self.theta[self.d:].copy()
        diag = rows == cols
        packed[diag] = _softplus(packed[diag])
        chol = np.zeros((self.d, self.d))
        chol[rows, cols] = packed
        return chol

    def params(self):
        """Natural parameters as plain Python values."""
        if self.family == "gaussian":
            return {"loc": self.theta[:self.d].tolist(),
                    "scale": _softplus(self.theta[self.d:]).tolist()}
        if self.family == "exponential":
            return {"rate": _softplus(self.theta).tolist()}
        chol = self._cholesky()
        return {"loc": self.theta[:self.d].tolist(), "covariance": (chol @ chol.T).tolist()}

    def marginal_sd(self):
        if self.family == "gaussian":
            return _softplus(self.theta[self.d:])
        if self.family == "exponential":
            return 1.0 / _softplus(self.theta)
        return np.linalg.norm(self._cholesky(), axis=1)

    def sample(self, rng, n):
        """Return ``(e, base)``: ``n`` draws and the base variates behind them."""
        if self.family == "gaussian":
            z = rng.standard_normal((n, self.d))
            return self.theta[:self.d] + _softplus(self.theta[self.d:]) * z, z
        if self.family == "exponential":
            v = rng.random((n, self.d))
            return -np.log1p(-v) / _softplus(self.theta), v
        z = rng.standard_normal((n, self.d))
        return self.theta[:self.d] + z @ self._cholesky().T, z

    def grad(self, base, e, grad_e):
        """Pathwise gradient of the loss w.r.t. ``theta`` given ``dL/de``."""
        if self.family == "gaussian":
            s = self.theta[self.d:]
            return np.concatenate([grad_e.sum(axis=0),
                                   (grad_e * base).sum(axis=0) * _sigmoid(s)])
        if self.family == "exponential":
            r = self.theta
            rate = _softplus(r)
            return (grad_e * (-e / rate)).sum(axis=0) * _sigmoid(r)
        rows, cols = np.tril_indices(self.d)
        full = grad_e.T @ base
        packed = full[rows, cols]
        diag = rows == cols
        packed[diag] *= _sigmoid(self.theta[self.d:][diag])
        return np.concatenate([grad_e.sum(axis=0), packed])

    def step(self, grads, lr):
        if self.learnable:
            self.adam.step(self.theta, grads, lr)
            self.project()

    def project(self):
        """Clip the marginal standard deviations to ``bound``."""
        if self.bound is None:
            return
        if self.family == "gaussian":
            s = self.theta[self.d:]
            over = _softplus(s) > self.bound
            s[over] = _softplus_inv(self.bound[over])
        elif self.family == "exponential":
            over = 1.0 / _softplus(self.theta) > self.bound
            self.theta[over] = _softplus_inv(1.0 / self.bound[over])
        else:
            chol = self._cholesky()
            norms = np.linalg.norm(chol, axis=1)
            over = norms > self.bound
            if np.any(over):
                chol[over] *= (self.bound[over] / norms[over])[:, None]
                rows, cols = np.tril_indices(self.d)
                packed = chol[rows, cols]
                diag = rows == cols
                packed[diag] = _softplus_inv(packed[diag])
                self.theta[self.d:] = packed

    def describe(self):
        return {"family": self.family, "mode": self.mode, "d": self.d, **self.params()}


def fixed_head(mechanism, standardization=None):
    """The known noise law, rescaled to standardised proxy units.

    Standardising ``W`` divides ``E`` by the proxy standard deviations; the
    centring only shifts the location, which the network absorbs.
    """
    if not isinstance(mechanism, AdditiveMechanism):
        raise ConfigurationError("SPICE-Net needs an additive error mechanism W = AU + E")
    noise = mechanism.noise
    d = mechanism.d
    sd = np.ones(d) if standardization is None else np.asarray(standardization.w_sd, float)
    if noise.family == "gaussian":
        return NoiseHead("gaussian", d, loc=noise.loc / sd, scale=noise.scale / sd)
    if noise.family == "exponential":
        return NoiseHead("exponential", d, rate=noise.rate * sd)
    cov = np.asarray(noise.cov) / np.outer(sd, sd)
    return NoiseHead("multivariate_gaussian", d, mean=np.asarray(noise.mean) / sd, cov=cov)


def approx_head(family, d, bound=1.0):
    """Learnable head with starting values at the proxy's own spread."""
    if family == "gaussian":
        return NoiseHead("gaussian", d, loc=1.0, scale=bound, mode="learnable", bound=bound)
    if family == "exponential":
        return NoiseHead("exponential", d, rate=1.0 / np.asarray(bound, float),
                         mode="learnable", bound=bound)
    if d == len(APPROX_MV_LOC):
        mean, cov = np.asarray(APPROX_MV_LOC), np.asarray(APPROX_MV_COV)
    else:
        mean, cov = np.arange(1.0, d + 1.0), np.eye(d)
    sd = np.broadcast_to(np.asarray(bound, float), (d,))
    return NoiseHead("multivariate_gaussian", d, mean=mean, cov=cov * np.outer(sd, sd),
                     mode="learnable", bound=bound)


@dataclass
class GeneratorNet:
    spec: NetSpec
    head: NoiseHead
    state: nnet.ParamState
    history: dict = field(default_factory=dict)

    @property
    def d(self):
        return self.spec.out_width

    def confounder(self, inputs, rng):
        """Pre-noise outputs for each row of ``inputs = [x, y]``."""
        out, _ = nnet.forward(self.state, self.spec, inputs,
                              nnet.draw_noise(self.spec, len(inputs), rng))
        return out

    def sample_proxy(self, inputs, rng):
        """Generator output ``w``, the pre-noise part and the added ``e``."""
        pre = self.confounder(inputs, rng)
        e, _ = self.head.sample(rng, len(inputs))
        return pre + e, pre, e


def build_generator(d, head, seed, p=1):
    """He-initialised generator taking ``(x, y)`` and emitting ``d`` proxy coordinates."""
    if d < 1:
        raise ConfigurationError("proxy dimension must be >= 1")
    if head.d != d:
        raise ConfigurationError(f"noise head has dimension {head.d}, proxy has {d}")
    spec = NetSpec.mlp([p + 1, *GENERATOR_HIDDEN, d], noise=GENERATOR_NOISE,
                       metadata={"role": "generator",
                                 "noise_sites": "one unit at the input and hidden layers 1-4"})
    return GeneratorNet(spec, head, nnet.he_init(spec, seed))


def _generator_inputs(data):
    return np.column_stack([data.x, data.y])


def _energy_pass(gen, inputs, w, rng):
    n = len(inputs)
    both = np.concatenate([inputs, inputs])
    pre, cache = nnet.forward(gen.state, gen.spec, both, nnet.draw_noise(gen.spec, 2 * n, rng))
    e, base = gen.head.sample(rng, 2 * n)
    s = pre + e
    loss, g1, g2 = nnet.energy_loss_grad(w, s[:n], s[n:])
    return loss, cache, np.concatenate([g1, g2]), e, base


def train_generator(gen, data, cfg=None):
    """Fit the generator to ``W | (X, Y)`` by minimising the energy loss.

    Every observation in a minibatch gets two independent draws of the
    injected noise and of ``E``.  ``gen`` is updated in place and returned;
    ``gen.history`` records the per-epoch loss, learning rate and head
    parameters.
    """
    cfg = cfg or TrainConfig(lr_patience=50)
    if data.standardization is None:
        raise ConfigurationError("train_generator expects standardised data")
    inputs = _generator_inputs(data)
    w = data.w
    if w.shape[1] != gen.d:
        raise ConfigurationError("proxy dimension does not match the generator")
    n = len(w)
    state = gen.state
    state.adam = nnet.Adam(state.params.size, cfg.beta1, cfg.beta2, cfg.eps)
    gen.head.adam = nnet.Adam(gen.head.theta.size, cfg.beta1, cfg.beta2, cfg.eps)
    schedule = nnet.AdaptiveLR(cfg.initial_lr, cfg.lr_factor, cfg.lr_patience,
                               cfg.lr_tol, cfg.lr_floor)
    state.lr = schedule.lr
    order_rng = stream(cfg.seed, "generator", "order")
    noise_rng = stream(cfg.seed, "generator", "noise")
    init_loss = _energy_pass(gen, inputs, w, stream(cfg.seed, "generator", "probe"))[0]
    losses, lrs, heads = [], [], []
    for epoch in range(cfg.epochs):
        total = 0.0
        for idx in nnet.minibatches(n, cfg.minibatch_count, order_rng):
            loss, cache, grad_out, e, base = _energy_pass(gen, inputs[idx], w[idx], noise_rng)
            if not math.isfinite(loss):
                raise TrainingDivergedError("energy loss is not finite", epoch,
                                            snapshot=state.params.copy())
            grads = nnet.backward(state, gen.spec, cache, grad_out)
            try:
                state.adam.step(state.params, grads, state.lr)
                if gen.head.learnable:
                    gen.head.step(gen.head.grad(base, e, grad_out), state.lr)
            except TrainingDivergedError as exc:
                raise TrainingDivergedError("generator training diverged", epoch,
                                            snapshot=state.params.copy()) from exc
            total += loss * len(idx)
        losses.append(total / n)
        lrs.append(state.lr)
        if gen.head.learnable:
            heads.append(gen.head.marginal_sd().tolist())
        state.lr = schedule.update(losses[-1])
    gen.history = {"initial_loss": init_loss, "loss": losses, "lr": lrs,
                   "head_sd": heads, "final_loss": losses[-1], "final_lr": state.lr,
                   "epochs": cfg.epochs}
    return gen


def sample_confounder(gen, x, y, m, seed):
    """``m`` draws of the recovered confounder at a single ``(x, y)``."""
    if m == 0:
        return np.empty((0, gen.d))
    row = np.concatenate([np.atleast_1d(np.asarray(x, dtype=float)), [float(y)]])
    return gen.confounder(np.tile(row, (m, 1)), stream(seed, "confounder"))


def sample_confounders(gen, data, seed, draws=1):
    """``draws`` recovered-confounder draws per observation, stacked draw-major."""
    inputs = np.tile(_generator_inputs(data), (draws, 1))
    return gen.confounder(inputs, stream(seed, "confounder"))


@dataclass
class RegressionConfig:
    hidden: int = 100
    epochs: int = 2000
    initial_lr: float = 0.01
    minibatch_count: int = 1
    lr_patience: int = 10
    seed: int = 0


class _AdjustedMean:
    """``x0 -> mean_i m(z_i, x0)`` for a one-hidden-layer ReLU regression."""

    def __init__(self, spec, state, z, chunk_rows=200_000):
        w1, w2 = state.weights
        b1, b2 = state.biases
        q = z.shape[1]
        self.base = (z @ w1[:q] if q else 0.0) + b1
        self.base = np.broadcast_to(self.base, (max(len(z), 1), len(b1))).copy()
        self.wx = w1[q:].copy()
        self.w2 = w2[:, 0].copy()
        self.b2 = float(b2[0])
        self.chunk = max(1, chunk_rows // len(self.base))

    def __call__(self, x):
        x = np.asarray(x, dtype=float).reshape(-1, self.wx.shape[0])
        out = np.empty(len(x))
        for start in range(0, len(x), self.chunk):
            xs = x[start:start + self.chunk]
            h = self.base[None, :, :] + (xs @ self.wx)[:, None, :]
            np.maximum(h, 0.0, out=h)
            out[start:start + self.chunk] = h.mean(axis=1) @ self.w2 + self.b2
        return out


def regression_adjust(z, x, y, grid=None, cfg=None, treatment_kind="continuous"):
    """G-computation with a one-hidden-layer network.

    Fits ``m(z, x) ~ E[Y | Z = z, X = x]`` by least squares and returns the
    estimate ``theta(x0) = mean_i m(z_i, x0)``.  An empty ``z`` gives the
    unadjusted regression of ``Y`` on ``X``.
    """
    cfg = cfg or RegressionConfig()
    x = np.asarray(x, dtype=float)
    x = x[:, None] if x.ndim == 1 else x
    y = np.asarray(y, dtype=float).ravel()
    n = len(y)
    z = np.empty((n, 0)) if z is None else np.asarray(z, dtype=float).reshape(n, -1)
    if n < 10:
        raise InsufficientDataError(f"regression adjustment needs >= 10 rows, got {n}")
    if len(x) != n:
        raise ConfigurationError("z, x and y must have the same number of rows")
    spec, state, history = nnet.fit_regression(
        np.hstack([z, x]), y, hidden=(cfg.hidden,), epochs=cfg.epochs,
        initial_lr=cfg.initial_lr, minibatch_count=cfg.minibatch_count, seed=cfg.seed,
        lr_patience=cfg.lr_patience)
    func = _AdjustedMean(spec, state, z)
    est = CausalEstimate(func, treatment_kind, (float(x.min()), float(x.max())),
                         {"adjustment_dim": z.shape[1], "regression_final_loss": history[-1],
                          "regression_final_lr": state.lr}, scale="fitted")
    if grid is not None:
        values, flags = est.evaluate(grid, return_flags=True)
        est.provenance["grid"] = np.asarray(grid, dtype=float).ravel().tolist()
        est.provenance["grid_values"] = values.tolist()
        est.provenance["grid_extrapolated"] = flags.tolist()
    return est


@dataclass
class EstimateConfig:
    generator: TrainConfig = field(default_factory=lambda: TrainConfig(lr_patience=50))
    regression: RegressionConfig = field(default_factory=RegressionConfig)
    confounder_draws: int = 1
    approx_family: str = None

    @classmethod
    def from_dict(cls, data):
        data = dict(data or {})
        gen = TrainConfig(**{"lr_patience": 50, **data.pop("generator", {})})
        reg = RegressionConfig(**data.pop("regression", {}))
        unknown = set(data) - {"confounder_draws", "approx_family"}
        if unknown:
            raise ConfigurationError(f"unknown estimate config keys {sorted(unknown)}")
        return cls(gen, reg, **data)

    def to_dict(self):
        return {"generator": asdict(self.generator), "regression": asdict(self.regression),
                "confounder_draws": self.confounder_draws, "approx_family": self.approx_family}

    def digest(self):
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def estimate(method, data, mechanism=None, cfg=None, seed=0):
    """Estimate the causal function with one of `METHODS`.

    ``data`` is on its raw scale; it is standardised internally (a binary
    treatment is left alone) and the returned estimate is mapped back to raw
    units.
    """
    if method not in METHODS:
        raise ConfigurationError(f"unknown method {method!r}; choose from {METHODS}")
    cfg = cfg or EstimateConfig()
    meta = data.standardization
    std = data if meta is not None else standardize(data)
    meta = std.standardization
    reg_cfg = replace(cfg.regression, seed=derive_seed(seed, method, "regression"))
    provenance = {"method": method, "seed": seed, "config_hash": cfg.digest()}
    artifacts = {}
    z = None
    if method == "adj_u":
        if std.u_hidden is None:
            raise ConfigurationError("adj_u needs the hidden confounder column u")
        z = std.u_hidden
    elif method == "adj_w":
        z = std.w
    elif method in ("spice_net", "spice_net_approx"):
        if method == "spice_net":
            if mechanism is None:
                raise ConfigurationError("spice_net needs the error mechanism")
            head = fixed_head(mechanism, meta)
        else:
            family = cfg.approx_family or (
                mechanism.noise.family if isinstance(mechanism, AdditiveMechanism) else None)
            if family is None:
                raise ConfigurationError(
                    "spice_net_approx needs the noise family (mechanism or approx_family)")
            head = approx_head(family, std.d, bound=std.w.std(axis=0, ddof=1))
        gen_cfg = replace(cfg.generator, seed=derive_seed(seed, method, "generator"))
        gen = build_generator(std.d, head, gen_cfg.seed, p=std.p)
        train_generator(gen, std, gen_cfg)
        draws = max(1, int(cfg.confounder_draws))
        z = sample_confounders(gen, std, derive_seed(seed, method, "draws"), draws)
        provenance.update({"generator_final_loss": gen.history["final_loss"],
                           "generator_initial_loss": gen.history["initial_loss"],
                           "generator_final_lr": gen.history["final_lr"],
                           "noise_head": head.describe()})
        artifacts["generator"] = gen
        if draws > 1:
            x, y = np.tile(std.x, (draws, 1)), np.tile(std.y, draws)
            fitted = regression_adjust(z, x, y, cfg=reg_cfg, treatment_kind=std.treatment_kind)
            return _finish(fitted, meta, provenance, artifacts)
    fitted = regression_adjust(z, std.x, std.y, cfg=reg_cfg, treatment_kind=std.treatment_kind)
    return _finish(fitted, meta, provenance, artifacts)


def _finish(fitted, meta, provenance, artifacts):
    provenance = {**fitted.provenance, **provenance}
    fitted = replace(fitted, provenance=provenance)
    out = destandardize_estimate(fitted, meta)
    out.artifacts.update(artifacts)
    out.artifacts["standardized"] = fitted
    return out
