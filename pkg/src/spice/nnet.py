"""Small feed-forward networks with hand-written backpropagation.

The networks here are dense ReLU stacks whose layers may receive extra
standard-Gaussian input units ("injected noise"), which is all the
generator and the outcome regression need.  Parameters live in one flat
vector so that Adam updates are a handful of vectorised operations.
"""

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from ._rng import stream
from .errors import ConfigurationError, TrainingDivergedError

ACTIVATIONS = ("relu", "linear")


@dataclass(frozen=True)
class LayerSpec:
    """One dense layer.

    ``n_in`` counts the ``noise`` standard-Gaussian units that are appended
    to the previous layer's output before the affine map.
    """

    n_in: int
    n_out: int
    activation: str = "relu"
    noise: int = 0

    def __post_init__(self):
        if self.n_in < 1 or self.n_out < 1:
            raise ConfigurationError(
                f"layer widths must be positive, got {self.n_in}->{self.n_out}")
        if self.noise < 0 or self.noise >= self.n_in:
            raise ConfigurationError(f"invalid noise width {self.noise}")
        if self.activation not in ACTIVATIONS:
            raise ConfigurationError(f"unknown activation {self.activation!r}")

    @property
    def n_signal(self):
        return self.n_in - self.noise


@dataclass(frozen=True)
class NetSpec:
    layers: tuple
    metadata: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        layers = tuple(self.layers)
        object.__setattr__(self, "layers", layers)
        if not layers:
            raise ConfigurationError("a network needs at least one layer")
        for prev, layer in zip(layers, layers[1:]):
            if layer.n_in != prev.n_out + layer.noise:
                raise ConfigurationError(
                    f"layer input width {layer.n_in} does not match "
                    f"{prev.n_out} outputs + {layer.noise} noise units")
        if layers[-1].activation != "linear":
            raise ConfigurationError("the final layer must be linear")

    @classmethod
    def mlp(cls, widths, noise=None, metadata=None):
        """Build a ReLU MLP from signal widths ``[in, h1, ..., out]``.

        ``noise[i]`` extra units are appended to the input of layer ``i``.
        """
        widths = list(widths)
        if len(widths) < 2:
            raise ConfigurationError("need at least input and output widths")
        if any(w < 1 for w in widths):
            raise ConfigurationError(f"zero-width layer in {widths}")
        noise = list(noise) if noise is not None else [0] * (len(widths) - 1)
        if len(noise) != len(widths) - 1:
            raise ConfigurationError("noise layout must have one entry per layer")
        layers = []
        for i, (a, b) in enumerate(zip(widths[:-1], widths[1:])):
            act = "linear" if i == len(widths) - 2 else "relu"
            layers.append(LayerSpec(a + noise[i], b, act, noise[i]))
        return cls(tuple(layers), dict(metadata or {}))

    @property
    def in_width(self):
        return self.layers[0].n_signal

    @property
    def out_width(self):
        return self.layers[-1].n_out

    @property
    def noise_layout(self):
        return tuple(layer.noise for layer in self.layers)

    @property
    def n_params(self):
        return sum(layer.n_in * layer.n_out + layer.n_out for layer in self.layers)

    def to_dict(self):
        return {"layers": [asdict(layer) for layer in self.layers],
                "metadata": dict(self.metadata)}

    @classmethod
    def from_dict(cls, data):
        return cls(tuple(LayerSpec(**layer) for layer in data["layers"]),
                   dict(data.get("metadata", {})))


@dataclass
class TrainConfig:
    epochs: int = 4000
    minibatch_count: int = 10
    initial_lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    lr_factor: float = 5.0
    lr_patience: int = 2
    lr_tol: float = 1e-6
    lr_floor: float = 1e-6
    seed: int = 0
    energy_power: float = 1.0
    samples_per_obs: int = 2

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigurationError("epochs must be >= 1")
        if self.minibatch_count < 1:
            raise ConfigurationError("minibatch_count must be >= 1")
        if not self.initial_lr > 0:
            raise ConfigurationError("initial_lr must be positive")
        if self.energy_power != 1.0:
            raise ConfigurationError("only the energy score with power 1 is supported")
        if self.samples_per_obs != 2:
            raise ConfigurationError("the energy loss uses exactly two samples")
        if self.lr_patience < 1:
            raise ConfigurationError("lr_patience must be >= 1")


class Adam:
    """Adam with bias correction over a flat parameter vector."""

    def __init__(self, size, beta1=0.9, beta2=0.999, eps=1e-8):
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0
        self._buf = np.empty(size)

    def step(self, params, grads, lr):
        if not np.all(np.isfinite(grads)):
            raise TrainingDivergedError("non-finite gradient")
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        self.m *= b1
        self.m += (1.0 - b1) * grads
        self.v *= b2
        np.multiply(grads, grads, out=self._buf)
        self._buf *= 1.0 - b2
        self.v += self._buf
        step = lr * math.sqrt(1.0 - b2 ** self.t) / (1.0 - b1 ** self.t)
        np.sqrt(self.v, out=self._buf)
        self._buf += self.eps
        np.divide(self.m, self._buf, out=self._buf)
        self._buf *= step
        params -= self._buf

    def state_dict(self):
        return {"t": self.t, "m": self.m.tolist(), "v": self.v.tolist()}


class AdaptiveLR:
    """Divide the rate by ``factor`` after ``patience`` epochs without improvement.

    An epoch improves when its mean loss beats the best seen so far by at
    least ``tol``.  The rate never increases and never drops below ``floor``.
    """

    def __init__(self, initial, factor=5.0, patience=2, tol=1e-6, floor=1e-6):
        self.lr = float(initial)
        self.factor = factor
        self.patience = patience
        self.tol = tol
        self.floor = min(floor, self.lr)
        self.best = math.inf
        self._stale = 0

    def update(self, epoch_loss):
        if epoch_loss < self.best - self.tol:
            self._stale = 0
        else:
            self._stale += 1
        self.best = min(self.best, epoch_loss)
        if self._stale >= self.patience:
            self.lr = max(self.lr / self.factor, self.floor)
            self._stale = 0
        return self.lr


class ParamState:
    """Weights, biases and optimiser state for one network."""

    def __init__(self, spec, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.spec = spec
        self.params = np.ascontiguousarray(params, dtype=float)
        if self.params.shape != (spec.n_params,):
            raise ConfigurationError("parameter vector does not match the network")
        self.weights, self.biases = _split(self.params, spec)
        self.adam = Adam(spec.n_params, beta1, beta2, eps)
        self.lr = lr

    def copy(self):
        other = ParamState(self.spec, self.params.copy(), self.lr,
                           self.adam.beta1, self.adam.beta2, self.adam.eps)
        other.adam.m[:] = self.adam.m
        other.adam.v[:] = self.adam.v
        other.adam.t = self.adam.t
        return other

    def check_finite(self):
        if not np.all(np.isfinite(self.params)):
            raise TrainingDivergedError("non-finite network parameters")


def _split(flat, spec):
    weights, biases = [], []
    pos = 0
    for layer in spec.layers:
        size = layer.n_in * layer.n_out
        weights.append(flat[pos:pos + size].reshape(layer.n_in, layer.n_out))
        pos += size
        biases.append(flat[pos:pos + layer.n_out])
        pos += layer.n_out
    return weights, biases


def he_init(spec, seed):
    """He initialisation: ``N(0, 2 / fan_in)`` weights and zero biases."""
    rng = stream(seed, "he_init")
    params = np.zeros(spec.n_params)
    weights, _ = _split(params, spec)
    for w in weights:
        w[...] = rng.standard_normal(w.shape) * math.sqrt(2.0 / w.shape[0])
    return ParamState(spec, params)


def draw_noise(spec, n, rng):
    """Standard-Gaussian injection units for ``n`` rows, one array per noisy layer."""
    return [rng.standard_normal((n, layer.noise)) for layer in spec.layers if layer.noise]


def forward(state, spec, x, noises=()):
    """Evaluate the network on a batch.

    ``noises`` holds one ``(n, layer.noise)`` array per noise-receiving
    layer, in layer order.  Returns the output and a cache for `backward`.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[None, :]
    if x.shape[1] != spec.in_width:
        raise ConfigurationError(
            f"input width {x.shape[1]} does not match network ({spec.in_width})")
    noisy = [layer for layer in spec.layers if layer.noise]
    if len(noises) != len(noisy):
        raise ConfigurationError(
            f"expected {len(noisy)} noise arrays, got {len(noises)}")
    inputs = []
    h = x
    k = 0
    for layer, w, b in zip(spec.layers, state.weights, state.biases):
        if layer.noise:
            eps = np.asarray(noises[k], dtype=float)
            k += 1
            if eps.ndim == 1:
                eps = eps[:, None]
            if eps.shape != (h.shape[0], layer.noise):
                raise ConfigurationError(
                    f"noise block has shape {eps.shape}, expected "
                    f"{(h.shape[0], layer.noise)}")
            h = np.concatenate([h, eps], axis=1)
        inputs.append(h)
        z = h @ w
        z += b
        if layer.activation == "relu":
            np.maximum(z, 0.0, out=z)
        h = z
    return h, inputs + [h]


def backward(state, spec, cache, grad_out):
    """Reverse-mode gradient of a scalar loss w.r.t. all parameters.

    ``grad_out`` is the loss gradient w.r.t. the network output.  Returns a
    flat vector laid out like ``state.params``.
    """
    grads = np.empty_like(state.params)
    gw, gb = _split(grads, spec)
    g = np.asarray(grad_out, dtype=float)
    n_layers = len(spec.layers)
    for i in range(n_layers - 1, -1, -1):
        layer = spec.layers[i]
        if layer.activation == "relu":
            g = g * (cache[i + 1][:, :layer.n_out] > 0)
        np.matmul(cache[i].T, g, out=gw[i])
        np.sum(g, axis=0, out=gb[i])
        if i:
            g = g @ state.weights[i][:layer.n_signal].T
    return grads


def energy_loss(observed, sample_1, sample_2):
    """Two-sample energy score with power one for a single observation."""
    o = np.atleast_1d(np.asarray(observed, dtype=float))
    s1 = np.atleast_1d(np.asarray(sample_1, dtype=float))
    s2 = np.atleast_1d(np.asarray(sample_2, dtype=float))
    if not o.shape == s1.shape == s2.shape:
        raise ConfigurationError("observation and samples must share a shape")
    return float(0.5 * (np.linalg.norm(o - s1) + np.linalg.norm(o - s2))
                 - 0.5 * np.linalg.norm(s1 - s2))


def _unit(diff):
    norm = np.sqrt(np.einsum("ij,ij->i", diff, diff))
    safe = np.where(norm > 0, norm, 1.0)
    return norm, diff / safe[:, None] * (norm > 0)[:, None]


def energy_loss_grad(observed, sample_1, sample_2):
    """Mean batch energy loss and its gradients w.r.t. both sample batches.

    Rows are observations.  At coincident points the norm subgradient is
    taken to be zero.
    """
    o = np.asarray(observed, dtype=float)
    s1 = np.asarray(sample_1, dtype=float)
    s2 = np.asarray(sample_2, dtype=float)
    n = o.shape[0]
    d1, u1 = _unit(s1 - o)
    d2, u2 = _unit(s2 - o)
    d12, u12 = _unit(s1 - s2)
    loss = float(np.mean(0.5 * (d1 + d2) - 0.5 * d12))
    g1 = (0.5 * u1 - 0.5 * u12) / n
    g2 = (0.5 * u2 + 0.5 * u12) / n
    return loss, g1, g2


def minibatches(n, count, rng):
    """Shuffle ``range(n)`` and cut it into ``count`` batches.

    All batches have ``n // count`` rows except the last, which absorbs the
    remainder.
    """
    if count < 1:
        raise ConfigurationError("minibatch_count must be >= 1")
    count = min(count, n)
    perm = rng.permutation(n)
    size = n // count
    cuts = [i * size for i in range(1, count)]
    return np.split(perm, cuts)


def predict(state, spec, x, rng=None):
    noises = draw_noise(spec, len(x), rng) if any(spec.noise_layout) else ()
    out, _ = forward(state, spec, x, noises)
    return out


def fit_regression(features, target, hidden=(100,), epochs=2000, initial_lr=0.01,
                   minibatch_count=1, seed=0, lr_floor=1e-6, lr_patience=2):
    """Least-squares MLP regression with Adam and the adaptive rate rule.

    Returns ``(spec, state, history)`` where ``history`` is the list of mean
    epoch losses (half mean squared error).
    """
    features = np.asarray(features, dtype=float)
    target = np.asarray(target, dtype=float).reshape(len(features), -1)
    spec = NetSpec.mlp([features.shape[1], *hidden, target.shape[1]])
    state = he_init(spec, seed)
    schedule = AdaptiveLR(initial_lr, patience=lr_patience, floor=lr_floor)
    state.lr = schedule.lr
    rng = stream(seed, "regression-batches")
    n = len(features)
    history = []
    for epoch in range(epochs):
        batches = [np.arange(n)] if minibatch_count == 1 else minibatches(n, minibatch_count, rng)
        total = 0.0
        for idx in batches:
            xb = features if len(idx) == n else features[idx]
            yb = target if len(idx) == n else target[idx]
            out, cache = forward(state, spec, xb)
            resid = out - yb
            total += 0.5 * float(np.mean(resid ** 2)) * len(idx)
            grads = backward(state, spec, cache, resid / (len(idx) * resid.shape[1]))
            try:
                state.adam.step(state.params, grads, state.lr)
            except TrainingDivergedError as exc:
                raise TrainingDivergedError("regression training diverged", epoch) from exc
        loss = total / n
        if not math.isfinite(loss):
            raise TrainingDivergedError("regression loss is not finite", epoch)
        history.append(loss)
        state.lr = schedule.update(loss)
    return spec, state, history


def save_model(path, spec, state, metadata=None):
    """Write a network as JSON: spec, noise layout, row-major weights, metadata."""
    doc = {
        "spec": spec.to_dict(),
        "noise_layout": list(spec.noise_layout),
        "weights": [w.ravel(order="C").tolist() for w in state.weights],
        "biases": [b.tolist() for b in state.biases],
        "lr": state.lr,
        "metadata": metadata or {},
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1)


def load_model(path):
    with open(path) as fh:
        doc = json.load(fh)
    spec = NetSpec.from_dict(doc["spec"])
    state = ParamState(spec, np.zeros(spec.n_params), lr=doc.get("lr", 1e-3))
    for layer, w, b, wv, bv in zip(spec.layers, state.weights, state.biases,
                                   doc["weights"], doc["biases"]):
        w[...] = np.asarray(wv, dtype=float).reshape(layer.n_in, layer.n_out)
        b[...] = bv
    return spec, state, doc.get("metadata", {})
