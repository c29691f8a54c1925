"""Finite-difference check of energy-loss parameter gradients on small random nets."""

import numpy as np

from spice import nnet

KINK = 1e-3


def random_net(rng):
    depth = int(rng.integers(1, 4))
    widths = [int(v) for v in rng.integers(1, 9, size=depth + 1)]
    noise = [int(v) for v in rng.integers(0, 3, size=depth)]
    noise[-1] = min(noise[-1], 1)
    # without injected noise both samples coincide and |s1 - s2| sits on its kink
    noise[0] = max(noise[0], 1)
    spec = nnet.NetSpec.mlp(widths, noise=noise)
    return spec, nnet.he_init(spec, int(rng.integers(2**31)))


def _loss(state, spec, x, n1, n2, obs):
    s1, _ = nnet.forward(state, spec, x, n1)
    s2, _ = nnet.forward(state, spec, x, n2)
    return nnet.energy_loss_grad(obs, s1, s2)[0]


def _clear_of_kinks(state, spec, cache, s1, s2, obs):
    for layer, w, b, h in zip(spec.layers, state.weights, state.biases, cache):
        if layer.activation == "relu" and np.min(np.abs(h @ w + b)) <= KINK:
            return False
    dists = [s1 - obs, s2 - obs, s1 - s2]
    return all(np.min(np.linalg.norm(d, axis=1)) > KINK for d in dists)


def check_point(spec, state, rng, rows=3, h=1e-6, max_tries=200):
    """Relative error between analytic and central-difference gradients at one random point."""
    for _ in range(max_tries):
        x = rng.standard_normal((rows, spec.in_width))
        n1 = nnet.draw_noise(spec, rows, rng)
        n2 = nnet.draw_noise(spec, rows, rng)
        obs = rng.standard_normal((rows, spec.out_width))
        both = np.concatenate([x, x])
        noises = [np.concatenate([a, b]) for a, b in zip(n1, n2)]
        out, cache = nnet.forward(state, spec, both, noises)
        s1, s2 = out[:rows], out[rows:]
        if _clear_of_kinks(state, spec, cache, s1, s2, obs):
            break
    else:
        raise RuntimeError("could not find a point away from kinks")
    _, g1, g2 = nnet.energy_loss_grad(obs, s1, s2)
    analytic = nnet.backward(state, spec, cache, np.concatenate([g1, g2]))
    numeric = np.empty_like(analytic)
    for i in range(state.params.size):
        keep = state.params[i]
        state.params[i] = keep + h
        up = _loss(state, spec, x, n1, n2, obs)
        state.params[i] = keep - h
        down = _loss(state, spec, x, n1, n2, obs)
        state.params[i] = keep
        numeric[i] = (up - down) / (2 * h)
    scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric), 1e-12)
    return float(np.linalg.norm(analytic - numeric) / scale)


def run(nets=20, points=5, seed=0):
    rng = np.random.default_rng(seed)
    errors = []
    for _ in range(nets):
        spec, state = random_net(rng)
        errors.extend(check_point(spec, state, rng) for _ in range(points))
    return errors
