import numpy as np
import pytest
from hypothesis import given, strategies as st

from gradcheck import run as gradient_check
from spice import nnet
from spice.errors import ConfigurationError, TrainingDivergedError


def test_energy_loss_hand_values():
    assert nnet.energy_loss(0.0, 0.0, 0.0) == 0.0
    assert nnet.energy_loss(0.0, 1.0, -1.0) == 0.0
    assert nnet.energy_loss(0.0, 1.0, 1.0) == 1.0
    assert nnet.energy_loss([3.0, 4.0], [0.0, 0.0], [3.0, 4.0]) == 0.5 * 5 - 0.5 * 5
    with pytest.raises(ConfigurationError):
        nnet.energy_loss([0.0], [0.0, 1.0], [0.0])


def test_energy_loss_grad_matches_finite_differences():
    rng = np.random.default_rng(1)
    o, s1, s2 = rng.standard_normal((3, 4, 2))
    _, g1, _ = nnet.energy_loss_grad(o, s1, s2)
    h = 1e-6
    for i in range(4):
        for j in range(2):
            up, down = s1.copy(), s1.copy()
            up[i, j] += h
            down[i, j] -= h
            fd = (nnet.energy_loss_grad(o, up, s2)[0] - nnet.energy_loss_grad(o, down, s2)[0]) / (2 * h)
            assert abs(fd - g1[i, j]) <= 1e-5 * max(abs(fd), 1e-3)


def test_energy_loss_grad_zero_at_coincident_points():
    o = np.zeros((1, 2))
    loss, g1, g2 = nnet.energy_loss_grad(o, o, o)
    assert loss == 0 and not g1.any() and not g2.any()


def test_parameter_gradients_small_nets():
    errors = gradient_check(nets=5, points=3, seed=7)
    assert max(errors) < 1e-4


def test_he_init_variance():
    spec = nnet.NetSpec.mlp([10, 4])
    draws = np.concatenate([nnet.he_init(spec, s).weights[0].ravel() for s in range(2500)])
    assert abs(draws.var() - 0.2) < 0.02
    assert not nnet.he_init(spec, 0).biases[0].any()


def test_he_init_deterministic():
    spec = nnet.NetSpec.mlp([3, 5, 2], noise=[1, 1])
    assert np.array_equal(nnet.he_init(spec, 4).params, nnet.he_init(spec, 4).params)
    assert not np.array_equal(nnet.he_init(spec, 4).params, nnet.he_init(spec, 5).params)


def test_spec_validation():
    with pytest.raises(ConfigurationError):
        nnet.NetSpec.mlp([3, 0, 1])
    with pytest.raises(ConfigurationError):
        nnet.LayerSpec(0, 2)
    with pytest.raises(ConfigurationError):
        nnet.NetSpec((nnet.LayerSpec(2, 3), nnet.LayerSpec(4, 1, "linear")))
    with pytest.raises(ConfigurationError):
        nnet.NetSpec((nnet.LayerSpec(2, 1, "relu"),))
    spec = nnet.NetSpec.mlp([2, 9, 1], noise=[1, 1])
    assert spec.noise_layout == (1, 1) and spec.in_width == 2
    assert nnet.NetSpec.from_dict(spec.to_dict()) == spec


def test_forward_zero_weights_gives_last_bias():
    spec = nnet.NetSpec.mlp([3, 4, 2])
    state = nnet.ParamState(spec, np.zeros(spec.n_params))
    state.biases[-1][:] = [1.5, -2.0]
    out, _ = nnet.forward(state, spec, np.ones((5, 3)))
    assert np.array_equal(out, np.tile([1.5, -2.0], (5, 1)))


def test_forward_identity():
    spec = nnet.NetSpec.mlp([3, 3])
    state = nnet.ParamState(spec, np.zeros(spec.n_params))
    state.weights[0][:] = np.eye(3)
    x = np.random.default_rng(0).standard_normal((4, 3))
    assert np.array_equal(nnet.forward(state, spec, x)[0], x)


def test_forward_width_errors():
    spec = nnet.NetSpec.mlp([2, 3, 1], noise=[1, 0])
    state = nnet.he_init(spec, 0)
    with pytest.raises(ConfigurationError):
        nnet.forward(state, spec, np.ones((2, 3)), [np.ones((2, 1))])
    with pytest.raises(ConfigurationError):
        nnet.forward(state, spec, np.ones((2, 2)), [np.ones((2, 2))])
    with pytest.raises(ConfigurationError):
        nnet.forward(state, spec, np.ones((2, 2)))


def test_adam_quadratic():
    target = np.array([1.0, -2.0, 0.5])
    p = np.zeros(3)
    adam = nnet.Adam(3)
    for _ in range(500):
        adam.step(p, 2 * (p - target), 0.05)
    assert np.max(np.abs(p - target)) < 1e-3


def test_adam_zero_gradient_only_decays_moments():
    p = np.array([1.0, 2.0])
    adam = nnet.Adam(2)
    adam.step(p, np.array([1.0, 1.0]), 0.1)
    before, m = p.copy(), adam.m.copy()
    adam.step(p, np.zeros(2), 0.0)
    assert np.array_equal(p, before)
    np.testing.assert_allclose(adam.m, 0.9 * m)
    with pytest.raises(TrainingDivergedError):
        adam.step(p, np.array([np.nan, 0.0]), 0.1)


@given(st.lists(st.floats(0, 10), min_size=1, max_size=60))
def test_adaptive_lr_never_increases(losses):
    sched = nnet.AdaptiveLR(1e-2)
    lrs = [sched.lr] + [sched.update(v) for v in losses]
    assert all(b <= a for a, b in zip(lrs, lrs[1:]))
    assert min(lrs) >= 1e-6


def test_adaptive_lr_rule():
    sched = nnet.AdaptiveLR(1e-2, factor=5, patience=2)
    assert sched.update(1.0) == 1e-2
    assert sched.update(1.0) == 1e-2
    assert sched.update(1.0) == pytest.approx(2e-3)


@given(st.integers(1, 200), st.integers(1, 12))
def test_minibatches_partition(n, count):
    count = min(count, n)
    batches = nnet.minibatches(n, count, np.random.default_rng(0))
    assert len(batches) == count
    assert sorted(np.concatenate(batches).tolist()) == list(range(n))
    sizes = [len(b) for b in batches]
    assert len(set(sizes[:-1])) <= 1 and sizes[-1] >= sizes[0]


def test_energy_score_is_proper_on_a_grid():
    rng = np.random.default_rng(2024)
    n = 10_000
    obs = rng.standard_normal((n, 1))
    z1, z2 = rng.standard_normal((2, n, 1))
    grid = [(mu, sd) for mu in np.arange(-1, 1.01, 0.25) for sd in np.arange(0.25, 2.01, 0.25)]
    scores = [nnet.energy_loss_grad(obs, mu + sd * z1, mu + sd * z2)[0] for mu, sd in grid]
    mu, sd = grid[int(np.argmin(scores))]
    assert (abs(mu), sd) == (0.0, 1.0)


def test_regression_fits_a_line():
    rng = np.random.default_rng(0)
    x = rng.uniform(-2, 2, (400, 1))
    y = 3 * x[:, 0] - 1
    spec, state, hist = nnet.fit_regression(x, y, hidden=(100,), epochs=2000, seed=1,
                                            lr_patience=10)
    assert hist[-1] < hist[0] and hist[-1] < 1e-3
    pred = nnet.predict(state, spec, np.array([[0.5]]))
    assert abs(pred[0, 0] - 0.5) < 0.05


def test_regression_is_deterministic():
    x = np.linspace(-1, 1, 50)[:, None]
    a = nnet.fit_regression(x, x[:, 0] ** 2, hidden=(8,), epochs=50, seed=3)
    b = nnet.fit_regression(x, x[:, 0] ** 2, hidden=(8,), epochs=50, seed=3)
    assert np.array_equal(a[1].params, b[1].params) and a[2] == b[2]


def test_model_json_round_trip(tmp_path):
    spec = nnet.NetSpec.mlp([2, 5, 3, 1], noise=[1, 1, 0])
    state = nnet.he_init(spec, 9)
    nnet.save_model(tmp_path / "m.json", spec, state, {"final_lr": 1e-3})
    spec2, state2, meta = nnet.load_model(tmp_path / "m.json")
    assert spec2 == spec and np.array_equal(state2.params, state.params)
    assert meta == {"final_lr": 1e-3}
