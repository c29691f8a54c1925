import numpy as np
import pytest
from hypothesis import given, strategies as st

from spice.errors import ConfigurationError, DegenerateDataError, InvalidMechanismError
from spice.estimate import CausalEstimate
from spice.scm import (BENCHMARK_IDS, AdditiveMechanism, Dataset, NoiseDistribution,
                       PcScmSpec, benchmark_spec, dataset_columns, destandardize,
                       destandardize_estimate, interventional_oracle, sample_dataset,
                       standardize, true_ace, true_causal_function, write_csv)

# Cov(W) for D is A A^T + Sigma_E, worked out by hand from the loadings and noise covariance.
D_COV_W = np.array([[4.0, 0.7, 1.5],
                    [0.7, 2.5, 0.4],
                    [1.5, 0.4, 2.8]])


def test_benchmark_a_shapes_and_positive_proxy_correlation():
    data = sample_dataset(benchmark_spec("A"), 2000, 7)
    assert (data.d, data.p, data.k, data.n) == (1, 1, 1, 2000)
    assert np.corrcoef(data.w[:, 0], data.x[:, 0])[0, 1] > 0


def test_unconfounded_treatment_is_independent_of_u():
    a = benchmark_spec("A")
    spec = PcScmSpec(1, 1, 1, a.noise_u, a.noise_e, a.noise_x, a.noise_y,
                     a.f_w, lambda u, n: 0.0 * u + n, a.f_y)
    data = sample_dataset(spec, 10_000, 3)
    assert abs(np.corrcoef(data.u_hidden[:, 0], data.x[:, 0])[0, 1]) < 0.05


def test_benchmark_d_proxy_covariance():
    data = sample_dataset(benchmark_spec("D"), 5000, 1)
    assert (data.k, data.d) == (2, 3)
    np.testing.assert_allclose(np.cov(data.w.T), D_COV_W, atol=0.15)


def test_benchmark_a_second_moments():
    data = sample_dataset(benchmark_spec("A"), 100_000, 11)
    c = np.cov(data.w[:, 0], data.x[:, 0])
    assert abs(c[0, 0] - 2) < 0.05 and abs(c[1, 1] - 2) < 0.05 and abs(c[0, 1] - 1) < 0.05


def test_benchmark_specs_match_their_definitions():
    a = benchmark_spec("A_gaussian")
    for noise in (a.noise_u, a.noise_e, a.noise_x, a.noise_y):
        assert noise.family == "gaussian" and noise.loc == 0 and noise.scale == 1
    u, x, n = np.array([[1.0]]), np.array([[2.0]]), np.array([[0.5]])
    assert np.allclose(a.f_y(u, x, n), 3.5)
    c = benchmark_spec("C_exponential")
    assert all(z.family == "exponential" and z.rate == 1 for z in
               (c.noise_u, c.noise_e, c.noise_x, c.noise_y))
    assert np.allclose(c.f_y(u, x, n), 4 + 2 + 0.5)
    d = benchmark_spec("D_highdim")
    assert (d.k, d.d) == (2, 3)
    assert np.linalg.matrix_rank(d.mechanism.loadings) == 2
    np.testing.assert_array_equal(d.mechanism.loadings, [[1, 1], [0, 1], [1, 0]])
    b = benchmark_spec("B")
    assert b.treatment_kind == "binary"
    xb = sample_dataset(b, 500, 0).x
    assert set(np.unique(xb).tolist()) == {0.0, 1.0}


def test_true_causal_function_values():
    assert true_causal_function("A_gaussian", 2.0) == 2.0
    assert true_causal_function("C_exponential", 0.0) == 1.0
    assert true_causal_function("B_binary", 1) - true_causal_function("B_binary", 0) == 1.0
    assert true_ace("B") == 1.0


@pytest.mark.parametrize("bid, x, truth", [("A", 1.0, 1.0), ("C", 2.0, 7.0)])
def test_interventional_oracle_matches_closed_form(bid, x, truth):
    res = interventional_oracle(benchmark_spec(bid), x, 1_000_000, 5)
    assert abs(res.mean - truth) < 3 * res.se


def test_interventional_oracle_constant_outcome():
    a = benchmark_spec("A")
    spec = PcScmSpec(1, 1, 1, a.noise_u, a.noise_e, a.noise_x, a.noise_y,
                     a.f_w, a.f_x, lambda u, x, n: np.full(len(u), 4.25))
    res = interventional_oracle(spec, 0.3, 100, 0)
    assert res.mean == 4.25 and res.se == 0.0


@pytest.mark.parametrize("bid", ["A", "C", "D"])
def test_oracle_within_four_se_on_grid(bid):
    spec = benchmark_spec(bid)
    for i, x in enumerate(np.linspace(0.1, 2.0, 10)):
        res = interventional_oracle(spec, x, 200_000, i)
        assert abs(res.mean - true_causal_function(bid, x)) < 4 * res.se


def test_sampling_is_deterministic():
    spec = benchmark_spec("D")
    a, b = sample_dataset(spec, 300, 9), sample_dataset(spec, 300, 9)
    for name in ("w", "x", "y", "u_hidden"):
        assert np.array_equal(getattr(a, name), getattr(b, name))
    c = sample_dataset(spec, 300, 10)
    assert not np.array_equal(a.w, c.w)


def test_sample_needs_positive_n():
    with pytest.raises(ConfigurationError):
        sample_dataset(benchmark_spec("A"), 0, 0)


def test_noise_validation():
    with pytest.raises(ConfigurationError):
        NoiseDistribution.gaussian(scale=0.0)
    with pytest.raises(ConfigurationError):
        NoiseDistribution.exponential(rate=-1.0)
    with pytest.raises(ConfigurationError):
        NoiseDistribution.multivariate_gaussian([0, 0], [[1, 2], [2, 1]])
    with pytest.raises(InvalidMechanismError):
        AdditiveMechanism([[1.0, 1.0]], NoiseDistribution.gaussian())


def test_standardize_small_column():
    data = Dataset([1.0, 2.0, 3.0], [3.0, 1.0, 2.0], [0.0, 1.0, 5.0])
    std = standardize(data)
    assert abs(std.w.mean()) < 1e-12 and abs(std.w.std(ddof=1) - 1) < 1e-12


def test_binary_treatment_untouched():
    data = sample_dataset(benchmark_spec("B"), 400, 2)
    std = standardize(data)
    assert np.array_equal(std.x, data.x)
    assert abs(std.w.mean()) < 1e-9 and abs(std.y.std(ddof=1) - 1) < 1e-9


def test_zero_variance_column_rejected():
    with pytest.raises(DegenerateDataError):
        standardize(Dataset([1.0, 1.0, 1.0], [1.0, 2.0, 3.0], [0.0, 1.0, 2.0]))


@given(st.integers(0, 2**31 - 1), st.sampled_from(BENCHMARK_IDS))
def test_standardize_round_trip(seed, bid):
    data = sample_dataset(benchmark_spec(bid), 50, seed)
    std = standardize(data)
    for col in (std.w, std.y):
        assert np.all(np.abs(col.mean(axis=0)) < 1e-9)
        assert np.all(np.abs(col.std(axis=0, ddof=1) - 1) < 1e-9)
    back = destandardize(std)
    for name in ("w", "x", "y", "u_hidden"):
        np.testing.assert_allclose(getattr(back, name), getattr(data, name),
                                   rtol=0, atol=1e-12 * (1 + np.abs(getattr(data, name)).max()))


def test_destandardize_estimate_is_affine_change_of_variables():
    data = sample_dataset(benchmark_spec("C"), 300, 4)
    meta = standardize(data).standardization
    inner = CausalEstimate(lambda v: np.sin(v) + 0.5 * v, scale="fitted", x_hull=(-1.0, 2.0))
    est = destandardize_estimate(inner, meta)
    grid = np.linspace(0.0, 3.0, 20)
    expect = meta.y_sd * inner.evaluate((grid - meta.x_mean[0]) / meta.x_sd[0]) + meta.y_mean
    np.testing.assert_allclose(est.evaluate(grid), expect, rtol=0, atol=1e-10)


def test_csv_columns_and_round_trip(tmp_path):
    data = sample_dataset(benchmark_spec("D"), 20, 0)
    assert dataset_columns(data) == ["w_1", "w_2", "w_3", "x_1", "y", "u_1", "u_2"]
    path = tmp_path / "d.csv"
    write_csv(data, path)
    table = np.loadtxt(path, delimiter=",", skiprows=1)
    assert np.array_equal(table[:, :3], data.w) and np.array_equal(table[:, 4], data.y)
