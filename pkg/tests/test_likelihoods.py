import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cbayes.errors import InputError
from cbayes.likelihoods import (Dataset, Datum, GaussianLinear, HierarchicalGaussian, Logistic,
                                dataset_to_csv, log_likelihood, log_prior, model_from_dict,
                                model_to_dict, read_dataset_csv, standardize)

LOG_STD_NORMAL_MODE = -0.5 * math.log(2 * math.pi)


def test_gaussian_loglik_at_mode():
    m = GaussianLinear(2)
    params = np.zeros(m.n_params)
    params[m.columns.index("tau")] = 1.0
    params[m.columns.index("b")] = 1.0
    assert log_likelihood(m, params, Datum((3.0, -7.0), 0.0)) == pytest.approx(-0.9189385, abs=1e-7)


def test_logistic_loglik_at_zero():
    m = Logistic(1)
    params = np.zeros(m.n_params)
    params[m.columns.index("b")] = 1.0
    assert log_likelihood(m, params, Datum((0.4,), 1.0)) == pytest.approx(-0.6931472, abs=1e-7)


def test_hierarchical_loglik_uses_group_coefficients():
    m = HierarchicalGaussian(2)
    params = np.ones(m.n_params)
    params[m.columns.index("theta.1")] = 1.0
    params[m.columns.index("theta.2")] = -5.0
    params[m.columns.index("theta0.1")] = 0.0
    params[m.columns.index("theta0.2")] = 3.0
    value = log_likelihood(m, params, Datum((2.0,), 2.0, group=1))
    # log N(2 | 1*2 + 0, 1)
    assert value == pytest.approx(-0.9189385, abs=1e-7)


def test_hierarchical_needs_group():
    m = HierarchicalGaussian(2)
    with pytest.raises(InputError):
        log_likelihood(m, np.ones(m.n_params), Datum((2.0,), 2.0))


def test_dimension_mismatch_and_bad_tau():
    m = GaussianLinear(2)
    params = np.ones(m.n_params)
    with pytest.raises(InputError):
        log_likelihood(m, params, Datum((1.0,), 0.0))
    with pytest.raises(InputError):
        log_likelihood(m, params[:-1], Datum((1.0, 2.0), 0.0))
    params[m.columns.index("tau")] = -1.0
    with pytest.raises(InputError):
        log_likelihood(m, params, Datum((1.0, 2.0), 0.0))


@pytest.mark.parametrize("c", [0.7, 1.0, 2.5])
def test_intercept_only_prior(c):
    m = GaussianLinear(0, c=c)
    assert m.columns == ["theta0", "tau", "b"]
    params = np.array([0.3, c, 1.0])
    expected = math.log(math.sqrt(2 / math.pi) / c) - 0.5 - 1.0
    assert log_prior(m, params) == pytest.approx(expected, rel=1e-12)


@pytest.mark.parametrize("model", [GaussianLinear(2), GaussianLinear(1, prior="normal"),
                                   HierarchicalGaussian(3)])
def test_prior_support_violation(model):
    params = np.ones(model.n_params)
    params[model.columns.index("tau")] = -0.5
    assert log_prior(model, params) == -math.inf


def test_logistic_laplace_scale_violation():
    m = Logistic(2)
    params = np.ones(m.n_params)
    params[m.columns.index("b")] = 0.0
    assert log_prior(m, params) == -math.inf


def test_hierarchical_prior_standard_values():
    m = HierarchicalGaussian(3)
    params = np.zeros(m.n_params)
    for name in ("s", "s0", "tau"):
        params[m.columns.index(name)] = 1.0
    n_locations = 3 + 3 + 1 + 1
    expected = n_locations * LOG_STD_NORMAL_MODE - 3.0
    assert log_prior(m, params) == pytest.approx(expected, rel=1e-12)


def test_laplace_prior_components():
    m = GaussianLinear(1, c=2.0)
    theta, theta0, tau, b = 0.4, -3.0, 1.5, 0.8
    params = np.array([theta, theta0, tau, b])
    expected = (-math.log(2 * b) - abs(theta) / b
                + math.log(math.sqrt(2 / math.pi) / 2.0) - tau**2 / 8.0
                - b)
    assert log_prior(m, params) == pytest.approx(expected, rel=1e-12)


def test_normal_prior_components():
    m = GaussianLinear(2, prior="normal", prior_scale=2.0, fixed_tau=1.0)
    assert m.columns == ["theta.1", "theta.2", "theta0"]
    params = np.array([1.0, -1.0, 0.5])
    lp = sum(-0.5 * (v / 2.0) ** 2 - math.log(2.0) + LOG_STD_NORMAL_MODE for v in params)
    assert log_prior(m, params) == pytest.approx(lp, rel=1e-12)


def test_standardize_population_sd():
    raw = Dataset(np.array([[1.0, 5.0], [2.0, 5.0], [3.0, 5.0]]), [1.0, 2.0, 3.0])
    out = standardize(raw)
    np.testing.assert_allclose(out.X[:, 0], [-1.2247449, 0.0, 1.2247449], atol=1e-7)
    np.testing.assert_array_equal(out.X[:, 1], [0.0, 0.0, 0.0])
    assert out.standardization.x_scale[1] == 1.0
    assert out.standardization.x_scale[0] == pytest.approx(math.sqrt(2 / 3))


@given(st.lists(st.floats(-1e3, 1e3), min_size=3, max_size=30))
@settings(max_examples=50, deadline=None)
def test_standardize_moments_and_idempotence(values):
    X = np.array(values).reshape(-1, 1)
    raw = Dataset(X, np.array(values))
    out = standardize(raw)
    if out.standardization.x_scale[0] != 1.0:
        assert abs(out.X.mean()) < 1e-9
        assert abs(out.X.std() - 1.0) < 1e-9
    again = standardize(out)
    np.testing.assert_allclose(again.X, out.X, atol=1e-9)


def test_classification_outcome_untouched():
    raw = Dataset(np.array([[1.0], [2.0], [4.0]]), [0, 1, 1], kind="classification")
    out = standardize(raw)
    np.testing.assert_array_equal(out.y, [0.0, 1.0, 1.0])
    assert out.standardization.y_mean is None


def test_gaussian_density_integrates_to_one():
    m = GaussianLinear(1)
    params = np.array([0.7, -0.2, 1.3, 1.0])
    ys = np.linspace(-30, 30, 200001)
    dens = np.exp(m.loglik_matrix(params[None, :], np.full((ys.size, 1), 0.5), ys)[0])
    assert abs(np.trapezoid(dens, ys) - 1.0) < 1e-6


def test_logistic_mass_sums_to_one_and_is_stable():
    m = Logistic(1)
    X = np.array([[1.0], [1.0]])
    for eta in (-1e4, -3.0, 0.0, 2.0, 1e4):
        params = np.array([[eta, 0.0, 1.0]])
        ll = m.loglik_matrix(params, X, np.array([0.0, 1.0]))[0]
        assert np.all(np.isfinite(ll))
        assert math.fsum(np.exp(ll)) == pytest.approx(1.0, abs=1e-15)


@given(st.floats(-5, 5), st.floats(-5, 5), st.floats(0.05, 5), st.floats(-5, 5), st.floats(-5, 5))
@settings(max_examples=50, deadline=None)
def test_hierarchical_single_group_matches_gaussian(theta, theta0, tau, x, y):
    h = HierarchicalGaussian(1)
    hp = np.array([theta, theta0, 0.0, 0.0, 1.0, 1.0, tau])
    g = GaussianLinear(1, prior="normal")
    gp = np.array([theta, theta0, tau])
    assert log_likelihood(h, hp, Datum((x,), y, 1)) == log_likelihood(g, gp, Datum((x,), y))


def test_loglik_is_pure():
    m = GaussianLinear(3)
    rng = np.random.default_rng(0)
    params = np.abs(rng.normal(size=(5, m.n_params))) + 0.1
    X, y = rng.normal(size=(7, 3)), rng.normal(size=7)
    a = m.loglik_matrix(params, X, y)
    b = m.loglik_matrix(params.copy(), X.copy(), y.copy())
    assert np.array_equal(a, b)


def test_fast_sums_match_matrix():
    rng = np.random.default_rng(1)
    X, y = rng.normal(size=(12, 1)), rng.normal(size=12)
    g = np.repeat([1, 2, 3], 4)
    for m in (GaussianLinear(1), HierarchicalGaussian(3)):
        params = np.abs(rng.normal(size=m.n_params)) + 0.2
        full = m.loglik_matrix(params[None, :], X, y, g).sum()
        assert m.loglik_sum(params, X, y, g) == pytest.approx(full, rel=1e-12)
    m = Logistic(1)
    params = np.array([0.4, -0.1, 1.0])
    yb = (y > 0).astype(float)
    assert m.loglik_sum(params, X, yb) == pytest.approx(m.loglik_matrix(params[None], X, yb).sum())


def test_sampler_transform_round_trip():
    rng = np.random.default_rng(2)
    for m in (GaussianLinear(2), HierarchicalGaussian(3, d=2)):
        params = np.abs(rng.normal(size=m.n_params)) + 0.3
        back, _ = m.constrain(m.unconstrain(params))
        np.testing.assert_allclose(back, params, rtol=1e-12)


def test_hierarchical_layout_columns():
    m = HierarchicalGaussian(5)
    assert m.n_params == 15
    assert m.columns[:5] == [f"theta.{j}" for j in range(1, 6)]
    assert m.columns[5:10] == [f"theta0.{j}" for j in range(1, 6)]
    assert m.columns[10:] == ["phi", "phi0", "s", "s0", "tau"]


def test_model_dict_round_trip():
    for m in (GaussianLinear(3, c=0.1), Logistic(2), HierarchicalGaussian(4)):
        again = model_from_dict(model_to_dict(m))
        assert again.columns == m.columns
        assert model_to_dict(again) == model_to_dict(m)
    with pytest.raises(InputError):
        model_from_dict({"family": "poisson"})


def test_dataset_validation():
    with pytest.raises(InputError):
        Dataset.from_data([Datum((1.0,), 0.0), Datum((1.0, 2.0), 0.0)])
    with pytest.raises(InputError):
        Dataset.from_data([Datum((1.0,), 0.0, 1), Datum((1.0,), 0.0)])
    with pytest.raises(InputError):
        Dataset(np.ones((2, 1)), [0.0, 0.5], kind="classification")
    with pytest.raises(InputError):
        Dataset(np.ones((2, 1)), [0.0, np.nan])
    ds = Dataset.from_data([Datum((), 1.0), Datum((), 2.0)])
    assert ds.d == 0 and ds.n == 2


def test_dataset_csv_round_trip(tmp_path):
    rng = np.random.default_rng(3)
    ds = Dataset(rng.normal(size=(6, 2)), rng.normal(size=6), np.array([1, 2, 1, 2, 2, 1]))
    path = tmp_path / "d.csv"
    path.write_text(dataset_to_csv(ds))
    back = read_dataset_csv(path)
    assert np.array_equal(back.X, ds.X) and np.array_equal(back.y, ds.y)
    assert np.array_equal(back.group, ds.group)


def test_dataset_csv_rejects_missing_values(tmp_path):
    path = tmp_path / "d.csv"
    path.write_text("x1,y\n1.0,2.0\n3.0,\n")
    with pytest.raises(InputError, match="missing"):
        read_dataset_csv(path)
    path.write_text("x1,x3,y\n1.0,2.0,1.0\n")
    with pytest.raises(InputError):
        read_dataset_csv(path)
