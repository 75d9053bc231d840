import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from cbayes.conformal import (ConformalBayes, ConformalGrid, LikelihoodCache, PredictionSet,
                              aoi_predictives, conformal_set, default_grid, exact_rank_coverage,
                              importance_ess, normalized_log_weights, rank, result_record)
from cbayes.errors import DegenerateWeightsError, InputError
from cbayes.likelihoods import Dataset, Datum, GaussianLinear, Logistic
from cbayes.posterior import PosteriorDraws, sample_conjugate_oracle
from oracles import augmented_predictive, brute_force_set


def test_rank_examples():
    assert rank([0.3, 0.3, 0.3]) == 1.0
    assert rank([0.5, 0.4, 0.1]) == pytest.approx(1 / 3)
    assert rank([0.2, 0.5, 0.1, 0.4, 0.3]) == pytest.approx(3 / 5)
    with pytest.raises(InputError):
        rank([0.1])


def test_single_draw_collapse():
    rng = np.random.default_rng(0)
    train = rng.normal(size=(1, 6))
    cache = LikelihoodCache(train, rng.normal(size=(1, 4)))
    scores, ess = aoi_predictives(cache, 2)
    np.testing.assert_allclose(scores[:6], np.exp(train[0]), rtol=1e-14)
    assert scores[6] == pytest.approx(math.exp(cache.grid_loglik[0, 2]), rel=1e-14)
    assert ess == 1.0


def test_uniform_weights():
    rng = np.random.default_rng(1)
    train = rng.normal(size=(50, 4))
    cache = LikelihoodCache(train, np.full((50, 3), -1.7))
    scores, ess = aoi_predictives(cache, 0)
    np.testing.assert_allclose(scores[:4], np.exp(train).mean(axis=0), rtol=1e-13)
    assert ess == pytest.approx(50.0, rel=1e-12)


def test_aoi_matches_explicit_sum():
    rng = np.random.default_rng(2)
    train = rng.normal(size=(200, 7)) * 3
    plug = rng.normal(size=(200, 5)) * 3
    cache = LikelihoodCache(train, plug)
    for g in range(5):
        w = np.exp(plug[:, g] - plug[:, g].max())
        w /= w.sum()
        expected = np.append(w @ np.exp(train), w @ np.exp(plug[:, g]))
        scores, ess = aoi_predictives(cache, g)
        np.testing.assert_allclose(scores, expected, rtol=1e-12)
        assert ess == pytest.approx(1 / np.sum(w**2), rel=1e-12)


def test_underflowing_likelihoods_stay_finite_in_log_space():
    train = np.array([[-800.0, -2.0], [-805.0, -1.0]])
    plug = np.array([[-900.0], [-901.0]])
    log_s, ess, dead = LikelihoodCache(train).log_scores(plug)
    w = np.exp(np.array([0.0, -1.0]))
    w /= w.sum()
    expected0 = math.log(w[0] * math.exp(-800.0 + 800) + w[1] * math.exp(-5.0)) - 800
    assert log_s[0, 0] == pytest.approx(expected0, rel=1e-12)
    assert np.isfinite(log_s).all() and not dead.any()


def test_degenerate_weights():
    cache = LikelihoodCache(np.zeros((3, 2)), np.full((3, 1), -np.inf))
    with pytest.raises(DegenerateWeightsError):
        aoi_predictives(cache, 0)


def _conjugate_setup(n, seed, T=100_000):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, 1))
    y = 0.8 * X[:, 0] + rng.normal(size=n)
    data = Dataset(X, y)
    draws = sample_conjugate_oracle([0.0], [[1.0]], 1.0, data, T=T, seed=seed)
    return data, draws


def test_aoi_scores_match_closed_form():
    data, draws = _conjugate_setup(5, seed=3)
    engine = ConformalBayes(draws.model, draws, data)
    x_new = np.array([0.4])
    ys = np.linspace(-3, 3, 13)
    log_s, _, _ = engine.cache.log_scores(engine.plugin_loglik(x_new, ys))
    for k, y_new in enumerate(ys):
        exact = augmented_predictive(data.X, data.y, x_new, y_new, [0.0], [[1.0]], 1.0)
        np.testing.assert_allclose(np.exp(log_s[k]), exact, rtol=0.01)


def test_small_conjugate_set_matches_brute_force():
    data, draws = _conjugate_setup(3, seed=8)
    x_new = np.array([-0.3])
    grid = ConformalGrid.regression(-4.0, 4.0, 60)
    _, pset = conformal_set(draws.model, draws, data, x_new, grid, 0.2)
    inc, _ = brute_force_set(data.X, data.y, x_new, grid.points, 0.2, [0.0], [[1.0]], 1.0)
    np.testing.assert_array_equal(pset.included, inc)


def _linear_engine(seed=0, n=20, T=400):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, 2))
    y = X @ [0.5, -1.0] + rng.normal(size=n)
    data = Dataset(X, y)
    m = GaussianLinear(2, prior="normal")
    params = np.column_stack([rng.normal([0.5, -1.0, 0.0], 0.2, size=(T, 3)),
                              np.abs(rng.normal(1.0, 0.1, size=T))])
    draws = PosteriorDraws(params, m)
    return ConformalBayes(m, draws, data), data


def test_tiny_alpha_includes_whole_grid():
    engine, data = _linear_engine()
    grid = default_grid(data, 40)
    _, pset = engine.conformal_set(np.zeros(2), grid, 1e-9)
    assert pset.included.all()


def test_set_is_threshold_of_profile():
    engine, data = _linear_engine(1)
    grid = default_grid(data, 80)
    prof, pset = engine.conformal_set(np.array([0.3, 0.1]), grid, 0.2)
    np.testing.assert_array_equal(pset.included, prof.pi > 0.2)
    assert np.all(prof.pi >= 1 / (data.n + 1))
    n1 = data.n + 1
    np.testing.assert_allclose(prof.pi * n1, np.round(prof.pi * n1), atol=1e-9)
    assert np.all((prof.ess >= 1.0 - 1e-9) & (prof.ess <= prof.T + 1e-9))


def test_default_grid_rule():
    y = np.array([-2.1, 0.0, 2.4])
    grid = default_grid(Dataset(np.zeros((3, 1)), y), 100)
    assert grid.lo == pytest.approx(-4.1) and grid.hi == pytest.approx(4.4)
    assert grid.spacing == pytest.approx(8.5 / 99)
    two = default_grid(Dataset(np.zeros((3, 1)), y), 2)
    assert two.n == 2
    with pytest.raises(InputError):
        default_grid(Dataset(np.zeros((3, 1)), y), 1)
    with pytest.raises(InputError):
        default_grid(Dataset(np.zeros((2, 1)), [0, 1], kind="classification"))
    wide = default_grid(Dataset(np.zeros((3, 1)), y), 100, pad_scale=3.0)
    assert wide.lo == pytest.approx(-8.1)


def test_grid_validation():
    with pytest.raises(InputError):
        ConformalGrid.regression(1.0, 1.0, 10)
    g = ConformalGrid.classification()
    np.testing.assert_array_equal(g.points, [0.0, 1.0])


def test_prediction_set_intervals_and_measure():
    grid = ConformalGrid.regression(0.0, 9.0, 10)
    inc = np.array([0, 1, 1, 0, 0, 1, 0, 1, 1, 1], dtype=bool)
    ps = PredictionSet(grid, inc, 0.2)
    assert ps.intervals == [(1.0, 2.0), (5.0, 5.0), (7.0, 9.0)]
    assert ps.measure == pytest.approx(6.0)
    assert ps.contains(7.4) and not ps.contains(3.4)
    empty = PredictionSet(grid, np.zeros(10, dtype=bool), 0.2)
    assert empty.is_empty and empty.intervals == [] and empty.measure == 0.0


def test_exact_rank_coverage_on_grid_point():
    engine, data = _linear_engine(2)
    grid = default_grid(data, 50)
    x = np.array([0.2, -0.4])
    for k in (10, 25, 40):
        y = float(grid.points[k])
        cov_grid, cov_exact = engine.exact_rank_coverage(Datum(tuple(x), y), grid, 0.2)
        assert cov_grid == cov_exact
    wrapped = exact_rank_coverage(engine.model, engine.draws, data, Datum(tuple(x), 0.0), grid,
                                  0.2)
    assert wrapped == engine.exact_rank_coverage(Datum(tuple(x), 0.0), grid, 0.2)


@pytest.mark.filterwarnings("ignore:overflow:RuntimeWarning")
def test_degenerate_policy():
    m = GaussianLinear(0, prior="normal", fixed_tau=0.01)
    draws = PosteriorDraws(np.zeros((5, 1)), m)
    data = Dataset(np.zeros((3, 0)), [0.0, 0.001, -0.001])
    # log densities finite in float64 never degenerate; z**2 overflow does
    grid = ConformalGrid.regression(-1e160, 1e160, 11)
    with pytest.raises(DegenerateWeightsError) as info:
        ConformalBayes(m, draws, data).profile(np.zeros(0), grid)
    assert info.value.value == -1e160
    prof = ConformalBayes(m, draws, data, on_degenerate="min-rank").profile(np.zeros(0), grid)
    assert prof.degenerate[0] and not prof.degenerate[5]
    assert prof.pi[0] == 1 / 4
    assert np.isnan(prof.ess[0])


def test_classification_sets_can_be_empty():
    rng = np.random.default_rng(5)
    X = rng.normal(size=(40, 1))
    y = (X[:, 0] > 0).astype(float)
    data = Dataset(X, y, kind="classification")
    m = Logistic(1, prior="normal")
    draws = PosteriorDraws(np.column_stack([rng.normal(6, 0.5, 300), rng.normal(0, 0.2, 300)]), m)
    engine = ConformalBayes(m, draws, data)
    grid = ConformalGrid.classification()
    prof, pset = engine.conformal_set(np.array([0.01]), grid, 0.45)
    assert set(pset.labels) <= {0, 1}
    # alpha above the largest rank empties the set
    _, empty = engine.conformal_set(np.array([0.01]), grid, min(0.99, prof.pi.max()))
    assert empty.labels == []


def test_result_record_is_json():
    engine, data = _linear_engine(3)
    grid = default_grid(data, 20)
    prof, pset = engine.conformal_set(np.zeros(2), grid, 0.2)
    rec = result_record(prof, pset, dump_rank=True, row=0)
    doc = json.loads(json.dumps(rec))
    for key in ("test_x", "alpha", "grid", "pi", "ess", "set", "measure", "method"):
        assert key in doc
    assert len(doc["pi"]) == 20
    assert "pi" not in result_record(prof, pset, dump_rank=False)


@given(hnp.arrays(np.float64, st.tuples(st.integers(1, 60), st.integers(1, 5)),
                  elements=st.floats(-700, 50)))
@settings(max_examples=100, deadline=None)
def test_weights_normalise_and_ess_bounded(log_w):
    lw = log_w.T
    wt = np.exp(normalized_log_weights(lw))
    assert np.all(np.abs(wt.sum(axis=-1) - 1.0) <= 1e-12)
    ess = importance_ess(lw)
    T = lw.shape[-1]
    assert np.all(ess >= 1.0 - 1e-9) and np.all(ess <= T * (1 + 1e-12))


def test_ess_equality_cases():
    T = 37
    assert importance_ess(np.full(T, 2.5)) == pytest.approx(T, rel=1e-14)
    one_hot = np.full(T, -np.inf)
    one_hot[4] = 0.0
    assert importance_ess(one_hot) == 1.0
    rng = np.random.default_rng(0)
    assert 1.0 < importance_ess(rng.normal(size=T)) < T
