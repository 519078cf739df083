import copy

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from acmtdc.errors import DimensionMismatch, InsufficientData, ParseError
from acmtdc.forecast import (ForestModel, TreeParams, backtest, best_split, bootstrap_indices,
                             farm_power, feature_vector, fit_forest, fit_tree, forecast_from,
                             hour_features, load_model, make_dataset, model_from_dict,
                             model_to_dict, predict, save_model, speed_to_power, split_candidates,
                             train, tree_rng)
from acmtdc.winddata import SyntheticWindConfig, generate_wind


def small_data(n=120, d=6, p=3, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, d))
    Y = np.c_[X[:, 0] ** 2, np.sin(X[:, 1]), X[:, 2] * X[:, 3]][:, :p] + 0.1 * rng.normal(size=(n, p))
    return X, Y


@pytest.fixture(scope="module")
def forest():
    X, Y = small_data()
    return fit_forest(X, Y, n_trees=7, seed=3), X, Y


# -- dataset -------------------------------------------------------------------

def test_feature_dimension():
    ds = make_dataset(np.arange(100.0), np.arange(100.0), np.zeros(100))
    assert ds.X.shape[1] == 98
    assert ds.Y.shape[1] == 24
    assert len(ds) == 100 - 48 - 24 + 1


def test_boundary_count():
    n = 48 + 24
    ds = make_dataset(np.zeros(n), np.ones(n), np.zeros(n))
    assert len(ds) == 1
    with pytest.raises(InsufficientData):
        make_dataset(np.zeros(n - 1), np.ones(n - 1), np.zeros(n - 1))


def test_misaligned_series():
    with pytest.raises(DimensionMismatch):
        make_dataset(np.zeros(100), np.ones(99), np.zeros(100))


def test_hour_encoding():
    s, c = hour_features(6)
    assert s == pytest.approx(1.0, abs=1e-15) and c == pytest.approx(0.0, abs=1e-15)
    s, c = hour_features(0)
    assert (s, c) == (0.0, 1.0)


@given(st.floats(0.0, 24.0))
def test_trig_pair_on_unit_circle(h):
    s, c = hour_features(h)
    assert abs(s * s + c * c - 1.0) <= 1e-12


def test_feature_order():
    n = 80
    power = np.arange(n) * 10.0
    speed = np.arange(n) * 1.0
    hour = np.arange(n) % 24 * 1.0
    ds = make_dataset(power, speed, hour)
    t = ds.origins[0]
    x = ds.X[0]
    np.testing.assert_array_equal(x[:48], power[t - 48:t])
    np.testing.assert_array_equal(x[48:96], speed[t - 48:t])
    np.testing.assert_array_equal(x[96:], hour_features(hour[t]))
    np.testing.assert_array_equal(ds.Y[0], speed[t:t + 24])
    np.testing.assert_array_equal(x, feature_vector(power[t - 48:t], speed[t - 48:t], hour[t]))


@given(st.integers(0, 47), st.floats(-1e3, 1e3))
def test_history_edits_leave_trig_alone(i, v):
    n = 80
    rng = np.random.default_rng(1)
    power, speed, hour = rng.uniform(0, 100, n), rng.uniform(0, 20, n), (np.arange(n) % 24) * 1.0
    a = make_dataset(power, speed, hour)
    power2 = power.copy()
    power2[a.origins[0] - 48 + i] = v
    b = make_dataset(power2, speed, hour)
    np.testing.assert_array_equal(a.X[:, 96:], b.X[:, 96:])
    np.testing.assert_array_equal(a.X[:, 48:96], b.X[:, 48:96])


# -- trees ------------------------------------------------------------------------

def test_constant_targets_single_leaf():
    X, _ = small_data()
    Y = np.tile([1.0, 2.0, 3.0], (X.shape[0], 1))
    tree = fit_tree(X, Y, np.random.default_rng(0))
    assert tree.n_nodes == 1
    np.testing.assert_array_equal(tree.predict(X[:5]), np.tile([1.0, 2.0, 3.0], (5, 1)))


def test_perfect_fit_on_separable_data():
    rng = np.random.default_rng(5)
    x = rng.permutation(200).astype(float)[:, None]
    tree = fit_tree(x, x[:, 0], rng, TreeParams(max_depth=None, min_samples_leaf=1))
    np.testing.assert_array_equal(tree.predict(x)[:, 0], x[:, 0])


@given(st.integers(0, 10_000))
@settings(max_examples=30)
def test_chosen_split_is_argmax(seed):
    X, Y = small_data(n=40, seed=seed)
    feats = np.arange(X.shape[1])
    split = best_split(X, Y, feats, 2)
    gain, _, _ = split_candidates(X, Y, feats, 2)
    assert split is not None
    assert split.gain >= gain.max() - 1e-12
    # gain is the drop in summed squared error
    left = X[:, split.feature] <= split.threshold
    sse = lambda A: float(np.sum((A - A.mean(axis=0)) ** 2))
    assert split.gain == pytest.approx(sse(Y) - sse(Y[left]) - sse(Y[~left]), rel=1e-9, abs=1e-9)


def test_tie_break_lowest_feature():
    rng = np.random.default_rng(0)
    col = rng.normal(size=50)
    X = np.c_[col, col, col]
    Y = (col > 0).astype(float)[:, None]
    split = best_split(X, Y, np.array([2, 1, 0]), 1)
    assert split.feature == 0


def test_tree_structure_invariants(forest):
    model, X, _ = forest
    for tree in model.trees:
        internal = tree.feature >= 0
        assert np.all(tree.feature[internal] < X.shape[1])
        assert tree.value.shape[1] == 3


# -- forest ------------------------------------------------------------------------

def test_single_tree_identity():
    X, Y = small_data()
    model = fit_forest(X, Y, n_trees=1, seed=9)
    np.testing.assert_array_equal(predict(model, X), model.trees[0].predict(X))


def test_permutation_invariance(forest):
    model, X, _ = forest
    rev = copy.copy(model)
    rev.trees = model.trees[::-1]
    np.testing.assert_allclose(predict(rev, X), predict(model, X), rtol=1e-13, atol=1e-13)


def test_duplicate_tree_shift(forest):
    model, X, _ = forest
    T = len(model.trees)
    f = model.trees[2]
    more = copy.copy(model)
    more.trees = model.trees + [f]
    expected = (T * predict(model, X) + f.predict(X)) / (T + 1)
    np.testing.assert_allclose(predict(more, X), expected, rtol=1e-13, atol=1e-13)


def test_mean_of_two_constant_trees():
    X = np.zeros((4, 2))
    a = fit_tree(X, np.tile([1.0, 5.0], (4, 1)), np.random.default_rng(0))
    b = fit_tree(X, np.tile([3.0, -1.0], (4, 1)), np.random.default_rng(0))
    model = ForestModel([a, b], 0, 1)
    np.testing.assert_array_equal(predict(model, X[0]), [2.0, 2.0])


def test_seed_determinism(tmp_path):
    X, Y = small_data()
    a = fit_forest(X, Y, n_trees=5, seed=11)
    b = fit_forest(X, Y, n_trees=5, seed=11)
    assert model_to_dict(a) == model_to_dict(b)
    np.testing.assert_array_equal(predict(a, X), predict(b, X))
    c = fit_forest(X, Y, n_trees=5, seed=12)
    assert not np.array_equal(predict(a, X), predict(c, X))


def test_parallel_schedule_identical():
    X, Y = small_data()
    a = fit_forest(X, Y, n_trees=4, seed=2, jobs=1)
    b = fit_forest(X, Y, n_trees=4, seed=2, jobs=2)
    assert model_to_dict(a) == model_to_dict(b)


def test_leaf_values_are_training_means(forest):
    model, X, Y = forest
    for t, tree in enumerate(model.trees):
        idx = bootstrap_indices(tree_rng(model.rng_seed, t), X.shape[0])
        reached = tree.apply(X[idx])
        for leaf in tree.leaves:
            members = Y[idx][reached == leaf]
            assert members.shape[0] >= 1
            np.testing.assert_allclose(tree.value[leaf], members.mean(axis=0), rtol=1e-12, atol=1e-12)


@given(st.integers(0, 1000))
@settings(max_examples=25)
def test_prediction_in_training_hull(forest, seed):
    model, X, Y = forest
    x = np.random.default_rng(seed).normal(scale=3.0, size=(1, X.shape[1]))
    pred = predict(model, x)[0]
    per_tree = np.array([t.predict(x)[0] for t in model.trees])
    assert np.all(pred >= per_tree.min(axis=0) - 1e-12) and np.all(pred <= per_tree.max(axis=0) + 1e-12)
    assert np.all(pred >= Y.min(axis=0) - 1e-12) and np.all(pred <= Y.max(axis=0) + 1e-12)


def test_bootstrap_unique_fraction():
    fracs = [np.unique(bootstrap_indices(tree_rng(0, t), 1000)).size / 1000 for t in range(20)]
    assert abs(np.mean(fracs) - (1 - np.exp(-1))) <= 0.03
    assert all(abs(f - (1 - np.exp(-1))) <= 0.03 for f in fracs)


def test_dimension_mismatch(forest):
    model, X, _ = forest
    with pytest.raises(DimensionMismatch):
        predict(model, np.zeros(X.shape[1] + 1))


def test_default_tree_count():
    X, Y = small_data(n=30)
    assert len(fit_forest(X, Y).trees) == 15


def test_empty_forest_input():
    with pytest.raises(InsufficientData):
        fit_forest(np.zeros((0, 3)), np.zeros((0, 1)))


def test_model_round_trip(forest, tmp_path):
    model, X, _ = forest
    p = tmp_path / "m.json"
    save_model(model, p)
    again = load_model(p)
    np.testing.assert_array_equal(predict(again, X), predict(model, X))
    with pytest.raises(ParseError):
        model_from_dict({"format": "other"})


# -- power curve -------------------------------------------------------------------

def test_power_curve_examples():
    assert speed_to_power(2.0, 2000.0) == 0.0
    assert speed_to_power(12.0, 2000.0) == 2000.0
    assert speed_to_power(9.0, 2000.0) == pytest.approx(2000 * (729 - 27) / (1728 - 27), rel=1e-15)
    assert speed_to_power(9.0, 2000.0) == pytest.approx(825.4, abs=0.05)
    assert speed_to_power(20.0, 2000.0) == 2000.0
    assert speed_to_power(26.0, 2000.0) == 0.0
    with pytest.raises(ValueError):
        speed_to_power(-1.0, 2000.0)


@given(st.floats(0.0, 30.0), st.floats(0.0, 30.0))
def test_power_curve_monotone_below_cut_out(a, b):
    lo, hi = sorted((a, b))
    if hi <= 25.0:
        assert speed_to_power(lo, 250.0) <= speed_to_power(hi, 250.0)


def test_farm_speed_scale(case):
    owf2 = case.wind_farm("OWF2")
    assert farm_power(owf2, 10.0) == speed_to_power(9.0, 250.0)


# -- backtest ---------------------------------------------------------------------

def test_perfect_and_constant_predictors():
    from acmtdc.forecast import error_report
    obs = np.random.default_rng(0).uniform(size=(10, 24))
    mae, rmse, _, _ = error_report(obs, obs, obs)
    assert np.all(mae == 0) and np.all(rmse == 0)
    const = np.full((10, 24), 7.0)
    mae, rmse, _, _ = error_report(const, const, const)
    assert np.all(mae == 0) and np.all(rmse == 0)


def test_forecast_from_window():
    series = generate_wind(SyntheticWindConfig(n_steps=400), seed=4)
    ds = make_dataset(series.power_mw[:300], series.speed_mps[:300], series.hour_of_day[:300])
    model = train(ds, n_trees=3, seed=0)
    t = 200
    out = forecast_from(model, series.power_mw, series.speed_mps, series.hour_of_day, t)
    k = list(ds.origins).index(t)
    np.testing.assert_array_equal(out, predict(model, ds.X[k]))
    with pytest.raises(InsufficientData):
        forecast_from(model, series.power_mw, series.speed_mps, series.hour_of_day, 10)


def test_backtest_beats_persistence_small():
    series = generate_wind(SyntheticWindConfig(n_steps=1500), seed=0)
    h = series.hour_of_day
    model = train(make_dataset(series.power_mw[:1100], series.speed_mps[:1100], h[:1100]),
                  n_trees=5, seed=0)
    rep = backtest(model, series.power_mw[1100:], series.speed_mps[1100:], h[1100:])
    assert rep.mae.shape == (24,)
    assert rep.rmse_total < rep.persistence_rmse_total
