import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from evoensemble import learners
from evoensemble.learners import LearnerSpec, SpecError
from oracles import best_split, gbt_stumps, knn_brute, normal_equations


def data(seed, n=60, p=3, noise=0.3):
    r = np.random.default_rng(seed)
    X = r.normal(size=(n, p))
    y = X @ r.normal(size=p) + np.sin(3 * X[:, 0]) + noise * r.normal(size=n)
    return X, y


# ---- linear


def test_linear_exact_line():
    m = learners.fit_linear([[1], [2], [3]], [2, 4, 6])
    assert m.coef[0] == pytest.approx(2, abs=1e-12)
    assert m.intercept == pytest.approx(0, abs=1e-12)
    assert m.predict([[4]])[0] == pytest.approx(8, abs=1e-12)


def test_linear_constant_target():
    X, _ = data(0, 20)
    m = learners.fit_linear(X, np.full(20, 7.5))
    assert m.intercept == pytest.approx(7.5, abs=1e-12)
    assert np.allclose(m.coef, 0, atol=1e-12)


def test_linear_matches_normal_equations(rng):
    X = rng.normal(size=(10, 3))
    y = rng.normal(size=10)
    b0, b = normal_equations(X, y)
    m = learners.fit_linear(X, y)
    assert m.intercept == pytest.approx(b0, abs=1e-9)
    assert np.allclose(m.coef, b, atol=1e-9)


def test_linear_rank_deficient_falls_back_to_ridge(rng):
    x = rng.normal(size=30)
    X = np.column_stack([x, 2 * x])
    y = 3 * x + 1
    m = learners.fit_linear(X, y)
    assert m.ridge_used
    assert np.allclose(m.predict(X), y, atol=1e-6)
    with pytest.raises(np.linalg.LinAlgError):
        learners.fit_linear(X, y, LearnerSpec("linear", {"ridge_fallback": False}))


# ---- knn


def test_knn_k1_returns_training_target():
    X, y = data(1, 15)
    m = learners.fit_knn(X, y, K=1)
    assert np.array_equal(m.predict(X[[3, 7]]), y[[3, 7]])


def test_knn_k_equals_n_is_global_mean():
    X, y = data(2, 12)
    m = learners.fit_knn(X, y, K=12)
    assert np.allclose(m.predict(np.random.default_rng(0).normal(size=(4, 3))), y.mean(), atol=1e-12)


def test_knn_matches_sort_and_average(rng):
    X = rng.normal(size=(12, 2)) * [1, 50]
    y = rng.normal(size=12)
    Q = rng.normal(size=(5, 2)) * [1, 50]
    m = learners.fit_knn(X, y, K=3)
    assert np.allclose(m.predict(Q), knn_brute(X, y, Q, 3), atol=1e-12)


def test_knn_rejects_k_above_n():
    with pytest.raises(ValueError):
        learners.fit_knn(np.zeros((3, 1)), np.zeros(3), K=4)


# ---- cart


def test_cart_constant_target_single_leaf():
    X, _ = data(3, 25)
    m = learners.fit_cart(X, np.full(25, 4.0))
    assert m.trees[0].n_leaves == 1
    assert np.all(m.predict(X) == 4.0)


def test_cart_step_data_depth_one():
    x = np.arange(1.0, 11.0)
    y = np.where(x <= 5, 0.0, 10.0)
    m = learners.fit_cart(x[:, None], y, {"max_depth": 1})
    t = m.trees[0]
    thr, left_mean, right_mean = best_split(list(x), list(y))
    assert 5 <= t.threshold[0] < 6 and t.threshold[0] == thr
    assert sorted(t.leaf_values()) == [left_mean, right_mean] == [0.0, 10.0]


def test_cart_exhaustive_split_oracle(rng):
    x = rng.normal(size=40).round(2)
    y = rng.normal(size=40) + (x > 0.3) * 2
    t = learners.fit_cart(x[:, None], y, {"max_depth": 1}).trees[0]
    thr, lm, rm = best_split(list(x), list(y))
    assert t.threshold[0] == thr
    assert t.value[t.left[0]] == pytest.approx(lm, abs=1e-12)
    assert t.value[t.right[0]] == pytest.approx(rm, abs=1e-12)


def test_cart_min_samples_leaf_n_gives_mean():
    X, y = data(4, 20)
    m = learners.fit_cart(X, y, {"min_samples_leaf": 20})
    assert m.trees[0].n_leaves == 1
    assert np.allclose(m.predict(X), y.mean(), atol=1e-12)


# ---- extra trees


def test_extratree_depth_zero_is_mean():
    X, y = data(5, 30)
    m = learners.fit(LearnerSpec("extratree", {"max_depth": 0}, seed=3), X, y)
    assert np.allclose(m.predict(X), y.mean(), atol=1e-12)


def test_extratree_deterministic():
    X, y = data(6, 80)
    s = LearnerSpec("extratree", {"n_estimators": 3}, seed=11)
    assert learners.fit(s, X, y).to_json() == learners.fit(s, X, y).to_json()
    assert learners.fit(s, X, y).to_json() != learners.fit(s.with_seed(12), X, y).to_json()


def test_extratree_constant_feature_never_splits():
    X, y = data(7, 50)
    X[:, 1] = 3.0
    m = learners.fit(LearnerSpec("extratree", {"n_estimators": 5}, seed=1), X, y)
    for t in m.trees:
        assert 1 not in set(t.feature[t.feature >= 0])


# ---- gbt


def test_gbt_single_leaf_round_is_mean():
    X, y = data(8, 30)
    hp = {"N_est": 1, "Max_d": 0, "lambda": 0.0, "eta": 1.0, "base_score": 0.0}
    m = learners.fit_gbt(X, y, hp)
    assert np.allclose(m.predict(X), y.mean(), atol=1e-12)


def test_gbt_huge_lambda_keeps_base_score():
    X, y = data(9, 30)
    m = learners.fit_gbt(X, y, {"N_est": 5, "lambda": 1e12, "base_score": 2.5})
    assert np.allclose(m.predict(X), 2.5, atol=1e-6)


def test_gbt_matches_gradient_hessian_oracle():
    x = [0.5, 1.0, 1.7, 2.2, 3.1, 3.3, 4.0, 5.5]
    y = [1.0, 1.4, 0.2, 3.9, 4.4, 2.0, 6.1, 5.0]
    rounds, pred = gbt_stumps(x, y, 2, eta=0.3, lam=1.0, base=float(np.mean(y)))
    m = learners.fit_gbt(np.array(x)[:, None], np.array(y), {"N_est": 2, "Max_d": 1, "eta": 0.3, "Min_cw": 0.0})
    for t, (thr, wl, wr) in zip(m.trees, rounds):
        assert t.threshold[0] == thr
        assert t.value[t.left[0]] == pytest.approx(wl, abs=1e-9)
        assert t.value[t.right[0]] == pytest.approx(wr, abs=1e-9)
    assert np.allclose(m.predict(np.array(x)[:, None]), pred, atol=1e-9)


def test_gbt_dart_trains_as_gbtree():
    X, y = data(10, 40)
    a = learners.fit_gbt(X, y, {"N_est": 3, "B": "dart"})
    b = learners.fit_gbt(X, y, {"N_est": 3, "B": "gbtree"})
    assert np.array_equal(a.predict(X), b.predict(X))


def test_gbt_l1_shrinks_leaves():
    X, y = data(11, 40)
    a = learners.fit_gbt(X, y, {"N_est": 1, "Max_d": 2})
    b = learners.fit_gbt(X, y, {"N_est": 1, "Max_d": 2, "alpha": 5.0})
    assert np.abs(b.trees[0].leaf_values()).sum() < np.abs(a.trees[0].leaf_values()).sum()


# ---- specs


def test_spec_defaults_and_validation():
    s = LearnerSpec("gbt")
    assert s.hyperparams["N_est"] == 100 and s.hyperparams["eta"] == 0.3
    with pytest.raises(SpecError):
        LearnerSpec("svm")
    with pytest.raises(SpecError):
        LearnerSpec("gbt", {"depth": 3})
    with pytest.raises(SpecError):
        LearnerSpec("gbt", {"eta": 0.0})
    with pytest.raises(SpecError):
        LearnerSpec("knn", {"K": 0})
    assert LearnerSpec.from_dict(s.to_dict()) == s


# ---- predict contract


@pytest.mark.parametrize("family", learners.FAMILIES)
def test_predict_contract(family):
    X, y = data(12, 40)
    m = learners.fit(LearnerSpec(family, {"N_est": 5} if family == "gbt" else {}, seed=1), X, y)
    assert m.predict(np.empty((0, 3))).shape == (0,)
    two = m.predict(X[[4, 4]])
    assert two[0] == two[1]
    assert np.isfinite(m.predict(X)).all()
    with pytest.raises(ValueError):
        m.predict(np.zeros((2, 4)))


@pytest.mark.parametrize("family", learners.FAMILIES)
def test_json_round_trip_identical_predictions(family):
    X, y = data(13, 50)
    m = learners.fit(LearnerSpec(family, {"N_est": 4} if family == "gbt" else {}, seed=5), X, y)
    back = learners.model_from_json(m.to_json())
    assert np.array_equal(m.predict(X), back.predict(X))
    doc = json.loads(m.to_json())
    assert doc["spec"]["family"] == family


def test_nested_tree_document():
    x = np.arange(1.0, 11.0)[:, None]
    y = np.where(x[:, 0] <= 5, 0.0, 10.0)
    doc = learners.fit_cart(x, y, {"max_depth": 1}).trees[0].to_nested()
    assert doc["feature"] == 0 and doc["threshold"] == 5.0 and doc["n"] == 10
    assert doc["left"] == {"value": 0.0, "n": 5} and doc["right"] == {"value": 10.0, "n": 5}


# ---- properties

seeds = st.integers(0, 10_000)


@settings(max_examples=40, deadline=None)
@given(seeds, st.integers(5, 60), st.integers(1, 4))
def test_linear_residuals_orthogonal(seed, n, p):
    r = np.random.default_rng(seed)
    X = r.normal(size=(n, p))
    y = r.normal(size=n) * 10
    m = learners.fit_linear(X, y)
    res = y - m.predict(X)
    assert np.all(np.abs(X.T @ res) < 1e-8 * np.linalg.norm(y))


@settings(max_examples=30, deadline=None)
@given(seeds)
def test_cart_mse_non_increasing_in_depth(seed):
    X, y = data(seed, 50)
    mses = [np.mean((learners.fit_cart(X, y, {"max_depth": d}).predict(X) - y) ** 2) for d in range(7)]
    assert all(b <= a for a, b in zip(mses, mses[1:]))


@settings(max_examples=20, deadline=None)
@given(seeds, st.floats(0, 5), st.floats(0, 3), st.floats(0.05, 1.0), st.integers(0, 4))
def test_gbt_training_mse_non_increasing_per_round(seed, lam, alpha, eta, depth):
    X, y = data(seed, 40)
    m = learners.fit_gbt(X, y, {"N_est": 8, "Max_d": depth, "lambda": lam, "alpha": alpha, "eta": eta})
    pred = np.full(len(y), m.base_score)
    last = np.mean((pred - y) ** 2)
    for t in m.trees:
        pred = pred + m.scale * t.apply(X)
        cur = np.mean((pred - y) ** 2)
        assert cur <= last + 1e-12 * last
        last = cur


def _monotone(x):
    return x**3 + 2 * x


@settings(max_examples=20, deadline=None)
@given(seeds, st.sampled_from(["cart", "gbt"]))
def test_exact_splitters_invariant_under_monotone_transform(seed, family):
    X, y = data(seed, 50)
    X = X.round(3)
    T = X.copy()
    T[:, 1] = _monotone(T[:, 1])
    spec = LearnerSpec(family, {"N_est": 5} if family == "gbt" else {}, seed=2)
    a = learners.fit(spec, X, y).predict(X)
    b = learners.fit(spec, T, y).predict(T)
    assert np.array_equal(a, b)


@settings(max_examples=20, deadline=None)
@given(seeds)
def test_extratree_invariant_under_power_of_two_scaling(seed):
    # random thresholds are drawn in [min, max), so only scalings that keep
    # every float operation exact preserve the partition
    X, y = data(seed, 50)
    T = X.copy()
    T[:, 0] = T[:, 0] * 4.0
    spec = LearnerSpec("extratree", {"n_estimators": 3}, seed=4)
    assert np.array_equal(learners.fit(spec, X, y).predict(X), learners.fit(spec, T, y).predict(T))


@settings(max_examples=15, deadline=None)
@given(seeds, st.sampled_from(learners.FAMILIES))
def test_same_spec_seed_data_bit_identical(seed, family):
    X, y = data(seed, 40)
    spec = LearnerSpec(family, {"N_est": 3, "sub_s": 0.7} if family == "gbt" else {}, seed=seed)
    assert learners.fit(spec, X, y).to_json() == learners.fit(spec, X, y).to_json()
