import numpy as np
import pytest
from scipy import stats as scipy_stats

from ecglearn import boosting as B
from ecglearn.errors import ContractViolation, ManifestMismatch
from oracles import best_split_oracle


def test_logistic_grad_hess_fixtures():
    g, h = B.logistic_grad_hess(np.array([0.0]), np.array([1.0]), np.array([1.0]))
    assert g[0] == pytest.approx(-0.5) and h[0] == pytest.approx(0.25)
    g, h = B.logistic_grad_hess(np.array([0.0]), np.array([1.0]), np.array([0.5]))
    assert g[0] == pytest.approx(-0.25) and h[0] == pytest.approx(0.125)


def test_logistic_gradient_matches_finite_differences():
    rng = np.random.default_rng(0)
    eps = 1e-6
    for _ in range(100):
        m = float(rng.uniform(-5, 5))
        y = float(rng.integers(0, 2))
        w = float(rng.uniform(0.1, 3.0))

        def loss(margin):
            p = 1.0 / (1.0 + np.exp(-margin))
            return w * -(y * np.log(p) + (1 - y) * np.log(1 - p))

        numeric = (loss(m + eps) - loss(m - eps)) / (2 * eps)
        g, _ = B.logistic_grad_hess(np.array([m]), np.array([y]), np.array([w]))
        assert abs(g[0] - numeric) <= 1e-6


def test_split_gain_fixtures():
    # symmetric split is worthless (identity requires no L2 shrinkage)
    assert B.split_gain(1.0, 2.0, 1.0, 2.0, 0.0, 0.0) == pytest.approx(0.0)
    assert B.split_gain(-2.0, 1.0, 2.0, 1.0, 1.0, 0.0) == pytest.approx(2.0)
    structural = B.split_gain(-2.0, 1.0, 2.0, 1.0, 1.0, 0.0)
    assert B.split_gain(-2.0, 1.0, 2.0, 1.0, 1.0, structural + 0.1) < 0


def test_fit_tree_depth_one_pure_leaves():
    x = np.array([[1.0], [2.0], [3.0], [4.0]])
    y = np.array([0.0, 0.0, 1.0, 1.0])
    g, h = B.logistic_grad_hess(np.zeros(4), y, np.ones(4))
    params = B.GbdtParams(max_depth=1, reg_lambda=0.0, min_child_hessian=0.0)
    tree = B.fit_tree(x, g, h, params)
    assert 2.0 < tree.threshold[0] < 3.0
    leaves = tree.value[tree.feature < 0]
    assert leaves.min() < 0 < leaves.max()
    pred = tree.predict(x)
    assert pred[0] < 0 < pred[3]


def test_fit_tree_identical_values_single_leaf():
    x = np.full((10, 3), 7.0)
    y = np.array([0.0, 1.0] * 5)
    g, h = B.logistic_grad_hess(np.zeros(10), y, np.ones(10))
    tree = B.fit_tree(x, g, h, B.GbdtParams(max_depth=4))
    assert tree.n_nodes == 1 and tree.feature[0] < 0
    assert tree.value[0] == pytest.approx(-g.sum() / (h.sum() + 1.0))


def test_fit_tree_empty_active_rows():
    x = np.zeros((4, 2))
    with pytest.raises(ContractViolation):
        B.fit_tree(x, np.zeros(4), np.zeros(4), B.GbdtParams(), active_rows=np.array([], dtype=int))


def test_fit_tree_split_matches_bruteforce_on_20_datasets():
    rng = np.random.default_rng(1)
    for _ in range(20):
        n = int(rng.integers(8, 40))
        f = int(rng.integers(1, 6))
        x = np.round(rng.normal(size=(n, f)), 2)
        y = rng.integers(0, 2, size=n).astype(float)
        g, h = B.logistic_grad_hess(np.zeros(n), y, rng.uniform(0.5, 2.0, size=n))
        params = B.GbdtParams(max_depth=1, reg_lambda=1.0, gamma=0.0, min_child_hessian=0.1)
        tree = B.fit_tree(x, g, h, params)
        gain, feat, thr = best_split_oracle(x, g, h, 1.0, 0.0, 0.1)
        if feat == -1:
            assert tree.feature[0] < 0
        else:
            assert tree.feature[0] == feat
            assert tree.threshold[0] == pytest.approx(thr, abs=1e-12)
            assert tree.gain[0] == pytest.approx(gain, abs=1e-12)


def test_gradient_sample_degenerate_and_identity():
    rng = np.random.default_rng(2)
    idx, factor = B.gradient_sample(np.array([0.0, 0.0, 5.0]), rate=0.3, eps=0.0, rng=rng)
    assert np.array_equal(idx, [2])  # k = 1 and only row 2 has mass
    idx, factor = B.gradient_sample(np.array([1.0, -2.0, 0.5]), rate=1.0, eps=0.1, rng=rng)
    assert np.array_equal(idx, [0, 1, 2]) and factor == 1.0


def test_gradient_sample_zero_gradients_uniform_fallback():
    rng = np.random.default_rng(3)
    idx, factor = B.gradient_sample(np.zeros(10), rate=0.5, eps=0.0, rng=rng)
    assert idx.size == 5 and factor == 1.0


def test_gradient_sample_huge_eps_is_uniform():
    rng = np.random.default_rng(4)
    g = np.array([0.0, 0.1, 1.0, 2.0, 5.0, 0.2, 0.4, 3.0])
    counts = np.zeros(8)
    for _ in range(10_000):
        idx, _ = B.gradient_sample(g, rate=1 / 8, eps=1e9, rng=rng)
        counts[idx[0]] += 1
    _, p = scipy_stats.chisquare(counts)
    assert p > 0.01


def test_gradient_sample_mass_preserving_rescale():
    rng = np.random.default_rng(5)
    g = rng.normal(size=40)
    eps = 0.05
    idx, factor = B.gradient_sample(g, rate=0.5, eps=eps, rng=rng)
    total = np.sum(np.abs(g) + eps)
    assert factor == pytest.approx(total / np.sum(np.abs(g[idx]) + eps))


def _toy_problem(rng, n=200):
    x = rng.normal(size=(n, 2))
    y = (x[:, 0] + 0.5 * x[:, 1] > 0).astype(float)
    return x, y


def test_fit_boosted_training_loss_non_increasing_at_full_rate():
    rng = np.random.default_rng(6)
    x, y = _toy_problem(rng)
    params = B.GbdtParams(max_depth=3, n_rounds=30, early_stopping_rounds=0, sample_rate=1.0)
    model = B.fit_boosted(x, y, np.ones(y.size), params, seed=0)
    losses = np.asarray(model.train_loss)
    assert np.all(np.diff(losses) <= 1e-12)


def test_fit_boosted_early_stopping_on_noisy_validation():
    rng = np.random.default_rng(7)
    x_train, y_train = _toy_problem(rng, n=40)
    x_valid, y_valid = _toy_problem(rng, n=40)
    flip = rng.random(40) < 0.4
    y_valid = np.where(flip, 1 - y_valid, y_valid)
    params = B.GbdtParams(max_depth=3, learning_rate=0.5, n_rounds=200,
                          early_stopping_rounds=20, sample_rate=1.0)
    model = B.fit_boosted(x_train, y_train, np.ones(40), params, seed=0,
                          x_valid=x_valid, y_valid=y_valid, w_valid=np.ones(40))
    assert len(model.trees) < 200
    assert model.best_iteration < len(model.trees)
    # halt happens exactly early_stopping_rounds after the loss minimum
    assert len(model.trees) - model.best_iteration == 20


def test_fit_boosted_deterministic_under_seed():
    rng = np.random.default_rng(8)
    x, y = _toy_problem(rng)
    params = B.GbdtParams(max_depth=3, n_rounds=15, early_stopping_rounds=5, sample_rate=0.7)
    a = B.fit_boosted(x[:150], y[:150], np.ones(150), params, seed=42,
                      x_valid=x[150:], y_valid=y[150:], w_valid=np.ones(50))
    b = B.fit_boosted(x[:150], y[:150], np.ones(150), params, seed=42,
                      x_valid=x[150:], y_valid=y[150:], w_valid=np.ones(50))
    assert len(a.trees) == len(b.trees)
    assert a.best_iteration == b.best_iteration
    assert np.array_equal(B.predict_proba(a, x), B.predict_proba(b, x))
    assert np.array_equal(B.importance_gain(a), B.importance_gain(b))


def test_fit_boosted_one_class_degenerate():
    x = np.random.default_rng(9).normal(size=(30, 3))
    params = B.GbdtParams(n_rounds=10, early_stopping_rounds=0)
    model = B.fit_boosted(x, np.ones(30), np.ones(30), params, seed=0)
    assert model.degenerate and len(model.trees) == 0
    p = B.predict_proba(model, x)
    assert np.all(p > 0.99)


def test_predict_zero_tree_model_returns_base_rate():
    model = B.BoostedModel(trees=[], learning_rate=0.1,
                           base_score=float(np.log(0.3 / 0.7)), best_iteration=0,
                           n_features=2, params=B.GbdtParams())
    p = B.predict_proba(model, np.zeros((4, 2)))
    assert np.allclose(p, 0.3)


def test_predict_probability_always_in_open_interval():
    rng = np.random.default_rng(10)
    x, y = _toy_problem(rng)
    params = B.GbdtParams(max_depth=4, learning_rate=1.0, n_rounds=60,
                          early_stopping_rounds=0, sample_rate=1.0, reg_lambda=0.0,
                          min_child_hessian=0.0)
    model = B.fit_boosted(x, y, np.ones(y.size), params, seed=0)
    p = B.predict_proba(model, x)
    assert np.all(p > 0.0) and np.all(p < 1.0)


def test_predict_row_length_contract():
    model = B.BoostedModel(trees=[], learning_rate=0.1, base_score=0.0,
                           best_iteration=0, n_features=3, params=B.GbdtParams())
    with pytest.raises(ContractViolation):
        B.predict_proba(model, np.zeros((2, 5)))


def test_monotone_feature_transform_leaves_predictions_unchanged():
    rng = np.random.default_rng(11)
    x = rng.integers(0, 10, size=(80, 4)).astype(float)
    y = (x[:, 2] > 4).astype(float)
    params = B.GbdtParams(max_depth=3, n_rounds=10, early_stopping_rounds=0, sample_rate=1.0)
    base = B.fit_boosted(x, y, np.ones(80), params, seed=1)
    x2 = x.copy()
    x2[:, 2] = x2[:, 2] ** 3  # strictly increasing on the non-negative grid
    trans = B.fit_boosted(x2, y, np.ones(80), params, seed=1)
    # evaluation points share the training grid, so threshold midpoints
    # cannot separate a point from its own transform
    assert np.array_equal(B.predict_proba(base, x), B.predict_proba(trans, x2))


def test_importance_single_split_bookkeeping():
    x = np.array([[1.0, 5.0], [2.0, 5.0], [3.0, 5.0], [4.0, 5.0]])
    y = np.array([0.0, 0.0, 1.0, 1.0])
    g, h = B.logistic_grad_hess(np.zeros(4), y, np.ones(4))
    tree = B.fit_tree(x, g, h, B.GbdtParams(max_depth=1, min_child_hessian=0.0))
    model = B.BoostedModel(trees=[tree], learning_rate=0.1, base_score=0.0,
                           best_iteration=1, n_features=2, params=B.GbdtParams())
    imp = B.importance_gain(model)
    assert imp[0] > 0 and imp[1] == 0.0
    assert imp.sum() == pytest.approx(tree.gain[tree.feature >= 0].sum())


def test_importance_sum_equals_total_gain():
    rng = np.random.default_rng(12)
    x, y = _toy_problem(rng)
    params = B.GbdtParams(max_depth=3, n_rounds=12, early_stopping_rounds=0, sample_rate=1.0)
    model = B.fit_boosted(x, y, np.ones(y.size), params, seed=3)
    total = sum(t.gain[t.feature >= 0].sum() for t in model.trees[: model.best_iteration])
    assert B.importance_gain(model).sum() == pytest.approx(total)


def test_importance_finds_informative_feature():
    rng = np.random.default_rng(13)
    hits = 0
    for seed in range(20):
        r = np.random.default_rng(seed)
        x = r.normal(size=(150, 51))
        y = (x[:, 0] > 0).astype(float)
        params = B.GbdtParams(max_depth=3, n_rounds=10, early_stopping_rounds=0,
                              sample_rate=1.0)
        model = B.fit_boosted(x, y, np.ones(150), params, seed=seed)
        hits += int(np.argmax(B.importance_gain(model)) == 0)
    assert hits >= 19


def test_model_text_round_trip_and_hash_guard():
    rng = np.random.default_rng(14)
    x, y = _toy_problem(rng)
    params = B.GbdtParams(max_depth=3, n_rounds=8, early_stopping_rounds=0, sample_rate=1.0)
    model = B.fit_boosted(x, y, np.ones(y.size), params, seed=5)
    model.manifest_hash = "abc123"
    text = B.save_model_text(model)
    back = B.load_model_text(text, expected_manifest_hash="abc123")
    assert np.array_equal(B.predict_proba(model, x), B.predict_proba(back, x))
    with pytest.raises(ManifestMismatch):
        B.load_model_text(text, expected_manifest_hash="zzz")


def test_classifier_estimator_surface():
    from sklearn.base import clone
    rng = np.random.default_rng(15)
    x, y = _toy_problem(rng)
    clf = B.BoostedTreesClassifier(max_depth=3, n_rounds=10, random_state=3)
    cloned = clone(clf)
    assert cloned.get_params()["max_depth"] == 3
    clf.fit(x, y.astype(int))
    proba = clf.predict_proba(x)
    assert proba.shape == (y.size, 2)
    assert np.allclose(proba.sum(axis=1), 1.0)
    assert (clf.predict(x) == y).mean() > 0.9
    assert clf.feature_importances_.size == 2
