import numpy as np
import pytest

from ecglearn import pipeline as pl
from ecglearn.assemble import FeatureMatrix
from ecglearn.boosting import GbdtParams
from ecglearn.errors import ContractViolation, PriorMismatch, SkippedLabel
from ecglearn.labels import default_label_table


def iavb_weight_fixture():
    """27x27 similarity matrix realizing the stated IAVB neighborhood at 0.5."""
    table = default_label_table()
    w = np.eye(len(table))
    iavb = table.index_of_abbrev("IAVB")
    for ab in ("Brady", "IRBBB", "LPR", "SA", "SB"):
        j = table.index_of_abbrev(ab)
        w[iavb, j] = w[j, iavb] = 0.5
    return table, w


def test_sample_weights_reproduce_iavb_example():
    table, w = iavb_weight_fixture()
    iavb = table.index_of_abbrev("IAVB")
    sb = table.index_of_abbrev("SB")
    assert pl.build_sample_weights(iavb, {sb}, w) == (1, 0.5)
    assert pl.build_sample_weights(iavb, {iavb}, w) == (1, 1.0)
    afl = table.index_of_abbrev("AFL")
    assert pl.build_sample_weights(iavb, {afl}, w) == (0, 1.0)
    assert pl.build_sample_weights(iavb, set(), w) == (0, 1.0)


def test_batch_sample_weights_matches_per_record_rule():
    table, w = iavb_weight_fixture()
    rng = np.random.default_rng(0)
    n = len(table)
    label_matrix = rng.random((50, n)) < 0.08
    for target in (table.index_of_abbrev("IAVB"), table.index_of_abbrev("SNR")):
        y, wt = pl.batch_sample_weights(target, label_matrix, w)
        for i in range(50):
            labels = set(np.nonzero(label_matrix[i])[0])
            yy, ww = pl.build_sample_weights(target, labels, w)
            assert (y[i], wt[i]) == (yy, ww)


def test_scale_pos_weight_arithmetic():
    y = np.array([0] * 80 + [1] * 20)
    assert pl.scale_pos_weight(y, np.ones(100)) == pytest.approx(4.0)
    y = np.array([0] * 50 + [1] * 50)
    assert pl.scale_pos_weight(y, np.ones(100)) == pytest.approx(1.0)


def test_scale_pos_weight_zero_positives_skips():
    with pytest.raises(SkippedLabel):
        pl.scale_pos_weight(np.zeros(10), np.ones(10))


def test_split_ratios_and_determinism():
    train, valid = pl.split_85_15(100, seed=0)
    assert train.size == 85 and valid.size == 15
    train, valid = pl.split_85_15(101, seed=0)
    assert train.size == 86 and valid.size == 15  # ceiling rule
    again = pl.split_85_15(101, seed=0)
    assert np.array_equal(train, again[0]) and np.array_equal(valid, again[1])
    assert np.array_equal(np.sort(np.concatenate([train, valid])), np.arange(101))


def test_split_needs_twenty_records():
    with pytest.raises(ContractViolation):
        pl.split_85_15(10, seed=0)


def test_select_top_k_ordering_and_ties():
    assert set(pl.select_top_k(np.array([3.0, 1.0, 2.0, 0.0, 5.0]), 2)) == {4, 0}
    assert np.array_equal(pl.select_top_k(np.array([1.0, 1.0, 0.0]), 1), [0])
    assert np.array_equal(pl.select_top_k(np.arange(4.0), 4), np.arange(4))


def test_select_top_k_rejects_oversized_k():
    with pytest.raises(ContractViolation):
        pl.select_top_k(np.arange(3.0), 5)


def test_binarize_rules():
    assert np.array_equal(pl.binarize(np.full(5, 0.1), 0.5), [1, 0, 0, 0, 0])
    assert np.array_equal(pl.binarize(np.array([0.6, 0.7]), 0.5), [1, 1])
    assert np.array_equal(pl.binarize(np.array([0.0, 0.2]), 0.0), [1, 1])
    scores = np.array([0.2, 0.4, 0.4])
    assert np.array_equal(pl.binarize(scores, 0.5), [0, 1, 0])  # argmax tie -> lowest


def _toy_dataset(seed=0, n=120, n_noise=20):
    """Two informative features drive two labels; the rest is noise."""
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, 2 + n_noise))
    labels = np.zeros((n, 3), dtype=bool)
    labels[:, 0] = x[:, 0] > 0
    labels[:, 1] = x[:, 1] > 0
    labels[:, 2] = ~labels[:, 0]
    matrix = FeatureMatrix(ids=[f"r{i}" for i in range(n)],
                           columns=[f"c{i}" for i in range(2 + n_noise)],
                           values=x)
    w = np.eye(3)
    return matrix, labels, w


FAST_GBDT = GbdtParams(max_depth=3, n_rounds=12, early_stopping_rounds=6, sample_rate=1.0)


def test_phase_one_mean_importance_over_trained_labels():
    imp_a = np.array([2.0, 0.0])
    imp_b = np.array([0.0, 4.0])
    merged = np.mean([imp_a, imp_b], axis=0)
    assert np.array_equal(merged, [1.0, 2.0])


def test_run_once_end_to_end_and_deterministic():
    matrix, labels, w = _toy_dataset()
    config = pl.RunConfig(n_runs=1, top_k=10, base_seed=3, gbdt=FAST_GBDT)
    a = pl.run_once(matrix, labels, w, config, 0)
    b = pl.run_once(matrix, labels, w, config, 0)
    assert np.array_equal(a.top_k_idx, b.top_k_idx)
    assert a.phase2.metrics["macro_f1"] == b.phase2.metrics["macro_f1"]
    assert np.array_equal(a.phase1.importance_mean, b.phase1.importance_mean)
    # informative columns should dominate the distilled subset
    assert {0, 1} <= set(a.top_k_idx.tolist())
    assert a.phase2.metrics["macro_f1"] > 0.8


def test_phase_two_uses_subset_and_new_hash():
    matrix, labels, w = _toy_dataset()
    config = pl.RunConfig(n_runs=1, top_k=5, base_seed=1, gbdt=FAST_GBDT)
    res = pl.run_once(matrix, labels, w, config, 0)
    assert res.phase2.feature_idx.size == 5
    assert res.phase2.manifest_hash != res.phase1.manifest_hash
    model = next(m for m in res.phase2.models.values() if m is not None)
    assert model.n_features == 5
    assert set(res.phase2.feature_idx.tolist()) <= set(res.phase1.feature_idx.tolist())


def test_run_repeated_reports_and_seeds():
    matrix, labels, w = _toy_dataset()
    config = pl.RunConfig(n_runs=2, top_k=8, base_seed=11, gbdt=FAST_GBDT)
    report = pl.run_repeated(matrix, labels, w, config)
    assert len(report.results) == 2
    assert not report.partial
    assert [r.seed for r in report.results] == [11, 12]
    norm = report.results[0].phase2.metrics["challenge_normalized"]
    assert norm is None or -1.0 <= norm <= 1.0


def test_skipped_label_contributes_nothing():
    matrix, labels, w = _toy_dataset()
    labels = labels.copy()
    labels[:, 2] = False  # no positives anywhere for label 2
    config = pl.RunConfig(n_runs=1, top_k=8, base_seed=2, gbdt=FAST_GBDT)
    res = pl.run_once(matrix, labels, w, config, 0)
    assert 2 in res.phase1.skipped
    assert res.phase1.models[2] is None


def test_prior_round_trip_and_workflow(tmp_path):
    matrix, labels, w = _toy_dataset()
    config = pl.RunConfig(n_runs=2, top_k=6, base_seed=5, gbdt=FAST_GBDT)
    report = pl.run_repeated(matrix, labels, w, config)
    importances = [r.phase1.importance_mean for r in report.results]
    prior = pl.build_importance_prior(importances, matrix.hash)
    assert np.array_equal(prior.importance, np.mean(importances, axis=0))

    path = tmp_path / "prior.csv"
    pl.save_prior(path, prior, matrix.columns)
    back = pl.load_prior(path)
    assert back.manifest_hash == matrix.hash
    assert np.allclose(back.importance, prior.importance)

    # prior built from one run's importances reproduces that run's phase two
    solo = pl.build_importance_prior([report.results[0].phase1.importance_mean], matrix.hash)
    via_prior = pl.train_with_prior(matrix, labels, w, solo, config,
                                    seed=report.results[0].seed)
    direct = report.results[0].phase2
    assert np.array_equal(via_prior.feature_idx, direct.feature_idx)
    assert via_prior.metrics["macro_f1"] == direct.metrics["macro_f1"]


def test_prior_manifest_mismatch_refused():
    matrix, labels, w = _toy_dataset()
    prior = pl.ImportancePrior(np.zeros(len(matrix.columns)), "stale-hash")
    with pytest.raises(PriorMismatch):
        pl.train_with_prior(matrix, labels, w, prior, pl.RunConfig(n_runs=1, top_k=3))


def test_two_phase_estimator_surface():
    from sklearn.base import clone
    matrix, labels, w = _toy_dataset(n=150)
    clf = pl.TwoPhaseEcgClassifier(weight_matrix=w, top_k=6, gbdt_params=FAST_GBDT,
                                   random_state=7)
    clone(clf)  # must be cloneable for ecosystem use
    clf.fit(matrix.values, labels)
    proba = clf.predict_proba(matrix.values)
    assert proba.shape == (150, 3)
    pred = clf.predict(matrix.values)
    assert pred.shape == (150, 3)
    assert np.all(pred.sum(axis=1) >= 1)  # binarize never emits the empty set
    agree = (pred[:, 0] == labels[:, 0]).mean()
    assert agree > 0.85


def test_parallel_label_training_matches_serial():
    matrix, labels, w = _toy_dataset()
    serial = pl.run_once(matrix, labels, w,
                         pl.RunConfig(n_runs=1, top_k=8, base_seed=3, gbdt=FAST_GBDT,
                                      n_jobs=1), 0)
    parallel = pl.run_once(matrix, labels, w,
                           pl.RunConfig(n_runs=1, top_k=8, base_seed=3, gbdt=FAST_GBDT,
                                        n_jobs=2), 0)
    assert np.array_equal(serial.top_k_idx, parallel.top_k_idx)
    assert np.array_equal(serial.phase1.importance_mean, parallel.phase1.importance_mean)
    assert serial.phase2.metrics["macro_f1"] == parallel.phase2.metrics["macro_f1"]


def test_train_valid_weights_positive_and_partition_consistent():
    table, w = iavb_weight_fixture()
    rng = np.random.default_rng(1)
    label_matrix = rng.random((60, len(table))) < 0.05
    target = table.index_of_abbrev("IAVB")
    y, wt = pl.batch_sample_weights(target, label_matrix, w)
    assert np.all(wt > 0)
    assert set(np.unique(y)) <= {0, 1}
