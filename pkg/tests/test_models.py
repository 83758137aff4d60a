import math

import numpy as np
import pytest

from predstat.benchgen import default_world, gen_clustering
from predstat.grounding import DenotationCache, Grounder, OracleBackend, Predicate
from predstat.models import (
    ClassifierWeights,
    ClusterWeights,
    FeatureMatrix,
    GdConfig,
    ModelError,
    ModelParams,
    TimeSeriesWeights,
    classification_grad_w,
    classification_loss,
    clustering_loss,
    fitness,
    log_normalizer,
    opt_w_classification,
    opt_w_clustering,
    opt_w_timeseries,
    timeseries_grad_w,
    timeseries_loss,
)

from conftest import brute_cluster_assign, central_difference, gradient_rel_error


def rand_features(rng, n, k, discrete=True):
    if discrete:
        return FeatureMatrix(rng.integers(0, 2, size=(n, k)).astype(float))
    return FeatureMatrix(rng.uniform(-1, 1, size=(n, k)), mode="relaxed")


# --- log normalizer ----------------------------------------------------------


def test_log_normalizer_zero_weights_is_log_corpus_size():
    F = rand_features(np.random.default_rng(0), 11, 3)
    assert math.isclose(log_normalizer(np.zeros(3), F), math.log(11), rel_tol=1e-12)


def test_log_normalizer_direct_summation_value():
    # one column [1,1,0,0] with weight 10: log(2e^10 + 2)
    F = FeatureMatrix(np.array([[1.0], [1.0], [0.0], [0.0]]))
    expected = math.log(2 * math.exp(10) + 2)
    assert math.isclose(log_normalizer(np.array([10.0]), F), expected, rel_tol=1e-12)


def test_log_normalizer_shift_identity():
    # adding c to every score adds c to the result; adding a constant
    # all-ones column with weight c does exactly that
    rng = np.random.default_rng(1)
    F = rand_features(rng, 9, 2)
    w = rng.normal(size=2)
    base = log_normalizer(w, F)
    c = 3.7
    F_aug = FeatureMatrix(np.hstack([F.values, np.ones((9, 1))]))
    assert math.isclose(
        log_normalizer(np.append(w, c), F_aug), base + c, rel_tol=1e-12
    )


def test_log_normalizer_rejects_nonfinite():
    F = rand_features(np.random.default_rng(0), 4, 2)
    with pytest.raises(ModelError):
        log_normalizer(np.array([np.nan, 0.0]), F)


def test_eq1_normalization_sums_to_one():
    rng = np.random.default_rng(7)
    for _ in range(20):
        n, k = int(rng.integers(2, 50)), int(rng.integers(1, 5))
        F = rand_features(rng, n, k, discrete=False)
        w = rng.normal(scale=3, size=k)
        scores = F.values @ w
        log_z = log_normalizer(w, F)
        assert abs(np.exp(scores - log_z).sum() - 1.0) < 1e-9


def test_reweighting_example():
    # w = [-5, 3] against feature vector [1, 0]
    assert np.dot([-5.0, 3.0], [1.0, 0.0]) == -5.0


# --- clustering ---------------------------------------------------------------


def test_clustering_loss_all_background():
    n = 13
    F = rand_features(np.random.default_rng(3), n, 2)
    weights = ClusterWeights(np.full(n, 2, dtype=np.int64), tau=10.0)
    assert math.isclose(clustering_loss(F, weights), n * math.log(n), rel_tol=1e-12)


def test_clustering_loss_isolated_cluster_tends_to_log_size():
    # predicate true on exactly its n_c assigned samples: per-sample loss
    # approaches log(n_c) as tau grows
    n, n_c = 12, 3
    col = np.zeros((n, 1))
    col[:n_c, 0] = 1.0
    F = FeatureMatrix(col)
    assign = np.full(n, 1, dtype=np.int64)  # others in background
    assign[:n_c] = 0
    loss = clustering_loss(F, ClusterWeights(assign, tau=50.0))
    per_sample = (loss - (n - n_c) * math.log(n)) / n_c
    direct = -math.log(math.exp(50.0) / (n_c * math.exp(50.0) + (n - n_c)))
    assert math.isclose(per_sample, direct, rel_tol=1e-9)
    assert abs(per_sample - math.log(n_c)) < 1e-6


def test_clustering_loss_single_sample_is_zero():
    F = FeatureMatrix(np.array([[1.0]]))
    assert clustering_loss(F, ClusterWeights(np.array([0]), tau=10.0)) == 0.0


def test_opt_w_clustering_prefers_matching_sparse_cluster():
    # sample 0 is true under predicate 2 only, and that predicate is rare
    rng = np.random.default_rng(5)
    n, k = 24, 3
    F = np.zeros((n, k))
    F[0, 2] = 1.0
    F[1, 2] = 1.0
    F[2:, 0] = 1.0
    F[2:, 1] = rng.integers(0, 2, n - 2)
    weights = opt_w_clustering(FeatureMatrix(F), tau=10.0)
    brute = brute_cluster_assign(F, 10.0)
    assert weights.assignment[0] == brute[0] == 2


def test_opt_w_clustering_backs_off_when_nothing_matches():
    # sample 0 matches no predicate while every cluster is large
    n = 30
    F = np.ones((n, 2))
    F[0, :] = 0.0
    weights = opt_w_clustering(FeatureMatrix(F), tau=10.0)
    assert weights.assignment[0] == 2  # background
    assert brute_cluster_assign(F, 10.0)[0] == 2


def test_opt_w_clustering_duplicate_columns_tie_to_lower_index():
    F = np.zeros((10, 2))
    F[:4, 0] = 1.0
    F[:4, 1] = 1.0
    weights = opt_w_clustering(FeatureMatrix(F), tau=10.0)
    assert set(weights.assignment[:4]) == {0}


def test_opt_w_clustering_matches_brute_force_randomly():
    rng = np.random.default_rng(11)
    for _ in range(40):
        n = int(rng.integers(2, 64))
        k = int(rng.integers(1, 5))
        F = rng.integers(0, 2, size=(n, k)).astype(float)
        got = opt_w_clustering(FeatureMatrix(F), tau=float(rng.uniform(1, 20))).assignment
        # brute force fixes tau=10; recompute with the same tau
    for _ in range(40):
        n = int(rng.integers(2, 64))
        k = int(rng.integers(1, 5))
        F = rng.integers(0, 2, size=(n, k)).astype(float)
        got = opt_w_clustering(FeatureMatrix(F), tau=10.0).assignment
        assert np.array_equal(got, brute_cluster_assign(F, 10.0))


def test_per_sample_loss_bounded_by_log_n_after_opt_w():
    rng = np.random.default_rng(13)
    for _ in range(10):
        n, k = int(rng.integers(2, 40)), int(rng.integers(1, 4))
        F = FeatureMatrix(rng.integers(0, 2, size=(n, k)).astype(float))
        weights = opt_w_clustering(F, tau=10.0)
        scores, lognorms = F.values * 10.0, None
        m = (10.0 * F.values).max(axis=0)
        lognorms = m + np.log(np.exp(10.0 * F.values - m).sum(axis=0))
        for x in range(n):
            a = weights.assignment[x]
            per = math.log(n) if a == k else lognorms[a] - 10.0 * F.values[x, a]
            assert per <= math.log(n) + 1e-9


# --- time series ---------------------------------------------------------------


def test_timeseries_loss_zero_weights():
    t, k = 9, 2
    F = rand_features(np.random.default_rng(0), t, k)
    weights = TimeSeriesWeights(np.zeros((t, k)), lam=1.0)
    assert math.isclose(timeseries_loss(F, weights), t * math.log(t), rel_tol=1e-12)


def test_timeseries_constant_weights_have_zero_smoothness():
    t, k = 7, 2
    rng = np.random.default_rng(2)
    F = rand_features(rng, t, k)
    w = np.tile(rng.normal(size=k), (t, 1))
    loss_lam0 = timeseries_loss(F, TimeSeriesWeights(w.copy(), lam=0.0))
    loss_lam9 = timeseries_loss(F, TimeSeriesWeights(w.copy(), lam=9.0))
    assert math.isclose(loss_lam0, loss_lam9, rel_tol=1e-12)


def test_timeseries_gradient_matches_finite_differences():
    rng = np.random.default_rng(3)
    F = rand_features(rng, 8, 2)
    w0 = rng.normal(size=(8, 2))

    def loss_of(w):
        return timeseries_loss(F, TimeSeriesWeights(w.copy(), lam=1.3))

    analytic = timeseries_grad_w(F, TimeSeriesWeights(w0.copy(), lam=1.3))
    numeric = central_difference(loss_of, w0)
    assert gradient_rel_error(analytic, numeric) < 1e-4


def test_opt_w_timeseries_huge_lambda_flattens_weights():
    rng = np.random.default_rng(4)
    F = rand_features(rng, 10, 2)
    weights = opt_w_timeseries(F, lam=1e9)
    spread = weights.w.max(axis=0) - weights.w.min(axis=0)
    assert np.all(spread < 1e-3)


def test_opt_w_timeseries_constant_feature_column_gives_constant_weight():
    rng = np.random.default_rng(5)
    t = 10
    values = np.hstack([np.ones((t, 1)), rng.integers(0, 2, size=(t, 1)).astype(float)])
    weights = opt_w_timeseries(FeatureMatrix(values), lam=1.0)
    spread = weights.w[:, 0].max() - weights.w[:, 0].min()
    assert spread < 1e-3


def test_opt_w_timeseries_is_a_fixed_point_of_itself():
    rng = np.random.default_rng(6)
    F = rand_features(rng, 8, 2)
    first = opt_w_timeseries(F, lam=1.0)
    loss_first = timeseries_loss(F, first)

    from predstat.models import gradient_descent

    def objective(w):
        from predstat import kernels

        loss, grad, _ = kernels.ts_objective(F.values, w, 1.0, True, False)
        return loss, grad

    w2, loss_second = gradient_descent(first.w.copy(), objective, GdConfig())
    assert abs(loss_second - loss_first) < 1e-8


def test_opt_w_timeseries_trace_is_monotone():
    rng = np.random.default_rng(7)
    F = rand_features(rng, 12, 3)
    trace: list = []
    result = opt_w_timeseries(F, lam=0.5, trace_out=trace)
    assert len(trace) >= 1
    assert all(trace[i + 1] <= trace[i] for i in range(len(trace) - 1))
    assert timeseries_loss(F, result) <= trace[0]


# --- classification -------------------------------------------------------------


def test_classification_loss_zero_weights_uniform():
    rng = np.random.default_rng(8)
    n, c, k = 15, 4, 2
    F = rand_features(rng, n, k)
    labels = rng.integers(0, c, size=n)
    loss = classification_loss(F, ClassifierWeights(np.zeros((c, k))), labels)
    assert math.isclose(loss, n * math.log(c), rel_tol=1e-12)


def test_classification_zero_feature_row_contributes_log_c():
    rng = np.random.default_rng(9)
    c, k = 3, 2
    values = rng.integers(0, 2, size=(6, k)).astype(float)
    values[0] = 0.0
    labels = rng.integers(0, c, size=6)
    W = ClassifierWeights(rng.normal(size=(c, k)))
    full = classification_loss(FeatureMatrix(values), W, labels)
    rest = classification_loss(
        FeatureMatrix(values[1:]), W, labels[1:]
    )
    assert math.isclose(full - rest, math.log(c), rel_tol=1e-12)


def test_classification_gradient_matches_finite_differences():
    rng = np.random.default_rng(10)
    n, c, k = 10, 3, 2
    F = rand_features(rng, n, k)
    labels = rng.integers(0, c, size=n)
    W0 = rng.normal(size=(c, k))

    def loss_of(W):
        return classification_loss(F, ClassifierWeights(W.copy()), labels)

    analytic = classification_grad_w(F, ClassifierWeights(W0.copy()), labels)
    numeric = central_difference(loss_of, W0)
    assert gradient_rel_error(analytic, numeric) < 1e-4


def test_classification_label_out_of_range():
    F = rand_features(np.random.default_rng(0), 4, 1)
    with pytest.raises(ModelError):
        classification_loss(F, ClassifierWeights(np.zeros((2, 1))), np.array([0, 1, 2, 0]))


def test_opt_w_classification_separable_reaches_full_accuracy():
    # feature k is the indicator of class k
    n = 40
    rng = np.random.default_rng(11)
    labels = rng.integers(0, 2, size=n)
    values = np.stack([(labels == 0).astype(float), (labels == 1).astype(float)], axis=1)
    weights = opt_w_classification(FeatureMatrix(values), labels, n_classes=2)
    pred = (values @ weights.W.T).argmax(axis=1)
    assert np.array_equal(pred, labels)


def test_opt_w_classification_no_signal_stays_uniform():
    # constant features with balanced labels: loss stays at n*log(c)
    n, c = 24, 3
    values = np.ones((n, 2))
    labels = np.arange(n) % c
    weights = opt_w_classification(FeatureMatrix(values), labels, n_classes=c)
    loss = classification_loss(FeatureMatrix(values), weights, labels)
    assert abs(loss - n * math.log(c)) < 1e-3


def test_opt_w_classification_duplicate_columns_split_symmetrically():
    rng = np.random.default_rng(12)
    n, c = 30, 2
    col = rng.integers(0, 2, size=(n, 1)).astype(float)
    values = np.hstack([col, col])
    labels = (col[:, 0] > 0).astype(np.int64)
    weights = opt_w_classification(FeatureMatrix(values), labels, n_classes=c)
    assert np.all(np.abs(weights.W[:, 0] - weights.W[:, 1]) < 1e-4)


# --- fitness ----------------------------------------------------------------


def _tiny_world_grounder():
    world = default_world()
    instance = gen_clustering(world, k=3, n=24, seed=0, noise_scale=0.0)
    grounder = Grounder(OracleBackend(), DenotationCache())
    return world, instance, grounder


def test_fitness_all_zero_columns_backs_off_everywhere():
    world, instance, grounder = _tiny_world_grounder()
    params = ModelParams("clustering")
    # predicates from a group absent from every sample: all-zero denotations
    preds = [world.tag_predicate("language", t) for t in ("english", "french")]
    n = len(instance.corpus)
    value = fitness(preds, params, instance.corpus, grounder)
    assert math.isclose(value, -n * math.log(n), rel_tol=1e-12)


def test_fitness_zeroing_an_all_zero_column_changes_nothing():
    world, instance, grounder = _tiny_world_grounder()
    params = ModelParams("clustering")
    preds = [
        world.tag_predicate("topic", "arts"),
        world.tag_predicate("language", "english"),  # all zeros in this corpus
    ]
    base = fitness(preds, params, instance.corpus, grounder)
    zeroed = fitness(preds, params, instance.corpus, grounder, zero_out=1)
    assert math.isclose(base, zeroed, rel_tol=1e-12)


def test_adding_a_predicate_never_lowers_clustering_fitness():
    world, instance, grounder = _tiny_world_grounder()
    params = ModelParams("clustering")
    rng = np.random.default_rng(3)
    vocab = world.vocabulary_predicates()
    for _ in range(8):
        base_set = [vocab[i] for i in rng.choice(len(vocab), size=2, replace=False)]
        extra = vocab[int(rng.integers(len(vocab)))]
        before = fitness(base_set, params, instance.corpus, grounder)
        after = fitness(base_set + [extra], params, instance.corpus, grounder)
        assert after >= before - 1e-9
