import math

import numpy as np
import pytest

from predstat.benchgen import default_world, gen_clustering
from predstat.corpus import EmbeddingMatrix
from predstat.grounding import DenotationCache, DenotationVector, Grounder, OracleBackend, Predicate
from predstat.models import (
    ClassifierWeights,
    ClusterWeights,
    FeatureMatrix,
    GdConfig,
    ModelParams,
    TimeSeriesWeights,
    clustering_loss,
    opt_w_clustering,
)
from predstat.relaxation import (
    ContinuousPredicate,
    opt_relaxed_all,
    opt_relaxed_one,
    relaxed_features,
    relaxed_loss_and_grad,
    unit,
)

from conftest import central_difference, gradient_rel_error


def random_embeddings(rng, n, d):
    matrix = rng.normal(size=(n, d))
    matrix /= np.linalg.norm(matrix, axis=1, keepdims=True)
    return EmbeddingMatrix([f"s{i}" for i in range(n)], matrix)


def test_relaxed_feature_of_own_embedding_is_one():
    emb = random_embeddings(np.random.default_rng(0), 5, 4)
    phi = ContinuousPredicate(emb.matrix[2])
    feats = relaxed_features([phi], emb)
    assert math.isclose(feats.values[2, 0], 1.0, abs_tol=1e-12)


def test_relaxed_feature_orthogonal_is_zero():
    emb = EmbeddingMatrix(["a", "b"], np.array([[1.0, 0.0], [0.0, 1.0]]))
    phi = ContinuousPredicate(np.array([0.0, 1.0]))
    assert relaxed_features([phi], emb).values[0, 0] == 0.0


def test_all_discrete_columns_reproduce_discrete_matrix():
    rng = np.random.default_rng(1)
    emb = random_embeddings(rng, 6, 3)
    bits = [
        DenotationVector(Predicate(f"p{j}"), rng.integers(0, 2, size=6))
        for j in range(2)
    ]
    feats = relaxed_features(list(bits), emb)
    discrete = FeatureMatrix(np.stack([b.values for b in bits], axis=1).astype(float))
    assert np.array_equal(feats.values, discrete.values)
    # mixed-mode consistency: the losses agree exactly
    weights = opt_w_clustering(discrete, tau=10.0)
    assert clustering_loss(feats, weights) == clustering_loss(discrete, weights)


def test_continuous_predicate_requires_unit_norm():
    with pytest.raises(Exception, match="unit-norm"):
        ContinuousPredicate(np.array([1.0, 1.0]))


def _fd_check(params, weights, labels=None, seed=0):
    rng = np.random.default_rng(seed)
    n, d, k = 9, 4, weights_k(weights)
    emb = random_embeddings(rng, n, d)
    dirs = np.stack([unit(rng.normal(size=d)) for _ in range(k)])
    analytic_loss, analytic = relaxed_loss_and_grad(
        dirs, weights, emb, params, labels=labels
    )

    def loss_of(flat_dirs):
        value, _ = relaxed_loss_and_grad(
            flat_dirs.reshape(k, d), weights, emb, params, labels=labels
        )
        return value

    numeric = central_difference(loss_of, dirs.reshape(-1)).reshape(k, d)
    assert gradient_rel_error(analytic, numeric) < 1e-4


def weights_k(weights):
    if isinstance(weights, ClusterWeights):
        return 2
    if isinstance(weights, TimeSeriesWeights):
        return weights.w.shape[1]
    return weights.W.shape[1]


def test_relaxed_gradient_matches_fd_clustering():
    rng = np.random.default_rng(2)
    assign = rng.integers(0, 3, size=9).astype(np.int64)  # 2 clusters + bg
    _fd_check(ModelParams("clustering"), ClusterWeights(assign, tau=7.0), seed=2)


def test_relaxed_gradient_matches_fd_timeseries():
    rng = np.random.default_rng(3)
    w = rng.normal(size=(9, 2))
    _fd_check(ModelParams("timeseries"), TimeSeriesWeights(w, lam=0.8), seed=3)


def test_relaxed_gradient_matches_fd_classification():
    rng = np.random.default_rng(4)
    labels = rng.integers(0, 3, size=9)
    _fd_check(
        ModelParams("classification"),
        ClassifierWeights(rng.normal(size=(3, 2))),
        labels=labels,
        seed=4,
    )


def _planted_noiseless():
    # One flat group with many clusters. The relaxed optimum provably tilts
    # slightly anti-aligned to every *competing* cluster axis (cosine with
    # the true axis approaches sqrt(m/(m+1)) for m equally sized
    # competitors), so axis recovery at >= 0.95 needs m >= 10.
    from predstat.benchgen import SyntheticWorld

    tags = tuple(f"theme{i:02d}" for i in range(20))
    world = SyntheticWorld(groups=(("topic", tags),))
    instance = gen_clustering(world, k=20, n=400, seed=1, noise_scale=0.0)
    grounder = Grounder(OracleBackend(), DenotationCache())
    return world, instance, grounder


def _axis_of(world, instance, tag):
    axis = np.zeros(len(world.vocab))
    axis[world.vocab.index(tag)] = 1.0
    return axis


def test_opt_relaxed_all_recovers_planted_axes():
    world, instance, grounder = _planted_noiseless()
    params = ModelParams("clustering")
    # assignments exactly matching the attribute groups
    columns = [grounder.denote_all(p, instance.corpus) for p in instance.references]
    discrete = FeatureMatrix.from_denotations(columns)
    weights = opt_w_clustering(discrete, tau=10.0)
    rng = np.random.default_rng(0)
    init = [
        ContinuousPredicate(unit(rng.normal(size=len(world.vocab))))
        for _ in range(len(instance.references))
    ]
    result = opt_relaxed_all(weights, instance.embeddings, params, init)
    for k, pred in enumerate(instance.references):
        tag = pred.rule["tag"]
        axis = _axis_of(world, instance, tag)
        cosine = float(result[k].vec @ axis)
        assert cosine >= 0.95, (tag, cosine)


def test_opt_relaxed_all_critical_point_stays_put():
    # all-background assignments make the relaxed loss constant in the
    # directions, so the gradient is identically zero: a critical point
    rng = np.random.default_rng(5)
    emb = random_embeddings(rng, 8, 4)
    weights = ClusterWeights(np.full(8, 2, dtype=np.int64), tau=10.0)
    init = [ContinuousPredicate(unit(rng.normal(size=4))) for _ in range(2)]
    result = opt_relaxed_all(weights, emb, ModelParams("clustering"), init)
    for a, b in zip(init, result):
        assert np.linalg.norm(a.vec - b.vec) < 1e-6


def test_relaxed_trace_monotone_and_unit_norm():
    rng = np.random.default_rng(6)
    emb = random_embeddings(rng, 12, 5)
    assign = rng.integers(0, 4, size=12).astype(np.int64)
    weights = ClusterWeights(assign, tau=10.0)
    init = [ContinuousPredicate(unit(rng.normal(size=5))) for _ in range(3)]
    trace: list = []
    result = opt_relaxed_all(
        weights, emb, ModelParams("clustering"), init, trace_out=trace
    )
    assert all(trace[i + 1] <= trace[i] for i in range(len(trace) - 1))
    for cp in result:
        assert abs(np.linalg.norm(cp.vec) - 1.0) <= 1e-6


def test_opt_relaxed_one_matches_all_when_k_is_one():
    rng = np.random.default_rng(7)
    emb = random_embeddings(rng, 10, 4)
    assign = rng.integers(0, 2, size=10).astype(np.int64)
    weights = ClusterWeights(assign, tau=10.0)
    params = ModelParams("clustering")
    init = ContinuousPredicate(unit(rng.normal(size=4)))
    lone = opt_relaxed_one(0, [], weights, emb, params, init)
    both = opt_relaxed_all(weights, emb, params, [init])
    np.testing.assert_allclose(lone.vec, both[0].vec, atol=1e-12)


def test_opt_relaxed_one_recovers_planted_axis():
    world, instance, grounder = _planted_noiseless()
    params = ModelParams("clustering")
    columns = [grounder.denote_all(p, instance.corpus) for p in instance.references]
    weights = opt_w_clustering(FeatureMatrix.from_denotations(columns), tau=10.0)
    fixed = columns[1:]  # pin the other three at their denotations
    rng = np.random.default_rng(8)
    init = ContinuousPredicate(unit(rng.normal(size=len(world.vocab))))
    result = opt_relaxed_one(0, fixed, weights, instance.embeddings, params, init)
    axis = _axis_of(world, instance, instance.references[0].rule["tag"])
    assert float(result.vec @ axis) >= 0.95


def test_opt_relaxed_one_loss_never_increases():
    rng = np.random.default_rng(9)
    emb = random_embeddings(rng, 10, 4)
    w = rng.normal(size=(10, 2))
    weights = TimeSeriesWeights(w, lam=1.0)
    params = ModelParams("timeseries")
    fixed = [DenotationVector(Predicate("f"), rng.integers(0, 2, size=10))]
    init = ContinuousPredicate(unit(rng.normal(size=4)))
    trace: list = []
    opt_relaxed_one(1, fixed, weights, emb, params, init, trace_out=trace)
    assert all(trace[i + 1] <= trace[i] for i in range(len(trace) - 1))
