import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from predstat import kernels
from predstat.kernels import _numpy as knp

try:
    from predstat.kernels import _speedups as kcy
except ImportError:
    kcy = None

needs_compiled = pytest.mark.skipif(kcy is None, reason="compiled kernels unavailable")


def test_logsumexp_matches_direct_sum():
    rng = np.random.default_rng(0)
    for _ in range(20):
        x = rng.normal(scale=3.0, size=rng.integers(1, 40))
        direct = math.log(sum(math.exp(v) for v in x))
        assert math.isclose(kernels.logsumexp(x), direct, rel_tol=1e-12)


def test_logsumexp_of_zeros_is_log_n():
    assert math.isclose(kernels.logsumexp(np.zeros(17)), math.log(17), rel_tol=1e-14)


@given(
    st.lists(st.floats(-30, 30), min_size=1, max_size=20),
    st.floats(-50, 50),
)
@settings(max_examples=100, deadline=None)
def test_logsumexp_shift_identity(values, shift):
    x = np.array(values)
    lhs = kernels.logsumexp(x + shift)
    rhs = kernels.logsumexp(x) + shift
    assert math.isclose(lhs, rhs, rel_tol=1e-10, abs_tol=1e-10)


def test_logsumexp_is_stable_for_large_scores():
    x = np.array([1000.0, 1000.0])
    assert math.isclose(kernels.logsumexp(x), 1000.0 + math.log(2.0))


def _random_case(rng):
    n = int(rng.integers(4, 40))
    k = int(rng.integers(1, 5))
    c = int(rng.integers(2, 6))
    F = rng.integers(0, 2, size=(n, k)).astype(np.float64)
    Frel = rng.uniform(-1, 1, size=(n, k))
    W = rng.normal(size=(n, k))
    Wc = rng.normal(size=(c, k))
    y = rng.integers(0, c, size=n).astype(np.int64)
    return n, k, c, F, Frel, W, Wc, y


@needs_compiled
def test_backends_agree():
    rng = np.random.default_rng(42)
    for _ in range(25):
        n, k, c, F, Frel, W, Wc, y = _random_case(rng)
        log_n = math.log(n)
        for feats in (F, Frel):
            a_np, l_np = knp.cluster_assign(feats, 10.0, log_n)
            a_cy, l_cy = kcy.cluster_assign(feats, 10.0, log_n)
            assert np.array_equal(a_np, a_cy)
            assert math.isclose(l_np, l_cy, rel_tol=1e-10, abs_tol=1e-10)

            o_np = knp.cluster_objective(feats, 10.0, a_np, log_n, True)
            o_cy = kcy.cluster_objective(feats, 10.0, a_np, log_n, True)
            assert math.isclose(o_np[0], o_cy[0], rel_tol=1e-10, abs_tol=1e-10)
            np.testing.assert_allclose(o_np[1], o_cy[1], atol=1e-9)

            t_np = knp.ts_objective(feats, W, 0.7, True, True)
            t_cy = kcy.ts_objective(feats, W, 0.7, True, True)
            assert math.isclose(t_np[0], t_cy[0], rel_tol=1e-9, abs_tol=1e-9)
            np.testing.assert_allclose(t_np[1], t_cy[1], atol=1e-9)
            np.testing.assert_allclose(t_np[2], t_cy[2], atol=1e-9)

            c_np = knp.clf_objective(feats, Wc, y, 1e-3, True, True)
            c_cy = kcy.clf_objective(feats, Wc, y, 1e-3, True, True)
            assert math.isclose(c_np[0], c_cy[0], rel_tol=1e-9, abs_tol=1e-9)
            np.testing.assert_allclose(c_np[1], c_cy[1], atol=1e-9)
            np.testing.assert_allclose(c_np[2], c_cy[2], atol=1e-9)


@needs_compiled
def test_compiled_backend_is_active_by_default():
    # the package prefers the compiled kernels when they import
    assert kernels.BACKEND == "cython"


def test_cluster_assign_tie_breaking_prefers_low_index_then_background():
    # two identical columns: ties must go to column 0
    F = np.array([[1.0, 1.0], [0.0, 0.0], [1.0, 1.0]])
    assign, _ = kernels.cluster_assign(F, 10.0, math.log(3))
    assert set(assign[[0, 2]]) == {0}
    # all-zero feature: cluster score equals the background score exactly;
    # the cluster keeps the tie
    F1 = np.zeros((5, 1))
    assign1, loss1 = kernels.cluster_assign(F1, 10.0, math.log(5))
    assert set(assign1) == {0}
    assert math.isclose(loss1, 5 * math.log(5), rel_tol=1e-12)
