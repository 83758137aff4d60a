import math

import numpy as np
import pytest

from predstat.benchgen import default_world, gen_clustering
from predstat.gateway import Gateway, GatewayConfig, MockProvider
from predstat.grounding import DenotationCache, Grounder, OracleBackend
from predstat.proposer import OracleProposer


@pytest.fixture
def world():
    return default_world()


@pytest.fixture
def oracle_grounder():
    return Grounder(OracleBackend(), DenotationCache())


def make_oracle_bundle(world):
    """Grounder + proposer over the world's full tag vocabulary."""
    grounder = Grounder(OracleBackend(), DenotationCache())
    proposer = OracleProposer(world.vocabulary_predicates())
    return grounder, proposer


def make_mock_gateway(replies=None, fallback=None, **config_kwargs):
    provider = MockProvider(fallback=fallback)
    for prompt, reply in (replies or {}).items():
        provider.register(prompt, reply)
    gateway = Gateway(provider, GatewayConfig(**config_kwargs))
    return gateway, provider


@pytest.fixture
def small_clustering():
    world = default_world()
    return world, gen_clustering(world, k=4, n=96, seed=5, noise_scale=0.05)


# --- independent reference implementations used as test oracles -------------


def brute_cluster_assign(F, tau):
    """Per-sample argmax over clusters + background by direct summation.

    fsum gives the correctly rounded sum, so columns that are permutations
    of each other produce identical normalizers and tie exactly.
    """
    n, k = F.shape
    lognorm = [
        math.log(math.fsum(math.exp(tau * F[x, j]) for x in range(n)))
        for j in range(k)
    ]
    out = []
    for x in range(n):
        scores = [tau * F[x, j] - lognorm[j] for j in range(k)] + [-math.log(n)]
        out.append(max(range(k + 1), key=lambda j: scores[j]))  # first max wins
    return np.array(out, dtype=np.int64)


def central_difference(func, x, h=1e-5):
    """Central finite-difference gradient of a scalar function of an array."""
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat, gflat = x.ravel(), grad.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = func(x)
        flat[i] = orig - h
        down = func(x)
        flat[i] = orig
        gflat[i] = (up - down) / (2.0 * h)
    return grad


def gradient_rel_error(analytic, numeric):
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    scale = max(float(np.abs(numeric).max()), 1e-10)
    return float(np.abs(analytic - numeric).max()) / scale
