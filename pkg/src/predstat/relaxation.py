"""Continuous relaxation of predicates.

A discrete predicate's 0/1 column is approximated by the dot product of a
unit direction with each sample's unit embedding. With the model weights
fixed, the loss becomes differentiable in those directions, so they can be
driven downhill by projected gradient descent: Euclidean step, renormalize
to the sphere, accept only if the loss decreased.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import EmbeddingMatrix
from .grounding import DenotationVector
from .models import (
    FeatureMatrix,
    GdConfig,
    ModelError,
    ModelParams,
    Weights,
    gradient_descent,
    loss_and_feature_grad,
)

UNIT_TOL = 1e-6


@dataclass(frozen=True)
class ContinuousPredicate:
    """A unit-length direction in embedding space."""

    vec: np.ndarray

    def __post_init__(self):
        v = np.ascontiguousarray(self.vec, dtype=np.float64)
        norm = float(np.linalg.norm(v))
        if abs(norm - 1.0) > UNIT_TOL:
            raise ModelError(f"continuous predicate must be unit-norm (got {norm})")
        object.__setattr__(self, "vec", v)


def unit(v: np.ndarray) -> np.ndarray:
    norm = float(np.linalg.norm(v))
    if norm == 0.0:
        raise ModelError("cannot normalize the zero vector")
    return np.asarray(v, dtype=np.float64) / norm


def relaxed_features(
    columns: list[ContinuousPredicate | DenotationVector],
    embeddings: EmbeddingMatrix,
) -> FeatureMatrix:
    """Feature matrix mixing continuous and discrete columns.

    Continuous column k holds clip(direction_k . e_x, -1, 1); discrete
    columns keep their 0/1 denotation values, so an all-discrete input
    reproduces the discrete matrix entry-for-entry.
    """
    n = embeddings.matrix.shape[0]
    out = np.empty((n, len(columns)), dtype=np.float64)
    for j, col in enumerate(columns):
        if isinstance(col, ContinuousPredicate):
            if col.vec.shape[0] != embeddings.dim:
                raise ModelError("direction dimension does not match embeddings")
            out[:, j] = np.clip(embeddings.matrix @ col.vec, -1.0, 1.0)
        elif isinstance(col, DenotationVector):
            if col.values.shape[0] != n:
                raise ModelError("denotation length does not match embeddings")
            out[:, j] = col.values
        else:
            raise ModelError(f"unsupported column type: {type(col)!r}")
    return FeatureMatrix(out, mode="relaxed")


def _sphere_project(flat: np.ndarray, k: int, d: int) -> np.ndarray:
    dirs = flat.reshape(k, d)
    norms = np.linalg.norm(dirs, axis=1, keepdims=True)
    if np.any(norms == 0.0):
        raise ModelError("direction collapsed to the zero vector")
    return (dirs / norms).reshape(-1)


def _tangent_norm(flat: np.ndarray, grad: np.ndarray, k: int, d: int) -> float:
    """Norm of the gradient component tangent to the product of spheres;
    the radial component is irrelevant under renormalization."""
    x = flat.reshape(k, d)
    g = grad.reshape(k, d)
    radial = (g * x).sum(axis=1, keepdims=True) * x
    return float(np.linalg.norm(g - radial))


def _make_objective(
    k_free: int,
    build_values,  # (clipped free dots (n, k_free)) -> full feature values
    scatter_grad,  # (full feature grad) -> grad w.r.t. free columns (n, k_free)
    weights: Weights,
    params: ModelParams,
    embeddings: EmbeddingMatrix,
    labels: np.ndarray | None,
):
    E = embeddings.matrix
    d = embeddings.dim

    def value_and_grad(flat: np.ndarray):
        dirs = flat.reshape(k_free, d)
        raw = E @ dirs.T  # (n, k_free)
        inside = np.abs(raw) < 1.0  # clip kink: zero slope outside
        values = build_values(np.clip(raw, -1.0, 1.0))
        loss, fgrad = loss_and_feature_grad(values, weights, params, labels=labels)
        free_fgrad = scatter_grad(fgrad) * inside
        return loss, (free_fgrad.T @ E).reshape(-1)

    return value_and_grad


def relaxed_loss_and_grad(
    directions: np.ndarray,
    weights: Weights,
    embeddings: EmbeddingMatrix,
    params: ModelParams,
    *,
    labels: np.ndarray | None = None,
) -> tuple[float, np.ndarray]:
    """Loss and gradient of the all-continuous relaxed objective at an
    arbitrary (k, d) direction matrix (no unit-norm requirement)."""
    directions = np.asarray(directions, dtype=np.float64)
    k, d = directions.shape
    objective = _make_objective(
        k, lambda clipped: clipped, lambda g: g, weights, params, embeddings, labels
    )
    loss, grad = objective(directions.reshape(-1))
    return loss, grad.reshape(k, d)


def _optimize_directions(
    free_init: list[ContinuousPredicate],
    build_values,
    scatter_grad,
    weights: Weights,
    params: ModelParams,
    embeddings: EmbeddingMatrix,
    labels: np.ndarray | None,
    gd: GdConfig,
    trace_out: list | None,
) -> list[ContinuousPredicate]:
    k_free, d = len(free_init), embeddings.dim
    value_and_grad = _make_objective(
        k_free, build_values, scatter_grad, weights, params, embeddings, labels
    )
    x0 = np.concatenate([cp.vec for cp in free_init])
    x, _ = gradient_descent(
        x0,
        value_and_grad,
        gd,
        project=lambda flat: _sphere_project(flat, k_free, d),
        grad_norm=lambda flat, g: _tangent_norm(flat, g, k_free, d),
        trace_out=trace_out,
    )
    return [ContinuousPredicate(v) for v in x.reshape(k_free, d)]


def opt_relaxed_all(
    weights: Weights,
    embeddings: EmbeddingMatrix,
    params: ModelParams,
    init: list[ContinuousPredicate],
    *,
    labels: np.ndarray | None = None,
    gd: GdConfig | None = None,
    trace_out: list | None = None,
) -> list[ContinuousPredicate]:
    """Optimize every continuous predicate at once, weights fixed."""
    return _optimize_directions(
        init,
        build_values=lambda clipped: clipped,
        scatter_grad=lambda fgrad: fgrad,
        weights=weights,
        params=params,
        embeddings=embeddings,
        labels=labels,
        gd=gd or params.gd,
        trace_out=trace_out,
    )


def opt_relaxed_one(
    k: int,
    fixed: list[DenotationVector],
    weights: Weights,
    embeddings: EmbeddingMatrix,
    params: ModelParams,
    init: ContinuousPredicate,
    *,
    labels: np.ndarray | None = None,
    gd: GdConfig | None = None,
    trace_out: list | None = None,
) -> ContinuousPredicate:
    """Optimize the single direction at column ``k``; the other columns stay
    fixed at the 0/1 denotations given in ``fixed`` (in column order,
    skipping k)."""
    n = embeddings.matrix.shape[0]
    k_total = len(fixed) + 1
    if not 0 <= k < k_total:
        raise ModelError(f"column index {k} out of range")
    base = np.empty((n, k_total), dtype=np.float64)
    others = [j for j in range(k_total) if j != k]
    for j, vec in zip(others, fixed):
        if vec.values.shape[0] != n:
            raise ModelError("denotation length does not match embeddings")
        base[:, j] = vec.values

    def build_values(clipped):
        base[:, k] = clipped[:, 0]
        return base

    result = _optimize_directions(
        [init],
        build_values=build_values,
        scatter_grad=lambda fgrad: fgrad[:, k : k + 1],
        weights=weights,
        params=params,
        embeddings=embeddings,
        labels=labels,
        gd=gd or params.gd,
        trace_out=trace_out,
    )
    return result[0]
