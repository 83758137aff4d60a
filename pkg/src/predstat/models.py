"""The predicate-conditioned distribution and its three model families.

Every model places probability mass over the observed sample set X
proportional to exp(w . f(x)), where f(x) is the vector of 0/1 predicate
values of x (or their continuous surrogates during relaxation):

  clustering      one weight vector per sample, tau * one_hot(cluster),
                  plus a uniform background cluster that caps the
                  per-sample loss at log |X|;
  timeseries      one weight vector per time step with a squared-difference
                  smoothness penalty (lam/2) * sum ||w_t - w_{t+1}||^2;
  classification  softmax regression on the predicate features.

``opt_w_*`` fits the weights with the predicates fixed; ``fitness`` is the
negative loss after that fit and is the scalar the learner maximizes.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from . import kernels
from .corpus import Corpus
from .grounding import DenotationVector, Grounder, Predicate

MODEL_KINDS = ("clustering", "timeseries", "classification")


class ModelError(ValueError):
    pass


class DivergenceError(RuntimeError):
    """Optimizer observed a runaway loss; indicates a bad step size."""


@dataclass(frozen=True)
class GdConfig:
    """First-order descent with backtracking: a trial step is halved until
    it strictly lowers the loss, so the accepted-loss trace is
    non-increasing by construction. Nesterov momentum (reset whenever it
    stops helping) cuts the iteration count on the ill-conditioned
    sequence objectives by an order of magnitude; the accepted step size
    carries over between iterations instead of restarting at ``step``."""

    step: float = 0.1
    max_steps: int = 2000
    grad_tol: float = 1e-5
    max_halvings: int = 40


@dataclass(frozen=True)
class ModelParams:
    kind: str
    tau: float = 10.0
    lam: float = 1.0
    ridge: float = 1e-3  # l2 on classifier weights during opt_w only
    gd: GdConfig = field(default_factory=GdConfig)

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise ModelError(f"unknown model kind: {self.kind!r}")


@dataclass
class FeatureMatrix:
    """(n_samples, n_predicates) feature values.

    mode "discrete": entries are exactly 0 or 1. mode "relaxed": entries are
    dot products of unit vectors, clipped to [-1, 1] against float drift.
    """

    values: np.ndarray
    mode: str = "discrete"

    def __post_init__(self):
        self.values = np.ascontiguousarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise ModelError("feature matrix must be 2-D")
        if self.mode == "discrete":
            if not np.all((self.values == 0.0) | (self.values == 1.0)):
                raise ModelError("discrete features must be exactly 0 or 1")
        elif self.mode == "relaxed":
            if np.any(np.abs(self.values) > 1.0 + 1e-12):
                raise ModelError("relaxed features must lie in [-1, 1]")
            np.clip(self.values, -1.0, 1.0, out=self.values)
        else:
            raise ModelError(f"unknown feature mode: {self.mode!r}")

    @classmethod
    def from_denotations(cls, vectors: Sequence[DenotationVector]) -> "FeatureMatrix":
        cols = np.stack([v.values for v in vectors], axis=1).astype(np.float64)
        return cls(cols, mode="discrete")

    @property
    def n_samples(self) -> int:
        return self.values.shape[0]

    @property
    def n_predicates(self) -> int:
        return self.values.shape[1]

    def with_zeroed(self, k: int) -> "FeatureMatrix":
        values = self.values.copy()
        values[:, k] = 0.0
        return FeatureMatrix(values, self.mode)


@dataclass
class ClusterWeights:
    """Per-sample hard assignment; index n_predicates means background."""

    assignment: np.ndarray  # (n_samples,) int64
    tau: float = 10.0

    def __post_init__(self):
        self.assignment = np.ascontiguousarray(self.assignment, dtype=np.int64)


@dataclass
class TimeSeriesWeights:
    w: np.ndarray  # (T, n_predicates)
    lam: float = 1.0

    def __post_init__(self):
        self.w = np.ascontiguousarray(self.w, dtype=np.float64)
        if not np.all(np.isfinite(self.w)):
            raise ModelError("non-finite time-series weights")


@dataclass
class ClassifierWeights:
    W: np.ndarray  # (n_classes, n_predicates)

    def __post_init__(self):
        self.W = np.ascontiguousarray(self.W, dtype=np.float64)
        if not np.all(np.isfinite(self.W)):
            raise ModelError("non-finite classifier weights")


Weights = ClusterWeights | TimeSeriesWeights | ClassifierWeights


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------

def log_normalizer(w: np.ndarray, features: FeatureMatrix) -> float:
    """log sum_x exp(w . f(x)), the log partition over the sample set."""
    w = np.asarray(w, dtype=np.float64)
    if w.shape != (features.n_predicates,):
        raise ModelError(
            f"weight length {w.shape} does not match {features.n_predicates} predicates"
        )
    if not np.all(np.isfinite(w)):
        raise ModelError("non-finite weights")
    return kernels.logsumexp(features.values @ w)


def clustering_loss(features: FeatureMatrix, weights: ClusterWeights) -> float:
    n, k = features.values.shape
    if weights.assignment.shape != (n,):
        raise ModelError("assignment length does not match corpus size")
    if weights.assignment.min() < 0 or weights.assignment.max() > k:
        raise ModelError("assignment index out of range")
    loss, _ = kernels.cluster_objective(
        features.values, weights.tau, weights.assignment, math.log(n), False
    )
    return float(loss)


def opt_w_clustering(features: FeatureMatrix, tau: float = 10.0) -> ClusterWeights:
    """Exact argmax assignment per sample over K clusters plus background.

    Ties break to the lowest cluster index; the background wins only when
    strictly better (it is compared last).
    """
    assign, _ = kernels.cluster_assign(
        features.values, tau, math.log(features.n_samples)
    )
    return ClusterWeights(assign, tau)


def timeseries_loss(features: FeatureMatrix, weights: TimeSeriesWeights) -> float:
    _check_ts_shapes(features, weights)
    loss, _, _ = kernels.ts_objective(
        features.values, weights.w, weights.lam, False, False
    )
    return float(loss)


def timeseries_grad_w(features: FeatureMatrix, weights: TimeSeriesWeights) -> np.ndarray:
    _check_ts_shapes(features, weights)
    _, grad, _ = kernels.ts_objective(
        features.values, weights.w, weights.lam, True, False
    )
    return grad


def _check_ts_shapes(features: FeatureMatrix, weights: TimeSeriesWeights) -> None:
    t, k = weights.w.shape
    if features.values.shape != (t, k):
        raise ModelError(
            f"time-series weights {weights.w.shape} do not match features {features.values.shape}"
        )


def classification_loss(
    features: FeatureMatrix, weights: ClassifierWeights, labels: np.ndarray
) -> float:
    labels = _check_labels(features, weights, labels)
    loss, _, _ = kernels.clf_objective(
        features.values, weights.W, labels, 0.0, False, False
    )
    return float(loss)


def classification_grad_w(
    features: FeatureMatrix, weights: ClassifierWeights, labels: np.ndarray
) -> np.ndarray:
    labels = _check_labels(features, weights, labels)
    _, grad, _ = kernels.clf_objective(
        features.values, weights.W, labels, 0.0, True, False
    )
    return grad


def _check_labels(features, weights, labels) -> np.ndarray:
    labels = np.ascontiguousarray(labels, dtype=np.int64)
    c = weights.W.shape[0]
    if labels.shape != (features.n_samples,):
        raise ModelError("label vector length does not match corpus size")
    if labels.min() < 0 or labels.max() >= c:
        raise ModelError(f"label out of range [0, {c})")
    return labels


# ---------------------------------------------------------------------------
# gradient descent driver shared by the iterative optimizers
# ---------------------------------------------------------------------------

def gradient_descent(
    x0: np.ndarray,
    value_and_grad: Callable[[np.ndarray], tuple[float, np.ndarray]],
    cfg: GdConfig,
    *,
    project: Callable[[np.ndarray], np.ndarray] | None = None,
    grad_norm: Callable[[np.ndarray, np.ndarray], float] | None = None,
    trace_out: list | None = None,
) -> tuple[np.ndarray, float]:
    """Monotone accelerated descent; every accepted point strictly lowers
    the loss, so the accepted-loss trace is non-increasing by construction.

    ``project`` re-feasibilizes a trial point (e.g. renormalizing to the
    unit sphere); ``grad_norm`` overrides the stopping norm (e.g. tangent
    component only). Steps are taken from a Nesterov lookahead point; when
    no halved step from the lookahead improves on the incumbent, momentum
    resets and the step is retried from the incumbent itself, and only
    failure there counts as converged-at-float-resolution. A non-finite
    loss raises DivergenceError with the offending value.
    """

    def proj(v):
        return project(v) if project is not None else v

    def norm_of(point, grad):
        return grad_norm(point, grad) if grad_norm is not None else float(np.linalg.norm(grad))

    x = proj(x0.copy())
    loss_x, grad_x = value_and_grad(x)
    if not math.isfinite(loss_x):
        raise DivergenceError(f"non-finite loss at the initial point: {loss_x}")
    if trace_out is not None:
        trace_out.append(loss_x)
    y, loss_y, grad_y = x, loss_x, grad_x
    momentum = 1.0
    step = cfg.step
    for _ in range(cfg.max_steps):
        if norm_of(y, grad_y) < cfg.grad_tol:
            break
        alpha = step
        accepted = False
        for _ in range(cfg.max_halvings):
            trial = proj(y - alpha * grad_y)
            trial_loss, trial_grad = value_and_grad(trial)
            if math.isfinite(trial_loss) and trial_loss < loss_x:
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            if y is not x:
                # momentum led nowhere useful: restart from the incumbent
                y, loss_y, grad_y = x, loss_x, grad_x
                momentum = 1.0
                continue
            break  # no strict descent from the incumbent: converged
        x_prev = x
        x, loss_x, grad_x = trial, trial_loss, trial_grad
        step = min(alpha * 2.0, cfg.step)  # carry the working step size
        if trace_out is not None:
            trace_out.append(loss_x)
        momentum_next = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * momentum * momentum))
        y = proj(x + ((momentum - 1.0) / momentum_next) * (x - x_prev))
        loss_y, grad_y = value_and_grad(y)
        momentum = momentum_next
    return x, loss_x


def lbfgs_descent(
    x0: np.ndarray,
    value_and_grad: Callable[[np.ndarray], tuple[float, np.ndarray]],
    cfg: GdConfig,
    *,
    memory: int = 10,
    trace_out: list | None = None,
) -> tuple[np.ndarray, float]:
    """Limited-memory quasi-Newton descent for the unconstrained weight
    fits; an order of magnitude fewer evaluations than plain gradient
    steps on the ill-conditioned sequence objective.

    The line search demands a strict decrease (halving from the unit
    step), so the accepted-loss trace is non-increasing exactly like
    ``gradient_descent``; when the quasi-Newton direction fails, the
    memory resets and the step retries along the raw negative gradient.
    """
    x = x0.copy()
    loss, grad = value_and_grad(x)
    if not math.isfinite(loss):
        raise DivergenceError(f"non-finite loss at the initial point: {loss}")
    if trace_out is not None:
        trace_out.append(loss)
    s_hist: list[np.ndarray] = []
    y_hist: list[np.ndarray] = []
    rho_hist: list[float] = []

    def direction(g):
        q = g.copy().ravel()
        alphas = []
        for s, y, rho in zip(reversed(s_hist), reversed(y_hist), reversed(rho_hist)):
            a = rho * float(s @ q)
            alphas.append(a)
            q -= a * y
        if y_hist:
            y_last = y_hist[-1]
            q *= float(s_hist[-1] @ y_last) / float(y_last @ y_last)
        for (s, y, rho), a in zip(zip(s_hist, y_hist, rho_hist), reversed(alphas)):
            b = rho * float(y @ q)
            q += (a - b) * s
        return -q.reshape(g.shape)

    for _ in range(cfg.max_steps):
        if float(np.linalg.norm(grad)) < cfg.grad_tol:
            break
        d = direction(grad)
        if float((d * grad).sum()) >= 0.0:  # not a descent direction
            s_hist.clear(), y_hist.clear(), rho_hist.clear()
            d = -grad
        step = 1.0
        accepted = False
        for _ in range(cfg.max_halvings):
            trial = x + step * d
            trial_loss, trial_grad = value_and_grad(trial)
            if math.isfinite(trial_loss) and trial_loss < loss:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            if s_hist:
                s_hist.clear(), y_hist.clear(), rho_hist.clear()
                continue  # retry along the raw gradient
            break
        s = (trial - x).ravel()
        y = (trial_grad - grad).ravel()
        sy = float(s @ y)
        if sy > 1e-12 * float(np.linalg.norm(s)) * float(np.linalg.norm(y)):
            s_hist.append(s)
            y_hist.append(y)
            rho_hist.append(1.0 / sy)
            if len(s_hist) > memory:
                s_hist.pop(0), y_hist.pop(0), rho_hist.pop(0)
        x, loss, grad = trial, trial_loss, trial_grad
        if trace_out is not None:
            trace_out.append(loss)
    return x, loss


def opt_w_timeseries(
    features: FeatureMatrix,
    lam: float = 1.0,
    gd: GdConfig | None = None,
    *,
    w_init: np.ndarray | None = None,
    trace_out: list | None = None,
) -> TimeSeriesWeights:
    """Fit the per-step weights by descent from w = 0 (the loss is convex).

    ``w_init`` warm-starts the descent (used inside the learner's
    alternation loop); the default keeps the cold-start contract.
    """
    gd = gd or GdConfig()
    t, k = features.values.shape

    def objective(w):
        loss, grad, _ = kernels.ts_objective(features.values, w, lam, True, False)
        return loss, grad

    w0 = np.zeros((t, k)) if w_init is None else np.array(w_init, dtype=np.float64)
    w, _ = lbfgs_descent(w0, objective, gd, trace_out=trace_out)
    return TimeSeriesWeights(w, lam)


def opt_w_classification(
    features: FeatureMatrix,
    labels: np.ndarray,
    n_classes: int | None = None,
    ridge: float = 1e-3,
    gd: GdConfig | None = None,
    *,
    w_init: np.ndarray | None = None,
    trace_out: list | None = None,
) -> ClassifierWeights:
    """Softmax regression from W = 0 with a small l2 ridge.

    The ridge keeps W bounded on separable data; it is small enough not to
    move any argmax class at desk scale and applies only inside this
    optimizer, never to the reported loss.
    """
    gd = gd or GdConfig()
    labels = np.ascontiguousarray(labels, dtype=np.int64)
    c = n_classes if n_classes is not None else int(labels.max()) + 1

    def objective(W):
        loss, grad, _ = kernels.clf_objective(features.values, W, labels, ridge, True, False)
        return loss, grad

    w0 = (
        np.zeros((c, features.n_predicates))
        if w_init is None
        else np.array(w_init, dtype=np.float64)
    )
    W, _ = lbfgs_descent(w0, objective, gd, trace_out=trace_out)
    return ClassifierWeights(W)


# ---------------------------------------------------------------------------
# dispatch helpers + fitness
# ---------------------------------------------------------------------------

def opt_w(
    features: FeatureMatrix,
    params: ModelParams,
    *,
    labels: np.ndarray | None = None,
    n_classes: int | None = None,
    warm: Weights | None = None,
    gd: GdConfig | None = None,
) -> Weights:
    gd = gd or params.gd
    if params.kind == "clustering":
        return opt_w_clustering(features, params.tau)
    if params.kind == "timeseries":
        w_init = warm.w if isinstance(warm, TimeSeriesWeights) else None
        return opt_w_timeseries(features, params.lam, gd, w_init=w_init)
    if labels is None:
        raise ModelError("classification requires labels")
    w_init = warm.W if isinstance(warm, ClassifierWeights) else None
    return opt_w_classification(
        features, labels, n_classes, params.ridge, gd, w_init=w_init
    )


def model_loss(
    features: FeatureMatrix,
    weights: Weights,
    params: ModelParams,
    *,
    labels: np.ndarray | None = None,
) -> float:
    if params.kind == "clustering":
        return clustering_loss(features, weights)
    if params.kind == "timeseries":
        return timeseries_loss(features, weights)
    if labels is None:
        raise ModelError("classification requires labels")
    return classification_loss(features, weights, labels)


def loss_and_feature_grad(
    values: np.ndarray,
    weights: Weights,
    params: ModelParams,
    *,
    labels: np.ndarray | None = None,
) -> tuple[float, np.ndarray]:
    """Model loss and its gradient with respect to the feature entries.

    This is the piece the continuous relaxation chains through the
    embedding matrix; the weights stay fixed.
    """
    if params.kind == "clustering":
        n = values.shape[0]
        loss, grad = kernels.cluster_objective(
            values, weights.tau, weights.assignment, math.log(n), True
        )
        return float(loss), grad
    if params.kind == "timeseries":
        loss, _, grad = kernels.ts_objective(values, weights.w, weights.lam, False, True)
        return float(loss), grad
    loss, _, grad = kernels.clf_objective(
        values, weights.W, np.ascontiguousarray(labels, dtype=np.int64), 0.0, False, True
    )
    return float(loss), grad


def features_for(
    predicates: Sequence[Predicate],
    corpus: Corpus,
    grounder: Grounder,
    *,
    order: np.ndarray | None = None,
    zero_out: int | None = None,
) -> FeatureMatrix:
    """Discrete feature matrix of the predicates, optionally row-reordered
    (time order) and optionally with one column zeroed."""
    values = grounder.denote_matrix(predicates, corpus)
    if order is not None:
        values = values[order]
    features = FeatureMatrix(values, mode="discrete")
    if zero_out is not None:
        if not 0 <= zero_out < features.n_predicates:
            raise ModelError(f"zero_out index {zero_out} out of range")
        features = features.with_zeroed(zero_out)
    return features


def fitness(
    predicates: Sequence[Predicate],
    params: ModelParams,
    corpus: Corpus,
    grounder: Grounder,
    *,
    zero_out: int | None = None,
) -> float:
    """Negative model loss after the weights are optimized for these
    predicates. ``zero_out`` replaces one predicate's denotation column
    with zeros before fitting, which measures how much that predicate
    contributes."""
    order = corpus.time_order() if params.kind == "timeseries" else None
    labels = corpus.labels() if params.kind == "classification" else None
    n_classes = corpus.n_classes if params.kind == "classification" else None
    features = features_for(
        predicates, corpus, grounder, order=order, zero_out=zero_out
    )
    weights = opt_w(features, params, labels=labels, n_classes=n_classes)
    return -model_loss(features, weights, params, labels=labels)
