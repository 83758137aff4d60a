"""Pure-NumPy kernel backend.

Reference implementations of the inner-loop numerics shared by all model
families: stabilized log-sum-exp, hard cluster assignment, and the
loss/gradient objectives evaluated thousands of times per fit. The Cython
backend in ``_speedups.pyx`` mirrors these signatures exactly.

Conventions: ``F`` is the (n_samples, n_predicates) feature matrix (0/1 for
discrete predicates, clipped dot products for relaxed ones), float64 and
C-contiguous. All probability computations subtract the row/column max
before exponentiating.
"""
from __future__ import annotations

import numpy as np


def logsumexp(x):
    """log(sum(exp(x))) of a 1-D array, stabilized by max subtraction."""
    x = np.asarray(x, dtype=np.float64)
    m = float(x.max())
    return m + float(np.log(np.exp(x - m).sum()))


def _binary_lognorm(count, n, tau):
    """log(c*e^tau + (n-c)) from the sufficient statistic of a 0/1 column.

    Computing this from the count (instead of summing exponentials in
    column order) makes equal-count columns tie *exactly*, so index-based
    tie-breaking is deterministic rather than at the mercy of float
    summation order.
    """
    if count == 0:
        return np.log(n)
    if count == n:
        return tau + np.log(n)
    m = max(tau, 0.0)
    return m + np.log(count * np.exp(tau - m) + (n - count) * np.exp(-m))


def _column_lognorms(F, tau):
    """lognorm[k] = log sum_x exp(tau * F[x, k]), stabilized."""
    n, k = F.shape
    out = np.empty(k)
    for j in range(k):
        col = F[:, j]
        if np.all((col == 0.0) | (col == 1.0)):
            out[j] = _binary_lognorm(float(col.sum()), n, tau)
        else:
            s = tau * col
            m = s.max()
            out[j] = m + np.log(np.exp(s - m).sum())
    return out


def _cluster_scores(F, tau):
    """Per-sample, per-cluster log-probabilities.

    score[x, k] = tau*F[x, k] - log sum_x' exp(tau*F[x', k])
    """
    lognorms = _column_lognorms(F, tau)
    return tau * F - lognorms[None, :], lognorms


def cluster_assign(F, tau, log_n):
    """Assign every sample to its max-likelihood cluster or the background.

    Returns (assign, loss) where assign[x] in [0, K] with K meaning the
    uniform background (score exactly -log_n). Ties go to the lowest
    cluster index; the background loses ties because it sits last.
    """
    n = F.shape[0]
    scores, _ = _cluster_scores(F, tau)
    full = np.concatenate([scores, np.full((n, 1), -log_n)], axis=1)
    assign = np.argmax(full, axis=1).astype(np.int64)
    loss = -float(full[np.arange(n), assign].sum())
    return assign, loss


def cluster_objective(F, tau, assign, log_n, need_fgrad):
    """Clustering negative log-likelihood under fixed assignments.

    Background-assigned samples contribute exactly log_n. The optional
    gradient is with respect to the feature entries (used by the continuous
    relaxation): dL/dF[x,k] = tau * (n_k * p_k(x) - [assign[x] == k]) where
    p_k is the column softmax and n_k the number of samples assigned to k.
    """
    n, k = F.shape
    S = tau * F
    lognorms = _column_lognorms(F, tau)
    is_bg = assign == k
    idx = np.arange(n)
    own = np.where(is_bg, -log_n, S[idx, np.minimum(assign, k - 1)] - lognorms[np.minimum(assign, k - 1)])
    loss = -float(own.sum())
    if not need_fgrad:
        return loss, None
    counts = np.bincount(assign[~is_bg], minlength=k).astype(np.float64)
    P = np.exp(S - lognorms[None, :])
    G = tau * P * counts[None, :]
    rows = idx[~is_bg]
    G[rows, assign[~is_bg]] -= tau
    return loss, G


def ts_objective(F, W, lam, need_wgrad, need_fgrad):
    """Sequence objective: per-step softmax likelihood + smoothness penalty.

    loss = sum_t [lse(S[t,:]) - S[t,t]] + (lam/2) * sum_t ||W[t] - W[t+1]||^2
    with S = W @ F.T; row t is the score of every sample under the step-t
    weights, and sample t is the one observed at step t.
    """
    T = W.shape[0]
    S = W @ F.T
    m = S.max(axis=1)
    E = np.exp(S - m[:, None])
    Z = E.sum(axis=1)
    lse = m + np.log(Z)
    data = float((lse - np.diagonal(S)).sum())
    diffs = W[:-1] - W[1:]
    loss = data + 0.5 * lam * float((diffs * diffs).sum())
    Gw = Gf = None
    if need_wgrad or need_fgrad:
        P = E / Z[:, None]
    if need_wgrad:
        Gw = P @ F - F
        Gw[:-1] += lam * diffs
        Gw[1:] -= lam * diffs
    if need_fgrad:
        Gf = P.T @ W - W
    return loss, Gw, Gf


def clf_objective(F, W, labels, l2, need_wgrad, need_fgrad):
    """Softmax cross-entropy of logits F @ W.T plus (l2/2)*||W||^2.

    Gradients: dL/dW = (P - Y).T @ F + l2*W and dL/dF = (P - Y) @ W.
    """
    n = F.shape[0]
    logits = F @ W.T
    m = logits.max(axis=1)
    E = np.exp(logits - m[:, None])
    Z = E.sum(axis=1)
    idx = np.arange(n)
    ce = float((m + np.log(Z) - logits[idx, labels]).sum())
    loss = ce + 0.5 * l2 * float((W * W).sum())
    Gw = Gf = None
    if need_wgrad or need_fgrad:
        P = E / Z[:, None]
        P[idx, labels] -= 1.0
    if need_wgrad:
        Gw = P.T @ F + l2 * W
    if need_fgrad:
        Gf = P @ W
    return loss, Gw, Gf
