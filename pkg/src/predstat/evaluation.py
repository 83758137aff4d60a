"""Scoring learned predicates against references.

Learned and reference predicates are paired by a maximum-weight bipartite
matching on denotation overlap counts, then each pair gets an F1 score
(how well the learned 0/1 values predict the reference's) and a surface
score (an LLM judge rates the two strings similar / related / irrelevant
as 1 / 0.5 / 0). Time-series runs additionally get smoothed frequency
curves with a shuffle-null band for trend detection.
"""
from __future__ import annotations

import json
import logging
import math
import re
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.special import stdtr

from .gateway import SIMILARITY_TEMPLATE, Gateway
from .grounding import DenotationVector, Predicate

logger = logging.getLogger(__name__)


class EvaluationError(ValueError):
    pass


@dataclass
class Matching:
    pairs: list[tuple[int, int]]  # (learned index, reference index)
    total_overlap: int


def overlap_matrix(learned: list[DenotationVector], reference: list[DenotationVector]) -> np.ndarray:
    if not learned or not reference:
        raise EvaluationError("matching needs non-empty predicate lists")
    n = learned[0].values.shape[0]
    for v in (*learned, *reference):
        if v.values.shape[0] != n:
            raise EvaluationError("denotation vectors cover different corpora")
    L = np.stack([v.values for v in learned]).astype(np.int64)
    R = np.stack([v.values for v in reference]).astype(np.int64)
    return L @ R.T


def _assignment_total(weights: np.ndarray) -> int:
    rows, cols = linear_sum_assignment(weights, maximize=True)
    return int(weights[rows, cols].sum())


def match_predicates(
    learned: list[DenotationVector], reference: list[DenotationVector]
) -> Matching:
    """Maximum-weight one-to-one matching on overlap counts, exact, with
    min(K_learned, K_reference) pairs.

    Among equally heavy matchings the lexicographically smallest pair list
    wins, fixed by greedily pinning each learned index to the smallest
    reference index that still permits an optimal completion.
    """
    W = overlap_matrix(learned, reference)
    n_l, n_r = W.shape
    best_total = _assignment_total(W)
    pairs: list[tuple[int, int]] = []
    free_rows = list(range(n_l))
    free_cols = list(range(n_r))
    fixed = 0

    def completion(rows: list[int], cols: list[int]) -> int:
        if not rows or not cols:
            return 0
        return _assignment_total(W[np.ix_(rows, cols)])

    for i in range(n_l):
        rows_after = [r for r in free_rows if r > i]
        # skipping row i entirely is only optimal when enough rows remain
        matched_here = None
        for j in free_cols:
            need = min(len(rows_after), len(free_cols) - 1)
            achievable = fixed + int(W[i, j]) + completion(rows_after, [c for c in free_cols if c != j])
            count_ok = len(pairs) + 1 + need == min(n_l, n_r)
            if count_ok and achievable == best_total:
                matched_here = j
                break
        if matched_here is not None:
            pairs.append((i, matched_here))
            fixed += int(W[i, matched_here])
            free_cols.remove(matched_here)
        free_rows.remove(i)
    if len(pairs) != min(n_l, n_r):
        raise EvaluationError("internal error: matching cardinality mismatch")
    return Matching(pairs, best_total)


def f1_similarity(learned: DenotationVector, reference: DenotationVector) -> float:
    """F1 of predicting the reference bits with the learned bits; 0 when
    precision + recall is 0."""
    a = learned.values.astype(np.int64)
    b = reference.values.astype(np.int64)
    if a.shape != b.shape:
        raise EvaluationError("denotation vectors cover different corpora")
    tp = int((a & b).sum())
    fp = int((a & (1 - b)).sum())
    fn = int(((1 - a) & b).sum())
    if 2 * tp + fp + fn == 0:
        return 0.0
    return 2 * tp / (2 * tp + fp + fn)


# --- surface similarity ----------------------------------------------------

VERDICT_SCORES = {"similar": 1.0, "related": 0.5, "irrelevant": 0.0}
_VERDICT_RE = re.compile(r"\b(similar|related|irrelevant)\b", re.IGNORECASE)


class LlmJudge:
    """Judges predicate-string similarity through the gateway."""

    name = "llm"

    def __init__(self, gateway: Gateway):
        self.gateway = gateway

    def judge(self, left: str, right: str) -> float:
        bindings = {"left": left, "right": right}
        for attempt in range(2):
            reply = self.gateway.complete(SIMILARITY_TEMPLATE, bindings)
            found = _VERDICT_RE.search(reply)
            if found:
                return VERDICT_SCORES[found.group(1).lower()]
        logger.warning("unparseable similarity verdict for %r vs %r; recording 0", left, right)
        return 0.0


_STOPWORDS = frozenset(
    "a an and are as at be by for from has have in is it its of on or that the to was with".split()
)


class WordOverlapJudge:
    """Network-free stand-in for the LLM judge: exact string match scores 1,
    a shared content word scores 0.5, anything else 0."""

    name = "mock"

    @staticmethod
    def _content_words(text: str) -> set[str]:
        return {w for w in re.findall(r"[a-z0-9]+", text.lower()) if w not in _STOPWORDS}

    def judge(self, left: str, right: str) -> float:
        if left.strip().lower() == right.strip().lower():
            return 1.0
        if self._content_words(left) & self._content_words(right):
            return 0.5
        return 0.0


def surface_similarity(learned: Predicate, reference: Predicate, judge) -> float:
    return judge.judge(learned.text, reference.text)


# --- report ------------------------------------------------------------------


@dataclass
class EvalReport:
    seed: int
    pairs: list[dict] = field(default_factory=list)  # learned/reference/f1/surface
    mean_f1: float = 0.0
    mean_surface: float = 0.0

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "pairs": self.pairs,
            "mean_f1": self.mean_f1,
            "mean_surface": self.mean_surface,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def build_report(
    learned: list[Predicate],
    learned_vectors: list[DenotationVector],
    reference: list[Predicate],
    reference_vectors: list[DenotationVector],
    judge,
    seed: int = 0,
) -> EvalReport:
    """Match, score each pair, and average.

    When the predicate counts differ, the unmatched surplus counts as zero
    for both metrics, penalizing missing or extra predicates.
    """
    matching = match_predicates(learned_vectors, reference_vectors)
    pairs = []
    f1_total = 0.0
    surface_total = 0.0
    for i, j in matching.pairs:
        f1 = f1_similarity(learned_vectors[i], reference_vectors[j])
        surface = surface_similarity(learned[i], reference[j], judge)
        f1_total += f1
        surface_total += surface
        pairs.append(
            {
                "learned": learned[i].text,
                "reference": reference[j].text,
                "learned_index": i,
                "reference_index": j,
                "overlap": int(
                    (learned_vectors[i].values & reference_vectors[j].values).sum()
                ),
                "f1": f1,
                "surface": surface,
            }
        )
    denom = max(len(learned), len(reference))
    report = EvalReport(
        seed=seed,
        pairs=pairs,
        mean_f1=f1_total / denom,
        mean_surface=surface_total / denom,
    )
    return report


# --- time-series reporting ---------------------------------------------------


def smoothed_frequency(values: np.ndarray, f0: float | None = None) -> np.ndarray:
    """Exponentially smoothed frequency of a 0/1 sequence in time order:
    f_t = 0.99 f_{t-1} + 0.01 v_t. The seed f_0 defaults to the mean of the
    first 100 values (all of them when the series is shorter)."""
    v = np.asarray(values, dtype=np.float64)
    if v.ndim != 1 or v.size == 0:
        raise EvaluationError("smoothed_frequency needs a non-empty 1-D sequence")
    if f0 is None:
        head = v[:100] if v.size >= 100 else v
        f = float(head.mean())
    else:
        f = float(f0)
    out = np.empty(v.size)
    for t in range(v.size):
        f = 0.99 * f + 0.01 * v[t]
        out[t] = f
    return out


def shuffle_band(
    values: np.ndarray, runs: int = 100, seed: int = 0
) -> tuple[np.ndarray, np.ndarray]:
    """Pointwise min/max envelope of smoothed curves over ``runs`` random
    permutations of the sequence: the null band a real trend must exit."""
    v = np.asarray(values, dtype=np.float64)
    rng = np.random.default_rng(seed)
    low = np.full(v.size, np.inf)
    high = np.full(v.size, -np.inf)
    for _ in range(runs):
        curve = smoothed_frequency(v[rng.permutation(v.size)])
        np.minimum(low, curve, out=low)
        np.maximum(high, curve, out=high)
    return low, high


def paired_one_sided_ttest(a, b) -> tuple[float, float]:
    """t statistic and one-sided p-value for H1: mean(a) > mean(b), paired.

    Degenerate zero-variance differences map to p = 0.0 when strictly
    positive on average, 1.0 otherwise (the test is otherwise undefined).
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1 or a.size < 2:
        raise EvaluationError("paired t-test needs two equal-length vectors, n >= 2")
    d = a - b
    n = d.size
    sd = float(d.std(ddof=1))
    mean = float(d.mean())
    if sd == 0.0:
        return (math.inf if mean > 0 else -math.inf), (0.0 if mean > 0 else 1.0)
    t = mean / (sd / math.sqrt(n))
    p = 1.0 - float(stdtr(n - 1, t))  # upper tail of Student's t
    return t, p
