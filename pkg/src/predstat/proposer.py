"""Turning a continuous predicate back into natural language.

A proposer backend supplies candidate predicate strings; ``discretize``
then scores each candidate by the Pearson correlation between its 0/1
values and the continuous predicate's dot-product scores on a uniform
subsample, and keeps the best M. For model families whose weights can be
negative, an anti-correlated candidate is as useful as a correlated one,
so those rank by |r| ("absolute" mode); clustering weights are
non-negative and use the signed r ("positive_only").
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .corpus import Corpus, EmbeddingMatrix, Sample
from .gateway import DISCRETIZER_TEMPLATE, Gateway, GatewayError, parse_candidates
from .grounding import Grounder, Predicate
from .relaxation import ContinuousPredicate

logger = logging.getLogger(__name__)

SIGN_MODES = ("positive_only", "absolute")

# degenerate fallback when a clustering proposal round yields nothing usable
FALLBACK_TEXT = "matches the theme of the top-ranked samples"


class ProposerError(RuntimeError):
    """Backend produced no usable candidates."""


class DiscretizeFailed(RuntimeError):
    """Candidate generation failed; the caller keeps the incumbent."""


def pearson_r(a, b) -> float:
    """Pearson correlation; 0.0 when either input is constant."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1 or a.size < 2:
        raise ValueError("pearson_r needs two equal-length vectors of size >= 2")
    da = a - a.mean()
    db = b - b.mean()
    na = float(np.sqrt((da * da).sum()))
    nb = float(np.sqrt((db * db).sum()))
    if na == 0.0 or nb == 0.0:
        return 0.0
    r = float((da * db).sum() / (na * nb))
    return max(-1.0, min(1.0, r))


@dataclass
class ScoredCandidate:
    predicate: Predicate
    score: float
    constant: bool = False  # denotation was constant on the subsample


@dataclass
class CandidateSet:
    candidates: list[tuple[Predicate, float]]
    sign_mode: str
    degenerate: bool = False

    def __post_init__(self):
        if self.sign_mode not in SIGN_MODES:
            raise ValueError(f"unknown sign mode: {self.sign_mode!r}")
        scores = [s for _, s in self.candidates]
        if any(scores[i] < scores[i + 1] for i in range(len(scores) - 1)):
            raise ValueError("candidate scores must be non-increasing")

    def top(self) -> Predicate:
        return self.candidates[0][0]

    def predicates(self) -> list[Predicate]:
        return [p for p, _ in self.candidates]


class OracleProposer:
    """Enumerates a finite rule vocabulary.

    With a ranking signal present, order does not matter (the caller
    reranks), so the canonical vocabulary order is returned. Without a
    signal (random/unguided proposal modes) the vocabulary is shuffled to
    model an unguided stream of suggestions.
    """

    name = "oracle"

    def __init__(self, vocabulary: list[Predicate]):
        if not vocabulary:
            raise ProposerError("oracle proposer needs a non-empty vocabulary")
        self.vocabulary = list(vocabulary)

    def propose(
        self,
        samples: list[Sample],
        scores: np.ndarray | None,
        steering: str | None,
        rng: np.random.Generator,
    ) -> list[Predicate]:
        if scores is None:
            order = rng.permutation(len(self.vocabulary))
            return [self.vocabulary[i] for i in order]
        return list(self.vocabulary)


class LlmProposer:
    """Prompts a chat model with the (optionally rank-annotated) samples."""

    name = "llm"

    def __init__(
        self,
        gateway: Gateway,
        *,
        max_candidates: int = 8,
        shown_samples: int = 32,
        text_clip: int = 256,
    ):
        self.gateway = gateway
        self.max_candidates = max_candidates
        self.shown_samples = shown_samples
        self.text_clip = text_clip

    def _render_samples(self, samples: list[Sample], ranked: bool) -> str:
        shown = samples
        if len(samples) > self.shown_samples:
            # evenly spaced through the sorted list, keeping both ends
            idx = np.linspace(0, len(samples) - 1, self.shown_samples).round().astype(int)
            shown = [samples[i] for i in idx]
        lines = []
        for i, s in enumerate(shown):
            text = s.text[: self.text_clip]
            prefix = f"[rank {i + 1}/{len(shown)}] " if ranked else "- "
            lines.append(prefix + text)
        return "\n".join(lines)

    def propose(
        self,
        samples: list[Sample],
        scores: np.ndarray | None,
        steering: str | None,
        rng: np.random.Generator,
    ) -> list[Predicate]:
        prefix = (steering.strip() + "\n") if steering else ""
        bindings = {
            "steering": prefix,
            "samples": self._render_samples(samples, ranked=scores is not None),
            "max_candidates": str(self.max_candidates),
        }
        for attempt in range(2):
            reply = self.gateway.complete(DISCRETIZER_TEMPLATE, bindings)
            try:
                texts = parse_candidates(reply, self.max_candidates)
                return [Predicate(t) for t in texts]
            except GatewayError:
                if attempt == 0:
                    logger.warning("discretizer reply had no candidates; re-asking once")
        raise ProposerError("no parseable candidates after one retry")


@dataclass
class DiscretizeConfig:
    m: int = 5            # candidates kept after reranking
    n_samples: int = 128  # uniform subsample used for sorting and reranking
    steering: str | None = None


def _dedupe(predicates: list[Predicate]) -> list[Predicate]:
    seen: set[str] = set()
    out = []
    for p in predicates:
        key = p.text.lower()
        if key not in seen:
            seen.add(key)
            out.append(p)
    return out


def discretize(
    phi_tilde: ContinuousPredicate,
    corpus: Corpus,
    embeddings: EmbeddingMatrix,
    proposer,
    grounder: Grounder,
    sign_mode: str,
    rng: np.random.Generator,
    config: DiscretizeConfig | None = None,
) -> CandidateSet:
    """Candidate predicates explaining a continuous direction, best first.

    Draws a uniform subsample, sorts it by the direction's dot products,
    asks the proposer for candidates, scores each candidate's denotation on
    that same subsample against the dot products (signed or absolute
    Pearson r), and returns the top M. A constant denotation scores 0.

    When the proposer fails outright: clustering rounds (positive_only)
    fall back to a single degenerate placeholder predicate; other model
    families raise DiscretizeFailed so the caller keeps its incumbent.
    """
    config = config or DiscretizeConfig()
    if sign_mode not in SIGN_MODES:
        raise ValueError(f"unknown sign mode: {sign_mode!r}")
    n = len(corpus)
    take = min(config.n_samples, n)
    chosen = rng.choice(n, size=take, replace=False)
    dots = np.clip(embeddings.matrix[chosen] @ phi_tilde.vec, -1.0, 1.0)
    order = np.argsort(dots, kind="stable")
    sorted_idx = chosen[order]
    sorted_dots = dots[order]
    sorted_samples = [corpus.samples[i] for i in sorted_idx]

    try:
        raw = proposer.propose(sorted_samples, sorted_dots, config.steering, rng)
    except ProposerError as exc:
        if sign_mode == "positive_only":
            logger.warning("proposer failed (%s); returning degenerate fallback", exc)
            return CandidateSet(
                [(Predicate(FALLBACK_TEXT), 0.0)], sign_mode, degenerate=True
            )
        raise DiscretizeFailed(str(exc)) from exc

    candidates = _dedupe(raw)
    scored: list[ScoredCandidate] = []
    for pred in candidates:
        bits = grounder.denote_samples(pred, sorted_samples)
        r = pearson_r(bits, sorted_dots)
        constant = bool(np.all(bits == bits[0]))
        # scores live in [0, 1] in both modes; anti-correlation only counts
        # where the weights may be negative
        score = abs(r) if sign_mode == "absolute" else max(r, 0.0)
        if constant:
            score = 0.0
        scored.append(ScoredCandidate(pred, score, constant))
    scored.sort(key=lambda c: -c.score)  # stable: ties keep proposer order
    top = scored[: config.m]
    return CandidateSet([(c.predicate, c.score) for c in top], sign_mode)
