"""The full learning loop: initialize, then iteratively refine.

Initialization seeds one continuous direction per predicate slot from
random sample embeddings, alternates weight fitting and direction descent,
and discretizes each direction to its best-scoring candidate. Each
refinement iteration then picks the predicate whose removal hurts fitness
least, re-derives a direction for that slot with the other predicates
pinned at their 0/1 values, discretizes it, and keeps the fittest of the
new candidates and the incumbent, so the fitness trace never decreases.

Ablation modes reuse the same machinery: ``no_refine`` skips refinement,
``no_relax`` replaces direction-guided candidate ranking with uniformly
chosen backend candidates, ``prompting`` just collects predicates from the
backend and fits weights once, and ``shuffled`` (time series only)
permutes the time order before fitting.
"""
from __future__ import annotations

import dataclasses
import json
import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .corpus import Corpus, EmbeddingMatrix, Sample
from .grounding import DenotationVector, Grounder, Predicate
from .models import (
    ClassifierWeights,
    ClusterWeights,
    FeatureMatrix,
    GdConfig,
    ModelError,
    ModelParams,
    TimeSeriesWeights,
    Weights,
    features_for,
    fitness,
    model_loss,
    opt_w,
)
from .proposer import (
    CandidateSet,
    DiscretizeConfig,
    DiscretizeFailed,
    ProposerError,
    discretize,
)
from .relaxation import ContinuousPredicate, opt_relaxed_all, opt_relaxed_one, relaxed_features

logger = logging.getLogger(__name__)

ABLATIONS = ("none", "no_relax", "no_refine", "prompting", "shuffled")

# independent RNG streams, so one stage's draws never perturb another's
_STREAM_INIT, _STREAM_REFINE, _STREAM_PROPOSER, _STREAM_SHUFFLE = range(4)


class LearnerError(RuntimeError):
    pass


@dataclass(frozen=True)
class FitConfig:
    k: int
    s: int = 10
    tau: float = 10.0
    lam: float = 1.0
    ridge: float = 1e-3
    ablation: str = "none"
    seed: int = 0
    steering: str | None = None
    m: int = 5
    proposer_samples: int = 128
    alternations: int = 10
    # per-round step budget inside the weight/direction alternation; the
    # rounds warm-start each other, so the joint budget stays generous
    # while fitness evaluations keep the full cold-start schedule
    alternation_max_steps: int = 30
    gd: GdConfig = field(default_factory=GdConfig)

    def __post_init__(self):
        if self.k < 1:
            raise LearnerError("k must be >= 1")
        if self.s < 0:
            raise LearnerError("s must be >= 0")
        if self.ablation not in ABLATIONS:
            raise LearnerError(f"unknown ablation: {self.ablation!r}")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _weights_to_dict(weights: Weights) -> dict:
    if isinstance(weights, ClusterWeights):
        return {
            "type": "cluster",
            "assignment": [int(a) for a in weights.assignment],
            "tau": weights.tau,
        }
    if isinstance(weights, TimeSeriesWeights):
        return {
            "type": "timeseries",
            "w": [[float(v) for v in row] for row in weights.w],
            "lam": weights.lam,
        }
    return {"type": "classifier", "W": [[float(v) for v in row] for row in weights.W]}


@dataclass
class FitResult:
    kind: str
    predicates: list[Predicate]
    weights: Weights
    fitness_trace: list[float]
    provenance: dict

    def core_dict(self) -> dict:
        """The learned artifact itself, excluding run provenance."""
        return {
            "kind": self.kind,
            "predicates": [p.to_record() for p in self.predicates],
            "weights": _weights_to_dict(self.weights),
            "fitness_trace": [float(f) for f in self.fitness_trace],
        }

    def to_dict(self) -> dict:
        out = self.core_dict()
        out["provenance"] = self.provenance
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, rec: dict) -> "FitResult":
        w = rec["weights"]
        if w["type"] == "cluster":
            weights: Weights = ClusterWeights(np.array(w["assignment"], dtype=np.int64), w["tau"])
        elif w["type"] == "timeseries":
            weights = TimeSeriesWeights(np.array(w["w"], dtype=np.float64), w["lam"])
        else:
            weights = ClassifierWeights(np.array(w["W"], dtype=np.float64))
        return cls(
            kind=rec["kind"],
            predicates=[Predicate.from_record(r) for r in rec["predicates"]],
            weights=weights,
            fitness_trace=[float(f) for f in rec["fitness_trace"]],
            provenance=rec.get("provenance", {}),
        )


def _rng_stream(seed: int, stream: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(stream,)))


def _shuffle_time(
    corpus: Corpus, embeddings: EmbeddingMatrix, rng: np.random.Generator
) -> tuple[Corpus, EmbeddingMatrix]:
    """Permute which sample sits at which time step (destroys trends)."""
    perm = rng.permutation(len(corpus))
    samples = [
        dataclasses.replace(corpus.samples[j], time_index=i + 1)
        for i, j in enumerate(perm)
    ]
    return Corpus(samples, corpus.kind), embeddings.reordered(perm)


class _FitnessMemo:
    """fitness() cache keyed on predicate texts; one entry per distinct
    (predicate tuple, zeroed column) evaluated during a run."""

    def __init__(self, params: ModelParams, corpus: Corpus, grounder: Grounder):
        self.params = params
        self.corpus = corpus
        self.grounder = grounder
        self._memo: dict[tuple, float] = {}

    def __call__(self, predicates: Sequence[Predicate], zero_out: int | None = None) -> float:
        key = (tuple(p.text for p in predicates), zero_out)
        if key not in self._memo:
            self._memo[key] = fitness(
                predicates, self.params, self.corpus, self.grounder, zero_out=zero_out
            )
        return self._memo[key]


def select_least_useful(
    predicates: Sequence[Predicate],
    params: ModelParams,
    corpus: Corpus,
    grounder: Grounder,
    memo: Callable[..., float] | None = None,
) -> int:
    """Index whose zeroed-out fitness is highest, i.e. the predicate the
    model misses least; ties break to the lowest index."""
    memo = memo or _FitnessMemo(params, corpus, grounder)
    best_k = 0
    best = -np.inf
    for k in range(len(predicates)):
        value = memo(predicates, zero_out=k)
        if value > best:
            best, best_k = value, k
    return best_k


def baseline_prompting(
    corpus: Corpus,
    k: int,
    proposer,
    rng: np.random.Generator,
    *,
    steering: str | None = None,
    sample_count: int = 128,
) -> list[Predicate]:
    """Collect k distinct predicates by repeatedly asking the backend with
    uniform corpus samples and no ranking signal."""
    found: list[Predicate] = []
    seen: set[str] = set()
    while len(found) < k:
        take = min(sample_count, len(corpus))
        idx = rng.choice(len(corpus), size=take, replace=False)
        samples = [corpus.samples[i] for i in idx]
        new = 0
        for pred in proposer.propose(samples, None, steering, rng):
            key = pred.text.lower()
            if key not in seen:
                seen.add(key)
                found.append(pred)
                new += 1
                if len(found) == k:
                    break
        if new == 0:
            raise ProposerError(
                f"backend stopped yielding new predicates at {len(found)} < {k}"
            )
    return found


@dataclass
class _RunState:
    corpus: Corpus
    embeddings: EmbeddingMatrix  # rows in model order
    order: np.ndarray
    params: ModelParams
    config: FitConfig
    grounder: Grounder
    proposer: object
    labels: np.ndarray | None
    n_classes: int | None
    memo: _FitnessMemo
    rng_refine: np.random.Generator
    rng_proposer: np.random.Generator

    def denote_ordered(self, predicate: Predicate) -> DenotationVector:
        vec = self.grounder.denote_all(predicate, self.corpus)
        return DenotationVector(predicate, vec.values[self.order])

    def opt_w_on(self, features: FeatureMatrix, warm: Weights | None = None) -> Weights:
        gd = (
            dataclasses.replace(
                self.config.gd,
                max_steps=min(self.config.alternation_max_steps, self.config.gd.max_steps),
            )
            if warm is not None
            else None
        )
        return opt_w(
            features,
            self.params,
            labels=self.labels,
            n_classes=self.n_classes,
            warm=warm,
            gd=gd,
        )

    def alternation_gd(self) -> GdConfig:
        return dataclasses.replace(
            self.config.gd,
            max_steps=min(self.config.alternation_max_steps, self.config.gd.max_steps),
        )

    def sign_mode(self) -> str:
        return "positive_only" if self.params.kind == "clustering" else "absolute"

    def candidates_for(self, phi_tilde: ContinuousPredicate) -> CandidateSet:
        """Discretize a direction; under no_relax, draw M uniformly chosen
        backend candidates instead of ranking by the direction."""
        cfg = DiscretizeConfig(
            m=self.config.m,
            n_samples=self.config.proposer_samples,
            steering=self.config.steering,
        )
        if self.config.ablation == "no_relax":
            take = min(cfg.n_samples, len(self.corpus))
            idx = self.rng_proposer.choice(len(self.corpus), size=take, replace=False)
            samples = [self.corpus.samples[i] for i in idx]
            pool = self.proposer.propose(samples, None, cfg.steering, self.rng_proposer)
            if not pool:
                raise DiscretizeFailed("backend returned no candidates")
            picked_idx = self.rng_proposer.choice(
                len(pool), size=min(cfg.m, len(pool)), replace=False
            )
            return CandidateSet(
                [(pool[i], 0.0) for i in picked_idx], self.sign_mode()
            )
        return discretize(
            phi_tilde,
            self.corpus,
            self.embeddings,
            self.proposer,
            self.grounder,
            self.sign_mode(),
            self.rng_proposer,
            cfg,
        )


def _provenance(config: FitConfig, grounder: Grounder, proposer) -> dict:
    return {
        "seed": config.seed,
        "backends": {
            "grounding": grounder.describe(),
            "proposer": getattr(proposer, "name", type(proposer).__name__),
        },
        "cache_digest": grounder.cache.digest(),
        "config": config.to_dict(),
    }


def fit(
    corpus: Corpus,
    embeddings: EmbeddingMatrix,
    kind: str,
    config: FitConfig,
    grounder: Grounder,
    proposer,
) -> FitResult:
    """Run initialization plus S refinement iterations (or the configured
    ablation) and return the learned predicates, weights, and fitness trace.

    Deterministic given (config, seed, backend behavior): the master seed
    splits into independent streams for initialization sampling, refinement
    re-initialization, proposer subsampling, and time shuffling.
    """
    if corpus.kind != kind:
        raise LearnerError(f"corpus kind {corpus.kind!r} does not match model kind {kind!r}")
    if config.ablation == "shuffled" and kind != "timeseries":
        raise LearnerError("the shuffled ablation only applies to time series")

    params = ModelParams(kind, tau=config.tau, lam=config.lam, ridge=config.ridge, gd=config.gd)
    rng_init = _rng_stream(config.seed, _STREAM_INIT)
    rng_refine = _rng_stream(config.seed, _STREAM_REFINE)
    rng_proposer = _rng_stream(config.seed, _STREAM_PROPOSER)
    rng_shuffle = _rng_stream(config.seed, _STREAM_SHUFFLE)

    work_corpus, work_embeddings = corpus, embeddings
    if config.ablation == "shuffled":
        work_corpus, work_embeddings = _shuffle_time(corpus, embeddings, rng_shuffle)

    n = len(work_corpus)
    if config.k > n:
        raise LearnerError("more predicate slots than samples")
    order = (
        work_corpus.time_order() if kind == "timeseries" else np.arange(n, dtype=np.int64)
    )
    labels = work_corpus.labels() if kind == "classification" else None
    n_classes = work_corpus.n_classes if kind == "classification" else None
    memo = _FitnessMemo(params, work_corpus, grounder)
    state = _RunState(
        corpus=work_corpus,
        embeddings=work_embeddings.reordered(order),
        order=order,
        params=params,
        config=config,
        grounder=grounder,
        proposer=proposer,
        labels=labels,
        n_classes=n_classes,
        memo=memo,
        rng_refine=rng_refine,
        rng_proposer=rng_proposer,
    )

    if config.ablation == "prompting":
        predicates = baseline_prompting(
            work_corpus,
            config.k,
            proposer,
            rng_proposer,
            steering=config.steering,
            sample_count=config.proposer_samples,
        )
        trace = [memo(predicates)]
        weights = state.opt_w_on(
            features_for(predicates, work_corpus, grounder, order=order)
        )
        return FitResult(kind, predicates, weights, trace, _provenance(config, grounder, proposer))

    # --- initialization ---------------------------------------------------
    init_rows = rng_init.choice(n, size=config.k, replace=False)
    phis = [
        ContinuousPredicate(work_embeddings.row(work_corpus.samples[i].id))
        for i in init_rows
    ]
    if config.ablation != "no_relax":
        warm: Weights | None = None
        for _ in range(config.alternations):
            feats = relaxed_features(phis, state.embeddings)
            warm = state.opt_w_on(feats, warm)
            phis = opt_relaxed_all(
                weights=warm,
                embeddings=state.embeddings,
                params=params,
                init=phis,
                labels=labels,
                gd=state.alternation_gd(),
            )
    predicates = [state.candidates_for(phis[j]).top() for j in range(config.k)]
    trace = [memo(predicates)]

    # --- refinement ---------------------------------------------------------
    steps = 0 if config.ablation == "no_refine" else config.s
    for _ in range(steps):
        predicates = _refine_step(state, predicates)
        trace.append(memo(predicates))

    weights = state.opt_w_on(features_for(predicates, work_corpus, grounder, order=order))
    return FitResult(kind, predicates, weights, trace, _provenance(config, grounder, proposer))


def _refine_step(
    state: _RunState, predicates: list[Predicate], k_target: int | None = None
) -> list[Predicate]:
    """One refinement iteration; returns the (possibly updated) predicates.

    A failed discretization keeps the incumbent (the RNG streams have still
    advanced). The replacement rule is an argmax over the candidates plus
    the incumbent, so fitness can only go up; ties keep the incumbent, and
    among tied candidates the earlier-ranked one wins.
    """
    config = state.config
    if k_target is None:
        k_target = select_least_useful(
            predicates, state.params, state.corpus, state.grounder, state.memo
        )
    row = int(state.rng_refine.integers(len(state.corpus)))
    phi_k = ContinuousPredicate(state.embeddings.row(state.corpus.samples[row].id))
    fixed = [state.denote_ordered(p) for j, p in enumerate(predicates) if j != k_target]
    if config.ablation != "no_relax":
        warm: Weights | None = None
        for _ in range(config.alternations):
            columns: list = list(fixed)
            columns.insert(k_target, phi_k)
            feats = relaxed_features(columns, state.embeddings)
            warm = state.opt_w_on(feats, warm)
            phi_k = opt_relaxed_one(
                k_target,
                fixed,
                warm,
                state.embeddings,
                state.params,
                phi_k,
                labels=state.labels,
                gd=state.alternation_gd(),
            )
    try:
        candidates = state.candidates_for(phi_k)
    except DiscretizeFailed as exc:
        logger.warning("refinement kept its incumbent: %s", exc)
        return predicates
    best_pred = predicates[k_target]
    best_fit = state.memo(predicates)
    for cand in candidates.predicates():
        trial = list(predicates)
        trial[k_target] = cand
        value = state.memo(trial)
        if value > best_fit:  # ties keep the incumbent / earlier candidate
            best_fit, best_pred = value, cand
    updated = list(predicates)
    updated[k_target] = best_pred
    return updated


def refine_step(
    predicates: list[Predicate],
    k: int,
    corpus: Corpus,
    embeddings: EmbeddingMatrix,
    kind: str,
    config: FitConfig,
    grounder: Grounder,
    proposer,
) -> list[Predicate]:
    """One standalone refinement pass targeting column ``k``."""
    params = ModelParams(kind, tau=config.tau, lam=config.lam, ridge=config.ridge, gd=config.gd)
    n = len(corpus)
    order = corpus.time_order() if kind == "timeseries" else np.arange(n, dtype=np.int64)
    state = _RunState(
        corpus=corpus,
        embeddings=embeddings.reordered(order),
        order=order,
        params=params,
        config=config,
        grounder=grounder,
        proposer=proposer,
        labels=corpus.labels() if kind == "classification" else None,
        n_classes=corpus.n_classes if kind == "classification" else None,
        memo=_FitnessMemo(params, corpus, grounder),
        rng_refine=_rng_stream(config.seed, _STREAM_REFINE),
        rng_proposer=_rng_stream(config.seed, _STREAM_PROPOSER),
    )
    return _refine_step(state, list(predicates), k_target=k)


@dataclass
class TaxonomyNode:
    """One node of a recursive clustering: a predicate, the samples it
    claimed, and (optionally) a sub-clustering of those samples."""

    label: str
    predicate: Predicate | None
    size: int
    sample_ids: list[str]
    children: list["TaxonomyNode"] = field(default_factory=list)
    result: FitResult | None = None

    def to_dict(self) -> dict:
        out = {
            "label": self.label,
            "predicate": self.predicate.to_record() if self.predicate else None,
            "size": self.size,
            "sample_ids": self.sample_ids,
            "children": [c.to_dict() for c in self.children],
        }
        if self.result is not None:
            out["fitness_trace"] = [float(f) for f in self.result.fitness_trace]
        return out


def _child_seed(seed: int, child: int) -> int:
    return int(np.random.SeedSequence(seed, spawn_key=(child + 16,)).generate_state(1)[0])


def taxonomize(
    corpus: Corpus,
    embeddings: EmbeddingMatrix,
    config: FitConfig,
    grounder: Grounder,
    proposer,
    *,
    min_cluster: int = 32,
    depth: int = 2,
) -> TaxonomyNode:
    """Recursive clustering: fit at the root, then refit inside every
    cluster larger than ``min_cluster`` until ``depth`` levels exist."""
    if corpus.kind != "clustering":
        raise LearnerError("taxonomize requires a clustering corpus")
    if depth < 1:
        raise LearnerError("depth must be >= 1")
    result = fit(corpus, embeddings, "clustering", config, grounder, proposer)
    assign = result.weights.assignment
    root = TaxonomyNode(
        label="(root)",
        predicate=None,
        size=len(corpus),
        sample_ids=list(corpus.ids),
        result=result,
    )
    for k, predicate in enumerate(result.predicates):
        idx = np.where(assign == k)[0]
        node = TaxonomyNode(
            label=predicate.text,
            predicate=predicate,
            size=int(idx.size),
            sample_ids=[corpus.samples[i].id for i in idx],
        )
        if depth > 1 and idx.size > min_cluster:
            sub_corpus = corpus.subset(idx, kind="clustering")
            sub_embeddings = embeddings.reordered(idx)
            sub_config = dataclasses.replace(config, seed=_child_seed(config.seed, k))
            child = taxonomize(
                sub_corpus,
                sub_embeddings,
                sub_config,
                grounder,
                proposer,
                min_cluster=min_cluster,
                depth=depth - 1,
            )
            node.children = child.children
            node.result = child.result
        root.children.append(node)
    bg_idx = np.where(assign == len(result.predicates))[0]
    root.children.append(
        TaxonomyNode(
            label="(background)",
            predicate=None,
            size=int(bg_idx.size),
            sample_ids=[corpus.samples[i].id for i in bg_idx],
        )
    )
    return root
