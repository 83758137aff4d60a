"""Synthetic benchmark worlds with known reference predicates.

A world is a few attribute groups (topic / location / language), each with
a handful of tags. Samples carry tags; the oracle backend grounds a tag
predicate exactly, so every generated instance has reference predicates
whose denotations are perfectly known. Text surfaces are template
concatenations with seeded filler variation; they only need to be
distinct and readable, because grounding runs on the tags.
"""
from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .corpus import Corpus, EmbeddingMatrix, Sample, save_corpus, save_embeddings, synth_embed
from .grounding import Predicate, eval_rule


class BenchmarkError(ValueError):
    pass


_DEFAULT_GROUPS = {
    "topic": ("arts", "business", "politics", "sports"),
    "location": ("brazil", "egypt", "france", "japan"),
    "language": ("english", "french", "german", "spanish"),
}

_TOPIC_FRAGMENTS = {
    "arts": ("a gallery opening", "a symphony premiere", "a sculpture retrospective"),
    "business": ("a corporate merger", "quarterly earnings", "a startup funding round"),
    "politics": ("a parliamentary vote", "an election campaign", "a cabinet reshuffle"),
    "sports": ("a championship final", "a transfer-window signing", "an underdog victory"),
}

_OPENERS = ("A story about", "A report on", "Coverage of", "Notes on")
_CLOSERS = (
    "published this week",
    "from our correspondents",
    "in the morning edition",
    "with reader commentary",
)

_PREDICATE_PHRASES = {
    "topic": "has a topic of {tag}",
    "location": "is set in {tag}",
    "language": "is written in {tag}",
}

MODE_GROUPS = {"topic": ("topic",), "locat": ("location",), "lang": ("language",), "all": None}


def full_tag(group: str, tag: str) -> str:
    return f"{group}:{tag}"


@dataclass(frozen=True)
class SyntheticWorld:
    """Ordered attribute groups, their tags, and per-tag text fragments."""

    groups: tuple[tuple[str, tuple[str, ...]], ...]
    fragments: dict[str, tuple[str, ...]] = field(default_factory=dict)

    def __post_init__(self):
        for name, tags in self.groups:
            if not tags:
                raise BenchmarkError(f"group {name!r} has no tags")

    @property
    def vocab(self) -> list[str]:
        return [full_tag(g, t) for g, tags in self.groups for t in sorted(tags)]

    def group_tags(self, group: str) -> tuple[str, ...]:
        for name, tags in self.groups:
            if name == group:
                return tuple(sorted(tags))
        raise BenchmarkError(f"unknown group {group!r}")

    def tag_predicate(self, group: str, tag: str) -> Predicate:
        phrase = _PREDICATE_PHRASES.get(group, "has {group} " + "{tag}")
        return Predicate(
            text=phrase.format(group=group, tag=tag),
            rule={"tag": full_tag(group, tag)},
        )

    def vocabulary_predicates(self) -> list[Predicate]:
        """All single-tag predicates, in group order then alphabetical."""
        return [
            self.tag_predicate(g, t) for g, tags in self.groups for t in sorted(tags)
        ]

    def conjunction_vocabulary(self) -> list[Predicate]:
        """Single-tag predicates plus every cross-group tag-pair conjunction.

        The conjunctions are distractors for recovery benchmarks: they vary
        over the corpus like real predicates do, but an additive model over
        single tags never needs them, so only a learner that actually uses
        the modeling signal rejects them."""
        preds = self.vocabulary_predicates()
        names = [g for g, _ in self.groups]
        for g1, g2 in itertools.combinations(names, 2):
            for t1 in self.group_tags(g1):
                for t2 in self.group_tags(g2):
                    a, b = self.tag_predicate(g1, t1), self.tag_predicate(g2, t2)
                    preds.append(
                        Predicate(
                            text=f"{a.text} and {b.text}",
                            rule={"and": [a.rule, b.rule]},
                        )
                    )
        return preds

    def fragment(self, group: str, tag: str, rng: np.random.Generator) -> str:
        options = self.fragments.get(full_tag(group, tag))
        if options:
            return options[int(rng.integers(len(options)))]
        return f"{tag} affairs"


def default_world(tags_per_group: int = 4) -> SyntheticWorld:
    """The stock three-group world, optionally narrowed to the first
    ``tags_per_group`` tags of each group."""
    if not 1 <= tags_per_group <= 4:
        raise BenchmarkError("tags_per_group must be between 1 and 4")
    groups = tuple(
        (name, tuple(sorted(tags)[:tags_per_group]))
        for name, tags in _DEFAULT_GROUPS.items()
    )
    fragments = {
        full_tag("topic", tag): frags for tag, frags in _TOPIC_FRAGMENTS.items()
    }
    return SyntheticWorld(groups=groups, fragments=fragments)


@dataclass
class BenchmarkInstance:
    corpus: Corpus
    embeddings: EmbeddingMatrix
    references: list[Predicate]
    kind: str
    world: SyntheticWorld
    true_weights: np.ndarray | None = None  # (T, K), timeseries only


def _single_tag_text(world, group, tag, rng) -> str:
    opener = _OPENERS[int(rng.integers(len(_OPENERS)))]
    closer = _CLOSERS[int(rng.integers(len(_CLOSERS)))]
    return f"{opener} {world.fragment(group, tag, rng)}, {closer}."


def _multi_tag_text(world, group_names, combo, rng) -> str:
    opener = _OPENERS[int(rng.integers(len(_OPENERS)))]
    parts = []
    for g, t in zip(group_names, combo):
        if g == "topic":
            parts.append(world.fragment("topic", t, rng))
        elif g == "location":
            parts.append(f"set in {t}")
        elif g == "language":
            parts.append(f"written in {t}")
        else:
            parts.append(f"with {g} {t}")
    return f"{opener} " + ", ".join(parts) + "."


def _embed_seed(seed: int) -> int:
    return int(np.random.SeedSequence(seed, spawn_key=(7,)).generate_state(1)[0])


def gen_clustering(
    world: SyntheticWorld,
    k: int,
    n: int,
    seed: int,
    *,
    noise_scale: float = 0.1,
    group: str | None = None,
) -> BenchmarkInstance:
    """``n`` samples with uniformly drawn cluster tags from one group; the
    cluster tags are the reference predicates."""
    group = group or world.groups[0][0]
    tags = world.group_tags(group)
    if k > len(tags):
        raise BenchmarkError(f"k={k} exceeds the {len(tags)} tags of group {group!r}")
    chosen = tags[:k]
    rng = np.random.default_rng(seed)
    samples = []
    for i in range(n):
        tag = chosen[int(rng.integers(k))]
        samples.append(
            Sample(
                id=f"s{i:05d}",
                text=_single_tag_text(world, group, tag, rng),
                tags=frozenset({full_tag(group, tag)}),
            )
        )
    corpus = Corpus(samples, "clustering")
    embeddings = synth_embed(corpus, world.vocab, noise_scale, _embed_seed(seed))
    references = [world.tag_predicate(group, t) for t in chosen]
    return BenchmarkInstance(corpus, embeddings, references, "clustering", world)


def gen_classification(
    world: SyntheticWorld,
    classes: int = 20,
    n: int = 5000,
    seed: int = 0,
    *,
    noise_scale: float = 0.1,
) -> BenchmarkInstance:
    """Each class is a distinct (topic, location, language) tag triple; a
    sample carries all three tags of its class. References are the per-tag
    predicates, the latent features a classifier must recover."""
    group_names = [g for g, _ in world.groups]
    combos = list(itertools.product(*(world.group_tags(g) for g in group_names)))
    if classes > len(combos):
        raise BenchmarkError(f"classes={classes} exceeds the {len(combos)} tag combinations")
    if classes > n:
        raise BenchmarkError("need at least one sample per class")
    rng = np.random.default_rng(seed)
    picked = rng.choice(len(combos), size=classes, replace=False)
    class_combos = [combos[i] for i in picked]
    while True:
        labels = rng.integers(classes, size=n)
        if np.unique(labels).size == classes:
            break
    samples = []
    for i in range(n):
        combo = class_combos[int(labels[i])]
        tags = frozenset(full_tag(g, t) for g, t in zip(group_names, combo))
        samples.append(
            Sample(
                id=f"s{i:05d}",
                text=_multi_tag_text(world, group_names, combo, rng),
                tags=tags,
                class_label=int(labels[i]),
            )
        )
    corpus = Corpus(samples, "classification")
    embeddings = synth_embed(corpus, world.vocab, noise_scale, _embed_seed(seed))
    return BenchmarkInstance(
        corpus, embeddings, world.vocabulary_predicates(), "classification", world
    )


def sinusoid_weights(t_total: int, k_total: int) -> np.ndarray:
    """w[t, k] = sin(2*pi*(t/T + k/K)): unit-amplitude waves with evenly
    spaced phases, one full period over the series."""
    t = np.arange(t_total)[:, None] / t_total
    k = np.arange(k_total)[None, :] / k_total
    return np.sin(2.0 * math.pi * (t + k))


def gen_timeseries(
    world: SyntheticWorld,
    t_total: int = 2048,
    seed: int = 0,
    mode: str = "all",
    *,
    noise_scale: float = 0.1,
    pool_size: int = 4096,
) -> BenchmarkInstance:
    """Sample one text per time step from the sequence model itself.

    The active predicates (one group for topic/locat/lang, every group for
    "all", ordered by group then alphabet) get sinusoid weights; step t
    draws x_t from a fixed pool of uniform-tag samples with probability
    proportional to exp(w_t . f(x)).
    """
    if mode not in MODE_GROUPS:
        raise BenchmarkError(f"unknown mode {mode!r}; expected one of {sorted(MODE_GROUPS)}")
    active = MODE_GROUPS[mode] or tuple(g for g, _ in world.groups)
    references = [
        world.tag_predicate(g, t) for g in active for t in world.group_tags(g)
    ]
    k_total = len(references)
    weights = sinusoid_weights(t_total, k_total)

    rng = np.random.default_rng(seed)
    group_names = [g for g, _ in world.groups]
    pool_tags = []
    pool_texts = []
    for _ in range(pool_size):
        combo = tuple(
            world.group_tags(g)[int(rng.integers(len(world.group_tags(g))))]
            for g in group_names
        )
        pool_tags.append(frozenset(full_tag(g, t) for g, t in zip(group_names, combo)))
        pool_texts.append(_multi_tag_text(world, group_names, combo, rng))
    pool_features = np.array(
        [[float(eval_rule(p.rule, tags)) for p in references] for tags in pool_tags]
    )

    samples = []
    for t in range(t_total):
        logits = pool_features @ weights[t]
        logits -= logits.max()
        probs = np.exp(logits)
        probs /= probs.sum()
        pick = int(rng.choice(pool_size, p=probs))
        samples.append(
            Sample(
                id=f"t{t + 1:05d}",
                text=pool_texts[pick],
                tags=pool_tags[pick],
                time_index=t + 1,
            )
        )
    corpus = Corpus(samples, "timeseries")
    embeddings = synth_embed(corpus, world.vocab, noise_scale, _embed_seed(seed))
    return BenchmarkInstance(
        corpus, embeddings, references, "timeseries", world, true_weights=weights
    )


def peak_window_rates(instance: BenchmarkInstance, k: int) -> tuple[float, float]:
    """Empirical frequency of reference tag k inside the quarter-period
    windows centered on its weight maximum and minimum (wrap-around)."""
    if instance.true_weights is None:
        raise BenchmarkError("instance has no generating weights")
    t_total, k_total = instance.true_weights.shape
    bits = np.array(
        [
            float(eval_rule(instance.references[k].rule, s.tags))
            for s in sorted(instance.corpus.samples, key=lambda s: s.time_index)
        ]
    )
    peak = (0.25 - k / k_total) % 1.0 * t_total
    half = t_total / 8.0

    def rate(center: float) -> float:
        idx = (np.arange(t_total) - center) % t_total
        window = (idx <= half) | (idx >= t_total - half)
        return float(bits[window].mean())

    return rate(peak), rate((peak + t_total / 2.0) % t_total)


def save_instance(instance: BenchmarkInstance, outdir: str | Path) -> dict[str, Path]:
    """Write corpus/embeddings/references/vocabulary files plus metadata."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    paths = {
        "corpus": outdir / "corpus.jsonl",
        "embeddings": outdir / "embeddings.jsonl",
        "references": outdir / "references.jsonl",
        "vocabulary": outdir / "vocabulary.jsonl",
        "meta": outdir / "meta.json",
    }
    save_corpus(instance.corpus, paths["corpus"])
    save_embeddings(instance.embeddings, paths["embeddings"])
    for key, predicates in (
        ("references", instance.references),
        ("vocabulary", instance.world.vocabulary_predicates()),
    ):
        with open(paths[key], "w", encoding="utf-8") as fh:
            for p in predicates:
                fh.write(json.dumps(p.to_record(), sort_keys=True) + "\n")
    meta = {
        "kind": instance.kind,
        "n_samples": len(instance.corpus),
        "n_references": len(instance.references),
    }
    if instance.true_weights is not None:
        meta["true_weights"] = [[float(v) for v in row] for row in instance.true_weights]
    with open(paths["meta"], "w", encoding="utf-8") as fh:
        json.dump(meta, fh, sort_keys=True, indent=2)
    return paths


def load_predicates(path: str | Path) -> list[Predicate]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                out.append(Predicate.from_record(json.loads(line)))
    return out
