"""Denotations: evaluating predicates on samples, 0 or 1.

Backends are pluggable: ``OracleBackend`` evaluates a structured tag rule
exactly (reproducible desk-scale runs), ``LlmBackend`` asks a chat model
through the gateway. Every resolved (predicate, sample) pair is appended to
a persistent JSONL cache keyed by the hash of the predicate text, so a
cache hit never reaches the backend. Denotation is the cost bottleneck of
real runs, which makes the cache the difference between resumable and
unaffordable.
"""
from __future__ import annotations

import hashlib
import json
import logging
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .corpus import Corpus, Sample
from .gateway import DENOTATION_TEMPLATE, Gateway

logger = logging.getLogger(__name__)


class GroundingError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# structured rules: boolean expressions over sample tags
#
# rule := {"tag": str} | {"not": rule} | {"and": [rule, ...]} | {"or": [rule, ...]}
# An empty conjunction is true; an empty disjunction is false.
# ---------------------------------------------------------------------------

def validate_rule(rule) -> None:
    if not isinstance(rule, Mapping) or len(rule) != 1:
        raise GroundingError(f"malformed rule: {rule!r}")
    op, arg = next(iter(rule.items()))
    if op == "tag":
        if not isinstance(arg, str) or not arg:
            raise GroundingError(f"malformed tag rule: {rule!r}")
    elif op == "not":
        validate_rule(arg)
    elif op in ("and", "or"):
        if not isinstance(arg, (list, tuple)):
            raise GroundingError(f"malformed {op} rule: {rule!r}")
        for sub in arg:
            validate_rule(sub)
    else:
        raise GroundingError(f"unknown rule operator: {op!r}")


def eval_rule(rule, tags: frozenset[str] | set[str]) -> bool:
    op, arg = next(iter(rule.items()))
    if op == "tag":
        return arg in tags
    if op == "not":
        return not eval_rule(arg, tags)
    if op == "and":
        return all(eval_rule(sub, tags) for sub in arg)
    if op == "or":
        return any(eval_rule(sub, tags) for sub in arg)
    raise GroundingError(f"unknown rule operator: {op!r}")


@dataclass(frozen=True)
class Predicate:
    """A natural-language proposition, optionally grounded by an exact rule."""

    text: str
    rule: Mapping | None = None

    def __post_init__(self):
        if not self.text:
            raise GroundingError("predicate text must be non-empty")
        if self.rule is not None:
            validate_rule(self.rule)

    def key(self) -> str:
        """Cache key: hash of the text only (the LLM sees only the text)."""
        return hashlib.sha256(self.text.encode("utf-8")).hexdigest()

    def to_record(self) -> dict:
        rec = {"predicate": self.text}
        if self.rule is not None:
            rec["rule"] = self.rule
        return rec

    @classmethod
    def from_record(cls, rec: Mapping) -> "Predicate":
        return cls(text=rec["predicate"], rule=rec.get("rule"))


@dataclass
class DenotationVector:
    predicate: Predicate
    values: np.ndarray  # (n_samples,) uint8, corpus order

    def __post_init__(self):
        self.values = np.ascontiguousarray(self.values, dtype=np.uint8)
        if not np.all((self.values == 0) | (self.values == 1)):
            raise GroundingError("denotation values must be 0 or 1")


class DenotationCache:
    """Append-only (predicate hash, sample id) -> bit store backed by JSONL.

    Replaying the file reconstructs the map; a key is never rewritten with
    a different value. Appends are serialized; reads are lock-free after
    load.
    """

    def __init__(self, path: str | Path | None = None):
        self.path = Path(path) if path is not None else None
        self._map: dict[tuple[str, str], int] = {}
        self._lock = threading.Lock()
        if self.path is not None and self.path.exists():
            self._replay()

    def _replay(self) -> None:
        with open(self.path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                rec = json.loads(line)
                key = (rec["pred"], rec["sid"])
                value = int(rec["v"])
                old = self._map.get(key)
                if old is not None and old != value:
                    raise GroundingError(
                        f"cache line {lineno}: key {key} rewritten with a different value"
                    )
                self._map[key] = value

    def get(self, pred_key: str, sample_id: str) -> int | None:
        return self._map.get((pred_key, sample_id))

    def put(self, pred_key: str, sample_id: str, value: int) -> None:
        value = int(value)
        with self._lock:
            old = self._map.get((pred_key, sample_id))
            if old is not None:
                if old != value:
                    raise GroundingError(
                        f"refusing to rewrite cache key ({pred_key[:12]}, {sample_id})"
                    )
                return
            self._map[(pred_key, sample_id)] = value
            if self.path is not None:
                with open(self.path, "a", encoding="utf-8") as fh:
                    fh.write(
                        json.dumps({"pred": pred_key, "sid": sample_id, "v": value}) + "\n"
                    )

    def __len__(self) -> int:
        return len(self._map)

    def digest(self) -> str:
        """Order-independent content hash of the cached map."""
        h = hashlib.sha256()
        for (pred, sid), v in sorted(self._map.items()):
            h.update(f"{pred}\x1f{sid}\x1f{v}\n".encode("utf-8"))
        return h.hexdigest()


class OracleBackend:
    """Exact rule evaluation over sample tags."""

    name = "oracle"

    def denote(self, predicate: Predicate, sample: Sample) -> int:
        if predicate.rule is None:
            raise GroundingError(
                f"oracle backend needs a rule on predicate {predicate.text!r}"
            )
        return int(eval_rule(predicate.rule, sample.tags or frozenset()))


class LlmBackend:
    """Grounding via the denotation prompt; YES -> 1, NO -> 0.

    An unparseable reply is re-asked once; if still unparseable the value
    is recorded as 0 with a warning (absence of evidence reads as "the
    predicate does not hold", and the event stays auditable in the log).
    """

    name = "llm"

    def __init__(self, gateway: Gateway):
        self.gateway = gateway

    @staticmethod
    def _parse(reply: str) -> int | None:
        head = reply.strip().upper()
        if head.startswith("YES"):
            return 1
        if head.startswith("NO"):
            return 0
        return None

    def denote(self, predicate: Predicate, sample: Sample) -> int:
        bindings = {"predicate": predicate.text, "sample": sample.text}
        for attempt in range(2):
            reply = self.gateway.complete(DENOTATION_TEMPLATE, bindings)
            value = self._parse(reply)
            if value is not None:
                return value
        logger.warning(
            "unparseable denotation reply for predicate %r on sample %r; recording 0",
            predicate.text,
            sample.id,
        )
        return 0


class Grounder:
    """Backend + cache + call accounting, shared across one run."""

    def __init__(self, backend, cache: DenotationCache | None = None, *, max_parallel: int = 1):
        self.backend = backend
        self.cache = cache if cache is not None else DenotationCache()
        self.max_parallel = max_parallel
        self.backend_calls = 0
        self._count_lock = threading.Lock()

    def describe(self) -> str:
        return self.backend.name

    def denote(self, predicate: Predicate, sample: Sample) -> int:
        key = predicate.key()
        hit = self.cache.get(key, sample.id)
        if hit is not None:
            return hit
        value = self.backend.denote(predicate, sample)
        with self._count_lock:
            self.backend_calls += 1
        self.cache.put(key, sample.id, value)
        return value

    def denote_samples(self, predicate: Predicate, samples: Sequence[Sample]) -> np.ndarray:
        """Denotation bits for an explicit sample list (cache-first)."""
        key = predicate.key()
        misses = [s for s in samples if self.cache.get(key, s.id) is None]
        if misses:
            if self.max_parallel > 1 and len(misses) > 1:
                with ThreadPoolExecutor(max_workers=self.max_parallel) as pool:
                    list(pool.map(lambda s: self.denote(predicate, s), misses))
            else:
                for s in misses:
                    self.denote(predicate, s)
        return np.array(
            [self.cache.get(key, s.id) for s in samples], dtype=np.uint8
        )

    def denote_all(self, predicate: Predicate, corpus: Corpus) -> DenotationVector:
        return DenotationVector(predicate, self.denote_samples(predicate, corpus.samples))

    def denote_matrix(self, predicates: Iterable[Predicate], corpus: Corpus) -> np.ndarray:
        """(n_samples, n_predicates) float64 matrix of denotation columns."""
        columns = [self.denote_all(p, corpus).values for p in predicates]
        return np.ascontiguousarray(np.stack(columns, axis=1), dtype=np.float64)
