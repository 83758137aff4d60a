"""Text corpora, their embeddings, and the deterministic synthetic embedder.

File formats (one JSON object per line):
  corpus:     {"id": str, "text": str, "tags": [str]?, "t": int?, "label": int?}
  embeddings: {"id": str, "vec": [float, ...]}
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

KINDS = ("clustering", "timeseries", "classification")

NORM_TOL = 1e-6


class CorpusError(ValueError):
    """Malformed corpus or embedding input."""


@dataclass(frozen=True)
class Sample:
    id: str
    text: str
    tags: frozenset[str] | None = None
    time_index: int | None = None
    class_label: int | None = None


@dataclass
class Corpus:
    samples: list[Sample]
    kind: str

    def __post_init__(self):
        if self.kind not in KINDS:
            raise CorpusError(f"unknown corpus kind: {self.kind!r}")
        if not self.samples:
            raise CorpusError("corpus is empty")
        seen = set()
        for s in self.samples:
            if s.id in seen:
                raise CorpusError(f"duplicate id: {s.id!r}")
            seen.add(s.id)
        self._check_time_indices()
        self._check_labels()

    def _check_time_indices(self):
        with_t = [s for s in self.samples if s.time_index is not None]
        required = self.kind == "timeseries"
        if not with_t:
            if required:
                raise CorpusError("timeseries corpus requires a time_index on every sample")
            return
        if len(with_t) != len(self.samples):
            missing = next(s.id for s in self.samples if s.time_index is None)
            raise CorpusError(f"time_index missing on sample {missing!r}")
        ts = sorted(s.time_index for s in self.samples)
        if ts != list(range(1, len(self.samples) + 1)):
            raise CorpusError(
                f"non-contiguous time_index: expected 1..{len(self.samples)}, got {sorted(set(ts))[:8]}..."
            )

    def _check_labels(self):
        with_y = [s for s in self.samples if s.class_label is not None]
        required = self.kind == "classification"
        if not with_y:
            if required:
                raise CorpusError("classification corpus requires a class_label on every sample")
            return
        if len(with_y) != len(self.samples):
            missing = next(s.id for s in self.samples if s.class_label is None)
            raise CorpusError(f"class_label missing on sample {missing!r}")
        labels = {s.class_label for s in self.samples}
        if min(labels) < 0:
            raise CorpusError("class_label must be non-negative")

    def __len__(self) -> int:
        return len(self.samples)

    def __iter__(self):
        return iter(self.samples)

    @property
    def ids(self) -> list[str]:
        return [s.id for s in self.samples]

    def time_order(self) -> np.ndarray:
        """Indices that sort samples by time_index (timeseries corpora only)."""
        if any(s.time_index is None for s in self.samples):
            raise CorpusError("corpus has no time indices")
        return np.argsort([s.time_index for s in self.samples], kind="stable")

    def labels(self) -> np.ndarray:
        if any(s.class_label is None for s in self.samples):
            raise CorpusError("corpus has no class labels")
        return np.array([s.class_label for s in self.samples], dtype=np.int64)

    @property
    def n_classes(self) -> int:
        return int(self.labels().max()) + 1

    def subset(self, indices: Sequence[int], kind: str | None = None) -> "Corpus":
        """New corpus over the selected samples, dropping time indices."""
        picked = [self.samples[i] for i in indices]
        stripped = [
            Sample(s.id, s.text, s.tags, None, s.class_label) for s in picked
        ]
        return Corpus(stripped, kind or self.kind)


def _sample_to_record(s: Sample) -> dict:
    rec: dict = {"id": s.id, "text": s.text}
    if s.tags is not None:
        rec["tags"] = sorted(s.tags)
    if s.time_index is not None:
        rec["t"] = s.time_index
    if s.class_label is not None:
        rec["label"] = s.class_label
    return rec


def _record_to_sample(rec: dict, lineno: int) -> Sample:
    if not isinstance(rec, dict):
        raise CorpusError(f"line {lineno}: record is not an object")
    for key in ("id", "text"):
        if key not in rec:
            raise CorpusError(f"line {lineno}: missing field {key!r}")
    tags = rec.get("tags")
    return Sample(
        id=str(rec["id"]),
        text=str(rec["text"]),
        tags=frozenset(tags) if tags is not None else None,
        time_index=int(rec["t"]) if "t" in rec else None,
        class_label=int(rec["label"]) if "label" in rec else None,
    )


def load_corpus(path: str | Path, kind: str) -> Corpus:
    """Load and validate a line-delimited JSON corpus, preserving order."""
    samples = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"line {lineno}: malformed record ({exc.msg})") from exc
            s = _record_to_sample(rec, lineno)
            if kind == "timeseries" and s.time_index is None:
                raise CorpusError(f"line {lineno}: sample {s.id!r} missing time_index")
            if kind == "classification" and s.class_label is None:
                raise CorpusError(f"line {lineno}: sample {s.id!r} missing class_label")
            samples.append(s)
    return Corpus(samples, kind)


def save_corpus(corpus: Corpus, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for s in corpus.samples:
            fh.write(json.dumps(_sample_to_record(s), sort_keys=True) + "\n")


@dataclass
class EmbeddingMatrix:
    """Unit-norm embedding rows aligned with a corpus' sample order."""

    ids: list[str]
    matrix: np.ndarray  # (n_samples, dim) float64, rows l2-normalized
    _row_of: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self):
        self.matrix = np.ascontiguousarray(self.matrix, dtype=np.float64)
        if self.matrix.ndim != 2 or self.matrix.shape[0] != len(self.ids):
            raise CorpusError("embedding matrix shape does not match id list")
        norms = np.linalg.norm(self.matrix, axis=1)
        if np.any(np.abs(norms - 1.0) > NORM_TOL):
            raise CorpusError("embedding rows must be unit-norm")
        self._row_of = {sid: i for i, sid in enumerate(self.ids)}

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    def row(self, sample_id: str) -> np.ndarray:
        return self.matrix[self._row_of[sample_id]]

    def reordered(self, order: Iterable[int]) -> "EmbeddingMatrix":
        order = list(order)
        return EmbeddingMatrix([self.ids[i] for i in order], self.matrix[order])


def _normalize_rows(matrix: np.ndarray, ids: Sequence[str]) -> np.ndarray:
    norms = np.linalg.norm(matrix, axis=1)
    bad = np.where(norms == 0.0)[0]
    if bad.size:
        raise CorpusError(f"zero-norm embedding for sample {ids[bad[0]]!r}")
    return matrix / norms[:, None]


def load_embeddings(path: str | Path, corpus: Corpus) -> EmbeddingMatrix:
    """Load embeddings, renormalize rows, and align them to corpus order."""
    vectors: dict[str, np.ndarray] = {}
    dim = None
    known = set(corpus.ids)
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"line {lineno}: malformed record ({exc.msg})") from exc
            sid = str(rec.get("id"))
            if sid not in known:
                raise CorpusError(f"line {lineno}: unknown sample id {sid!r}")
            vec = np.asarray(rec["vec"], dtype=np.float64)
            if dim is None:
                dim = vec.shape[0]
            elif vec.shape[0] != dim:
                raise CorpusError(
                    f"line {lineno}: dimension mismatch ({vec.shape[0]} != {dim})"
                )
            vectors[sid] = vec
    missing = [sid for sid in corpus.ids if sid not in vectors]
    if missing:
        raise CorpusError(f"missing embedding for sample {missing[0]!r}")
    matrix = np.stack([vectors[sid] for sid in corpus.ids])
    return EmbeddingMatrix(list(corpus.ids), _normalize_rows(matrix, corpus.ids))


def save_embeddings(emb: EmbeddingMatrix, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for sid, row in zip(emb.ids, emb.matrix):
            fh.write(json.dumps({"id": sid, "vec": [float(v) for v in row]}) + "\n")


def synth_embed(
    corpus: Corpus,
    vocab: Sequence[str],
    noise_scale: float,
    seed: int,
) -> EmbeddingMatrix:
    """Deterministic embedding oracle for synthetic worlds.

    Each row is the l2-normalized sum of a multi-hot vector over ``vocab``
    (one slot per sample tag) and seeded Gaussian noise. With zero noise,
    samples with identical tag sets map to identical rows, and each tag
    literally is an axis of the embedding space.
    """
    index = {tag: i for i, tag in enumerate(vocab)}
    rng = np.random.default_rng(seed)
    matrix = np.zeros((len(corpus), len(vocab)), dtype=np.float64)
    for r, s in enumerate(corpus.samples):
        for tag in sorted(s.tags or ()):
            if tag not in index:
                raise CorpusError(f"sample {s.id!r} has tag {tag!r} outside vocab")
            matrix[r, index[tag]] += 1.0
    if noise_scale < 0:
        raise CorpusError("noise_scale must be non-negative")
    if noise_scale > 0:
        matrix += rng.normal(0.0, noise_scale, size=matrix.shape)
    return EmbeddingMatrix(list(corpus.ids), _normalize_rows(matrix, corpus.ids))
