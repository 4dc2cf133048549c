"""Question-answer corpora with generation provenance.

Storage is JSON Lines, one sample per line, UTF-8. Field names are fixed
(id/question/answer/origin/parent_id/iteration/meta) so files stay portable
and diff-friendly. Corpora are immutable values: writers build new ones.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Optional

from .errors import ParseError, ValidationError

CORPUS_ROLES = ("seed", "selected", "synthetic", "validation", "test")
SAMPLE_ORIGINS = ("seed", "synthetic")


@dataclass(frozen=True)
class Sample:
    """One question-answer pair with provenance.

    Seed samples have no parent and live at iteration 0; synthetic samples
    record the exemplar that seeded them and the loop iteration that made them.
    """

    id: str
    question: str
    answer: str
    origin: str = "seed"
    parent_id: Optional[str] = None
    iteration: int = 0
    meta: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if not self.id:
            raise ValidationError("sample id must be non-empty")
        if self.origin not in SAMPLE_ORIGINS:
            raise ValidationError(f"unknown sample origin {self.origin!r}")
        if self.iteration < 0:
            raise ValidationError(f"sample {self.id!r}: iteration must be >= 0")
        if self.origin == "seed" and (self.parent_id is not None or self.iteration != 0):
            raise ValidationError(
                f"seed sample {self.id!r} must have no parent and iteration 0"
            )
        if self.origin == "synthetic" and self.parent_id is None:
            raise ValidationError(f"synthetic sample {self.id!r} requires parent_id")

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "question": self.question,
            "answer": self.answer,
            "origin": self.origin,
            "parent_id": self.parent_id,
            "iteration": self.iteration,
            "meta": dict(self.meta),
        }

    @classmethod
    def from_dict(cls, record: Mapping) -> "Sample":
        try:
            return cls(
                id=str(record["id"]),
                question=str(record["question"]),
                answer=str(record["answer"]),
                origin=record.get("origin", "seed"),
                parent_id=record.get("parent_id"),
                iteration=int(record.get("iteration", 0)),
                meta={str(k): str(v) for k, v in (record.get("meta") or {}).items()},
            )
        except KeyError as exc:
            raise ParseError(f"sample record missing field {exc}") from exc


@dataclass(frozen=True)
class Corpus:
    """Role-tagged ordered collection of samples. Order is significant."""

    role: str
    samples: tuple[Sample, ...]
    created_at_iteration: int = 0

    def __post_init__(self):
        if self.role not in CORPUS_ROLES:
            raise ValidationError(f"unknown corpus role {self.role!r}")
        if self.role == "seed" and not self.samples:
            raise ValidationError("seed corpus must be non-empty")
        seen = set()
        for s in self.samples:
            if s.id in seen:
                raise ValidationError(f"duplicate sample id {s.id!r} in corpus")
            seen.add(s.id)

    def __len__(self) -> int:
        return len(self.samples)

    def __iter__(self):
        return iter(self.samples)

    def ids(self) -> list[str]:
        return [s.id for s in self.samples]

    def by_id(self, sample_id: str) -> Sample:
        try:
            return self._index[sample_id]
        except KeyError:
            raise ValidationError(f"sample id {sample_id!r} not in corpus") from None

    @property
    def _index(self) -> dict[str, Sample]:
        cached = getattr(self, "_index_cache", None)
        if cached is None:
            cached = {s.id: s for s in self.samples}
            object.__setattr__(self, "_index_cache", cached)
        return cached


@dataclass(frozen=True)
class GenerationRecord:
    """Provenance edge from a seed exemplar to one synthetic child."""

    parent_id: str
    child_id: str
    iteration: int
    selection_score: Optional[float] = None
    scorer_kind: str = ""

    def __post_init__(self):
        if self.iteration < 0:
            raise ValidationError("generation record iteration must be >= 0")

    def to_dict(self) -> dict:
        return {
            "parent_id": self.parent_id,
            "child_id": self.child_id,
            "iteration": self.iteration,
            "selection_score": self.selection_score,
            "scorer_kind": self.scorer_kind,
        }

    @classmethod
    def from_dict(cls, record: Mapping) -> "GenerationRecord":
        return cls(
            parent_id=str(record["parent_id"]),
            child_id=str(record["child_id"]),
            iteration=int(record["iteration"]),
            selection_score=record.get("selection_score"),
            scorer_kind=str(record.get("scorer_kind", "")),
        )


def synthetic_sample_id(iteration: int, counter: int) -> str:
    """Deterministic id scheme for synthetic samples."""
    return f"synth-{iteration}-{counter}"


def load_corpus(path, role: str) -> Corpus:
    """Read a JSON Lines corpus file; sample order equals file order."""
    path = Path(path)
    samples = []
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"{path}:{lineno}: malformed JSON line: {exc}") from exc
            if not isinstance(record, dict):
                raise ParseError(f"{path}:{lineno}: expected a JSON object")
            try:
                samples.append(Sample.from_dict(record))
            except (ValidationError, KeyError, TypeError, ValueError) as exc:
                raise ParseError(f"{path}:{lineno}: bad sample record: {exc}") from exc
    return Corpus(role=role, samples=tuple(samples))


def save_corpus(corpus: Corpus, path) -> None:
    """Write JSON Lines so that ``load_corpus`` reproduces the corpus exactly."""
    path = Path(path)
    try:
        with path.open("w", encoding="utf-8") as fh:
            for sample in corpus.samples:
                fh.write(json.dumps(sample.to_dict(), ensure_ascii=False, sort_keys=True))
                fh.write("\n")
    except OSError as exc:
        raise ValidationError(f"cannot write corpus to {path}: {exc}") from exc


def save_records(records: Iterable[GenerationRecord], path) -> None:
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record.to_dict(), sort_keys=True))
            fh.write("\n")


def load_records(path) -> list[GenerationRecord]:
    path = Path(path)
    records = []
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                records.append(GenerationRecord.from_dict(json.loads(line)))
            except (json.JSONDecodeError, KeyError, ValueError) as exc:
                raise ParseError(f"{path}:{lineno}: bad generation record: {exc}") from exc
    return records


def merge_accumulate(current: Corpus, previous: Corpus) -> Corpus:
    """Append the current iteration's synthetic data to all earlier iterations'.

    Previous samples come first so corpus order tracks generation order.
    """
    if current.role != "synthetic" or previous.role != "synthetic":
        raise ValidationError("merge_accumulate expects two synthetic corpora")
    overlap = set(current.ids()) & set(previous.ids())
    if overlap:
        raise ValidationError(f"overlapping sample ids in merge: {sorted(overlap)[:5]}")
    return Corpus(
        role="synthetic",
        samples=previous.samples + current.samples,
        created_at_iteration=max(current.created_at_iteration, previous.created_at_iteration),
    )
