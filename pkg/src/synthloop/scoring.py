"""Per-sample scores against the current student: sequence loss, pairwise
judge scores, correctness, and gradient embeddings with sparse projection.

Self-prediction and ground-truth scoring share one code path; they differ
only in which answer string is handed to the scorer.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from string import Template
from types import SimpleNamespace
from typing import Optional, Sequence

import numpy as np

from .errors import JudgeParseError, ValidationError
from .modelio.ops import chat
from .modelio.types import ChatRequest, ModelEndpoint

SCORER_KINDS = (
    "loss_self",
    "loss_gt",
    "reward_self",
    "reward_gt",
    "judge_pair",
    "correctness",
    "random",
)


@dataclass(frozen=True)
class Score:
    sample_id: str
    scorer_kind: str
    value: float
    aux: Optional[tuple[float, float]] = None  # (teacher_score, student_score)

    def __post_init__(self):
        if self.scorer_kind not in SCORER_KINDS:
            raise ValidationError(f"unknown scorer kind {self.scorer_kind!r}")
        if not math.isfinite(self.value):
            raise ValidationError(f"score for {self.sample_id!r} must be finite")
        if self.scorer_kind == "judge_pair" and self.aux is not None:
            for v in self.aux:
                if not 1.0 <= v <= 10.0:
                    raise ValidationError("judge scores must lie in [1, 10]")
        if self.scorer_kind == "correctness" and self.value not in (0.0, 1.0):
            raise ValidationError("correctness scores are 0 or 1")

    def to_dict(self) -> dict:
        return {
            "sample_id": self.sample_id,
            "scorer_kind": self.scorer_kind,
            "value": self.value,
            "aux": list(self.aux) if self.aux is not None else None,
        }

    @classmethod
    def from_dict(cls, record) -> "Score":
        aux = record.get("aux")
        return cls(
            sample_id=str(record["sample_id"]),
            scorer_kind=str(record["scorer_kind"]),
            value=float(record["value"]),
            aux=tuple(aux) if aux is not None else None,
        )


def save_scores(scores: Sequence[Score], path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for score in scores:
            fh.write(json.dumps(score.to_dict(), sort_keys=True))
            fh.write("\n")


def load_scores(path) -> list[Score]:
    scores = []
    with Path(path).open("r", encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                scores.append(Score.from_dict(json.loads(line)))
    return scores


@dataclass(frozen=True)
class GradEmbedding:
    sample_id: str
    vector: tuple[float, ...]

    def __post_init__(self):
        if not all(math.isfinite(v) for v in self.vector):
            raise ValidationError(f"gradient embedding for {self.sample_id!r} has non-finite entries")


# -- sequence loss -------------------------------------------------------------


def sequence_loss(logprobs: Sequence[float]) -> float:
    """Mean negative log-likelihood per answer token."""
    values = [float(lp) for lp in logprobs]
    if not values:
        raise ValidationError("sequence loss needs at least one token logprob")
    for lp in values:
        if lp > 0:
            raise ValidationError(f"logprob {lp} is positive; probabilities cannot exceed 1")
    return -sum(values) / len(values)


# -- pairwise judge scoring ------------------------------------------------------

_INT_RE = re.compile(r"-?\d+")


def _judge_template() -> Template:
    text = resources.files("synthloop.templates").joinpath("judge_pairwise.txt").read_text("utf-8")
    return Template(text)


def parse_judge_scores(text: str) -> tuple[float, float]:
    """Last two integers in the completion, clamped to [1, 10]."""
    numbers = _INT_RE.findall(text)
    if len(numbers) < 2:
        raise JudgeParseError("no score pair in judge completion", raw=text)
    teacher_score, student_score = (
        min(10.0, max(1.0, float(n))) for n in numbers[-2:]
    )
    return teacher_score, student_score


def judge_pair_score(
    teacher: ModelEndpoint,
    question: str,
    student_answer: str,
    ledger=None,
    re_asks: int = 2,
    gen_seed: int = 0,
    max_output_tokens: int = 768,
) -> tuple[float, float]:
    """Pairwise judging: the teacher first answers the question itself, then
    scores its own answer and the student's on a 1-10 scale. Both calls are
    charged to the teacher budget."""
    answer_request = ChatRequest.user(question, temperature=0.0, max_output_tokens=max_output_tokens, seed=gen_seed)
    teacher_answer = chat(teacher, answer_request, ledger).text
    prompt = _judge_template().substitute(
        question=question, answer_1=teacher_answer, answer_2=student_answer
    )
    last_raw = ""
    for attempt in range(1 + re_asks):
        request = ChatRequest.user(
            prompt, temperature=0.0, max_output_tokens=max_output_tokens, seed=gen_seed + attempt
        )
        last_raw = chat(teacher, request, ledger).text
        try:
            return parse_judge_scores(last_raw)
        except JudgeParseError:
            continue
    raise JudgeParseError(
        f"judge produced no parseable score pair after {1 + re_asks} attempts", raw=last_raw
    )


# -- correctness -----------------------------------------------------------------


def correctness_score(question: str, student_answer: str, ground_truth: str, verifier) -> int:
    """1 when the verifier accepts the student answer, else 0. Callers invert
    the score to prioritize incorrect answers."""
    probe = SimpleNamespace(id="probe", question=question, answer=ground_truth)
    correct, _ = verifier(probe, student_answer)
    return int(bool(correct))


# -- gradient embeddings -----------------------------------------------------------


def grad_embedding(
    probs: Sequence[Sequence[float]],
    target_tokens: Sequence[int],
    hidden: Sequence[Sequence[float]],
) -> np.ndarray:
    """Closed-form output-head gradient of the cross-entropy, with the
    generated sequence treated as ground truth.

    Per position: (p - onehot(target)) outer h, flattened row-major to
    |V| * dim(h); positions aggregate by mean so scale stays length-invariant.
    """
    if not (len(probs) == len(target_tokens) == len(hidden)):
        raise ValidationError("probs, targets, and hidden states must align per position")
    if not probs:
        raise ValidationError("gradient embedding needs at least one position")
    p = np.asarray(probs, dtype=float)
    h = np.asarray(hidden, dtype=float)
    targets = np.asarray(target_tokens, dtype=int)
    if p.ndim != 2 or h.ndim != 2:
        raise ValidationError("probs and hidden must be one vector per position")
    if np.any(np.abs(p.sum(axis=1) - 1.0) > 1e-6):
        raise ValidationError("each position's distribution must sum to 1 within 1e-6")
    if np.any((targets < 0) | (targets >= p.shape[1])):
        raise ValidationError("target token index out of vocabulary range")
    err = p.copy()
    err[np.arange(len(targets)), targets] -= 1.0
    grads = err[:, :, None] * h[:, None, :]            # (positions, |V|, dim_h)
    return grads.mean(axis=0).reshape(-1)


def sparse_project(vector: Sequence[float], d: int, seed: int) -> np.ndarray:
    """Signed sparse random projection (density 1/s, s=3), scaled by
    sqrt(s/d) so squared distances are preserved in expectation."""
    x = np.asarray(vector, dtype=float)
    if d < 1:
        raise ValidationError("projection dimension must be >= 1")
    if d > x.shape[0]:
        raise ValidationError(f"projection dimension {d} exceeds input dimension {x.shape[0]}")
    matrix = _projection_matrix(d, x.shape[0], seed)
    return matrix @ x


_PROJECTION_CACHE: dict[tuple[int, int, int], np.ndarray] = {}
PROJECTION_DENSITY_S = 3


def _projection_matrix(d: int, input_dim: int, seed: int) -> np.ndarray:
    key = (d, input_dim, seed)
    cached = _PROJECTION_CACHE.get(key)
    if cached is not None:
        return cached
    rng = np.random.default_rng(seed)
    s = PROJECTION_DENSITY_S
    draws = rng.uniform(size=(d, input_dim))
    matrix = np.zeros((d, input_dim))
    scale = math.sqrt(s / d)
    matrix[draws < 1.0 / (2 * s)] = scale
    matrix[draws > 1.0 - 1.0 / (2 * s)] = -scale
    if len(_PROJECTION_CACHE) > 8:
        _PROJECTION_CACHE.clear()
    _PROJECTION_CACHE[key] = matrix
    return matrix


def grad_feature_vector(endpoint: ModelEndpoint, question: str, answer: str) -> np.ndarray:
    """Raw output-head gradient for one sample, via whichever route the
    endpoint offers: a served raw vector, or arrays fed to the closed form."""
    backend = endpoint.backend
    if hasattr(backend, "grad_vector"):
        return np.asarray(backend.grad_vector(question, answer), dtype=float)
    if hasattr(backend, "grad_arrays"):
        probs, targets, hidden = backend.grad_arrays(question, answer)
        return grad_embedding(probs, targets, hidden)
    raise ValidationError(f"{endpoint.role} endpoint offers no gradient-embedding route")
