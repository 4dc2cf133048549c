"""Turn scores and gradient embeddings into the selected exemplar batch.

Every strategy is a pure function of (inputs, seed) and returns exactly m
distinct ids from the candidate set.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import ValidationError
from .scoring import GradEmbedding, Score

STRATEGIES = ("random", "argmax", "softmax_sample", "badge", "pooled")
POOL_RULES = ("lion_easy_hard", "evokd_correct_incorrect")


@dataclass(frozen=True)
class SelectionConfig:
    strategy: str = "argmax"
    m: int = 1000
    direction: str = "high"
    temperature: float = 1.0
    pool_rule: str = "lion_easy_hard"
    seed: int = 0
    badge_dim: int = 1024
    badge_first_pick: str = "origin"   # or "uniform" k-means++ seeding
    lion_gap_threshold: float = 1.0    # judge-score gap marking a sample hard

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValidationError(f"unknown selection strategy {self.strategy!r}")
        if self.direction not in ("high", "low"):
            raise ValidationError("direction must be 'high' or 'low'")
        if self.m < 1:
            raise ValidationError("batch size m must be >= 1")
        if self.temperature <= 0:
            raise ValidationError("softmax temperature must be > 0")
        if self.pool_rule not in POOL_RULES:
            raise ValidationError(f"unknown pool rule {self.pool_rule!r}")
        if self.badge_first_pick not in ("origin", "uniform"):
            raise ValidationError("badge_first_pick must be 'origin' or 'uniform'")

    def to_dict(self) -> dict:
        return {
            "strategy": self.strategy,
            "m": self.m,
            "direction": self.direction,
            "temperature": self.temperature,
            "pool_rule": self.pool_rule,
            "seed": self.seed,
            "badge_dim": self.badge_dim,
            "badge_first_pick": self.badge_first_pick,
            "lion_gap_threshold": self.lion_gap_threshold,
        }


def _check_batch(m: int, n: int) -> None:
    if n == 0:
        raise ValidationError("candidate set is empty")
    if not 1 <= m <= n:
        raise ValidationError(f"batch size {m} must be in [1, {n}]")


def select_argmax(scores: Sequence[Score], m: int, direction: str = "high") -> list[str]:
    """Ids of the m most extreme values; ties break by input order."""
    _check_batch(m, len(scores))
    sign = -1.0 if direction == "high" else 1.0
    order = sorted(range(len(scores)), key=lambda i: (sign * scores[i].value, i))
    return [scores[i].sample_id for i in order[:m]]


def select_softmax_sample(
    scores: Sequence[Score], m: int, temperature: float, seed: int
) -> list[str]:
    """m distinct ids drawn without replacement, initial probabilities
    softmax(value / temperature)."""
    _check_batch(m, len(scores))
    if temperature <= 0:
        raise ValidationError("softmax temperature must be > 0")
    values = np.asarray([s.value for s in scores], dtype=float) / temperature
    values -= values.max()
    weights = np.exp(values)
    rng = np.random.default_rng(seed)
    chosen: list[str] = []
    alive = np.ones(len(scores), dtype=bool)
    for _ in range(m):
        probs = np.where(alive, weights, 0.0)
        probs = probs / probs.sum()
        index = int(rng.choice(len(scores), p=probs))
        alive[index] = False
        chosen.append(scores[index].sample_id)
    return chosen


def select_random(candidate_ids: Sequence[str], m: int, seed: int) -> list[str]:
    """Uniform sample without replacement.

    Implemented as a permutation prefix, so for a fixed seed the size-m
    selection is a prefix of the size-m' selection whenever m <= m'; the
    engine relies on this to extend a selection into a refill ranking.
    """
    _check_batch(m, len(candidate_ids))
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(candidate_ids))
    return [candidate_ids[int(i)] for i in order[:m]]


def select_badge(embeddings: Sequence[GradEmbedding], m: int, seed: int,
                 first_pick: str = "origin") -> list[str]:
    """k-means++-style seeding over gradient embeddings.

    The first pick lands proportional to squared norm (origin-anchored,
    favouring high-magnitude gradients) or uniformly when first_pick is
    'uniform'; every later pick lands proportional to squared distance to the
    nearest already-picked embedding. When all remaining distances are zero,
    the rest of the batch fills uniformly at random.
    """
    _check_batch(m, len(embeddings))
    dims = {len(e.vector) for e in embeddings}
    if len(dims) != 1:
        raise ValidationError(f"embedding dimensions differ within batch: {sorted(dims)}")
    points = np.asarray([e.vector for e in embeddings], dtype=float)
    rng = np.random.default_rng(seed)
    n = len(points)

    def draw(weights: np.ndarray) -> int:
        total = weights.sum()
        if total <= 0:
            alive = np.where(weights_mask)[0]
            return int(rng.choice(alive))
        return int(rng.choice(n, p=weights / total))

    weights_mask = np.ones(n, dtype=bool)
    if first_pick == "origin":
        first_weights = (points**2).sum(axis=1)
    else:
        first_weights = np.ones(n)
    first = draw(first_weights * weights_mask)
    chosen = [first]
    weights_mask[first] = False
    dist2 = ((points - points[first]) ** 2).sum(axis=1)
    while len(chosen) < m:
        index = draw(np.where(weights_mask, dist2, 0.0))
        chosen.append(index)
        weights_mask[index] = False
        dist2 = np.minimum(dist2, ((points - points[index]) ** 2).sum(axis=1))
    return [embeddings[i].sample_id for i in chosen]


def select_pooled(
    pool_a: Sequence[str], pool_b: Sequence[str], m: int, seed: int
) -> list[str]:
    """Even split between two disjoint pools, shortfall refilled from the
    other pool; uniform without replacement within each pool."""
    overlap = set(pool_a) & set(pool_b)
    if overlap:
        raise ValidationError(f"pools overlap on {sorted(overlap)[:5]}")
    if m > len(pool_a) + len(pool_b):
        raise ValidationError(f"batch size {m} exceeds pooled candidates {len(pool_a) + len(pool_b)}")
    if m < 1:
        raise ValidationError("batch size m must be >= 1")
    rng = np.random.default_rng(seed)
    want_a = min((m + 1) // 2, len(pool_a))
    want_b = min(m - want_a, len(pool_b))
    want_a = m - want_b  # refill pool-a share if b fell short
    picks_a = [pool_a[int(i)] for i in rng.choice(len(pool_a), size=want_a, replace=False)] if want_a else []
    picks_b = [pool_b[int(i)] for i in rng.choice(len(pool_b), size=want_b, replace=False)] if want_b else []
    return picks_a + picks_b


def split_pools_by_threshold(
    scores: Sequence[Score], gap_threshold: float
) -> tuple[list[str], list[str]]:
    """Lion-style pools from pairwise judge scores: a sample is hard when the
    teacher out-scores the student by at least the threshold."""
    hard, easy = [], []
    for score in scores:
        if score.aux is None:
            raise ValidationError(f"score for {score.sample_id!r} lacks judge aux scores")
        teacher_score, student_score = score.aux
        if teacher_score - student_score >= gap_threshold:
            hard.append(score.sample_id)
        else:
            easy.append(score.sample_id)
    return hard, easy


def split_pools_by_correctness(scores: Sequence[Score]) -> tuple[list[str], list[str]]:
    """EvoKD-style pools: (incorrect, correct)."""
    incorrect = [s.sample_id for s in scores if s.value == 0.0]
    correct = [s.sample_id for s in scores if s.value == 1.0]
    return incorrect, correct


def shuffled(scores: Sequence[Score], seed: int) -> list[Score]:
    """Seeded uniform shuffle; used before argmax on binary scores so that
    tie-breaking carries no positional bias."""
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(scores))
    return [scores[int(i)] for i in order]


def select(
    config: SelectionConfig,
    scores: Optional[Sequence[Score]] = None,
    embeddings: Optional[Sequence[GradEmbedding]] = None,
    candidate_ids: Optional[Sequence[str]] = None,
) -> list[str]:
    """Dispatch a SelectionConfig to the matching strategy."""
    if config.strategy == "random":
        if candidate_ids is None:
            candidate_ids = [s.sample_id for s in scores or []]
        return select_random(candidate_ids, config.m, config.seed)
    if config.strategy == "badge":
        if embeddings is None:
            raise ValidationError("badge selection needs gradient embeddings")
        return select_badge(embeddings, config.m, config.seed, config.badge_first_pick)
    if scores is None:
        raise ValidationError(f"{config.strategy} selection needs scores")
    if config.strategy == "argmax":
        return select_argmax(scores, config.m, config.direction)
    if config.strategy == "softmax_sample":
        values = scores
        if config.direction == "low":
            # "random" is the one unconstrained kind, safe for negated values.
            values = [Score(s.sample_id, "random", -s.value) for s in scores]
        return select_softmax_sample(values, config.m, config.temperature, config.seed)
    if config.strategy == "pooled":
        if config.pool_rule == "lion_easy_hard":
            pool_a, pool_b = split_pools_by_threshold(scores, config.lion_gap_threshold)
        else:
            pool_a, pool_b = split_pools_by_correctness(scores)
        return select_pooled(pool_a, pool_b, config.m, config.seed)
    raise ValidationError(f"unknown selection strategy {config.strategy!r}")
