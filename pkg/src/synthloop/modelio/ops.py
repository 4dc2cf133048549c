"""Backend-agnostic model operations with capability checks and budgeting."""

from __future__ import annotations

from typing import Optional

from ..corpus import Corpus
from ..errors import CapabilityError, ValidationError
from .ledger import BudgetLedger
from .types import ChatRequest, ChatResponse, FinetuneHyperparams, ModelEndpoint, TokenUsage


def chat(
    endpoint: ModelEndpoint,
    request: ChatRequest,
    ledger: Optional[BudgetLedger] = None,
) -> ChatResponse:
    """Send one chat request; usage lands on the ledger under endpoint.role."""
    if not endpoint.supports("generate"):
        raise CapabilityError(f"{endpoint.role} endpoint does not support generate")
    ledger = ledger if ledger is not None else getattr(endpoint, "ledger", None)
    if ledger is not None:
        ledger.check(endpoint.role)
    response = endpoint.backend.complete(request)
    if request.want_logprobs and response.token_logprobs is None:
        raise ValidationError("backend returned no logprobs despite want_logprobs")
    if ledger is not None:
        ledger.charge(endpoint.role, response.usage)
    return response


def student_greedy_generate(
    endpoint: ModelEndpoint,
    question: str,
    ledger: Optional[BudgetLedger] = None,
    max_output_tokens: int = 512,
) -> str:
    if endpoint.role != "student":
        raise CapabilityError("greedy generation is a student-endpoint operation")
    request = ChatRequest.user(question, temperature=0.0, max_output_tokens=max_output_tokens)
    return chat(endpoint, request, ledger).text


def answer_logprobs(
    endpoint: ModelEndpoint,
    question: str,
    answer: str,
    ledger: Optional[BudgetLedger] = None,
) -> list[tuple[str, float]]:
    """Token logprobs of a fixed answer conditioned on the question."""
    if not endpoint.supports("logprobs"):
        raise CapabilityError(f"{endpoint.role} endpoint does not support logprobs")
    ledger = ledger if ledger is not None else getattr(endpoint, "ledger", None)
    if ledger is not None:
        ledger.check(endpoint.role)
    entries = list(endpoint.backend.logprobs(question, answer))
    if ledger is not None:
        ledger.charge(
            endpoint.role, TokenUsage(len(question.split()) + len(answer.split()), 0)
        )
    return entries


def reward_score(
    endpoint: ModelEndpoint,
    question: str,
    answer: str,
    ledger: Optional[BudgetLedger] = None,
) -> float:
    if endpoint.role != "reward":
        raise CapabilityError("reward scoring is a reward-endpoint operation")
    ledger = ledger if ledger is not None else getattr(endpoint, "ledger", None)
    if ledger is not None:
        ledger.check(endpoint.role)
    score = float(endpoint.backend.reward(question, answer))
    if score != score or score in (float("inf"), float("-inf")):
        raise ValidationError("reward backend returned a non-finite score")
    if ledger is not None:
        ledger.charge(
            endpoint.role, TokenUsage(len(question.split()) + len(answer.split()), 1)
        )
    return score


def student_finetune(
    endpoint: ModelEndpoint,
    train: Corpus,
    validation: Optional[Corpus],
    hp: FinetuneHyperparams,
    seed: int = 0,
):
    """Fresh-adapter SFT from base weights; returns the new state handle."""
    if not endpoint.supports("finetune"):
        raise CapabilityError(f"{endpoint.role} endpoint does not support finetune")
    if len(train) == 0:
        raise ValidationError("training corpus must be non-empty")
    return endpoint.backend.finetune(train, validation, hp, seed)
