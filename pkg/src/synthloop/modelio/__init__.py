"""Uniform backend contracts for teacher, student, and reward models."""

from .ledger import BudgetLedger
from .ops import answer_logprobs, chat, reward_score, student_finetune, student_greedy_generate
from .remote import RemoteBackend, RemoteConfig
from .sim import ScriptedBackend, SimBackend, SimWorld, StudentState, make_sim_corpus
from .types import (
    CAPABILITIES,
    FINETUNE_PRESETS,
    ROLES,
    ChatRequest,
    ChatResponse,
    FinetuneHyperparams,
    ModelEndpoint,
    TokenUsage,
)

__all__ = [
    "BudgetLedger",
    "CAPABILITIES",
    "ChatRequest",
    "ChatResponse",
    "FINETUNE_PRESETS",
    "FinetuneHyperparams",
    "ModelEndpoint",
    "ROLES",
    "RemoteBackend",
    "RemoteConfig",
    "ScriptedBackend",
    "SimBackend",
    "SimWorld",
    "StudentState",
    "TokenUsage",
    "answer_logprobs",
    "chat",
    "make_sim_corpus",
    "reward_score",
    "student_finetune",
    "student_greedy_generate",
]


def sim_endpoint(world: SimWorld, role: str, state=None, ledger=None) -> ModelEndpoint:
    """Convenience constructor for a fully capable simulated endpoint."""
    capabilities = {
        "teacher": frozenset({"generate", "logprobs"}),
        "student": frozenset({"generate", "logprobs", "grad_embedding", "finetune"}),
        "reward": frozenset({"reward", "generate"}),
    }[role]
    endpoint = ModelEndpoint(
        role=role,
        capabilities=capabilities,
        transport="simulated",
        backend=SimBackend(world, role, state),
        name=f"sim-{role}",
    )
    endpoint.ledger = ledger
    return endpoint
