"""Request/response types and endpoint handles shared by all model backends."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

from ..errors import ValidationError

ROLES = ("teacher", "student", "reward")
CAPABILITIES = ("generate", "logprobs", "grad_embedding", "finetune", "reward")
TRANSPORTS = ("remote", "simulated", "scripted")


@dataclass(frozen=True)
class ChatRequest:
    """A chat-completion request. temperature=0 contracts deterministic decoding."""

    messages: tuple[tuple[str, str], ...]
    temperature: float = 0.0
    max_output_tokens: int = 512
    want_logprobs: bool = False
    seed: Optional[int] = None

    def __post_init__(self):
        if not self.messages:
            raise ValidationError("chat request needs at least one message")
        if self.temperature < 0:
            raise ValidationError("temperature must be >= 0")

    @staticmethod
    def user(text: str, **kwargs) -> "ChatRequest":
        return ChatRequest(messages=(("user", text),), **kwargs)

    def prompt_text(self) -> str:
        """Flatten messages to one prompt string (token accounting, simulators)."""
        return "\n".join(text for _, text in self.messages)


@dataclass(frozen=True)
class TokenUsage:
    input_tokens: int
    output_tokens: int
    approximate: bool = False

    def __post_init__(self):
        if self.input_tokens < 0 or self.output_tokens < 0:
            raise ValidationError("token counts must be >= 0")

    def __add__(self, other: "TokenUsage") -> "TokenUsage":
        return TokenUsage(
            self.input_tokens + other.input_tokens,
            self.output_tokens + other.output_tokens,
            self.approximate or other.approximate,
        )


@dataclass(frozen=True)
class ChatResponse:
    text: str
    usage: TokenUsage
    token_logprobs: Optional[tuple[tuple[str, float], ...]] = None

    def __post_init__(self):
        if self.token_logprobs is not None:
            for token, logprob in self.token_logprobs:
                if logprob > 0:
                    raise ValidationError(f"logprob for token {token!r} must be <= 0")


@dataclass(frozen=True)
class FinetuneHyperparams:
    """SFT settings; defaults follow the adapter fine-tuning recipe used here."""

    adapter_rank: int = 32
    learning_rate: float = 1e-4
    epochs: int = 10
    batch_size: int = 24
    grad_accum_steps: int = 2
    grad_norm_clip: float = 2.0
    warmup_fraction: float = 0.15
    schedule: str = "linear"
    min_lr: float = 1e-9

    def __post_init__(self):
        for name in ("adapter_rank", "learning_rate", "epochs", "batch_size",
                     "grad_accum_steps", "grad_norm_clip", "min_lr"):
            if getattr(self, name) <= 0:
                raise ValidationError(f"finetune hyperparam {name} must be positive")
        if not 0.0 <= self.warmup_fraction <= 1.0:
            raise ValidationError("warmup_fraction must be in [0, 1]")
        if self.schedule not in ("linear", "cosine_to_min"):
            raise ValidationError(f"unknown schedule {self.schedule!r}")

    def to_dict(self) -> dict:
        return {
            "adapter_rank": self.adapter_rank,
            "learning_rate": self.learning_rate,
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "grad_accum_steps": self.grad_accum_steps,
            "grad_norm_clip": self.grad_norm_clip,
            "warmup_fraction": self.warmup_fraction,
            "schedule": self.schedule,
            "min_lr": self.min_lr,
        }


# Optimal adapter settings found on held-out validation, per dataset family.
FINETUNE_PRESETS = {
    "gsm8k_seed": FinetuneHyperparams(adapter_rank=32, learning_rate=1e-4, epochs=10),
    "gsm8k_synthetic": FinetuneHyperparams(adapter_rank=32, learning_rate=1e-4, epochs=10),
    "math13_seed": FinetuneHyperparams(adapter_rank=32, learning_rate=1e-6, epochs=13),
    "math13_synthetic": FinetuneHyperparams(adapter_rank=64, learning_rate=1e-4, epochs=13),
    "prontoqa_seed": FinetuneHyperparams(adapter_rank=32, learning_rate=1e-5, epochs=13),
    "prontoqa_synthetic": FinetuneHyperparams(adapter_rank=32, learning_rate=1e-5, epochs=13),
    "game24_seed": FinetuneHyperparams(adapter_rank=16, learning_rate=1e-5, epochs=13),
    "game24_synthetic": FinetuneHyperparams(
        adapter_rank=16, learning_rate=5e-4, epochs=30, schedule="cosine_to_min"
    ),
}


@dataclass
class ModelEndpoint:
    """Capability handle for one backend. ``backend`` implements the transport."""

    role: str
    capabilities: frozenset
    transport: str
    backend: object = None
    name: str = ""

    def __post_init__(self):
        if self.role not in ROLES:
            raise ValidationError(f"unknown endpoint role {self.role!r}")
        unknown = set(self.capabilities) - set(CAPABILITIES)
        if unknown:
            raise ValidationError(f"unknown capabilities {sorted(unknown)}")
        if self.transport not in TRANSPORTS:
            raise ValidationError(f"unknown transport {self.transport!r}")
        if self.role == "reward" and "reward" not in self.capabilities:
            raise ValidationError("reward endpoints must expose the reward capability")
        if self.role == "student" and not {"generate", "logprobs"} <= set(self.capabilities):
            raise ValidationError("student endpoints must expose generate and logprobs")

    def supports(self, capability: str) -> bool:
        return capability in self.capabilities
