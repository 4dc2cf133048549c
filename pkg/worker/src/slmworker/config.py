"""Worker configuration."""

from __future__ import annotations

from dataclasses import dataclass, field

ALL_CAPABILITIES = ("generate", "logprobs", "grad_embedding", "finetune", "reward")


@dataclass
class WorkerConfig:
    model_id: str = "tiny-byte-lm"
    device: str = "cpu"
    capabilities: tuple[str, ...] = ALL_CAPABILITIES
    port: int = 8071
    seed: int = 0
    d_model: int = 32
    n_heads: int = 2
    n_layers: int = 2
    d_ff: int = 64
    max_context: int = 512
    adapter_defaults: dict = field(default_factory=dict)

    def __post_init__(self):
        unknown = set(self.capabilities) - set(ALL_CAPABILITIES)
        if unknown:
            raise ValueError(f"unknown capabilities: {sorted(unknown)}")
