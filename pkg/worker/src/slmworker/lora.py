"""Low-rank adapters for the worker's linear layers.

Every fine-tune starts from a fresh adapter on pristine base weights: the
base matrices are frozen, B starts at zero so the adapted model is exactly
the base model at step zero, and alpha is tied to the rank so the update
scale is rank-independent.
"""

from __future__ import annotations

import torch
import torch.nn as nn


class LoRALinear(nn.Module):
    def __init__(self, base: nn.Linear, rank: int, seed: int = 0):
        super().__init__()
        self.base = base
        for parameter in self.base.parameters():
            parameter.requires_grad_(False)
        generator = torch.Generator()
        generator.manual_seed(seed)
        self.down = nn.Parameter(
            torch.randn(rank, base.in_features, generator=generator) / rank
        )
        self.up = nn.Parameter(torch.zeros(base.out_features, rank))
        self.scale = 1.0  # alpha tied to rank

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.base(x) + self.scale * (x @ self.down.t() @ self.up.t())


def attach_adapters(model: nn.Module, rank: int, seed: int = 0) -> list[nn.Parameter]:
    """Wrap every plain linear layer in the model; returns trainable params."""
    trainable: list[nn.Parameter] = []
    counter = 0
    for module in list(model.modules()):
        for name, child in list(module.named_children()):
            if isinstance(child, nn.Linear):
                adapted = LoRALinear(child, rank, seed=seed * 100_003 + counter)
                counter += 1
                setattr(module, name, adapted)
                trainable.extend([adapted.down, adapted.up])
    return trainable
