"""Adapter SFT with checkpoint-on-best-validation.

Training always begins from the pristine base weights with freshly
initialized adapters, never warm-started from an earlier fine-tune. The
learning rate warms up for the configured fraction of total steps and then
decays linearly to zero, or along a cosine to the configured floor. After
every epoch the validation loss is measured and the best adapter state is
the one returned.
"""

from __future__ import annotations

import copy
import hashlib
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import torch

from .lora import attach_adapters
from .model import TinyCausalLM


@dataclass
class FinetuneResult:
    model: TinyCausalLM
    handle: str
    best_val_loss: float
    final_train_loss: float
    epochs_run: int


DEFAULT_HYPERPARAMS = {
    "adapter_rank": 4,
    "learning_rate": 5e-3,
    "epochs": 4,
    "batch_size": 24,
    "grad_accum_steps": 2,
    "grad_norm_clip": 2.0,
    "warmup_fraction": 0.15,
    "schedule": "linear",
    "min_lr": 1e-9,
}


def _mean_loss(model: TinyCausalLM, pairs: Sequence[tuple[str, str]]) -> float:
    with torch.no_grad():
        losses = [model.answer_loss(q, a) for q, a in pairs]
    return float(torch.stack(losses).mean())


def run_finetune(
    base_model: TinyCausalLM,
    samples: Sequence[tuple[str, str]],
    validation: Sequence[tuple[str, str]],
    hyperparams: Optional[dict] = None,
    seed: int = 0,
) -> FinetuneResult:
    if not samples:
        raise ValueError("training set must be non-empty")
    hp = dict(DEFAULT_HYPERPARAMS)
    hp.update(hyperparams or {})
    rank = int(hp["adapter_rank"])
    epochs = int(hp["epochs"])
    batch_size = max(1, int(hp["batch_size"]))
    accum = max(1, int(hp["grad_accum_steps"]))

    torch.manual_seed(seed)
    model = copy.deepcopy(base_model)
    trainable = attach_adapters(model, rank, seed=seed)
    optimizer = torch.optim.Adam(trainable, lr=float(hp["learning_rate"]))

    micro_per_epoch = math.ceil(len(samples) / batch_size)
    steps_per_epoch = math.ceil(micro_per_epoch / accum)
    total_steps = max(1, epochs * steps_per_epoch)
    warmup_steps = int(float(hp["warmup_fraction"]) * total_steps)
    floor = float(hp["min_lr"]) / float(hp["learning_rate"])

    def lr_factor(step: int) -> float:
        if warmup_steps and step < warmup_steps:
            return (step + 1) / warmup_steps
        span = max(1, total_steps - warmup_steps)
        progress = min(1.0, (step - warmup_steps) / span)
        if hp["schedule"] == "cosine_to_min":
            return floor + (1.0 - floor) * 0.5 * (1.0 + math.cos(math.pi * progress))
        return max(0.0, 1.0 - progress)

    scheduler = torch.optim.lr_scheduler.LambdaLR(optimizer, lr_factor)
    holdout = validation if validation else samples
    best_val = _mean_loss(model, holdout)
    best_state = copy.deepcopy(model.state_dict())
    shuffler = torch.Generator()
    shuffler.manual_seed(seed)

    final_train_loss = best_val
    step_in_accum = 0
    for _epoch in range(epochs):
        order = torch.randperm(len(samples), generator=shuffler).tolist()
        epoch_losses = []
        optimizer.zero_grad()
        for micro_start in range(0, len(order), batch_size):
            batch = [samples[i] for i in order[micro_start: micro_start + batch_size]]
            loss = torch.stack([model.answer_loss(q, a) for q, a in batch]).mean()
            (loss / accum).backward()
            epoch_losses.append(float(loss.detach()))
            step_in_accum += 1
            if step_in_accum % accum == 0:
                torch.nn.utils.clip_grad_norm_(trainable, float(hp["grad_norm_clip"]))
                optimizer.step()
                scheduler.step()
                optimizer.zero_grad()
        if step_in_accum % accum != 0:
            torch.nn.utils.clip_grad_norm_(trainable, float(hp["grad_norm_clip"]))
            optimizer.step()
            scheduler.step()
            optimizer.zero_grad()
            step_in_accum = 0
        final_train_loss = sum(epoch_losses) / len(epoch_losses)
        val_loss = _mean_loss(model, holdout)
        if val_loss < best_val:
            best_val = val_loss
            best_state = copy.deepcopy(model.state_dict())

    model.load_state_dict(best_state)
    digest = hashlib.sha256(
        f"{rank}|{seed}|{len(samples)}|{epochs}|{best_val:.10f}".encode()
    ).hexdigest()[:8]
    handle = f"adapter-r{rank}-seed{seed}-{digest}"
    return FinetuneResult(
        model=model,
        handle=handle,
        best_val_loss=best_val,
        final_train_loss=final_train_loss,
        epochs_run=epochs,
    )
