"""HTTP service exposing the model behind the engine's wire protocol.

Routes: POST /v1/chat/completions (generate, logprobs, echo_logprobs),
POST /grad_embedding, POST /finetune, POST /reward, GET /health. See
PROTOCOL.md for the field-for-field contract. Capabilities not listed in the
worker config answer 501.

Concurrency: a single lock serializes fine-tuning against everything else,
so at most one fine-tune is in flight and generation requests queue behind
it rather than reading half-swapped weights.
"""

from __future__ import annotations

import threading
import time
from typing import Optional

import torch
from fastapi import FastAPI, HTTPException
from pydantic import BaseModel, Field

from .config import WorkerConfig
from .finetune import DEFAULT_HYPERPARAMS, run_finetune
from .model import TinyCausalLM


class ChatMessage(BaseModel):
    role: str
    content: str


class ChatCompletionRequest(BaseModel):
    model: Optional[str] = None
    messages: list[ChatMessage]
    temperature: float = 0.0
    max_tokens: int = Field(default=128, ge=0)
    logprobs: bool = False
    seed: Optional[int] = None
    echo_logprobs: bool = False


class PairRequest(BaseModel):
    question: str
    answer: str


class FinetunePair(BaseModel):
    question: str
    answer: str


class FinetuneRequest(BaseModel):
    samples: list[FinetunePair]
    validation: list[FinetunePair] = []
    hyperparams: dict = {}
    seed: int = 0


class WorkerState:
    def __init__(self, config: WorkerConfig):
        self.config = config
        self.base_model = TinyCausalLM(
            d_model=config.d_model, n_heads=config.n_heads, n_layers=config.n_layers,
            d_ff=config.d_ff, max_context=config.max_context, seed=config.seed,
        )
        self.base_model.eval()
        self.active_model = self.base_model
        self.active_handle = "base"
        self.lock = threading.Lock()


def _prompt_text(messages: list[ChatMessage]) -> str:
    return "\n".join(m.content for m in messages)


def build_app(config: Optional[WorkerConfig] = None) -> FastAPI:
    config = config or WorkerConfig()
    state = WorkerState(config)
    app = FastAPI(title="slmworker", version="0.1.0")
    app.state.worker = state

    def need(capability: str) -> None:
        if capability not in config.capabilities:
            raise HTTPException(status_code=501, detail=f"capability {capability!r} not served")

    @app.get("/health")
    def health():
        return {
            "capabilities": sorted(config.capabilities),
            "model": config.model_id,
            "max_context": config.max_context,
            "vocab_size": state.base_model.tokenizer.vocab_size,
            "hidden_size": state.base_model.hidden_size,
            "hidden_rep": "pre_head",
            "active_adapter": state.active_handle,
        }

    @app.post("/v1/chat/completions")
    def chat_completions(request: ChatCompletionRequest):
        if not request.messages:
            raise HTTPException(status_code=400, detail="messages must be non-empty")
        if request.echo_logprobs:
            need("logprobs")
            if request.messages[-1].role != "assistant":
                raise HTTPException(
                    status_code=400,
                    detail="echo_logprobs scores the final assistant message; none present",
                )
            question = _prompt_text(request.messages[:-1])
            answer = request.messages[-1].content
            if not answer:
                raise HTTPException(status_code=400, detail="assistant message is empty")
            with state.lock:
                entries = state.active_model.answer_logprobs(question, answer)
            text = answer
            prompt_tokens = len(state.active_model.tokenizer.encode(question)) + 1
            completion_tokens = len(entries)
        else:
            need("generate")
            if request.logprobs:
                need("logprobs")
            prompt = _prompt_text(request.messages)
            with state.lock:
                text, entries = state.active_model.generate(
                    prompt, max_new_tokens=request.max_tokens,
                    temperature=request.temperature, seed=request.seed,
                )
            prompt_tokens = len(state.active_model.tokenizer.encode(prompt)) + 1
            completion_tokens = len(entries)

        choice = {
            "index": 0,
            "message": {"role": "assistant", "content": text},
            "finish_reason": "stop",
        }
        if request.logprobs or request.echo_logprobs:
            choice["logprobs"] = {
                "content": [
                    {"token": token, "logprob": min(0.0, logprob)}
                    for token, logprob in entries
                ]
            }
        return {
            "id": f"cmpl-{int(time.time() * 1000) % 10**10}",
            "object": "chat.completion",
            "model": config.model_id,
            "choices": [choice],
            "usage": {
                "prompt_tokens": prompt_tokens,
                "completion_tokens": completion_tokens,
                "total_tokens": prompt_tokens + completion_tokens,
            },
        }

    @app.post("/reward")
    def reward(request: PairRequest):
        need("reward")
        if not request.answer:
            raise HTTPException(status_code=400, detail="answer must be non-empty")
        with state.lock, torch.no_grad():
            loss = float(state.active_model.answer_loss(request.question, request.answer))
        return {"score": -loss}

    @app.post("/grad_embedding")
    def grad_embedding(request: PairRequest):
        need("grad_embedding")
        if not request.answer:
            raise HTTPException(status_code=400, detail="answer must be non-empty")
        with state.lock:
            vector = state.active_model.grad_embedding(request.question, request.answer)
        return {
            "vector": [float(v) for v in vector],
            "vocab_size": state.base_model.tokenizer.vocab_size,
            "hidden_size": state.base_model.hidden_size,
        }

    @app.post("/finetune")
    def finetune(request: FinetuneRequest):
        need("finetune")
        if not request.samples:
            raise HTTPException(status_code=400, detail="training set must be non-empty")
        hyperparams = dict(DEFAULT_HYPERPARAMS)
        hyperparams.update(config.adapter_defaults)
        hyperparams.update(request.hyperparams)
        with state.lock:  # single in-flight fine-tune; inference queues behind
            result = run_finetune(
                state.base_model,
                [(p.question, p.answer) for p in request.samples],
                [(p.question, p.answer) for p in request.validation],
                hyperparams,
                seed=request.seed,
            )
            result.model.eval()
            state.active_model = result.model
            state.active_handle = result.handle
        return {
            "handle": result.handle,
            "best_val_loss": result.best_val_loss,
            "final_train_loss": result.final_train_loss,
            "epochs_run": result.epochs_run,
        }

    return app
