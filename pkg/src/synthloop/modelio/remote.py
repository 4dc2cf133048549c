"""HTTP transport speaking the chat-completions protocol, with retries.

Transient failures (connection errors, 5xx) retry with capped exponential
backoff; 4xx responses surface immediately. Credentials come from the
environment variable named in the endpoint config and are never persisted.
"""

from __future__ import annotations

import os
import time
from dataclasses import dataclass
from typing import Optional

import httpx

from ..errors import CapabilityError, ProtocolError, TransportError
from . import wire
from .types import ChatRequest, ChatResponse, FinetuneHyperparams

RETRY_ATTEMPTS = 3
RETRY_BASE_SECONDS = 1.0
RETRY_MAX_SECONDS = 8.0


@dataclass
class RemoteConfig:
    base_url: str
    model: str = ""
    api_key_env: Optional[str] = None
    timeout_seconds: float = 60.0


class RemoteBackend:
    def __init__(self, config: RemoteConfig, client: Optional[httpx.Client] = None):
        self.config = config
        headers = {}
        if config.api_key_env:
            key = os.environ.get(config.api_key_env)
            if key:
                headers["Authorization"] = f"Bearer {key}"
        self._client = client or httpx.Client(
            base_url=config.base_url, timeout=config.timeout_seconds, headers=headers
        )
        self.model_name = config.model

    def _post(self, path: str, payload: dict) -> dict:
        last_error = None
        for attempt in range(RETRY_ATTEMPTS):
            if attempt:
                time.sleep(min(RETRY_BASE_SECONDS * 2 ** (attempt - 1), RETRY_MAX_SECONDS))
            try:
                response = self._client.post(path, json=payload)
            except httpx.HTTPError as exc:
                last_error = exc
                continue
            if response.status_code == 501:
                raise CapabilityError(f"{path}: capability not served")
            if response.status_code >= 500:
                last_error = TransportError(f"{path}: server error {response.status_code}")
                continue
            if response.status_code >= 400:
                raise TransportError(f"{path}: request rejected {response.status_code}: {response.text[:200]}")
            try:
                return response.json()
            except ValueError as exc:
                raise ProtocolError(f"{path}: response body is not JSON") from exc
        raise TransportError(f"{path}: failed after {RETRY_ATTEMPTS} attempts: {last_error}")

    def complete(self, request: ChatRequest) -> ChatResponse:
        payload = wire.build_chat_payload(request, self.config.model)
        body = self._post("/v1/chat/completions", payload)
        return wire.parse_chat_response(body, request.prompt_text(), request.want_logprobs)

    def logprobs(self, question: str, answer: str) -> list[tuple[str, float]]:
        request = ChatRequest(
            messages=(("user", question), ("assistant", answer)),
            temperature=0.0,
            want_logprobs=True,
        )
        payload = wire.build_chat_payload(request, self.config.model, echo_logprobs=True)
        body = self._post("/v1/chat/completions", payload)
        response = wire.parse_chat_response(body, question, want_logprobs=True)
        return list(response.token_logprobs)

    def reward(self, question: str, answer: str) -> float:
        body = self._post("/reward", {"question": question, "answer": answer})
        wire.validate_reward_response(body)
        return float(body["score"])

    def finetune(self, train, validation, hp: FinetuneHyperparams, seed: int = 0):
        payload = {
            "samples": [{"question": s.question, "answer": s.answer} for s in train],
            "validation": [
                {"question": s.question, "answer": s.answer} for s in (validation or [])
            ],
            "hyperparams": hp.to_dict(),
            "seed": seed,
        }
        body = self._post("/finetune", payload)
        if not isinstance(body, dict) or "handle" not in body:
            raise ProtocolError("/finetune response must carry a 'handle'")
        return RemoteStateHandle(str(body["handle"]))

    def grad_vector(self, question: str, answer: str) -> list[float]:
        body = self._post("/grad_embedding", {"question": question, "answer": answer})
        wire.validate_grad_embedding_response(body)
        return [float(v) for v in body["vector"]]

    def healthcheck(self) -> dict:
        try:
            response = self._client.get("/health")
        except httpx.HTTPError as exc:
            raise TransportError(f"/health: {exc}") from exc
        if response.status_code >= 400:
            raise TransportError(f"/health: status {response.status_code}")
        body = response.json()
        wire.validate_health_response(body)
        return body


def require_capabilities(backend: RemoteBackend, needed) -> dict:
    """Probe /health and refuse before any generation when a needed
    capability is not served."""
    report = backend.healthcheck()
    missing = sorted(set(needed) - set(report["capabilities"]))
    if missing:
        raise CapabilityError(
            f"endpoint {backend.config.base_url} does not serve {missing}; "
            f"health reports {sorted(report['capabilities'])}"
        )
    return report


@dataclass(frozen=True)
class RemoteStateHandle:
    id: str
