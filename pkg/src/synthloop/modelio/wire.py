"""OpenAI-compatible chat-completions wire format, plus the extension fields
this engine relies on.

One protocol drives every remote role. Extensions beyond the stock API:

* ``echo_logprobs: true`` - the final assistant message is scored instead of
  generated; the response carries one logprob entry per token of that message
  and ``max_tokens`` is ignored.
* reward endpoints are served as ``POST /reward`` with ``{question, answer}``
  returning ``{"score": float}``.

``validate_chat_response`` is the conformance check shared by the simulator
and any worker implementation: both must emit payloads that pass it.
"""

from __future__ import annotations

from ..errors import ProtocolError
from .types import ChatRequest, ChatResponse, TokenUsage


def build_chat_payload(request: ChatRequest, model: str, echo_logprobs: bool = False) -> dict:
    payload = {
        "model": model,
        "messages": [{"role": role, "content": text} for role, text in request.messages],
        "temperature": request.temperature,
        "max_tokens": request.max_output_tokens,
    }
    if request.want_logprobs or echo_logprobs:
        payload["logprobs"] = True
    if request.seed is not None:
        payload["seed"] = request.seed
    if echo_logprobs:
        payload["echo_logprobs"] = True
    return payload


def validate_chat_response(payload: dict) -> None:
    """Field-for-field schema check; raises ProtocolError naming the defect."""
    if not isinstance(payload, dict):
        raise ProtocolError("chat response must be a JSON object")
    choices = payload.get("choices")
    if not isinstance(choices, list) or not choices:
        raise ProtocolError("chat response missing non-empty 'choices'")
    choice = choices[0]
    if not isinstance(choice, dict):
        raise ProtocolError("choices[0] must be an object")
    message = choice.get("message")
    if not isinstance(message, dict) or not isinstance(message.get("content"), str):
        raise ProtocolError("choices[0].message.content must be a string")
    logprobs = choice.get("logprobs")
    if logprobs is not None:
        content = logprobs.get("content") if isinstance(logprobs, dict) else None
        if not isinstance(content, list):
            raise ProtocolError("choices[0].logprobs.content must be a list")
        for i, entry in enumerate(content):
            if not isinstance(entry, dict):
                raise ProtocolError(f"logprobs.content[{i}] must be an object")
            if not isinstance(entry.get("token"), str):
                raise ProtocolError(f"logprobs.content[{i}].token must be a string")
            lp = entry.get("logprob")
            if not isinstance(lp, (int, float)):
                raise ProtocolError(f"logprobs.content[{i}].logprob must be a number")
            if lp > 0:
                raise ProtocolError(f"logprobs.content[{i}].logprob must be <= 0")
    usage = payload.get("usage")
    if usage is not None:
        if not isinstance(usage, dict):
            raise ProtocolError("usage must be an object")
        for key in ("prompt_tokens", "completion_tokens"):
            value = usage.get(key)
            if not isinstance(value, int) or value < 0:
                raise ProtocolError(f"usage.{key} must be a non-negative integer")


def parse_chat_response(payload: dict, prompt_text: str, want_logprobs: bool) -> ChatResponse:
    """Validate and convert a wire payload. Missing usage falls back to an
    approximate whitespace token count, flagged as such."""
    validate_chat_response(payload)
    choice = payload["choices"][0]
    text = choice["message"]["content"]
    logprob_entries = None
    logprobs = choice.get("logprobs")
    if logprobs is not None:
        logprob_entries = tuple(
            (entry["token"], float(entry["logprob"])) for entry in logprobs["content"]
        )
    if want_logprobs and logprob_entries is None:
        raise ProtocolError("logprobs requested but absent from response")
    usage = payload.get("usage")
    if usage is not None:
        token_usage = TokenUsage(int(usage["prompt_tokens"]), int(usage["completion_tokens"]))
    else:
        token_usage = TokenUsage(len(prompt_text.split()), len(text.split()), approximate=True)
    return ChatResponse(text=text, usage=token_usage, token_logprobs=logprob_entries)


def build_response_payload(response: ChatResponse, model: str) -> dict:
    """Encode a response the way a server would; the simulator round-trips
    through this so sim and workers share one schema."""
    choice = {
        "index": 0,
        "message": {"role": "assistant", "content": response.text},
        "finish_reason": "stop",
    }
    if response.token_logprobs is not None:
        choice["logprobs"] = {
            "content": [
                {"token": token, "logprob": logprob}
                for token, logprob in response.token_logprobs
            ]
        }
    return {
        "object": "chat.completion",
        "model": model,
        "choices": [choice],
        "usage": {
            "prompt_tokens": response.usage.input_tokens,
            "completion_tokens": response.usage.output_tokens,
            "total_tokens": response.usage.input_tokens + response.usage.output_tokens,
        },
    }


def validate_reward_response(payload: dict) -> None:
    if not isinstance(payload, dict) or not isinstance(payload.get("score"), (int, float)):
        raise ProtocolError("reward response must carry a numeric 'score'")


def validate_grad_embedding_response(payload: dict) -> None:
    if not isinstance(payload, dict):
        raise ProtocolError("grad_embedding response must be a JSON object")
    vector = payload.get("vector")
    if not isinstance(vector, list) or not all(isinstance(v, (int, float)) for v in vector):
        raise ProtocolError("grad_embedding response must carry a numeric 'vector'")


def validate_health_response(payload: dict) -> None:
    if not isinstance(payload, dict):
        raise ProtocolError("health response must be a JSON object")
    caps = payload.get("capabilities")
    if not isinstance(caps, list) or not all(isinstance(c, str) for c in caps):
        raise ProtocolError("health response must list string 'capabilities'")
    if not isinstance(payload.get("model"), str):
        raise ProtocolError("health response must name the served 'model'")
