"""A small byte-level causal language model.

Deliberately tiny: the worker's job is to serve real model mechanics
(teacher-forced logprobs, output-head gradient features, adapter training)
behind the wire protocol, not to be a capable assistant. Byte-level
tokenization keeps the vocabulary fixed and every string encodable.
"""

from __future__ import annotations

import math
from typing import Optional

import torch
import torch.nn as nn
import torch.nn.functional as F

BOS = 256
EOS = 257
PAD = 258
VOCAB_SIZE = 259


class ByteTokenizer:
    vocab_size = VOCAB_SIZE

    def encode(self, text: str) -> list[int]:
        return list(text.encode("utf-8"))

    def decode(self, ids: list[int]) -> str:
        return bytes(i for i in ids if i < 256).decode("utf-8", errors="replace")

    def token_str(self, token_id: int) -> str:
        if token_id < 256:
            return bytes([token_id]).decode("latin-1")
        return {BOS: "<bos>", EOS: "<eos>", PAD: "<pad>"}[token_id]


class Attention(nn.Module):
    """Causal multi-head self-attention with explicit linear projections so
    adapters can wrap every weight matrix."""

    def __init__(self, d_model: int, n_heads: int):
        super().__init__()
        assert d_model % n_heads == 0
        self.n_heads = n_heads
        self.d_head = d_model // n_heads
        self.q = nn.Linear(d_model, d_model)
        self.k = nn.Linear(d_model, d_model)
        self.v = nn.Linear(d_model, d_model)
        self.o = nn.Linear(d_model, d_model)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        t, d = x.shape
        def split(mat):
            return mat.view(t, self.n_heads, self.d_head).transpose(0, 1)
        q, k, v = split(self.q(x)), split(self.k(x)), split(self.v(x))
        scores = (q @ k.transpose(-1, -2)) / math.sqrt(self.d_head)
        mask = torch.triu(torch.ones(t, t, dtype=torch.bool, device=x.device), diagonal=1)
        scores = scores.masked_fill(mask, float("-inf"))
        mixed = torch.softmax(scores, dim=-1) @ v
        return self.o(mixed.transpose(0, 1).reshape(t, d))


class Block(nn.Module):
    def __init__(self, d_model: int, n_heads: int, d_ff: int):
        super().__init__()
        self.ln1 = nn.LayerNorm(d_model)
        self.attn = Attention(d_model, n_heads)
        self.ln2 = nn.LayerNorm(d_model)
        self.ff1 = nn.Linear(d_model, d_ff)
        self.ff2 = nn.Linear(d_ff, d_model)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = x + self.attn(self.ln1(x))
        return x + self.ff2(F.gelu(self.ff1(self.ln2(x))))


class TinyCausalLM(nn.Module):
    def __init__(self, d_model: int = 32, n_heads: int = 2, n_layers: int = 2,
                 d_ff: int = 64, max_context: int = 512, seed: int = 0):
        super().__init__()
        torch.manual_seed(seed)
        self.d_model = d_model
        self.max_context = max_context
        self.tok_emb = nn.Embedding(VOCAB_SIZE, d_model)
        self.pos_emb = nn.Embedding(max_context, d_model)
        self.blocks = nn.ModuleList(Block(d_model, n_heads, d_ff) for _ in range(n_layers))
        self.ln_f = nn.LayerNorm(d_model)
        self.head = nn.Linear(d_model, VOCAB_SIZE, bias=False)
        self.tokenizer = ByteTokenizer()

    @property
    def hidden_size(self) -> int:
        return self.d_model

    def backbone(self, ids: torch.Tensor) -> torch.Tensor:
        """Hidden states feeding the output head (post final layer norm)."""
        t = ids.shape[0]
        x = self.tok_emb(ids) + self.pos_emb(torch.arange(t, device=ids.device))
        for block in self.blocks:
            x = block(x)
        return self.ln_f(x)

    def forward(self, ids: torch.Tensor) -> torch.Tensor:
        return self.head(self.backbone(ids))

    # -- sequence helpers ---------------------------------------------------

    def _prompt_ids(self, prompt: str, reserve: int = 0) -> list[int]:
        ids = [BOS] + self.tokenizer.encode(prompt)
        budget = self.max_context - reserve
        return ids[-budget:] if len(ids) > budget else ids

    @torch.no_grad()
    def generate(self, prompt: str, max_new_tokens: int = 64, temperature: float = 0.0,
                 seed: Optional[int] = None) -> tuple[str, list[tuple[str, float]]]:
        """Autoregressive decoding; returns the text and per-token logprobs."""
        reserve = min(max_new_tokens, self.max_context // 2)
        ids = self._prompt_ids(prompt, reserve=reserve)
        generator = torch.Generator()
        generator.manual_seed(seed if seed is not None else 0)
        out_ids: list[int] = []
        entries: list[tuple[str, float]] = []
        for _ in range(max_new_tokens):
            window = ids[-self.max_context:]
            logits = self.forward(torch.tensor(window, dtype=torch.long))[-1]
            logprobs = F.log_softmax(logits, dim=-1)
            if temperature <= 0:
                token = int(torch.argmax(logprobs))
            else:
                probs = torch.softmax(logits / temperature, dim=-1)
                token = int(torch.multinomial(probs, 1, generator=generator))
            if token == EOS:
                break
            ids.append(token)
            out_ids.append(token)
            entries.append((self.tokenizer.token_str(token), float(logprobs[token])))
        return self.tokenizer.decode(out_ids), entries

    def _teacher_forced(self, question: str, answer: str):
        answer_ids = self.tokenizer.encode(answer)
        if not answer_ids:
            raise ValueError("answer must be non-empty")
        prompt_ids = self._prompt_ids(question, reserve=len(answer_ids))
        seq = (prompt_ids + answer_ids)[-self.max_context:]
        start = len(seq) - len(answer_ids)
        ids = torch.tensor(seq, dtype=torch.long)
        return ids, answer_ids, start

    def answer_logprob_tensor(self, question: str, answer: str) -> torch.Tensor:
        """Differentiable per-token logprobs of the answer given the question."""
        ids, answer_ids, start = self._teacher_forced(question, answer)
        logits = self.forward(ids)
        logprobs = F.log_softmax(logits, dim=-1)
        positions = torch.arange(start - 1, start - 1 + len(answer_ids))
        targets = torch.tensor(answer_ids, dtype=torch.long)
        return logprobs[positions, targets]

    @torch.no_grad()
    def answer_logprobs(self, question: str, answer: str) -> list[tuple[str, float]]:
        values = self.answer_logprob_tensor(question, answer)
        answer_ids = self.tokenizer.encode(answer)
        return [
            (self.tokenizer.token_str(token), float(lp))
            for token, lp in zip(answer_ids, values)
        ]

    def answer_loss(self, question: str, answer: str) -> torch.Tensor:
        """Mean next-token cross-entropy over answer tokens (differentiable)."""
        return -self.answer_logprob_tensor(question, answer).mean()

    @torch.no_grad()
    def grad_embedding(self, question: str, answer: str) -> torch.Tensor:
        """Output-head gradient features from a single forward pass.

        Uses the closed form (p - onehot(target)) outer h per answer
        position, averaged over positions; identical to autodiff on the head
        weights of a linear-softmax output layer, orders faster.
        """
        ids, answer_ids, start = self._teacher_forced(question, answer)
        hidden = self.backbone(ids)
        logits = self.head(hidden)
        positions = torch.arange(start - 1, start - 1 + len(answer_ids))
        probs = torch.softmax(logits[positions], dim=-1)
        err = probs.clone()
        err[torch.arange(len(answer_ids)), torch.tensor(answer_ids)] -= 1.0
        grads = err.unsqueeze(-1) * hidden[positions].unsqueeze(1)
        return grads.mean(dim=0).reshape(-1)
