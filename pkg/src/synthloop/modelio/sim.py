"""Deterministic simulated backends for desk-scale runs.

The simulated world gives every question a latent difficulty and topic, and
the student a per-topic mastery level. The student answers a question
correctly exactly when its topic mastery meets the difficulty; the
probability the world assigns that outcome is logistic in (mastery -
difficulty), which drives loss and logprob scores. Training on a sample
nudges the topic mastery upward, most strongly for difficulties sitting just
above current mastery, so data that is hard but learnable teaches most.

Questions minted by this module embed their parameters in the text itself
("sim task <tok>: ... <<d=0.431072 k=2>>"), which keeps every simulated
operation a pure function of its inputs: no hidden registry, trivial resume.
Arbitrary question text falls back to hash-derived parameters.

The simulated teacher answers any question correctly and, when asked to
rewrite an exemplar into a new question, mints a child whose difficulty is
the parent's plus clipped Gaussian noise. That single noise knob reproduces
the qualitative fidelity pattern this engine's analysis suite measures:
dataset-level score medians track closely across generation while individual
parent/child scores correlate only weakly.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from fractions import Fraction
from typing import Optional, Sequence

from ..corpus import Corpus, Sample
from ..errors import ValidationError
from ..util import rng_from, stable_float01, stable_token, stable_u64
from . import wire
from .types import ChatRequest, ChatResponse, FinetuneHyperparams, TokenUsage

MARKER_RE = re.compile(r"<<d=([0-9.]+) k=([0-9]+)>>")
TASK_TOKEN_RE = re.compile(r"sim task ([0-9a-f]+)")

SIM_VOCAB = 8          # output-head vocabulary for gradient features
SIM_HIDDEN = 4         # hidden width feeding the output head

_FILLER_WORDS = (
    "apples bridges candles drums engines ferns gears harbors islands jars "
    "kites lanterns mirrors nests orchards pebbles quilts ribbons saddles tents "
    "urns valves wagons xylems yards zephyrs anchors beacons cabins dunes "
    "embers fjords groves hollows inlets jetties knolls lagoons meadows notches "
    "oases prairies quarries reefs shoals thickets uplands vales wharves yurts "
    "acres bluffs coves dells eddies flats glens heaths isles knobs ledges "
    "marshes"
).split()


def _logistic(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


@dataclass(frozen=True)
class StudentState:
    """Opaque handle for a simulated student checkpoint."""

    mastery: tuple[float, ...]

    @property
    def id(self) -> str:
        return "sim-" + stable_token(*[f"{m:.12f}" for m in self.mastery], length=12)


@dataclass
class SimWorld:
    """Shared world state for one family of simulated endpoints."""

    seed: int = 0
    topics: int = 4
    steepness: float = 8.0            # logistic slope for P(correct)
    learn_rate: float = 0.04          # per-sample mastery step
    bump_center: float = 0.08         # most-teachable gap above current mastery
    bump_width: float = 0.12
    gen_noise: float = 0.1            # teacher child-difficulty noise
    reward_noise: float = 0.05
    base_mastery: float = 0.15
    uniform_vocab: Optional[int] = None   # analytic override for token probs

    def base_state(self) -> StudentState:
        return StudentState(mastery=(self.base_mastery,) * self.topics)

    # -- question parameterization ------------------------------------------

    def question_params(self, question: str) -> tuple[float, int]:
        match = None
        for match in MARKER_RE.finditer(question):
            pass
        if match is not None:
            delta = min(1.0, max(0.0, float(match.group(1))))
            topic = int(match.group(2)) % self.topics
            return delta, topic
        delta = stable_float01("delta", self.seed, question)
        topic = stable_u64("topic", self.seed, question) % self.topics
        return delta, topic

    def question_token(self, text: str) -> str:
        """Identity token of the last simulated question mentioned in text."""
        match = None
        for match in TASK_TOKEN_RE.finditer(text):
            pass
        if match is not None:
            return match.group(1)
        return stable_token("qtok", text)

    def make_question(self, token: str, delta: float, topic: int) -> str:
        # Filler words keep question token sets diverse, so the ROUGE-based
        # near-duplicate filter behaves the way it does on natural text.
        words = " ".join(
            _FILLER_WORDS[stable_u64("filler", token, i) % len(_FILLER_WORDS)]
            for i in range(8)
        )
        return f"sim task {token}: {words} <<d={delta:.6f} k={topic}>>"

    def correct_answer(self, question: str) -> str:
        token = self.question_token(question)
        return f"Working through it step by step, the result is \\boxed{{ans-{token}}}."

    def incorrect_answer(self, question: str) -> str:
        token = self.question_token(question)
        return f"My best guess is \\boxed{{guess-{token}}}."

    def p_correct(self, state: StudentState, question: str) -> float:
        delta, topic = self.question_params(question)
        return _logistic(self.steepness * (state.mastery[topic] - delta))

    # -- student dynamics ----------------------------------------------------

    def greedy_answer(self, state: StudentState, question: str) -> str:
        delta, topic = self.question_params(question)
        if state.mastery[topic] >= delta:
            return self.correct_answer(question)
        return self.incorrect_answer(question)

    def answer_branch_prob(self, state: StudentState, question: str, answer: str) -> float:
        """Probability mass the world puts on the given answer string."""
        p = self.p_correct(state, question)
        if answer == self.correct_answer(question):
            return p
        return 1.0 - p

    def token_logprobs(self, state: StudentState, question: str, answer: str):
        tokens = answer.split()
        if self.uniform_vocab is not None:
            lp = -math.log(self.uniform_vocab)
            return tuple((tok, lp) for tok in tokens)
        p = self.answer_branch_prob(state, question, answer)
        lp = math.log(p) if p > 0 else -745.0
        return tuple((tok, lp) for tok in tokens)

    def grad_arrays(self, state: StudentState, question: str, answer: str):
        """Per-position (distribution, target index, hidden vector) triples
        for the toy softmax head, feeding the gradient-embedding closed form."""
        tokens = answer.split()
        p_tok = self.answer_branch_prob(state, question, answer)
        p_tok = min(max(p_tok, 1e-9), 1.0 - 1e-9)
        probs, targets, hiddens = [], [], []
        for j, tok in enumerate(tokens):
            target = stable_u64("target", tok) % SIM_VOCAB
            row = [(1.0 - p_tok) / (SIM_VOCAB - 1)] * SIM_VOCAB
            row[target] = p_tok
            rng = rng_from("hidden", self.seed, question, j)
            hidden = rng.uniform(-1.0, 1.0, size=SIM_HIDDEN).tolist()
            probs.append(row)
            targets.append(target)
            hiddens.append(hidden)
        return probs, targets, hiddens

    def finetune(
        self,
        train: Corpus,
        validation: Optional[Corpus],
        hp: FinetuneHyperparams,
        seed: int = 0,
    ) -> StudentState:
        """Fresh-start training: always from base mastery, never warm-started.

        Keeps the per-epoch mastery snapshot that scores best on validation,
        mirroring checkpoint-on-best-validation selection.
        """
        if len(train) == 0:
            raise ValidationError("training corpus must be non-empty")
        mastery = list(self.base_state().mastery)
        best = tuple(mastery)
        best_score = self._validation_accuracy(best, validation)
        for _ in range(hp.epochs):
            for sample in train:
                delta, topic = self.question_params(sample.question)
                gap = delta - mastery[topic]
                bump = math.exp(-((gap - self.bump_center) ** 2) / (2 * self.bump_width**2))
                mastery[topic] = min(
                    1.0, mastery[topic] + self.learn_rate * bump * (1.0 - mastery[topic])
                )
            snapshot = tuple(mastery)
            score = self._validation_accuracy(snapshot, validation)
            if score > best_score:
                best, best_score = snapshot, score
        return StudentState(mastery=best)

    def _validation_accuracy(self, mastery: tuple[float, ...], validation) -> float:
        if validation is None or len(validation) == 0:
            # No validation set: prefer the final epoch.
            return sum(mastery)
        state = StudentState(mastery=mastery)
        hits = 0
        for sample in validation:
            if self.greedy_answer(state, sample.question) == self.correct_answer(sample.question):
                hits += 1
        return hits / len(validation)

    # -- teacher and reward -------------------------------------------------

    def reward(self, question: str, answer: str) -> float:
        delta, _ = self.question_params(question)
        noise = 0.0
        if self.reward_noise > 0:
            rng = rng_from("reward", self.seed, question, answer)
            noise = self.reward_noise * rng.standard_normal()
        return -delta + noise

    def child_question(self, exemplar_question: str, call_seed: int) -> str:
        delta, topic = self.question_params(exemplar_question)
        rng = rng_from("child", self.seed, exemplar_question, call_seed)
        child_delta = min(1.0, max(0.0, delta + self.gen_noise * rng.standard_normal()))
        token = stable_token("childq", self.seed, exemplar_question, call_seed)
        return self.make_question(token, child_delta, topic)


def make_sim_corpus(
    n: int,
    seed: int,
    role: str = "seed",
    world: Optional[SimWorld] = None,
    id_prefix: str = "seed",
) -> Corpus:
    """Mint a corpus of simulated questions with uniform difficulties and
    the world's designated correct answers as ground truth."""
    world = world or SimWorld(seed=seed)
    rng = rng_from("corpus", seed, role, n)
    samples = []
    for i in range(n):
        delta = float(rng.uniform(0.0, 1.0))
        topic = int(rng.integers(0, world.topics))
        token = stable_token("q", seed, role, i)
        question = world.make_question(token, delta, topic)
        samples.append(
            Sample(
                id=f"{id_prefix}-{i:05d}",
                question=question,
                answer=world.correct_answer(question),
                origin="seed",
                iteration=0,
            )
        )
    return Corpus(role=role, samples=tuple(samples))


class SimBackend:
    """One simulated endpoint attached to a shared world.

    Responses round-trip through the wire encoding so the simulator exercises
    exactly the schema remote workers must emit.
    """

    def __init__(self, world: SimWorld, role: str, state: Optional[StudentState] = None):
        self.world = world
        self.role = role
        self.state = state or world.base_state()
        self.model_name = f"sim-{role}"

    # Transport-level entry point used by ops.chat.
    def complete(self, request: ChatRequest) -> ChatResponse:
        prompt = request.prompt_text()
        text = self._respond(prompt, request)
        logprobs = None
        if request.want_logprobs:
            logprobs = self.world.token_logprobs(self.state, prompt, text)
        usage = TokenUsage(len(prompt.split()), len(text.split()))
        response = ChatResponse(text=text, usage=usage, token_logprobs=logprobs)
        payload = wire.build_response_payload(response, self.model_name)
        return wire.parse_chat_response(payload, prompt, request.want_logprobs)

    def _respond(self, prompt: str, request: ChatRequest) -> str:
        if self.role == "student":
            return self.world.greedy_answer(self.state, prompt)
        return self._teacher_respond(prompt, request)

    def _teacher_respond(self, prompt: str, request: ChatRequest) -> str:
        call_seed = request.seed if request.seed is not None else 0
        if "backward thinking method" in prompt:
            return _backward_24(prompt, self.world.seed, call_seed)
        if "Provide the steps to obtain the final answer" in prompt:
            return _reasoning_steps(prompt)
        if "[The Start of Assistant 1's Answer]" in prompt:
            return self._judge(prompt)
        if "#Rewritten Instruction#:" in prompt:
            exemplar = _last_given_instruction(prompt)
            return self.world.child_question(exemplar, call_seed)
        # Answer mode: respond to the last simulated question in the prompt.
        token = self.world.question_token(prompt)
        return f"Working through it step by step, the result is \\boxed{{ans-{token}}}."

    def _judge(self, prompt: str) -> str:
        question, answer_1, answer_2 = _parse_judge_prompt(prompt)
        teacher_score = 9 + stable_u64("judge-t", self.world.seed, prompt) % 2
        delta, _ = self.world.question_params(question)
        if answer_2 == self.world.correct_answer(question):
            base = 6.0 + 3.0 * (1.0 - delta)
        else:
            base = 1.0 + 3.0 * (1.0 - delta)
        jitter = stable_float01("judge-s", self.world.seed, prompt) - 0.5
        student_score = int(round(min(10.0, max(1.0, base + jitter))))
        return (
            f"{teacher_score} {student_score}\n"
            "Assistant 1 answers correctly with clear steps; Assistant 2 is scored "
            "on correctness and detail."
        )

    # -- capability routes -----------------------------------------------

    def logprobs(self, question: str, answer: str):
        return self.world.token_logprobs(self.state, question, answer)

    def reward(self, question: str, answer: str) -> float:
        return self.world.reward(question, answer)

    def finetune(self, train, validation, hp, seed=0) -> StudentState:
        self.state = self.world.finetune(train, validation, hp, seed)
        return self.state

    def grad_arrays(self, question: str, answer: str):
        return self.world.grad_arrays(self.state, question, answer)


class ScriptedBackend:
    """Fixed-response backend for exercising parse and error paths."""

    def __init__(self, texts: Sequence[str], model_name: str = "scripted"):
        self.texts = list(texts)
        self.calls = 0
        self.model_name = model_name

    def complete(self, request: ChatRequest) -> ChatResponse:
        text = self.texts[min(self.calls, len(self.texts) - 1)]
        self.calls += 1
        prompt = request.prompt_text()
        usage = TokenUsage(len(prompt.split()), len(text.split()))
        logprobs = None
        if request.want_logprobs:
            logprobs = tuple((tok, -1.0) for tok in text.split())
        response = ChatResponse(text=text, usage=usage, token_logprobs=logprobs)
        payload = wire.build_response_payload(response, self.model_name)
        return wire.parse_chat_response(payload, prompt, request.want_logprobs)


# -- simulated teacher helpers ------------------------------------------------


def _last_given_instruction(prompt: str) -> str:
    head, _, _ = prompt.rpartition("#Rewritten Instruction#:")
    _, _, block = head.rpartition("#Given Instruction#:")
    return block.strip()


def _parse_judge_prompt(prompt: str) -> tuple[str, str, str]:
    def between(text: str, start: str, end: str) -> str:
        _, _, rest = text.partition(start)
        body, _, _ = rest.partition(end)
        return body.strip()

    question = between(prompt, "[Question]", "[The Start of Assistant 1's Answer]")
    answer_1 = between(prompt, "[The Start of Assistant 1's Answer]", "[The End of Assistant 1's Answer]")
    answer_2 = between(prompt, "[The Start of Assistant 2's Answer]", "[The End of Assistant 2's Answer]")
    return question, answer_1, answer_2


def _reasoning_steps(prompt: str) -> str:
    _, _, rest = prompt.partition("Here is the final answer:")
    expression = rest.partition("\n")[0].strip().rstrip(".")
    return (
        "Steps:\ncombine the numbers two at a time until 24 remains.\n"
        f"Answer: {expression} = 24\n\\boxed{{{expression}}}"
    )


def _backward_24(prompt: str, world_seed: int, call_seed: int) -> str:
    """Backward reasoning on the solution quoted in the prompt: pick two
    distinct literals a and b, fix a new integer b, and solve for a so the
    expression still evaluates to 24."""
    _, _, rest = prompt.partition("Here is the current solution")
    solution = rest.partition("again")[0].strip().rstrip(".").strip()
    literals = re.findall(r"\d+", solution)
    distinct = sorted(set(literals), key=int)
    if len(distinct) < 2:
        return "\\boxed{null}"
    rng = rng_from("backward", world_seed, solution, call_seed)
    pairs = [(a, b) for a in distinct for b in distinct if a != b]
    rng.shuffle(pairs)
    for a_lit, b_lit in pairs:
        for b_new in rng.permutation(range(1, 14)).tolist():
            candidate = _substitute_once(solution, a_lit, "@A@")
            candidate = _substitute_once(candidate, b_lit, str(b_new))
            a_new = _solve_for_hole(candidate)
            if a_new is None:
                continue
            if a_new == int(a_lit) and b_new == int(b_lit):
                continue
            expression = candidate.replace("@A@", str(a_new))
            return f"Backward substitution gives a={a_new}, b={b_new}. \\boxed{{{expression}}}"
    return "\\boxed{null}"


def _substitute_once(expression: str, literal: str, replacement: str) -> str:
    return re.sub(rf"(?<![0-9]){re.escape(literal)}(?![0-9])", replacement, expression, count=1)


def _solve_for_hole(template: str) -> Optional[int]:
    """Find a positive integer for @A@ making the expression equal 24."""
    from ..verify import evaluate_expression  # local import avoids a cycle

    for value in range(1, 200):
        try:
            result = evaluate_expression(template.replace("@A@", str(value)))
        except (ValidationError, ZeroDivisionError):
            return None
        if result == Fraction(24):
            return value
    return None
