"""Teacher-side synthesis: per-dataset prompt rendering with few-shot
exemplars, question-then-answer generation, near-duplicate filtering, and
backward reasoning for arithmetic-24 questions.

Prompt texts are data, not code: they ship as template assets with
``${placeholder}`` slots and are substituted verbatim.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from importlib import resources
from string import Template
from typing import Iterable, Optional, Sequence

from .corpus import Corpus, GenerationRecord, Sample, synthetic_sample_id
from .errors import (
    BudgetExceededError,
    ExtractionError,
    ProtocolError,
    TemplateError,
    TransportError,
    ValidationError,
)
from .modelio.ops import chat
from .modelio.types import ChatRequest, ModelEndpoint
from .util import rng_from
from .verify import expression_literals, extract_boxed, verify_24

DATASET_KINDS = ("gsm8k_style", "math_category_style", "pronto_style", "game24_backward")
REJECT_REASONS = ("duplicate", "verifier_failed", "teacher_error")

_FEW_SHOT_FORMATS = {
    "gsm8k_style": "#Given Instruction#: ${question} #Answer#: ${answer}",
    "math_category_style": (
        "The type of math problem is ${category}. "
        "#Given Instruction#: ${question} #Answer#: ${answer}"
    ),
    "pronto_style": "Context: ${question}",
}

_QUESTION_ASSETS = {
    "gsm8k_style": "gsm8k_question.txt",
    "math_category_style": "math_question.txt",
    "pronto_style": "pronto_question.txt",
    "game24_backward": "game24_backward.txt",
}

_ANSWER_ASSETS = {
    "gsm8k_style": "gsm8k_answer.txt",
    "math_category_style": "math_answer.txt",
    "pronto_style": "pronto_answer.txt",
    "game24_backward": "game24_reasoning.txt",
}


def _asset(name: str) -> str:
    return resources.files("synthloop.templates").joinpath(name).read_text("utf-8")


@dataclass(frozen=True)
class PromptTemplate:
    dataset_kind: str
    question_template: str
    answer_template: str
    few_shot_k: int = 5
    few_shot_format: str = ""

    def __post_init__(self):
        if self.dataset_kind not in DATASET_KINDS:
            raise ValidationError(f"unknown dataset kind {self.dataset_kind!r}")
        if self.few_shot_k < 0:
            raise ValidationError("few_shot_k must be >= 0")


def template_for(dataset_kind: str, few_shot_k: int = 5) -> PromptTemplate:
    return PromptTemplate(
        dataset_kind=dataset_kind,
        question_template=_asset(_QUESTION_ASSETS[dataset_kind]),
        answer_template=_asset(_ANSWER_ASSETS[dataset_kind]),
        few_shot_k=few_shot_k,
        few_shot_format=_FEW_SHOT_FORMATS.get(dataset_kind, ""),
    )


def _substitute(template_text: str, **bindings) -> str:
    try:
        return Template(template_text).substitute(**bindings)
    except KeyError as exc:
        raise TemplateError(f"unbound template placeholder {exc.args[0]!r}") from exc
    except ValueError as exc:
        raise TemplateError(f"malformed template placeholder: {exc}") from exc


@dataclass(frozen=True)
class SynthesisOutcome:
    exemplar_id: str
    question: str
    answer: str
    accepted: bool
    reject_reason: Optional[str] = None

    def __post_init__(self):
        if self.accepted and self.reject_reason is not None:
            raise ValidationError("accepted outcomes cannot carry a reject reason")
        if self.reject_reason is not None and self.reject_reason not in REJECT_REASONS:
            raise ValidationError(f"unknown reject reason {self.reject_reason!r}")


def render_question_prompt(
    template: PromptTemplate, few_shot: Sequence[Sample], exemplar: Sample
) -> ChatRequest:
    """Fully substituted synthetic-question prompt; byte-stable for fixed inputs."""
    bindings = {"question": exemplar.question}
    if template.dataset_kind == "math_category_style":
        category = exemplar.meta.get("category")
        if not category:
            raise TemplateError(
                f"exemplar {exemplar.id!r} lacks the 'category' metadata required "
                "by category-matched prompts"
            )
        for shot in few_shot:
            if shot.meta.get("category") != category:
                raise TemplateError(
                    f"few-shot sample {shot.id!r} is not of category {category!r}"
                )
        bindings["category"] = category
    blocks = []
    for shot in few_shot:
        blocks.append(
            _substitute(
                template.few_shot_format,
                question=shot.question,
                answer=shot.answer,
                category=shot.meta.get("category", ""),
            )
        )
    bindings["examples"] = "\n".join(blocks)
    prompt = _substitute(template.question_template, **bindings)
    return ChatRequest.user(prompt)


def render_answer_prompt(
    template: PromptTemplate, question: str, temperature: float = 0.0,
    max_output_tokens: int = 768, seed: Optional[int] = None,
) -> ChatRequest:
    prompt = _substitute(template.answer_template, question=question)
    return ChatRequest.user(
        prompt, temperature=temperature, max_output_tokens=max_output_tokens, seed=seed
    )


# -- ROUGE-L near-duplicate filter ----------------------------------------------


def _lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    if not a or not b:
        return 0
    previous = [0] * (len(b) + 1)
    for token in a:
        current = [0]
        for j, other in enumerate(b, start=1):
            if token == other:
                current.append(previous[j - 1] + 1)
            else:
                current.append(max(previous[j], current[j - 1]))
        previous = current
    return previous[len(b)]


def rouge_l(a: str, b: str) -> float:
    """ROUGE-L F1 over lowercased whitespace tokens; symmetric."""
    tokens_a = a.lower().split()
    tokens_b = b.lower().split()
    if not tokens_a and not tokens_b:
        return 1.0
    if not tokens_a or not tokens_b:
        return 0.0
    lcs = _lcs_length(tokens_a, tokens_b)
    if lcs == 0:
        return 0.0
    precision = lcs / len(tokens_a)
    recall = lcs / len(tokens_b)
    return 2.0 * precision * recall / (precision + recall)


def dedup_filter(candidate: str, history: Iterable[str], threshold: float = 0.7) -> bool:
    """Accept the candidate unless some history question reaches the ROUGE-L
    threshold (strict >= comparison)."""
    if not 0.0 < threshold <= 1.0:
        raise ValidationError("dedup threshold must lie in (0, 1]")
    for previous in history:
        if rouge_l(candidate, previous) >= threshold:
            return False
    return True


class DedupHistory:
    """Run-global accumulator of every previously generated question."""

    def __init__(self, questions: Iterable[str] = ()):
        self.questions: list[str] = list(questions)

    def accept(self, candidate: str, threshold: float = 0.7) -> bool:
        return dedup_filter(candidate, self.questions, threshold)

    def add(self, question: str) -> None:
        self.questions.append(question)


# -- synthesis ---------------------------------------------------------------------

_TEACHER_FAILURES = (TransportError, ProtocolError, BudgetExceededError)


def synthesize_pair(
    teacher: ModelEndpoint,
    template: PromptTemplate,
    few_shot: Sequence[Sample],
    exemplar: Sample,
    ledger=None,
    gen_seed: int = 0,
    temperature: float = 0.7,
    max_output_tokens: int = 768,
) -> SynthesisOutcome:
    """Two teacher calls: mint a question from the exemplar, then answer it
    with the dataset's answer prompt. Teacher failures become rejected
    outcomes so the generation loop can refill from the next exemplar."""
    question_request = render_question_prompt(template, few_shot, exemplar)
    question_request = ChatRequest(
        messages=question_request.messages,
        temperature=temperature,
        max_output_tokens=max_output_tokens,
        seed=gen_seed,
    )
    try:
        question = chat(teacher, question_request, ledger).text.strip()
        answer_request = render_answer_prompt(
            template, question, temperature=temperature,
            max_output_tokens=max_output_tokens, seed=gen_seed + 1,
        )
        answer = chat(teacher, answer_request, ledger).text.strip()
    except _TEACHER_FAILURES:
        return SynthesisOutcome(exemplar.id, "", "", accepted=False, reject_reason="teacher_error")
    return SynthesisOutcome(exemplar.id, question, answer, accepted=True)


def _solution_expression(sample: Sample) -> str:
    """The arithmetic expression inside a 24-game sample's answer."""
    try:
        expression = extract_boxed(sample.answer)
    except ExtractionError:
        expression = sample.answer.strip()
    expression = expression.split("=")[0].strip()
    expression_literals(expression)  # raises ValidationError when unparseable
    return expression


def backward_24_generate(
    teacher: ModelEndpoint,
    solution: Sample,
    ledger=None,
    gen_seed: int = 0,
    max_output_tokens: int = 768,
) -> SynthesisOutcome:
    """Backward reasoning: the teacher proposes a new boxed expression built
    from the known solution; it is accepted only when the arithmetic verifier
    passes, after which a second call produces the step-by-step answer."""
    expression = _solution_expression(solution)
    numbers = " ".join(re.findall(r"\d+", solution.question)) or expression
    prompt = _substitute(
        _asset("game24_backward.txt"), numbers=numbers, solution=expression
    )
    request = ChatRequest.user(prompt, temperature=0.7, max_output_tokens=max_output_tokens, seed=gen_seed)
    try:
        completion = chat(teacher, request, ledger).text
    except _TEACHER_FAILURES:
        return SynthesisOutcome(solution.id, "", "", accepted=False, reject_reason="teacher_error")
    try:
        proposed = extract_boxed(completion)
    except ExtractionError:
        return SynthesisOutcome(solution.id, "", "", accepted=False, reject_reason="verifier_failed")
    if proposed.strip().lower() == "null":
        return SynthesisOutcome(solution.id, "", "", accepted=False, reject_reason="verifier_failed")
    try:
        literals = expression_literals(proposed)
    except (ValidationError, ZeroDivisionError):
        return SynthesisOutcome(solution.id, "", "", accepted=False, reject_reason="verifier_failed")
    ok, _detail = verify_24(literals, proposed)
    if not ok:
        return SynthesisOutcome(solution.id, "", "", accepted=False, reject_reason="verifier_failed")
    question = " ".join(str(n) for n in sorted(literals))
    steps_prompt = _substitute(_asset("game24_reasoning.txt"), question=question, answer=proposed)
    steps_request = ChatRequest.user(
        steps_prompt, temperature=0.0, max_output_tokens=max_output_tokens, seed=gen_seed + 1
    )
    try:
        answer = chat(teacher, steps_request, ledger).text.strip()
    except _TEACHER_FAILURES:
        return SynthesisOutcome(solution.id, "", "", accepted=False, reject_reason="teacher_error")
    return SynthesisOutcome(solution.id, question, answer, accepted=True)


def generate_batch(
    teacher: ModelEndpoint,
    template: PromptTemplate,
    seed_corpus: Corpus,
    ranked_exemplar_ids: Sequence[str],
    m: int,
    iteration: int,
    history: Optional[DedupHistory] = None,
    dedup_threshold: float = 0.7,
    run_seed: int = 0,
    ledger=None,
    selection_scores: Optional[dict[str, float]] = None,
    scorer_kind: str = "",
    temperature: float = 0.7,
    max_output_tokens: int = 768,
    id_counter_start: int = 0,
) -> tuple[list[Sample], list[GenerationRecord], list[SynthesisOutcome]]:
    """Fill the iteration's quota of accepted synthetic samples.

    Rejected candidates do not consume the quota: the loop walks the ranked
    exemplar list (cycling if needed) until m samples are accepted or the
    attempt cap of 3*m is hit. Backward-reasoned arithmetic questions skip
    the near-duplicate filter entirely.
    """
    history = history if history is not None else DedupHistory()
    accepted: list[Sample] = []
    records: list[GenerationRecord] = []
    outcomes: list[SynthesisOutcome] = []
    counter = id_counter_start
    attempts = 0
    max_attempts = 3 * m
    rank = 0
    while len(accepted) < m and attempts < max_attempts:
        exemplar = seed_corpus.by_id(ranked_exemplar_ids[rank % len(ranked_exemplar_ids)])
        rank += 1
        attempts += 1
        gen_seed = int(rng_from("gen", run_seed, iteration, attempts).integers(0, 2**31))
        if template.dataset_kind == "game24_backward":
            outcome = backward_24_generate(
                teacher, exemplar, ledger, gen_seed, max_output_tokens
            )
        else:
            few_shot = _draw_few_shot(template, seed_corpus, exemplar, run_seed, iteration, attempts)
            outcome = synthesize_pair(
                teacher, template, few_shot, exemplar, ledger, gen_seed,
                temperature, max_output_tokens,
            )
            if outcome.accepted and not history.accept(outcome.question, dedup_threshold):
                outcome = SynthesisOutcome(
                    exemplar.id, outcome.question, outcome.answer,
                    accepted=False, reject_reason="duplicate",
                )
        outcomes.append(outcome)
        if not outcome.accepted:
            continue
        if template.dataset_kind != "game24_backward":
            history.add(outcome.question)
        child = Sample(
            id=synthetic_sample_id(iteration, counter),
            question=outcome.question,
            answer=outcome.answer,
            origin="synthetic",
            parent_id=exemplar.id,
            iteration=iteration,
        )
        counter += 1
        accepted.append(child)
        records.append(
            GenerationRecord(
                parent_id=exemplar.id,
                child_id=child.id,
                iteration=iteration,
                selection_score=(selection_scores or {}).get(exemplar.id),
                scorer_kind=scorer_kind,
            )
        )
    return accepted, records, outcomes


def _draw_few_shot(
    template: PromptTemplate, seed_corpus: Corpus, exemplar: Sample,
    run_seed: int, iteration: int, attempt: int,
) -> list[Sample]:
    """Uniform seeded draw from the seed corpus; category-matched for the
    category-aware dataset style."""
    if template.few_shot_k == 0:
        return []
    pool = list(seed_corpus.samples)
    if template.dataset_kind == "math_category_style":
        category = exemplar.meta.get("category")
        if not category:
            raise TemplateError(
                f"exemplar {exemplar.id!r} lacks the 'category' metadata required "
                "by category-matched prompts"
            )
        pool = [s for s in pool if s.meta.get("category") == category]
    rng = rng_from("fewshot", run_seed, iteration, attempt)
    k = min(template.few_shot_k, len(pool))
    picks = rng.choice(len(pool), size=k, replace=False)
    return [pool[int(i)] for i in picks]


# -- evaluation prompts ---------------------------------------------------------


def evaluation_prompt(
    dataset_kind: str, question: str, reference: str, student: str
) -> tuple[str, str]:
    """(system, user) texts for judge-based answer verification."""
    systems = {
        "gsm8k_style": "eval_system_gsm8k.txt",
        "pronto_style": "eval_system_pronto.txt",
    }
    if dataset_kind not in systems:
        raise ValidationError(f"no evaluation prompt for dataset kind {dataset_kind!r}")
    system_text = _asset(systems[dataset_kind]).strip()
    user_text = _substitute(
        _asset("eval_user.txt").strip(),
        question=question, reference=reference, student=student,
    )
    return system_text, user_text


def student_prediction_prompt(dataset_kind: str, question: str) -> str:
    """Prompt the student sees when predicting; arithmetic-24 uses the
    few-shot steps prompt, other kinds pass the question through."""
    if dataset_kind == "game24_backward":
        return _substitute(_asset("game24_student.txt"), question=question)
    return question
