"""Correctness judgments: boxed-answer extraction, arithmetic-24 checking,
judge-based verification, and accuracy aggregation.

Arithmetic verification is exact-rational; floating division would spuriously
reject solutions like 8/(3-8/3).
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Mapping, Optional

from .errors import ExtractionError, TransportError, ValidationError
from .modelio.ops import chat
from .modelio.types import ChatRequest, ModelEndpoint


@dataclass(frozen=True)
class Verdict:
    sample_id: str
    correct: bool
    method: str
    detail: Optional[str] = None

    def __post_init__(self):
        if self.method not in ("boxed_match", "arithmetic_24", "llm_judge", "exact_match"):
            raise ValidationError(f"unknown verdict method {self.method!r}")

    def to_dict(self) -> dict:
        return {
            "sample_id": self.sample_id,
            "correct": self.correct,
            "method": self.method,
            "detail": self.detail,
        }


def extract_boxed(text: str) -> str:
    r"""Content of the last \boxed{...} span, with balanced-brace matching.

    Last box wins: chain-of-thought often boxes intermediate values first.
    """
    marker = r"\boxed{"
    starts = [m.start() for m in re.finditer(re.escape(marker), text)]
    if not starts:
        raise ExtractionError("no \\boxed{...} span in text")
    for start in reversed(starts):
        depth = 1
        i = start + len(marker)
        while i < len(text) and depth:
            if text[i] == "{":
                depth += 1
            elif text[i] == "}":
                depth -= 1
            i += 1
        if depth == 0:
            return text[start + len(marker): i - 1].strip()
    raise ExtractionError("unbalanced braces in \\boxed{...} span")


# -- exact-rational arithmetic over + - * / and parentheses -------------------


class _ExprParser:
    """Recursive-descent parser producing a Fraction and the literal multiset."""

    def __init__(self, text: str):
        self.text = text
        self.pos = 0
        self.literals: list[int] = []

    def parse(self) -> Fraction:
        value = self._expr()
        self._skip_ws()
        if self.pos != len(self.text):
            raise ValidationError(f"unexpected character {self.text[self.pos]!r} at {self.pos}")
        return value

    def _skip_ws(self):
        while self.pos < len(self.text) and self.text[self.pos].isspace():
            self.pos += 1

    def _peek(self) -> str:
        self._skip_ws()
        return self.text[self.pos] if self.pos < len(self.text) else ""

    def _expr(self) -> Fraction:
        value = self._term()
        while True:
            op = self._peek()
            if op == "+":
                self.pos += 1
                value = value + self._term()
            elif op == "-":
                self.pos += 1
                value = value - self._term()
            else:
                return value

    def _term(self) -> Fraction:
        value = self._factor()
        while True:
            op = self._peek()
            if op in ("*", "x", "×"):
                self.pos += 1
                value = value * self._factor()
            elif op == "/":
                self.pos += 1
                denominator = self._factor()
                if denominator == 0:
                    raise ZeroDivisionError("division by zero in expression")
                value = value / denominator
            else:
                return value

    def _factor(self) -> Fraction:
        ch = self._peek()
        if ch == "(":
            self.pos += 1
            value = self._expr()
            if self._peek() != ")":
                raise ValidationError("missing closing parenthesis")
            self.pos += 1
            return value
        if ch == "-":
            self.pos += 1
            return -self._factor()
        if ch == "+":
            self.pos += 1
            return self._factor()
        if ch.isdigit():
            start = self.pos
            while self.pos < len(self.text) and self.text[self.pos].isdigit():
                self.pos += 1
            literal = int(self.text[start: self.pos])
            self.literals.append(literal)
            return Fraction(literal)
        raise ValidationError(f"expected a number or parenthesis at position {self.pos}")


def evaluate_expression(expression: str) -> Fraction:
    """Exact value of an integer arithmetic expression."""
    return _ExprParser(expression).parse()


def expression_literals(expression: str) -> list[int]:
    """Multiset of integer literals, in appearance order."""
    parser = _ExprParser(expression)
    parser.parse()
    return parser.literals


def verify_24(numbers, expression: str) -> tuple[bool, str]:
    """True iff the expression evaluates exactly to 24 and uses exactly the
    given numbers, each once. Returns (verdict, detail)."""
    parser = _ExprParser(expression)
    try:
        value = parser.parse()
    except ValidationError as exc:
        return False, f"parse failure: {exc}"
    except ZeroDivisionError as exc:
        return False, f"evaluation failure: {exc}"
    if value != Fraction(24):
        return False, f"evaluates to {value}, not 24"
    if sorted(parser.literals) != sorted(int(n) for n in numbers):
        return False, (
            f"number multiset mismatch: expression uses {sorted(parser.literals)}, "
            f"question has {sorted(int(n) for n in numbers)}"
        )
    return True, "ok"


# -- judge-based verification --------------------------------------------------

VERDICT_RE = re.compile(r"final\s+verdict\s*[:\-]?\s*[\*_`\s]*(incorrect|correct)", re.IGNORECASE)


def llm_judge_verify(
    judge: ModelEndpoint,
    question: str,
    ground_truth: str,
    student_answer: str,
    dataset_kind: str,
    ledger=None,
) -> tuple[bool, str]:
    """Ask the evaluation judge for a Final Verdict line. Conservative on
    ambiguity: anything but an unambiguous Correct counts as incorrect."""
    from .synthgen import evaluation_prompt  # templates live with synthesis assets

    if dataset_kind not in ("gsm8k_style", "pronto_style"):
        raise ValidationError(f"judge verification not used for {dataset_kind!r}")
    system_text, user_text = evaluation_prompt(dataset_kind, question, ground_truth, student_answer)
    request = ChatRequest(
        messages=(("system", system_text), ("user", user_text)),
        temperature=0.0,
        max_output_tokens=256,
    )
    try:
        response = chat(judge, request, ledger)
    except TransportError:
        response = chat(judge, request, ledger)  # one retry, then propagate
    verdicts = {m.group(1).lower() for m in VERDICT_RE.finditer(response.text)}
    if verdicts == {"correct"}:
        return True, "verdict correct"
    if not verdicts:
        return False, "no verdict"
    if len(verdicts) > 1:
        return False, "ambiguous verdict"
    return False, "verdict incorrect"


# -- accuracy ------------------------------------------------------------------


def boxed_match(sample, prediction: str) -> tuple[bool, str]:
    """Default local verifier: boxed contents must match exactly."""
    try:
        predicted = extract_boxed(prediction)
    except ExtractionError:
        return False, "prediction has no boxed answer"
    try:
        reference = extract_boxed(sample.answer)
    except ExtractionError:
        reference = sample.answer.strip()
    return predicted == reference, f"predicted {predicted!r} vs reference {reference!r}"


def game24_match(sample, prediction: str) -> tuple[bool, str]:
    """Game-of-24 verifier: boxed expression must hit 24 with the question's
    numbers used exactly once."""
    try:
        expression = extract_boxed(prediction)
    except ExtractionError:
        return False, "prediction has no boxed answer"
    numbers = [int(n) for n in re.findall(r"\d+", sample.question)]
    return verify_24(numbers, expression)


def eval_accuracy(
    corpus,
    predictions: Mapping[str, str],
    verifier: Callable[[object, str], tuple[bool, str]],
    method: str = "boxed_match",
) -> tuple[float, float, list[Verdict]]:
    """Fraction correct plus the binomial standard error sqrt(p(1-p)/n)."""
    if len(corpus) == 0:
        raise ValidationError("cannot evaluate an empty corpus")
    verdicts = []
    hits = 0
    for sample in corpus:
        if sample.id not in predictions:
            raise ValidationError(f"missing prediction for sample {sample.id!r}")
        correct, detail = verifier(sample, predictions[sample.id])
        verdicts.append(Verdict(sample.id, bool(correct), method, detail))
        hits += bool(correct)
    p = hits / len(corpus)
    se = math.sqrt(p * (1.0 - p) / len(corpus))
    return p, se, verdicts
