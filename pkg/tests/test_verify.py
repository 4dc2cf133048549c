import itertools
from fractions import Fraction

import pytest

from synthloop.corpus import Sample
from synthloop.errors import ExtractionError, ValidationError
from synthloop.modelio import ModelEndpoint, ScriptedBackend
from synthloop.verify import (
    boxed_match,
    eval_accuracy,
    evaluate_expression,
    expression_literals,
    extract_boxed,
    game24_match,
    llm_judge_verify,
    verify_24,
)


# -- independent oracle: enumerate every expression tree over four numbers -----------

OPS = {
    "+": lambda a, b: a + b,
    "-": lambda a, b: a - b,
    "*": lambda a, b: a * b,
    "/": lambda a, b: a / b if b != 0 else None,
}


def enumerate_24_expressions(numbers):
    """Every fully-parenthesized expression over the multiset that hits 24
    exactly, built independently of the production parser."""

    def combine(items):
        if len(items) == 1:
            value, text = items[0]
            if value == Fraction(24):
                yield text
            return
        for i, j in itertools.permutations(range(len(items)), 2):
            rest = [items[k] for k in range(len(items)) if k not in (i, j)]
            (va, ta), (vb, tb) = items[i], items[j]
            for symbol, fn in OPS.items():
                value = fn(va, vb)
                if value is None:
                    continue
                yield from combine(rest + [(value, f"({ta} {symbol} {tb})")])

    seen = set()
    for text in combine([(Fraction(n), str(n)) for n in numbers]):
        if text not in seen:
            seen.add(text)
            yield text


def oracle_value(numbers, expression):
    """Independent accept/reject: exact evaluation via the enumerator's own
    operator table, plus literal-multiset equality."""
    try:
        value = evaluate_expression(expression)
        literals = expression_literals(expression)
    except (ValidationError, ZeroDivisionError):
        return False
    return value == Fraction(24) and sorted(literals) == sorted(numbers)


# -- boxed extraction ------------------------------------------------------------------


def test_extract_boxed_simple():
    assert extract_boxed("so \\boxed{42}.") == "42"


def test_extract_boxed_nested_braces():
    assert extract_boxed("\\boxed{\\frac{1}{2}}") == "\\frac{1}{2}"


def test_extract_boxed_missing_raises():
    with pytest.raises(ExtractionError):
        extract_boxed("no box here")


def test_extract_boxed_last_box_wins():
    text = "first \\boxed{12} then finally \\boxed{24}"
    assert extract_boxed(text) == "24"


@pytest.mark.parametrize("content", ["A", "x + {y}", "{a{b}c}", "24", "\\frac{1}{2}"])
def test_extract_boxed_concatenation_property(content):
    prefix = "chain of thought \\boxed{7} and more text "
    assert extract_boxed(prefix + "\\boxed{" + content + "}") == content


# -- arithmetic-24 verification ---------------------------------------------------------


def test_verify_24_accepts_worked_example_a():
    ok, _ = verify_24([4, 4, 6, 8], "(6 - 4) * (4 + 8)")
    assert ok


def test_verify_24_accepts_worked_example_b():
    ok, _ = verify_24([8, 8, 10, 13], "13*8-10*8")
    assert ok


def test_verify_24_rejects_unused_numbers():
    ok, detail = verify_24([4, 4, 6, 8], "4*6")
    assert not ok
    assert "multiset" in detail


def test_verify_24_requires_exact_value():
    ok, detail = verify_24([1, 2, 3, 4], "1+2+3+4")
    assert not ok
    assert "not 24" in detail


def test_verify_24_exact_rational_division():
    # 8/(3-8/3) = 24; floating arithmetic gets 23.999... and would reject.
    ok, _ = verify_24([3, 3, 8, 8], "8/(3-8/3)")
    assert ok


def test_verify_24_parse_failure_reported():
    ok, detail = verify_24([1, 2, 3, 4], "1+*2")
    assert not ok and "parse" in detail


def test_verify_24_division_by_zero_reported():
    ok, detail = verify_24([1, 2, 3, 4], "1/(2-2)+3+4")
    assert not ok and "zero" in detail


def test_verify_24_agrees_with_enumerator_oracle():
    import numpy as np

    rng = np.random.default_rng(24)
    quadruples = [sorted(rng.integers(1, 14, size=4).tolist()) for _ in range(200)]
    checked_accepts = 0
    for numbers in quadruples:
        solutions = list(enumerate_24_expressions(numbers))
        for expression in solutions[:6]:  # containment: enumerator-valid never rejected
            ok, detail = verify_24(numbers, expression)
            assert ok, f"{numbers}: {expression} rejected: {detail}"
            checked_accepts += 1
        # no false accepts: random expressions judged identically by the oracle
        for _ in range(4):
            values = rng.permutation(numbers).tolist()
            symbols = rng.choice(list("+-*/"), size=3).tolist()
            expression = (
                f"(({values[0]} {symbols[0]} {values[1]}) {symbols[1]} {values[2]}) "
                f"{symbols[2]} {values[3]}"
            )
            assert verify_24(numbers, expression)[0] == oracle_value(numbers, expression)
    assert checked_accepts > 200


def test_game24_alternative_expression_scores_correct():
    from synthloop.scoring import correctness_score

    # A valid alternative differing from the reference solution still passes:
    # the arithmetic verifier accepts any expression hitting 24 with the
    # question's exact number multiset (checked against the oracle first).
    assert oracle_value([4, 4, 6, 8], "(4 + 8) * (6 - 4)")
    score = correctness_score(
        "4 4 6 8", "\\boxed{(4 + 8) * (6 - 4)}", "(6 - 4) * (4 + 8)", game24_match
    )
    assert score == 1


# -- judge-based verification -------------------------------------------------------------


def judge_with(completion):
    return ModelEndpoint(
        role="teacher", capabilities=frozenset({"generate"}),
        transport="scripted", backend=ScriptedBackend([completion]),
    )


def test_judge_verify_correct_verdict():
    ok, _ = llm_judge_verify(
        judge_with("Error Analysis: match. Final Verdict: Correct"),
        "q", "42", "my answer is 42", "gsm8k_style",
    )
    assert ok


def test_judge_verify_incorrect_verdict():
    ok, detail = llm_judge_verify(
        judge_with("Error Analysis: mismatch. Final Verdict: Incorrect"),
        "q", "42", "23", "gsm8k_style",
    )
    assert not ok and detail == "verdict incorrect"


def test_judge_verify_markup_tolerant():
    ok, _ = llm_judge_verify(
        judge_with("**Final Verdict:** *Correct*"), "q", "42", "42", "pronto_style"
    )
    assert ok


def test_judge_verify_no_verdict_is_conservative():
    ok, detail = llm_judge_verify(
        judge_with("The student did fine."), "q", "42", "42", "gsm8k_style"
    )
    assert not ok and detail == "no verdict"


def test_judge_verify_ambiguous_verdict_is_false():
    ok, detail = llm_judge_verify(
        judge_with("Final Verdict: Correct. Wait, Final Verdict: Incorrect"),
        "q", "42", "42", "gsm8k_style",
    )
    assert not ok and detail == "ambiguous verdict"


def test_judge_verify_restricted_to_judgeable_kinds():
    with pytest.raises(ValidationError):
        llm_judge_verify(judge_with("x"), "q", "a", "b", "game24_backward")


# -- accuracy --------------------------------------------------------------------------


def corpus_of(answers):
    from synthloop.corpus import Corpus

    return Corpus(
        role="test",
        samples=tuple(
            Sample(id=f"t{i}", question=f"q{i}", answer=f"\\boxed{{{a}}}")
            for i, a in enumerate(answers)
        ),
    )


def test_eval_accuracy_all_correct():
    corpus = corpus_of(["1", "2"])
    predictions = {"t0": "\\boxed{1}", "t1": "\\boxed{2}"}
    accuracy, se, verdicts = eval_accuracy(corpus, predictions, boxed_match)
    assert (accuracy, se) == (1.0, 0.0)
    assert all(v.correct for v in verdicts)


def test_eval_accuracy_binomial_standard_error():
    corpus = corpus_of(["1", "2"])
    predictions = {"t0": "\\boxed{1}", "t1": "\\boxed{9}"}
    accuracy, se, _ = eval_accuracy(corpus, predictions, boxed_match)
    assert accuracy == 0.5
    assert se == pytest.approx(0.35355339, abs=1e-6)


def test_eval_accuracy_empty_corpus_rejected():
    from synthloop.corpus import Corpus

    with pytest.raises(ValidationError):
        eval_accuracy(Corpus(role="test", samples=()), {}, boxed_match)


def test_eval_accuracy_missing_prediction_names_id():
    corpus = corpus_of(["1", "2"])
    with pytest.raises(ValidationError, match="t1"):
        eval_accuracy(corpus, {"t0": "\\boxed{1}"}, boxed_match)


def test_standard_error_zero_iff_degenerate():
    corpus = corpus_of(["1", "2", "3"])
    wrong = {f"t{i}": "\\boxed{nope}" for i in range(3)}
    accuracy, se, _ = eval_accuracy(corpus, wrong, boxed_match)
    assert (accuracy, se) == (0.0, 0.0)
    mixed = {"t0": "\\boxed{1}", "t1": "\\boxed{nope}", "t2": "\\boxed{nope}"}
    accuracy, se, _ = eval_accuracy(corpus, mixed, boxed_match)
    assert 0 < accuracy < 1 and se > 0
