import json

import pytest

from synthloop.corpus import (
    Corpus,
    GenerationRecord,
    Sample,
    load_corpus,
    load_records,
    merge_accumulate,
    save_corpus,
    save_records,
)
from synthloop.errors import ParseError, ValidationError


def make_samples(n, prefix="q", origin="seed"):
    return tuple(
        Sample(
            id=f"{prefix}{i}",
            question=f"question {i}",
            answer=f"answer {i}",
            origin=origin,
            parent_id=f"p{i}" if origin == "synthetic" else None,
            iteration=1 if origin == "synthetic" else 0,
        )
        for i in range(n)
    )


def test_load_preserves_order_and_ids(tmp_path):
    path = tmp_path / "c.jsonl"
    records = [
        {"id": "a", "question": "qa", "answer": "1", "origin": "seed", "iteration": 0},
        {"id": "b", "question": "qb", "answer": "2", "origin": "seed", "iteration": 0},
        {"id": "c", "question": "qc", "answer": "3", "origin": "seed", "iteration": 0},
    ]
    path.write_text("\n".join(json.dumps(r) for r in records) + "\n", encoding="utf-8")
    corpus = load_corpus(path, "seed")
    assert corpus.ids() == ["a", "b", "c"]
    assert corpus.samples[1].question == "qb"


def test_empty_seed_file_rejected(tmp_path):
    path = tmp_path / "empty.jsonl"
    path.write_text("", encoding="utf-8")
    with pytest.raises(ValidationError):
        load_corpus(path, "seed")


def test_duplicate_id_names_offender(tmp_path):
    path = tmp_path / "dup.jsonl"
    line = json.dumps({"id": "q7", "question": "x", "answer": "y"})
    path.write_text(line + "\n" + line + "\n", encoding="utf-8")
    with pytest.raises(ValidationError, match="q7"):
        load_corpus(path, "seed")


def test_malformed_line_names_line_number(tmp_path):
    path = tmp_path / "bad.jsonl"
    path.write_text('{"id": "a", "question": "q", "answer": "y"}\n{oops\n', encoding="utf-8")
    with pytest.raises(ParseError, match=":2"):
        load_corpus(path, "seed")


def test_round_trip_100_samples(tmp_path):
    corpus = Corpus(role="seed", samples=make_samples(100))
    path = tmp_path / "c.jsonl"
    save_corpus(corpus, path)
    assert load_corpus(path, "seed") == corpus


def test_round_trip_unicode(tmp_path):
    corpus = Corpus(
        role="seed",
        samples=(Sample(id="u", question="emoji ☃ question", answer="réponse élève"),),
    )
    path = tmp_path / "u.jsonl"
    save_corpus(corpus, path)
    assert load_corpus(path, "seed").samples[0].answer == "réponse élève"


def test_save_unwritable_path_fails(tmp_path):
    corpus = Corpus(role="seed", samples=make_samples(1))
    target = tmp_path / "missing-dir" / "c.jsonl"
    with pytest.raises(ValidationError, match="missing-dir"):
        save_corpus(corpus, target)


def test_merge_sizes_add():
    previous = Corpus(role="synthetic", samples=make_samples(1000, "a", "synthetic"))
    current = Corpus(role="synthetic", samples=make_samples(2000, "b", "synthetic"))
    merged = merge_accumulate(current, previous)
    assert len(merged) == 3000
    assert merged.ids()[:1000] == [f"a{i}" for i in range(1000)]


def test_merge_empty_previous_is_identity():
    previous = Corpus(role="synthetic", samples=())
    current = Corpus(role="synthetic", samples=make_samples(5, "b", "synthetic"))
    assert merge_accumulate(current, previous).ids() == current.ids()


def test_merge_shared_id_rejected():
    a = Corpus(role="synthetic", samples=make_samples(3, "x", "synthetic"))
    b = Corpus(role="synthetic", samples=make_samples(2, "x", "synthetic"))
    with pytest.raises(ValidationError):
        merge_accumulate(a, b)


def test_merge_associative_on_disjoint():
    a = Corpus(role="synthetic", samples=make_samples(3, "a", "synthetic"))
    b = Corpus(role="synthetic", samples=make_samples(4, "b", "synthetic"))
    c = Corpus(role="synthetic", samples=make_samples(5, "c", "synthetic"))
    left = merge_accumulate(c, merge_accumulate(b, a))
    right = merge_accumulate(merge_accumulate(c, b), a)
    assert left.ids() == right.ids()


def test_sample_invariants():
    with pytest.raises(ValidationError):
        Sample(id="s", question="q", answer="a", origin="seed", parent_id="p")
    with pytest.raises(ValidationError):
        Sample(id="s", question="q", answer="a", origin="synthetic")
    with pytest.raises(ValidationError):
        Sample(id="s", question="q", answer="a", origin="seed", iteration=2)


def test_selected_role_constraint_is_callers_concern():
    # selected corpora hold references into the seed corpus by construction;
    # the corpus type itself only enforces id uniqueness and role names.
    with pytest.raises(ValidationError):
        Corpus(role="chosen", samples=make_samples(1))


def test_generation_records_round_trip(tmp_path):
    records = [
        GenerationRecord(parent_id="a", child_id="synth-0-0", iteration=0, selection_score=1.5, scorer_kind="loss_self"),
        GenerationRecord(parent_id="b", child_id="synth-0-1", iteration=0),
    ]
    path = tmp_path / "records.jsonl"
    save_records(records, path)
    assert load_records(path) == records
