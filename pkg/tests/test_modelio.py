import math

import httpx
import pytest

from synthloop.corpus import Corpus, Sample
from synthloop.errors import (
    BudgetExceededError,
    CapabilityError,
    ProtocolError,
    TransportError,
    ValidationError,
)
from synthloop.modelio import (
    BudgetLedger,
    ChatRequest,
    ChatResponse,
    FinetuneHyperparams,
    ModelEndpoint,
    SimWorld,
    TokenUsage,
    make_sim_corpus,
    sim_endpoint,
)
from synthloop.modelio import remote as remote_module
from synthloop.modelio.ops import (
    answer_logprobs,
    chat,
    reward_score,
    student_finetune,
    student_greedy_generate,
)
from synthloop.modelio.remote import RemoteBackend, RemoteConfig
from synthloop.modelio.wire import (
    build_response_payload,
    parse_chat_response,
    validate_chat_response,
)


def logistic(x):
    return 1.0 / (1.0 + math.exp(-x))


@pytest.fixture
def world():
    return SimWorld(seed=5)


def test_chat_deterministic_for_fixed_request_and_seed(world):
    teacher = sim_endpoint(world, "teacher")
    prompt = (
        "#Given Instruction#:\n" + world.make_question("abc123", 0.5, 1) + "\n#Rewritten Instruction#:"
    )
    request = ChatRequest.user(prompt, temperature=0.0, seed=99)
    first = chat(teacher, request)
    second = chat(teacher, request)
    assert first.text == second.text


def test_chat_logprobs_one_per_output_token(world):
    student = sim_endpoint(world, "student")
    question = world.make_question("abc123", 0.3, 0)
    response = chat(student, ChatRequest.user(question, want_logprobs=True))
    assert response.token_logprobs is not None
    assert len(response.token_logprobs) == len(response.text.split())
    assert all(lp <= 0 for _, lp in response.token_logprobs)


def test_ledger_accumulates_usage():
    ledger = BudgetLedger()
    ledger.charge("teacher", TokenUsage(10, 5))
    ledger.charge("teacher", TokenUsage(7, 3))
    total = ledger.total("teacher")
    assert (total.input_tokens, total.output_tokens) == (17, 8)


def test_ledger_rejects_once_cap_reached():
    ledger = BudgetLedger(caps={"teacher": 10})
    ledger.charge("teacher", TokenUsage(8, 3))  # crossing charge is recorded
    with pytest.raises(BudgetExceededError):
        ledger.charge("teacher", TokenUsage(1, 0))
    total = ledger.total("teacher")
    assert (total.input_tokens, total.output_tokens) == (8, 3)


def test_chat_charges_endpoint_role(world):
    ledger = BudgetLedger()
    teacher = sim_endpoint(world, "teacher", ledger=ledger)
    question = world.make_question("abc123", 0.3, 0)
    response = chat(teacher, ChatRequest.user(question))
    total = ledger.total("teacher")
    assert total.input_tokens == response.usage.input_tokens
    assert total.output_tokens == response.usage.output_tokens


def test_greedy_generation_branches_on_mastery(world):
    student = sim_endpoint(world, "student")
    question = world.make_question("tok00", 0.5, 0)

    student.backend.state = type(student.backend.state)(mastery=(1.0,) * world.topics)
    assert student_greedy_generate(student, question) == world.correct_answer(question)

    # mastery 0 against difficulty 1: the logistic correctness probability is
    # below one half, so greedy decoding lands on the designated wrong answer.
    hard = world.make_question("tok01", 1.0, 0)
    student.backend.state = type(student.backend.state)(mastery=(0.0,) * world.topics)
    assert logistic(world.steepness * (0.0 - 1.0)) < 0.5
    assert student_greedy_generate(student, hard) == world.incorrect_answer(hard)


def test_greedy_generation_repeatable(world):
    student = sim_endpoint(world, "student")
    question = world.make_question("tok02", 0.4, 1)
    assert student_greedy_generate(student, question) == student_greedy_generate(student, question)


def test_logprobs_probability_one_world():
    world = SimWorld(seed=5, uniform_vocab=1)
    student = sim_endpoint(world, "student")
    entries = answer_logprobs(student, "q", "three token answer")
    assert [lp for _, lp in entries] == [0.0, 0.0, 0.0]


def test_logprobs_uniform_two_symbol_vocabulary():
    world = SimWorld(seed=5, uniform_vocab=2)
    student = sim_endpoint(world, "student")
    entries = answer_logprobs(student, "q", "a b c d")
    for _, lp in entries:
        assert lp == pytest.approx(-math.log(2), abs=1e-12)


def test_logprobs_entry_per_token(world):
    student = sim_endpoint(world, "student")
    entries = answer_logprobs(student, "q", "one two three four five")
    assert len(entries) == 5


def test_reward_zero_noise_is_negative_difficulty():
    world = SimWorld(seed=5, reward_noise=0.0)
    reward = sim_endpoint(world, "reward")
    easy = world.make_question("tok03", 0.0, 0)
    hard = world.make_question("tok04", 0.8, 0)
    assert reward_score(reward, easy, "any") == pytest.approx(0.0)
    assert reward_score(reward, hard, "any") == pytest.approx(-0.8)


def test_reward_deterministic(world):
    reward = sim_endpoint(world, "reward")
    question = world.make_question("tok05", 0.6, 2)
    assert reward_score(reward, question, "x") == reward_score(reward, question, "x")


def test_finetune_raises_topic_mastery(world):
    student = sim_endpoint(world, "student")
    base = world.base_state().mastery
    questions = [world.make_question(f"t{i:02d}", 0.3, 1) for i in range(10)]
    train = Corpus(
        role="synthetic",
        samples=tuple(
            Sample(id=f"s{i}", question=q, answer=world.correct_answer(q),
                   origin="synthetic", parent_id="p", iteration=1)
            for i, q in enumerate(questions)
        ),
    )
    state = student_finetune(student, train, None, FinetuneHyperparams(epochs=1))
    assert state.mastery[1] > base[1]
    assert all(0.0 <= m <= 1.0 for m in state.mastery)


def test_finetune_requires_nonempty_corpus(world):
    student = sim_endpoint(world, "student")
    empty = Corpus(role="synthetic", samples=())
    with pytest.raises(ValidationError):
        student_finetune(student, empty, None, FinetuneHyperparams())


def test_finetune_fresh_start_is_deterministic(world):
    corpus = make_sim_corpus(15, seed=3, world=world)
    hp = FinetuneHyperparams(epochs=2)
    student = sim_endpoint(world, "student")
    first = student_finetune(student, corpus, None, hp, seed=1)
    # A second fine-tune never warm-starts: identical data gives an identical
    # state even though the student endpoint trained in between.
    second = student_finetune(student, corpus, None, hp, seed=1)
    assert first.mastery == second.mastery


def test_capability_checks(world):
    student = sim_endpoint(world, "student")
    reward = sim_endpoint(world, "reward")
    with pytest.raises(CapabilityError):
        reward_score(student, "q", "a")
    with pytest.raises(CapabilityError):
        student_greedy_generate(reward, "q")
    with pytest.raises(CapabilityError):
        student_finetune(reward, make_sim_corpus(2, seed=1), None, FinetuneHyperparams())


def test_endpoint_invariants():
    with pytest.raises(ValidationError):
        ModelEndpoint(role="reward", capabilities=frozenset({"generate"}), transport="simulated")
    with pytest.raises(ValidationError):
        ModelEndpoint(role="student", capabilities=frozenset({"generate"}), transport="simulated")


def test_wire_round_trip_and_validation(world):
    response = ChatResponse(
        text="two words", usage=TokenUsage(3, 2),
        token_logprobs=(("two", -0.5), ("words", -0.25)),
    )
    payload = build_response_payload(response, "sim-test")
    validate_chat_response(payload)
    parsed = parse_chat_response(payload, "prompt text here", want_logprobs=True)
    assert parsed == response

    with pytest.raises(ProtocolError):
        validate_chat_response({"choices": []})
    bad = build_response_payload(response, "sim-test")
    bad["choices"][0]["logprobs"]["content"][0]["logprob"] = 0.5
    with pytest.raises(ProtocolError):
        validate_chat_response(bad)


def test_missing_usage_falls_back_to_approximate():
    payload = {
        "choices": [{"message": {"role": "assistant", "content": "a b c"}, "finish_reason": "stop"}]
    }
    parsed = parse_chat_response(payload, "one two", want_logprobs=False)
    assert parsed.usage.approximate
    assert (parsed.usage.input_tokens, parsed.usage.output_tokens) == (2, 3)


def _remote_backend(handler):
    transport = httpx.MockTransport(handler)
    client = httpx.Client(base_url="http://worker.test", transport=transport)
    return RemoteBackend(RemoteConfig(base_url="http://worker.test", model="m"), client=client)


def test_remote_retries_transient_failures(monkeypatch):
    monkeypatch.setattr(remote_module.time, "sleep", lambda _s: None)
    calls = {"n": 0}

    def handler(request):
        calls["n"] += 1
        if calls["n"] < 3:
            return httpx.Response(500, text="boom")
        return httpx.Response(200, json=build_response_payload(
            ChatResponse(text="ok", usage=TokenUsage(1, 1)), "m"))

    backend = _remote_backend(handler)
    response = backend.complete(ChatRequest.user("hello"))
    assert response.text == "ok"
    assert calls["n"] == 3


def test_remote_gives_up_after_retry_budget(monkeypatch):
    monkeypatch.setattr(remote_module.time, "sleep", lambda _s: None)
    backend = _remote_backend(lambda request: httpx.Response(503, text="down"))
    with pytest.raises(TransportError):
        backend.complete(ChatRequest.user("hello"))


def test_remote_client_errors_do_not_retry(monkeypatch):
    monkeypatch.setattr(remote_module.time, "sleep", lambda _s: None)
    calls = {"n": 0}

    def handler(request):
        calls["n"] += 1
        return httpx.Response(400, text="bad request")

    backend = _remote_backend(handler)
    with pytest.raises(TransportError):
        backend.complete(ChatRequest.user("hello"))
    assert calls["n"] == 1


def test_remote_missing_capability_maps_to_capability_error(monkeypatch):
    monkeypatch.setattr(remote_module.time, "sleep", lambda _s: None)
    backend = _remote_backend(lambda request: httpx.Response(501, text="not served"))
    with pytest.raises(CapabilityError):
        backend.complete(ChatRequest.user("hello"))
