"""Acceptance suite: every release criterion at its stated tolerance, one
printed PASS/FAIL line per criterion. All runs use simulated backends."""

import json
import math
import shutil
import time
from contextlib import contextmanager
from pathlib import Path

import numpy as np
import pytest

from synthloop.analysis import (
    cumulative_accuracy_diff,
    sample_complexity,
    spearman,
    token_tvd,
    tvd,
    winrate,
    CurvePoint,
    LearningCurve,
)
from synthloop.corpus import Corpus, Sample, merge_accumulate
from synthloop.engine import canonical_manifest_view, run
from synthloop.modelio import (
    BudgetLedger,
    FinetuneHyperparams,
    SimWorld,
    make_sim_corpus,
    sim_endpoint,
)
from synthloop.scoring import GradEmbedding, Score, grad_embedding, sequence_loss, sparse_project
from synthloop.selection import select_argmax, select_badge, select_random, select_softmax_sample
from synthloop.synthgen import DedupHistory, dedup_filter, generate_batch, rouge_l, template_for
from synthloop.verify import verify_24

from conftest import make_run_config
from test_scoring import finite_difference_grad, softmax
from test_synthgen import exact_rouge_pair, scripted_teacher
from test_verify import enumerate_24_expressions, oracle_value


@contextmanager
def criterion(number, title):
    try:
        yield
    except Exception:
        print(f"ACCEPTANCE {number} ({title}): FAIL")
        raise
    print(f"ACCEPTANCE {number} ({title}): PASS")


def snapshot_files(root: Path) -> dict:
    return {
        str(p.relative_to(root)): p.read_bytes()
        for p in sorted(root.rglob("*"))
        if p.is_file()
    }


def test_criterion_1_loop_integrity(sim_dataset, tmp_path):
    with criterion(1, "Algorithm-1 loop integrity"):
        started = time.time()
        out = tmp_path / "run"
        config = make_run_config(sim_dataset, out, iterations=3, batch=50, seeds=(1, 2, 3))
        manifest = run(config)
        for states in manifest.replicate_states().values():
            assert [s["accumulated_size"] for s in states] == [50, 100, 150]

        first = snapshot_files(out)
        shutil.rmtree(out)
        run(make_run_config(sim_dataset, out, iterations=3, batch=50, seeds=(1, 2, 3)))
        second = snapshot_files(out)
        assert set(first) == set(second)
        for name in first:
            if name == "manifest.json":
                assert canonical_manifest_view(json.loads(first[name])) == \
                    canonical_manifest_view(json.loads(second[name]))
            else:
                assert first[name] == second[name], f"{name} not byte-identical"
        elapsed = time.time() - started
        assert elapsed < 30.0, f"loop integrity took {elapsed:.1f}s"


def test_criterion_2_data_efficiency_direction(sim_dataset, tmp_path):
    with criterion(2, "data-efficiency: loss(high) beats random"):
        started = time.time()
        seeds = tuple(range(1, 21))  # 20 paired replicate seeds
        loss_cfg = make_run_config(
            sim_dataset, tmp_path / "loss", scorer="loss_self", strategy="argmax",
            iterations=3, batch=50, seeds=seeds, label="loss-high",
            run={"analysis_artifacts": False},
        )
        rand_cfg = make_run_config(
            sim_dataset, tmp_path / "rand", scorer="random", strategy="random",
            iterations=3, batch=50, seeds=seeds, label="random",
            run={"analysis_artifacts": False},
        )
        loss_manifest = run(loss_cfg)
        rand_manifest = run(rand_cfg)

        loss_curve = loss_manifest.learning_curve()
        rand_curve = rand_manifest.learning_curve()
        for point in rand_curve.points:  # every tau random attains
            tau = point.mean
            n_loss = sample_complexity(loss_curve, tau)
            assert n_loss is not None and n_loss <= point.n, (
                f"N_loss({tau:.3f})={n_loss} exceeds N_random({tau:.3f})={point.n}"
            )

        loss_states = loss_manifest.replicate_states()
        rand_states = rand_manifest.replicate_states()
        diffs = np.array([
            loss_states[s][-1]["accuracy"] - rand_states[s][-1]["accuracy"] for s in seeds
        ])
        paired_se = diffs.std(ddof=1) / math.sqrt(len(diffs))
        assert diffs.mean() > paired_se, (
            f"final-n margin {diffs.mean():.4f} not above 1 paired SE {paired_se:.4f}"
        )
        elapsed = time.time() - started
        assert elapsed < 300.0, f"data-efficiency check took {elapsed:.1f}s"


def test_criterion_3_selection_oracles():
    with criterion(3, "selection oracles"):
        # argmax vs exhaustive stable sort on all sizes <= 12, all batch sizes
        rng = np.random.default_rng(0)
        for n in range(1, 13):
            value_sets = [rng.integers(0, 4, size=n).astype(float) for _ in range(10)]
            value_sets.append(np.zeros(n))  # all ties
            for values in value_sets:
                scores = [Score(f"id{i}", "loss_self", float(v)) for i, v in enumerate(values)]
                for m in range(1, n + 1):
                    expected = [
                        f"id{i}"
                        for i in sorted(range(n), key=lambda i: (-values[i], i))[:m]
                    ]
                    assert select_argmax(scores, m, "high") == expected

        # softmax frequencies vs analytic probabilities, L-inf 0.02 over 1e5
        draws = 100_000
        scores = [Score("one", "loss_self", math.log(1.0)),
                  Score("three", "loss_self", math.log(3.0))]
        hits = sum(select_softmax_sample(scores, 1, 1.0, seed)[0] == "three"
                   for seed in range(draws))
        assert abs(hits / draws - 0.75) < 0.02
        equal = [Score(f"id{i}", "loss_self", 1.0) for i in range(4)]
        counts = {f"id{i}": 0 for i in range(4)}
        for seed in range(draws):
            counts[select_softmax_sample(equal, 1, 1.0, seed)[0]] += 1
        assert max(abs(c / draws - 0.25) for c in counts.values()) < 0.02

        # random selection inclusion frequencies within +-0.03 of m/n
        n, m, repeats = 10_000, 1_000, 200
        ids = list(range(n))
        inclusion = np.zeros(n)
        for seed in range(repeats):
            inclusion[select_random(ids, m, seed)] += 1
        assert np.max(np.abs(inclusion / repeats - m / n)) <= 0.03 + 3 * math.sqrt(0.09 / repeats)
        assert abs(float(np.mean(inclusion / repeats)) - m / n) < 1e-9


def test_criterion_4_badge_numerics():
    with criterion(4, "BADGE numerics"):
        # closed form vs finite differences, relative error < 1e-4, 100 heads
        rng = np.random.default_rng(42)
        for _ in range(100):
            vocab = int(rng.integers(2, 6))
            dim = int(rng.integers(1, 5))
            positions = int(rng.integers(1, 4))
            weights = rng.normal(size=(vocab, dim))
            hiddens = [rng.normal(size=dim) for _ in range(positions)]
            targets = [int(rng.integers(0, vocab)) for _ in range(positions)]
            probs = [softmax(weights @ h) for h in hiddens]
            closed = grad_embedding(probs, targets, hiddens)
            oracle = finite_difference_grad(weights, hiddens, targets).reshape(-1)
            scale = max(float(np.linalg.norm(oracle)), 1e-9)
            assert float(np.linalg.norm(closed - oracle)) / scale < 1e-4

        # 3 separated clusters: one pick per cluster in >= 95% of 500 runs
        cluster_rng = np.random.default_rng(11)
        centers = np.array([[0.0, 0.0], [100.0, 0.0], [0.0, 100.0]])
        points = np.vstack([c + cluster_rng.normal(scale=0.5, size=(20, 2)) for c in centers])
        embeddings = [GradEmbedding(f"e{i}", tuple(map(float, p))) for i, p in enumerate(points)]
        hits = 0
        for seed in range(500):
            picked = select_badge(embeddings, 3, seed=seed)
            hits += len({int(p[1:]) // 20 for p in picked}) == 3
        assert hits / 500 >= 0.95, f"cluster coverage {hits / 500:.3f}"

        # sparse projection: mean squared-distance ratio within 10% at d=256
        jl_rng = np.random.default_rng(7)
        ratios = []
        for _ in range(1000):
            gap = jl_rng.normal(size=1024) - jl_rng.normal(size=1024)
            projected = sparse_project(gap, 256, seed=3)
            ratios.append(float(np.sum(projected**2) / np.sum(gap**2)))
        assert abs(float(np.mean(ratios)) - 1.0) < 0.10


def test_criterion_5_formula_checks():
    with criterion(5, "loss/ROUGE/TVD formulas"):
        assert sequence_loss([0.0, 0.0]) == 0.0
        assert sequence_loss([-math.log(4)] * 5) == pytest.approx(
            1.3862943611198906, abs=1e-12
        )
        assert sequence_loss([-0.1, -0.2, -0.3]) == pytest.approx(0.2, abs=1e-12)

        assert rouge_l("the cat sat", "the cat") == pytest.approx(0.8, abs=1e-12)

        texts_a = ["alpha beta", "alpha gamma"]
        identical = Corpus(role="test", samples=tuple(
            Sample(id=f"a{i}", question=t, answer="") for i, t in enumerate(texts_a)))
        disjoint = Corpus(role="test", samples=(
            Sample(id="b0", question="delta epsilon", answer=""),))
        assert token_tvd(identical, identical) == 0.0
        assert token_tvd(identical, disjoint) == 1.0
        assert tvd({"x": 0.5, "y": 0.5}, {"x": 1.0}) == pytest.approx(0.5, abs=1e-15)

        axiom_rng = np.random.default_rng(9)
        alphabet = [f"t{i}" for i in range(16)]
        def hist():
            weights = axiom_rng.integers(0, 8, size=len(alphabet))
            return {a: int(w) for a, w in zip(alphabet, weights) if w > 0}
        for _ in range(1000):
            a, b, c = hist(), hist(), hist()
            assert tvd(a, b) == pytest.approx(tvd(b, a), abs=1e-15)
            assert tvd(a, a) == 0.0
            assert tvd(a, c) <= tvd(a, b) + tvd(b, c) + 1e-12


def test_criterion_6_winrate_fixture():
    with criterion(6, "winrate matrix, alpha=1"):
        def curve(label, points):
            return LearningCurve(label, tuple(CurvePoint(*p) for p in points))

        fixture = {
            "d": {
                "A": curve("A", [(100, 0.80, 0.02, 3), (200, 0.85, 0.01, 3)]),
                "B": curve("B", [(100, 0.70, 0.02, 3), (200, 0.86, 0.02, 3)]),
                "C": curve("C", [(100, 0.79, 0.05, 3), (200, 0.70, 0.01, 3)]),
            }
        }
        matrix = winrate(fixture, alpha=1.0)
        assert matrix.labels == ("A", "B", "C")
        expected = np.array([[0, 1, 1], [0, 0, 1], [0, 1, 0]])
        assert np.array_equal(matrix.counts, expected)
        assert np.allclose(matrix.column_means(), [0.0, 0.5, 0.5])
        # antisymmetry per comparison cell
        for idx in (0, 1):
            sliced = {
                "d": {k: LearningCurve(k, (c.points[idx],)) for k, c in fixture["d"].items()}
            }
            counts = winrate(sliced, alpha=1.0).counts
            assert np.all(np.minimum(counts, counts.T) == 0)


def test_criterion_7_game24_verifier():
    with criterion(7, "arithmetic-24 verifier vs enumerator"):
        assert verify_24([4, 4, 6, 8], "(6 - 4) * (4 + 8)")[0]
        assert verify_24([8, 8, 10, 13], "13*8-10*8")[0]

        rng = np.random.default_rng(24)
        accepts = 0
        for _ in range(200):
            numbers = sorted(rng.integers(1, 14, size=4).tolist())
            solutions = list(enumerate_24_expressions(numbers))
            for expression in solutions[:5]:
                ok, detail = verify_24(numbers, expression)
                assert ok, f"false reject {numbers} {expression}: {detail}"
                accepts += 1
            for _ in range(4):
                values = rng.permutation(numbers).tolist()
                symbols = rng.choice(list("+-*/"), size=3).tolist()
                expression = (
                    f"(({values[0]} {symbols[0]} {values[1]}) {symbols[1]} {values[2]}) "
                    f"{symbols[2]} {values[3]}"
                )
                assert verify_24(numbers, expression)[0] == oracle_value(numbers, expression), (
                    f"verdict mismatch on {numbers} {expression}"
                )
        assert accepts > 100


def test_criterion_8_dedup_boundary():
    with criterion(8, "dedup threshold 0.7 strict boundary"):
        candidate_69, history_69 = exact_rouge_pair(69)
        assert rouge_l(candidate_69, history_69) == pytest.approx(0.69, abs=1e-12)
        assert dedup_filter(candidate_69, [history_69], 0.7) is True

        candidate_70, history_70 = exact_rouge_pair(70)
        assert rouge_l(candidate_70, history_70) == pytest.approx(0.70, abs=1e-12)
        assert dedup_filter(candidate_70, [history_70], 0.7) is False

        assert dedup_filter("same exact question", ["same exact question"], 0.7) is False

        # arithmetic-24 backward path bypasses the filter entirely
        teacher = scripted_teacher([
            "\\boxed{4*26-10*8}", "Steps ... \\boxed{4*26-10*8}",
            "\\boxed{4*26-10*8}", "Steps ... \\boxed{4*26-10*8}",
        ])
        seed = Corpus(role="seed", samples=(
            Sample(id="g", question="8 8 10 13", answer="13*8-10*8"),))
        history = DedupHistory(["4 8 10 26"])
        children, _, outcomes = generate_batch(
            teacher, template_for("game24_backward"), seed, ["g"],
            m=2, iteration=0, run_seed=0, history=history,
        )
        assert len(children) == 2  # exact duplicates accepted: no dedup here
        assert all(o.reject_reason != "duplicate" for o in outcomes)


def test_criterion_9_fidelity_pattern():
    with criterion(9, "score fidelity: high dataset-level, low per-point"):
        world = SimWorld(seed=3, topics=1, reward_noise=0.02, learn_rate=0.0015)
        pool = make_sim_corpus(1500, seed=3, world=world)
        state = world.base_state()
        hp = FinetuneHyperparams(epochs=1)
        accumulated = None
        parent_medians, child_medians = [], []
        first_step = None
        for t in range(10):
            losses = []
            for sample in pool:
                delta, topic = world.question_params(sample.question)
                p = world.p_correct(state, sample.question)
                branch = p if state.mastery[topic] >= delta else 1.0 - p
                losses.append(-math.log(branch))
            order = np.argsort(-np.asarray(losses), kind="stable")[:300]
            parent_scores, child_scores, children = [], [], []
            for j, index in enumerate(order):
                parent = pool.samples[int(index)]
                child_question = world.child_question(parent.question, 1000 * t + j)
                parent_scores.append(world.reward(parent.question, parent.answer))
                child_scores.append(world.reward(child_question, "student reply"))
                children.append(Sample(
                    id=f"c-{t}-{j}", question=child_question,
                    answer=world.correct_answer(child_question),
                    origin="synthetic", parent_id=parent.id, iteration=t,
                ))
            if t == 0:
                first_step = spearman(parent_scores, child_scores)
            parent_medians.append(float(np.median(parent_scores)))
            child_medians.append(float(np.median(child_scores)))
            current = Corpus(role="synthetic", samples=tuple(children), created_at_iteration=t)
            accumulated = current if accumulated is None else merge_accumulate(current, accumulated)
            state = world.finetune(accumulated, None, hp)

        rho_median, p_median = spearman(parent_medians, child_medians)
        rho_point, p_point = first_step
        assert rho_median >= 0.9, f"dataset-median rho {rho_median:.3f}"
        assert p_median < 0.01
        assert 0.0 < rho_point < 0.6, f"per-point rho {rho_point:.3f}"
        assert p_point < 0.01


def test_criterion_10_budget_conservation(sim_dataset, tmp_path, monkeypatch):
    with criterion(10, "budget ledger conservation"):
        charges = []
        original = BudgetLedger.charge

        def recording_charge(self, role, usage):
            charges.append((role, usage.input_tokens, usage.output_tokens))
            return original(self, role, usage)

        monkeypatch.setattr(BudgetLedger, "charge", recording_charge)
        config = make_run_config(
            sim_dataset, tmp_path / "run", scorer="reward_self",
            iterations=3, batch=15, seeds=(1,),
        )
        manifest = run(config)
        states = manifest.replicate_states()[1]
        final = states[-1]["ledger"]
        for role in ("teacher", "student", "reward"):
            assert final[role]["input_tokens"] == sum(i for r, i, _ in charges if r == role)
            assert final[role]["output_tokens"] == sum(o for r, _, o in charges if r == role)

        # reward tokens are tracked but excluded from the teacher budget proxy
        assert final["reward"]["input_tokens"] > 0
        for state in states:
            teacher = state["ledger"]["teacher"]
            assert state["teacher_budget_tokens"] == (
                teacher["input_tokens"] + teacher["output_tokens"]
            )
