"""End-to-end orchestration of the iterative generation loop.

Per replicate seed and iteration: generate student predictions on the seed
pool, score and select exemplars, synthesize new question-answer pairs,
append them to all earlier synthetic data, fine-tune the student from base
weights, and evaluate on the held-out test set. Every stage writes its
artifacts under the run directory so the run can be resumed, replayed
bit-for-bit against simulated backends, and analysed offline.

Output layout:

    <output_dir>/
      config.json              resolved configuration (its hash keys the run)
      manifest.json            per-replicate iteration states + ledger trail
      learning_curve.csv       replicate-aggregated accuracy vs corpus size
      replicate-<seed>/iter-<t>/
        scores.jsonl selected.json synthetic.jsonl records.jsonl
        child_scores.jsonl child_verdicts.jsonl verdicts.jsonl
        ledger.json state.json
"""

from __future__ import annotations

import csv
import json
import platform
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from . import __version__
from .analysis import CurvePoint, LearningCurve, token_histogram, tvd
from .corpus import Corpus, Sample, load_corpus, load_records, merge_accumulate, save_corpus, save_records
from .errors import BudgetExceededError, IntegrityError, ValidationError
from .modelio import (
    BudgetLedger,
    FinetuneHyperparams,
    FINETUNE_PRESETS,
    ModelEndpoint,
    SimWorld,
    sim_endpoint,
)
from .modelio.ops import answer_logprobs, reward_score, student_finetune, student_greedy_generate
from .modelio.remote import RemoteBackend, RemoteConfig
from .scoring import (
    GradEmbedding,
    Score,
    grad_feature_vector,
    judge_pair_score,
    load_scores,
    save_scores,
    sequence_loss,
    sparse_project,
)
from .selection import (
    SelectionConfig,
    select_argmax,
    select_badge,
    select_pooled,
    select_random,
    select_softmax_sample,
    shuffled,
    split_pools_by_correctness,
    split_pools_by_threshold,
)
from .synthgen import DedupHistory, generate_batch, student_prediction_prompt, template_for
from .util import config_hash, rng_from, stable_u64
from .verify import Verdict, boxed_match, eval_accuracy, game24_match, llm_judge_verify

MANIFEST_NAME = "manifest.json"
CONFIG_NAME = "config.json"
CURVE_NAME = "learning_curve.csv"
VOLATILE_MANIFEST_KEYS = ("wall_clock_seconds", "versions")


# -- configuration ---------------------------------------------------------------


@dataclass
class RunConfig:
    """Validated, resolved run configuration. ``raw`` is the canonical dict
    whose hash identifies the run."""

    raw: dict
    iterations: int
    batch: int
    scorer: str
    dataset_kind: str
    selection: SelectionConfig
    replicate_seeds: list[int]
    dedup_threshold: float
    seed_path: Path
    validation_path: Optional[Path]
    test_path: Path
    output_dir: Path
    endpoints: dict
    sim: dict
    finetune: FinetuneHyperparams
    budget_caps: dict
    include_reward_in_teacher: bool
    generation: dict
    verifier_name: str
    analysis_artifacts: bool
    exclude_selected: bool
    label_text: str

    @property
    def hash(self) -> str:
        return config_hash(self.raw)

    @classmethod
    def from_dict(cls, data: dict, base_dir: Path = Path(".")) -> "RunConfig":
        data = json.loads(json.dumps(data))  # deep copy, canonical types
        run = data.get("run", {})
        iterations = int(run.get("iterations", 1))
        if iterations < 1:
            raise ValidationError("run.iterations must be >= 1")
        batch = int(run.get("batch", 1000))
        scorer = run.get("scorer", "loss_self")
        if scorer not in ("loss_self", "loss_gt", "reward_self", "reward_gt",
                          "judge_pair", "correctness", "random"):
            raise ValidationError(f"unknown scorer {scorer!r}")
        dataset_kind = run.get("dataset_kind", "gsm8k_style")
        seeds = [int(s) for s in run.get("replicate_seeds", [1, 2, 3])]
        if not seeds or len(set(seeds)) != len(seeds):
            raise ValidationError("replicate_seeds must be non-empty and distinct")
        sel = data.get("selection", {})
        selection = SelectionConfig(
            strategy=sel.get("strategy", "argmax"),
            m=batch,
            direction=sel.get("direction", "high"),
            temperature=float(sel.get("temperature", 1.0)),
            pool_rule=sel.get("pool_rule", "lion_easy_hard"),
            seed=0,
            badge_dim=int(sel.get("badge_dim", 1024)),
            badge_first_pick=sel.get("badge_first_pick", "origin"),
            lion_gap_threshold=float(sel.get("lion_gap_threshold", 1.0)),
        )
        paths = data.get("paths", {})
        if "seed" not in paths or "test" not in paths:
            raise ValidationError("paths.seed and paths.test are required")
        finetune_section = data.get("finetune", {})
        preset = finetune_section.get("preset")
        if preset:
            if preset not in FINETUNE_PRESETS:
                raise ValidationError(f"unknown finetune preset {preset!r}")
            hp = FINETUNE_PRESETS[preset]
        else:
            defaults = FinetuneHyperparams().to_dict()
            defaults.update({k: v for k, v in finetune_section.items() if k != "preset"})
            hp = FinetuneHyperparams(**defaults)
        budget = data.get("budget", {})
        caps = {
            role: int(budget[role])
            for role in ("teacher", "student", "reward")
            if role in budget
        }
        generation = {
            "temperature": float(data.get("generation", {}).get("temperature", 0.7)),
            "max_output_tokens": int(data.get("generation", {}).get("max_output_tokens", 768)),
            "few_shot_k": int(data.get("generation", {}).get("few_shot_k", 5)),
        }
        verifier_name = data.get("evaluation", {}).get(
            "verifier", "game24" if dataset_kind == "game24_backward" else "boxed_match"
        )
        if verifier_name not in ("boxed_match", "game24", "llm_judge"):
            raise ValidationError(f"unknown verifier {verifier_name!r}")
        label = run.get("label") or f"{scorer}-{selection.strategy}-{selection.direction}"
        return cls(
            raw=data,
            iterations=iterations,
            batch=batch,
            scorer=scorer,
            dataset_kind=dataset_kind,
            selection=selection,
            replicate_seeds=seeds,
            dedup_threshold=float(run.get("dedup_threshold", 0.7)),
            seed_path=base_dir / paths["seed"],
            validation_path=(base_dir / paths["validation"]) if paths.get("validation") else None,
            test_path=base_dir / paths["test"],
            output_dir=base_dir / run.get("output_dir", paths.get("output_dir", "out")),
            endpoints=data.get("endpoints", {}),
            sim=data.get("sim", {}),
            finetune=hp,
            budget_caps=caps,
            include_reward_in_teacher=bool(budget.get("include_reward_in_teacher", False)),
            generation=generation,
            verifier_name=verifier_name,
            analysis_artifacts=bool(run.get("analysis_artifacts", True)),
            exclude_selected=bool(run.get("exclude_selected", False)),
            label_text=label,
        )


def build_world(config: RunConfig) -> SimWorld:
    sim = config.sim
    return SimWorld(
        seed=int(sim.get("seed", 0)),
        topics=int(sim.get("topics", 4)),
        steepness=float(sim.get("steepness", 8.0)),
        learn_rate=float(sim.get("learn_rate", 0.04)),
        bump_center=float(sim.get("bump_center", 0.08)),
        bump_width=float(sim.get("bump_width", 0.12)),
        gen_noise=float(sim.get("gen_noise", 0.1)),
        reward_noise=float(sim.get("reward_noise", 0.05)),
        base_mastery=float(sim.get("base_mastery", 0.15)),
    )


def _build_endpoint(role: str, spec: dict, world: SimWorld, ledger: BudgetLedger) -> ModelEndpoint:
    transport = spec.get("transport", "simulated")
    if transport == "simulated":
        return sim_endpoint(world, role, ledger=ledger)
    if transport == "remote":
        backend = RemoteBackend(
            RemoteConfig(
                base_url=spec["base_url"],
                model=spec.get("model", ""),
                api_key_env=spec.get("api_key_env"),
                timeout_seconds=float(spec.get("timeout_seconds", 60.0)),
            )
        )
        capabilities = frozenset(
            spec.get(
                "capabilities",
                {
                    "teacher": ["generate", "logprobs"],
                    "student": ["generate", "logprobs", "grad_embedding", "finetune"],
                    "reward": ["reward", "generate"],
                }[role],
            )
        )
        if spec.get("verify_capabilities"):
            from .modelio.remote import require_capabilities

            require_capabilities(backend, capabilities)
        endpoint = ModelEndpoint(
            role=role, capabilities=capabilities, transport="remote",
            backend=backend, name=spec.get("model", f"remote-{role}"),
        )
        endpoint.ledger = ledger
        return endpoint
    raise ValidationError(f"unknown endpoint transport {transport!r}")


def _verifier_for(config: RunConfig, judge: Optional[ModelEndpoint], ledger):
    if config.verifier_name == "game24":
        return game24_match, "arithmetic_24"
    if config.verifier_name == "llm_judge":
        if judge is None:
            raise ValidationError("llm_judge verification needs a judge endpoint")

        def judge_verifier(sample, prediction):
            return llm_judge_verify(
                judge, sample.question, sample.answer, prediction,
                config.dataset_kind, ledger,
            )

        return judge_verifier, "llm_judge"
    return boxed_match, "boxed_match"


# -- manifest -----------------------------------------------------------------------


class RunManifest:
    """On-disk record of one run; view helpers feed the analysis module."""

    def __init__(self, config: RunConfig, data: dict, path: Path):
        self.config = config
        self.data = data
        self.path = path

    @property
    def config_hash(self) -> str:
        return self.data["config_hash"]

    @property
    def output_dir(self) -> Path:
        return self.path.parent

    def label(self) -> str:
        return self.config.label_text

    def dataset_label(self) -> str:
        return f"{self.config.dataset_kind}:{Path(self.config.seed_path).stem}"

    def replicate_states(self) -> dict[int, list[dict]]:
        return {int(k): v for k, v in self.data["replicates"].items()}

    def is_complete(self) -> bool:
        states = self.replicate_states()
        return all(
            len(states.get(seed, [])) == self.config.iterations
            for seed in self.config.replicate_seeds
        )

    def require_complete(self) -> None:
        for seed in self.config.replicate_seeds:
            states = self.replicate_states().get(seed, [])
            if len(states) < self.config.iterations:
                raise ValidationError(
                    f"manifest incomplete: replicate {seed} is missing iteration {len(states)}"
                )

    def learning_curve(self) -> LearningCurve:
        self.require_complete()
        states = self.replicate_states()
        points = []
        for t in range(self.config.iterations):
            entries = [states[seed][t] for seed in self.config.replicate_seeds]
            sizes = [e["accumulated_size"] for e in entries]
            accs = [e["accuracy"] for e in entries]
            mean = sum(accs) / len(accs)
            if len(accs) > 1:
                var = sum((a - mean) ** 2 for a in accs) / (len(accs) - 1)
                se = (var / len(accs)) ** 0.5
            else:
                se = 0.0
            points.append(
                CurvePoint(
                    n=int(round(sum(sizes) / len(sizes))), mean=mean, se=se,
                    replicates=len(accs),
                )
            )
        return LearningCurve(label=self.label(), points=tuple(points))

    def iteration_dir(self, replicate: int, t: int) -> Path:
        return self.output_dir / f"replicate-{replicate}" / f"iter-{t}"

    def tvd_series(self):
        seed_corpus = load_corpus(self.config.seed_path, "seed")
        seed_hist = token_histogram(seed_corpus)
        for replicate in self.config.replicate_seeds:
            accumulated = None
            for t in range(len(self.replicate_states().get(replicate, []))):
                current = load_corpus(self.iteration_dir(replicate, t) / "synthetic.jsonl", "synthetic")
                accumulated = current if accumulated is None else merge_accumulate(current, accumulated)
                if len(accumulated) == 0:
                    continue
                yield replicate, t, tvd(seed_hist, token_histogram(accumulated))

    def save(self) -> None:
        self.path.parent.mkdir(parents=True, exist_ok=True)
        with self.path.open("w", encoding="utf-8") as fh:
            json.dump(self.data, fh, indent=2, sort_keys=True)
            fh.write("\n")


def load_manifest(path) -> RunManifest:
    path = Path(path)
    if path.is_dir():
        path = path / MANIFEST_NAME
    try:
        with path.open("r", encoding="utf-8") as fh:
            data = json.load(fh)
    except OSError as exc:
        raise IntegrityError(f"cannot read manifest {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise IntegrityError(f"manifest {path} is corrupted: {exc}") from exc
    for key in ("config_hash", "config", "replicates"):
        if key not in data:
            raise IntegrityError(f"manifest {path} lacks the {key!r} field")
    config = RunConfig.from_dict(data["config"])
    config.output_dir = path.parent
    if config.hash != data["config_hash"]:
        raise IntegrityError("manifest config hash does not match its stored config")
    return RunManifest(config, data, path)


def fidelity_table(manifest: RunManifest) -> list[tuple[float, float]]:
    """(original selection score, synthetic child score) pairs."""
    rows = []
    for replicate, states in manifest.replicate_states().items():
        for t in range(len(states)):
            directory = manifest.iteration_dir(replicate, t)
            records_path = directory / "records.jsonl"
            child_path = directory / "child_scores.jsonl"
            if not records_path.exists() or not child_path.exists():
                continue
            child_scores = {s.sample_id: s.value for s in load_scores(child_path)}
            for record in load_records(records_path):
                if record.selection_score is not None and record.child_id in child_scores:
                    rows.append((record.selection_score, child_scores[record.child_id]))
    return rows


def load_iteration_children(manifest: RunManifest) -> dict[str, tuple[list[int], list[int], int]]:
    """Per (replicate, iteration): child correctness flags, the score-order
    permutation (hard first), and the seed for the comparison random order."""
    out = {}
    for replicate, states in manifest.replicate_states().items():
        for t in range(len(states)):
            directory = manifest.iteration_dir(replicate, t)
            records_path = directory / "records.jsonl"
            verdict_path = directory / "child_verdicts.jsonl"
            if not records_path.exists() or not verdict_path.exists():
                continue
            records = load_records(records_path)
            verdicts = {}
            with verdict_path.open("r", encoding="utf-8") as fh:
                for line in fh:
                    if line.strip():
                        entry = json.loads(line)
                        verdicts[entry["sample_id"]] = int(bool(entry["correct"]))
            correct = [verdicts.get(r.child_id, 0) for r in records]
            scores = [r.selection_score if r.selection_score is not None else 0.0 for r in records]
            hard_first = manifest.config.selection.direction == "high"
            order = sorted(
                range(len(records)),
                key=lambda i: (-scores[i], i) if hard_first else (scores[i], i),
            )
            seed = stable_u64("cumacc", replicate, t) % 2**32
            out[f"replicate-{replicate}/iter-{t}"] = (correct, order, int(seed))
    return out


# -- the loop -----------------------------------------------------------------------


class _ReplicatePipeline:
    """Runs one replicate seed, writing artifacts as iterations complete."""

    def __init__(self, config: RunConfig, world: SimWorld, replicate: int,
                 seed_corpus: Corpus, validation: Optional[Corpus], test: Corpus):
        self.config = config
        self.world = world
        self.replicate = replicate
        self.seed_corpus = seed_corpus
        self.validation = validation
        self.test = test
        self.ledger = BudgetLedger(caps=dict(config.budget_caps))
        self.teacher = _build_endpoint("teacher", config.endpoints.get("teacher", {}), world, self.ledger)
        self.student = _build_endpoint("student", config.endpoints.get("student", {}), world, self.ledger)
        self.reward = _build_endpoint("reward", config.endpoints.get("reward", {}), world, self.ledger)
        judge_spec = config.endpoints.get("judge")
        self.judge = (
            _build_endpoint("teacher", judge_spec, world, self.ledger) if judge_spec else self.teacher
        )
        self.template = template_for(config.dataset_kind, config.generation["few_shot_k"])
        self.history = DedupHistory()
        self.accumulated: Optional[Corpus] = None
        self.selected_ever: set[str] = set()
        self.states: list[dict] = []
        self._prediction_cache: dict[tuple[str, str], str] = {}
        self.verifier, self.verifier_method = _verifier_for(config, self.judge, self.ledger)

    # -- helpers ------------------------------------------------------------

    def _state_id(self) -> str:
        backend = self.student.backend
        state = getattr(backend, "state", None)
        return state.id if state is not None else "base"

    def _predict(self, question: str) -> str:
        key = (self._state_id(), question)
        if key not in self._prediction_cache:
            prompt = student_prediction_prompt(self.config.dataset_kind, question)
            self._prediction_cache[key] = student_greedy_generate(
                self.student, prompt, self.ledger,
                max_output_tokens=self.config.generation["max_output_tokens"],
            )
        return self._prediction_cache[key]

    def _score_sample(self, sample: Sample, prediction: str) -> Score:
        scorer = self.config.scorer
        if scorer in ("loss_self", "loss_gt"):
            answer = prediction if scorer == "loss_self" else sample.answer
            entries = answer_logprobs(self.student, sample.question, answer, self.ledger)
            return Score(sample.id, scorer, sequence_loss([lp for _, lp in entries]))
        if scorer in ("reward_self", "reward_gt"):
            answer = prediction if scorer == "reward_self" else sample.answer
            return Score(sample.id, scorer, reward_score(self.reward, sample.question, answer, self.ledger))
        if scorer == "judge_pair":
            teacher_score, student_score = judge_pair_score(
                self.judge, sample.question, prediction, self.ledger,
                gen_seed=int(stable_u64("judge", self.replicate, sample.id) % 2**31),
            )
            return Score(sample.id, scorer, teacher_score - student_score,
                         aux=(teacher_score, student_score))
        if scorer == "correctness":
            correct, _ = self.verifier(sample, prediction)
            return Score(sample.id, scorer, float(bool(correct)))
        raise ValidationError(f"scorer {scorer!r} does not produce per-sample scores")

    def _candidates(self) -> list[Sample]:
        if not self.config.exclude_selected:
            return list(self.seed_corpus.samples)
        pool = [s for s in self.seed_corpus.samples if s.id not in self.selected_ever]
        return pool if len(pool) >= self.config.batch else list(self.seed_corpus.samples)

    def _select(self, t: int, candidates: list[Sample], scores: list[Score],
                embeddings: Optional[list[GradEmbedding]]) -> tuple[list[str], list[str]]:
        """Returns (selected m ids, extended refill ranking)."""
        config = self.config
        seed = int(stable_u64("select", config.selection.seed, self.replicate, t) % 2**32)
        n = len(candidates)
        m = min(config.batch, n)
        m_full = min(3 * m, n)
        strategy = config.selection.strategy
        if strategy == "pooled":
            if config.selection.pool_rule == "lion_easy_hard":
                pool_a, pool_b = split_pools_by_threshold(scores, config.selection.lion_gap_threshold)
            else:
                pool_a, pool_b = split_pools_by_correctness(scores)
            chosen = select_pooled(pool_a, pool_b, m, seed)
            leftovers = [s.id for s in candidates if s.id not in set(chosen)]
            rng = rng_from("refill", config.selection.seed, self.replicate, t)
            rng.shuffle(leftovers)
            return chosen, chosen + leftovers
        if strategy == "random":
            ranking = select_random([s.id for s in candidates], m_full, seed)
        elif strategy == "badge":
            ranking = select_badge(embeddings, m_full, seed, config.selection.badge_first_pick)
        elif strategy == "softmax_sample":
            values = scores
            if config.selection.direction == "low":
                values = [Score(s.sample_id, "random", -s.value) for s in scores]
            ranking = select_softmax_sample(values, m_full, config.selection.temperature, seed)
        else:  # argmax
            ordered = scores
            if config.scorer == "correctness":
                # Binary scores: seeded shuffle removes positional tie bias.
                ordered = shuffled(scores, seed)
            ranking = select_argmax(ordered, m_full, config.selection.direction)
        return ranking[:m], ranking

    # -- one iteration -------------------------------------------------------

    def run_iteration(self, t: int) -> dict:
        config = self.config
        directory = config.output_dir / f"replicate-{self.replicate}" / f"iter-{t}"
        directory.mkdir(parents=True, exist_ok=True)
        candidates = self._candidates()

        scores: list[Score] = []
        embeddings: Optional[list[GradEmbedding]] = None
        if config.selection.strategy == "badge":
            embeddings = []
            raw_dim = None
            for sample in candidates:
                prediction = self._predict(sample.question)
                raw = grad_feature_vector(self.student, sample.question, prediction)
                raw_dim = len(raw)
                d = min(config.selection.badge_dim, raw_dim)
                projected = sparse_project(raw, d, seed=int(stable_u64("proj", config.selection.seed) % 2**32))
                embeddings.append(GradEmbedding(sample.id, tuple(float(v) for v in projected)))
        elif config.scorer != "random":
            for sample in candidates:
                prediction = self._predict(sample.question)
                scores.append(self._score_sample(sample, prediction))
        save_scores(scores, directory / "scores.jsonl")

        selected_ids, ranking = self._select(t, candidates, scores, embeddings)
        self.selected_ever.update(selected_ids)
        with (directory / "selected.json").open("w", encoding="utf-8") as fh:
            json.dump(
                {"iteration": t, "strategy": config.selection.strategy,
                 "scorer": config.scorer, "ids": selected_ids},
                fh, indent=2, sort_keys=True,
            )
            fh.write("\n")

        score_map = {s.sample_id: s.value for s in scores}
        children, records, outcomes = generate_batch(
            self.teacher, self.template, self.seed_corpus, ranking,
            m=min(config.batch, len(ranking)), iteration=t,
            history=self.history, dedup_threshold=config.dedup_threshold,
            run_seed=self.replicate, ledger=self.ledger,
            selection_scores=score_map, scorer_kind=config.scorer,
            temperature=config.generation["temperature"],
            max_output_tokens=config.generation["max_output_tokens"],
        )
        if not children:
            reasons = {}
            for outcome in outcomes:
                reasons[outcome.reject_reason] = reasons.get(outcome.reject_reason, 0) + 1
            if reasons.get("teacher_error"):
                raise BudgetExceededError(
                    f"iteration {t}: no synthetic samples generated; rejections: {reasons}"
                )
            raise ValidationError(
                f"iteration {t}: every synthesis candidate was rejected: {reasons}"
            )
        current = Corpus(role="synthetic", samples=tuple(children), created_at_iteration=t)
        save_corpus(current, directory / "synthetic.jsonl")
        save_records(records, directory / "records.jsonl")

        if config.analysis_artifacts and config.scorer not in ("random",):
            child_scores = []
            child_verdicts = []
            for child in children:
                prediction = self._predict(child.question)
                try:
                    child_scores.append(self._score_sample(child, prediction))
                except BudgetExceededError:
                    raise
                correct, detail = self.verifier(child, prediction)
                child_verdicts.append(Verdict(child.id, bool(correct), self.verifier_method, detail))
            save_scores(child_scores, directory / "child_scores.jsonl")
            _save_verdicts(child_verdicts, directory / "child_verdicts.jsonl")

        self.accumulated = (
            current if self.accumulated is None else merge_accumulate(current, self.accumulated)
        )
        state = student_finetune(
            self.student, self.accumulated, self.validation, config.finetune,
            seed=int(stable_u64("sft", self.replicate, t) % 2**31),
        )

        predictions = {s.id: self._predict(s.question) for s in self.test}
        accuracy, se, verdicts = eval_accuracy(self.test, predictions, self.verifier, self.verifier_method)
        _save_verdicts(verdicts, directory / "verdicts.jsonl")

        snapshot = self.ledger.snapshot()
        # Teacher-compute proxy: total teacher tokens, with reward-model
        # tokens excluded unless the budget config opts them in.
        teacher_tokens = snapshot["teacher"]["input_tokens"] + snapshot["teacher"]["output_tokens"]
        if config.include_reward_in_teacher:
            teacher_tokens += snapshot["reward"]["input_tokens"] + snapshot["reward"]["output_tokens"]
        with (directory / "ledger.json").open("w", encoding="utf-8") as fh:
            json.dump(snapshot, fh, indent=2, sort_keys=True)
            fh.write("\n")
        state_detail = {"id": getattr(state, "id", str(state))}
        if hasattr(state, "mastery"):
            state_detail["mastery"] = list(state.mastery)
        with (directory / "state.json").open("w", encoding="utf-8") as fh:
            json.dump(state_detail, fh, indent=2, sort_keys=True)
            fh.write("\n")

        return {
            "t": t,
            "selected_ids": selected_ids,
            "accepted": len(children),
            "accumulated_size": len(self.accumulated),
            "state_id": state_detail["id"],
            "state_detail": state_detail,
            "accuracy": accuracy,
            "accuracy_se": se,
            "ledger": snapshot,
            "teacher_budget_tokens": teacher_tokens,
        }

    def restore_through(self, states: list[dict]) -> None:
        """Rebuild in-memory state from completed iterations' artifacts."""
        for t in range(len(states)):
            directory = self.config.output_dir / f"replicate-{self.replicate}" / f"iter-{t}"
            current = load_corpus(directory / "synthetic.jsonl", "synthetic")
            if self.config.dataset_kind != "game24_backward":
                for sample in current:
                    self.history.add(sample.question)
            self.accumulated = (
                current if self.accumulated is None else merge_accumulate(current, self.accumulated)
            )
            selected_path = directory / "selected.json"
            if selected_path.exists():
                with selected_path.open("r", encoding="utf-8") as fh:
                    self.selected_ever.update(json.load(fh)["ids"])
        if states:
            self.ledger.restore(states[-1]["ledger"])
            if self.accumulated is not None and len(self.accumulated) > 0:
                student_finetune(
                    self.student, self.accumulated, self.validation, self.config.finetune,
                    seed=int(stable_u64("sft", self.replicate, len(states) - 1) % 2**31),
                )
        self.states = list(states)


def _save_verdicts(verdicts, path: Path) -> None:
    with path.open("w", encoding="utf-8") as fh:
        for verdict in verdicts:
            fh.write(json.dumps(verdict.to_dict(), sort_keys=True))
            fh.write("\n")


def run(config: RunConfig) -> RunManifest:
    """Execute the full loop for every replicate seed.

    Budget exhaustion stops the run gracefully: completed iterations stay on
    disk and the manifest remains resumable. The BudgetExceededError is
    re-raised after the manifest is saved so callers can report it.
    """
    started = time.time()
    config.output_dir.mkdir(parents=True, exist_ok=True)
    with (config.output_dir / CONFIG_NAME).open("w", encoding="utf-8") as fh:
        json.dump(config.raw, fh, indent=2, sort_keys=True)
        fh.write("\n")
    manifest = RunManifest(
        config,
        {
            "config_hash": config.hash,
            "config": config.raw,
            "iterations_total": config.iterations,
            "replicates": {str(seed): [] for seed in config.replicate_seeds},
            "wall_clock_seconds": 0.0,
            "versions": {"python": platform.python_version(), "synthloop": __version__},
        },
        config.output_dir / MANIFEST_NAME,
    )
    return _drive(config, manifest, started)


def resume(manifest_path) -> RunManifest:
    """Continue a partial run from its first incomplete iteration; completed
    artifacts are left untouched."""
    manifest = load_manifest(manifest_path)
    if manifest.is_complete():
        return manifest
    return _drive(manifest.config, manifest, time.time())


def _drive(config: RunConfig, manifest: RunManifest, started: float) -> RunManifest:
    world = build_world(config)
    seed_corpus = load_corpus(config.seed_path, "seed")
    validation = (
        load_corpus(config.validation_path, "validation") if config.validation_path else None
    )
    test = load_corpus(config.test_path, "test")
    budget_stop: Optional[BudgetExceededError] = None
    for replicate in config.replicate_seeds:
        pipeline = _ReplicatePipeline(config, world, replicate, seed_corpus, validation, test)
        done = manifest.data["replicates"].get(str(replicate), [])
        if done:
            pipeline.restore_through(done)
        for t in range(len(done), config.iterations):
            try:
                state = pipeline.run_iteration(t)
            except BudgetExceededError as exc:
                budget_stop = exc
                break
            manifest.data["replicates"][str(replicate)].append(state)
            manifest.data["wall_clock_seconds"] = round(time.time() - started, 3)
            manifest.save()
        if budget_stop is not None:
            break
    manifest.data["wall_clock_seconds"] = round(time.time() - started, 3)
    manifest.save()
    if budget_stop is not None:
        raise BudgetExceededError(
            f"run stopped early: {budget_stop}; completed iterations preserved in {manifest.path}"
        )
    _write_learning_curve(manifest)
    return manifest


def _write_learning_curve(manifest: RunManifest) -> None:
    curve = manifest.learning_curve()
    path = manifest.output_dir / CURVE_NAME
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["algorithm", "dataset", "n", "mean", "se", "replicates"])
        for point in curve.points:
            writer.writerow(
                [curve.label, manifest.dataset_label(), point.n,
                 repr(point.mean), repr(point.se), point.replicates]
            )


def canonical_manifest_view(data: dict) -> dict:
    """Manifest minus volatile fields; equal across byte-identical reruns."""
    return {k: v for k, v in data.items() if k not in VOLATILE_MANIFEST_KEYS}
