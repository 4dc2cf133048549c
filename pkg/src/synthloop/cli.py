"""Command-line entry point.

Verbs: run, resume, score, select, generate, evaluate, analyze. Config files
are TOML; any key can be overridden with --set section.key=value. Exit codes:
0 success, 1 validation/config error, 2 runtime (transport/budget) error.
Errors print one machine-readable JSON line on stderr.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .corpus import Corpus, load_corpus, save_corpus, save_records
from .engine import RunConfig, _ReplicatePipeline, build_world, load_manifest, resume, run
from .errors import (
    BudgetExceededError,
    IntegrityError,
    ProtocolError,
    SynthloopError,
    TransportError,
    ValidationError,
)
from .scoring import save_scores
from .util import config_hash

RUNTIME_ERRORS = (TransportError, BudgetExceededError, ProtocolError)


def _load_config(path: str, overrides: list[str]) -> dict:
    config_path = Path(path)
    if not config_path.exists():
        raise ValidationError(f"config file not found: {config_path}")
    try:
        with config_path.open("rb") as fh:
            data = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ValidationError(f"config file {config_path} is not valid TOML: {exc}") from exc
    for item in overrides or []:
        if "=" not in item:
            raise ValidationError(f"override {item!r} must look like section.key=value")
        dotted, value = item.split("=", 1)
        keys = dotted.split(".")
        node = data
        for key in keys[:-1]:
            node = node.setdefault(key, {})
            if not isinstance(node, dict):
                raise ValidationError(f"override {dotted!r} crosses a non-table value")
        node[keys[-1]] = _coerce(value)
    return data


def _coerce(value: str):
    text = value.strip()
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    if text.lower() in ("true", "false"):
        return text.lower() == "true"
    if text.startswith("["):
        return json.loads(text)
    return text


def _fail(kind: str, message: str, code: int) -> int:
    sys.stderr.write(json.dumps({"error": kind, "message": message}) + "\n")
    return code


def _parse_run_config(args) -> RunConfig:
    data = _load_config(args.config, args.set)
    if args.seed is not None:
        data.setdefault("run", {})["replicate_seeds"] = [args.seed]
    if args.out is not None:
        data.setdefault("run", {})["output_dir"] = args.out
    return RunConfig.from_dict(data)


def cmd_run(args) -> int:
    config = _parse_run_config(args)
    if args.dry_run:
        plan = {
            "config_hash": config.hash,
            "resolved": config.raw,
            "iterations": config.iterations,
            "batch": config.batch,
            "replicates": config.replicate_seeds,
            "output_dir": str(config.output_dir),
        }
        print(json.dumps(plan, indent=2, sort_keys=True))
        return 0
    if args.resume:
        manifest = resume(config.output_dir)
    else:
        manifest = run(config)
    print(f"run complete: {manifest.path}")
    return 0


def cmd_resume(args) -> int:
    manifest = resume(args.manifest)
    print(f"run complete: {manifest.path}")
    return 0


def _pipeline_for(args) -> tuple[RunConfig, "_ReplicatePipeline"]:
    config = _parse_run_config(args)
    world = build_world(config)
    seed_corpus = load_corpus(config.seed_path, "seed")
    validation = (
        load_corpus(config.validation_path, "validation") if config.validation_path else None
    )
    try:
        test = load_corpus(config.test_path, "test")
    except (ValidationError, OSError):
        test = None
    replicate = config.replicate_seeds[0]
    return config, _ReplicatePipeline(config, world, replicate, seed_corpus, validation, test)


def cmd_score(args) -> int:
    """Score the seed corpus against the base student; write scores.jsonl."""
    config, pipeline = _pipeline_for(args)
    scores = []
    for sample in pipeline.seed_corpus:
        prediction = pipeline._predict(sample.question)
        scores.append(pipeline._score_sample(sample, prediction))
    out_dir = Path(args.out or config.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "scores.jsonl"
    save_scores(scores, path)
    print(str(path))
    return 0


def cmd_select(args) -> int:
    """Select a batch from previously written scores."""
    from .scoring import GradEmbedding, grad_feature_vector, load_scores, sparse_project
    from .util import stable_u64

    config, pipeline = _pipeline_for(args)
    scores_path = Path(args.scores) if args.scores else Path(args.out or config.output_dir) / "scores.jsonl"
    if config.selection.strategy == "badge":
        embeddings = []
        for sample in pipeline.seed_corpus:
            prediction = pipeline._predict(sample.question)
            raw = grad_feature_vector(pipeline.student, sample.question, prediction)
            d = min(config.selection.badge_dim, len(raw))
            projected = sparse_project(raw, d, seed=int(stable_u64("proj", config.hash) % 2**32))
            embeddings.append(GradEmbedding(sample.id, tuple(float(v) for v in projected)))
        selected, _ = pipeline._select(0, list(pipeline.seed_corpus.samples), [], embeddings)
    else:
        scores = load_scores(scores_path)
        selected, _ = pipeline._select(0, list(pipeline.seed_corpus.samples), scores, None)
    out_dir = Path(args.out or config.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "selected.json"
    with path.open("w", encoding="utf-8") as fh:
        json.dump({"iteration": 0, "strategy": config.selection.strategy,
                   "scorer": config.scorer, "ids": selected}, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(str(path))
    return 0


def cmd_generate(args) -> int:
    """Synthesize from a selected-ids file; write synthetic.jsonl."""
    from .synthgen import generate_batch

    config, pipeline = _pipeline_for(args)
    with Path(args.selected).open("r", encoding="utf-8") as fh:
        selected = json.load(fh)["ids"]
    children, records, _ = generate_batch(
        pipeline.teacher, pipeline.template, pipeline.seed_corpus, selected,
        m=len(selected), iteration=0, history=pipeline.history,
        dedup_threshold=config.dedup_threshold, run_seed=config.replicate_seeds[0],
        ledger=pipeline.ledger, temperature=config.generation["temperature"],
        max_output_tokens=config.generation["max_output_tokens"],
    )
    out_dir = Path(args.out or config.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    corpus = Corpus(role="synthetic", samples=tuple(children))
    save_corpus(corpus, out_dir / "synthetic.jsonl")
    save_records(records, out_dir / "records.jsonl")
    print(str(out_dir / "synthetic.jsonl"))
    return 0


def cmd_evaluate(args) -> int:
    """Evaluate the base student on the test corpus; print accuracy JSON."""
    from .verify import eval_accuracy

    config, pipeline = _pipeline_for(args)
    if pipeline.test is None:
        raise ValidationError(f"test corpus not readable: {config.test_path}")
    predictions = {s.id: pipeline._predict(s.question) for s in pipeline.test}
    accuracy, se, _ = eval_accuracy(
        pipeline.test, predictions, pipeline.verifier, pipeline.verifier_method
    )
    print(json.dumps({"accuracy": accuracy, "se": se, "n": len(pipeline.test)}))
    return 0


def cmd_analyze(args) -> int:
    from .analysis import emit_report

    if not args.manifests:
        raise ValidationError("analyze needs at least one manifest path")
    manifests = [load_manifest(path) for path in args.manifests]
    out_dir = Path(args.out or "reports")
    try:
        files = emit_report(manifests, out_dir)
    except OSError as exc:
        raise ValidationError(f"cannot write reports under {out_dir}: {exc}") from exc
    for path in files:
        print(str(path))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="synthloop",
        description="Iterative student-guided synthetic data generation.",
    )
    sub = parser.add_subparsers(dest="verb", required=True)

    def add_config_flags(p):
        p.add_argument("--config", required=True, help="TOML run configuration")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config key (dotted path)")
        p.add_argument("--seed", type=int, default=None,
                       help="override run.replicate_seeds with a single seed")
        p.add_argument("--out", default=None, help="output directory override")

    p_run = sub.add_parser("run", help="execute the full iterative loop")
    add_config_flags(p_run)
    p_run.add_argument("--dry-run", action="store_true",
                       help="validate config and print the plan, no side effects")
    p_run.add_argument("--resume", action="store_true",
                       help="continue the run already in the output directory")
    p_run.set_defaults(func=cmd_run)

    p_resume = sub.add_parser("resume", help="continue a partial run from its manifest")
    p_resume.add_argument("manifest", help="manifest file or run directory")
    p_resume.set_defaults(func=cmd_resume)

    p_score = sub.add_parser("score", help="score the seed corpus against the student")
    add_config_flags(p_score)
    p_score.set_defaults(func=cmd_score)

    p_select = sub.add_parser("select", help="select a batch from a scores file")
    add_config_flags(p_select)
    p_select.add_argument("--scores", default=None, help="scores.jsonl path")
    p_select.set_defaults(func=cmd_select)

    p_generate = sub.add_parser("generate", help="synthesize from selected exemplars")
    add_config_flags(p_generate)
    p_generate.add_argument("--selected", required=True, help="selected.json path")
    p_generate.set_defaults(func=cmd_generate)

    p_evaluate = sub.add_parser("evaluate", help="evaluate the student on the test set")
    add_config_flags(p_evaluate)
    p_evaluate.set_defaults(func=cmd_evaluate)

    p_analyze = sub.add_parser("analyze", help="emit report files from manifests")
    p_analyze.add_argument("manifests", nargs="*", help="manifest files or run directories")
    p_analyze.add_argument("--out", default=None, help="report output directory")
    p_analyze.set_defaults(func=cmd_analyze)
    return parser


def dispatch(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 1 if exc.code not in (0, None) else 0
    try:
        return args.func(args)
    except RUNTIME_ERRORS as exc:
        return _fail(type(exc).__name__, str(exc), 2)
    except (ValidationError, IntegrityError) as exc:
        return _fail(type(exc).__name__, str(exc), 1)
    except SynthloopError as exc:
        return _fail(type(exc).__name__, str(exc), 1)
    except OSError as exc:
        return _fail("OSError", str(exc), 1)


def main() -> None:
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
