"""Command-line entry point: one subcommand per pipeline stage.

Every subcommand reads its inputs from explicit paths and writes only under
``--out``. Exit codes: 0 success, 1 configuration error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Sequence

logger = logging.getLogger(__name__)

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2


class ConfigError(Exception):
    """Bad flags, missing inputs or malformed config files."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(f"{self.prog}: {message}")


# -- helpers -----------------------------------------------------------------------------

def _existing(path: str | None, what: str, directory: bool | None = None) -> Path | None:
    if path is None:
        return None
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"{what} {p} does not exist")
    if directory is True and not p.is_dir():
        raise ConfigError(f"{what} {p} is not a directory")
    if directory is False and not p.is_file():
        raise ConfigError(f"{what} {p} is not a file")
    return p


def _backend_path(spec: str) -> None:
    if spec.startswith("mock:"):
        _existing(spec[5:], "mock script", directory=False)
    elif not spec.startswith(("http://", "https://")):
        raise ConfigError(f"--backend must be mock:<script> or an http(s) URL, got {spec!r}")


def _csv_list(text: str | None) -> list[str] | None:
    if text is None:
        return None
    items = [x.strip() for x in text.split(",") if x.strip()]
    if not items:
        raise ConfigError("empty list")
    return items


def _load_store(path: Path):
    from clinskill.ehr.store import EhrStore

    return EhrStore.load(path)


def _write_jsonl(path: Path, records) -> Path:
    from clinskill.agents.runner import write_jsonl

    return write_jsonl(records, path)


def _backend(args):
    from clinskill.agents.backends import backend_from_spec

    try:
        return backend_from_spec(args.backend, args.model)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _add_backend(p: argparse.ArgumentParser) -> None:
    p.add_argument("--backend", required=True, help="mock:<script path> or a chat-completions base URL")
    p.add_argument("--model", default="", help="model name for a live backend")
    p.add_argument("--parallelism", type=int, default=1, help="concurrent episodes (default 1)")


# -- subcommands ---------------------------------------------------------------------------

def cmd_generate_cohort(args) -> None:
    from clinskill.ehr.cohort import CohortSpec, CohortSpecError, generate_cohort

    try:
        spec = CohortSpec.from_file(_existing(args.config, "cohort config", False)) if args.config else CohortSpec()
        overrides = {k: v for k, v in (("seed", args.seed), ("n_stays", args.n_stays)) if v is not None}
        if overrides:
            spec = CohortSpec(**{**spec.__dict__, **overrides})
    except (CohortSpecError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    store = generate_cohort(spec)
    out = Path(args.out)
    store.export_csv(out / "cohort")
    (out / "cohort.cfg").write_text(spec.to_text())
    (out / "cohort.sha256").write_text(store.fingerprint() + "\n")
    if args.duckdb:
        store.save(out / "cohort.duckdb")
    logger.info("wrote %d stays to %s", len(store.stay_ids), out / "cohort")


def cmd_build_graph(args) -> None:
    from clinskill.graph.dag import topological_batches
    from clinskill.graph.manifest import export_graph, load_graph

    manifest = _existing(args.manifest, "manifest directory", True)
    guidelines = _existing(args.guidelines, "guideline directory", True)
    graph = load_graph(manifest, guidelines=guidelines)
    out = Path(args.out)
    export_graph(graph, out)
    batches = topological_batches(graph)
    (out / "batches.txt").write_text("".join(" ".join(b) + "\n" for b in batches))
    census = graph.level_census()
    (out / "levels.json").write_text(json.dumps(
        {"census": census, "levels": {n: graph[n].level for n in graph.names() if graph[n].level}},
        sort_keys=True, indent=1) + "\n")
    logger.info("graph: %d nodes, %d batches, census %s", len(graph.nodes), len(batches), census)


def cmd_gen_questions(args) -> None:
    from clinskill.bench.generate import generate_benchmark, write_instances
    from clinskill.ehr.splits import split_subjects
    from clinskill.graph.manifest import load_graph

    store_path = _existing(args.store, "store")
    manifest = _existing(args.manifest, "manifest directory", True)
    if not 1 <= args.budget <= 1000:
        raise ConfigError("--budget must be in 1..1000")
    if not 0 < args.train_fraction < 1:
        raise ConfigError("--train-fraction must lie in (0, 1)")
    graph = load_graph(manifest)
    concepts = _csv_list(args.concepts)
    if concepts:
        unknown = [c for c in concepts if c not in graph.names("derived")]
        if unknown:
            raise ConfigError(f"unknown derived concepts: {', '.join(unknown)}")
    store = _load_store(store_path)
    splits = split_subjects(store, args.train_fraction, args.seed)
    instances = generate_benchmark(store, graph, splits, seed=args.seed, budget=args.budget, concepts=concepts)
    write_instances(instances, Path(args.out) / "questions.jsonl")
    n_train = sum(i.split == "train" for i in instances)
    logger.info("wrote %d questions (%d train, %d test)", len(instances), n_train, len(instances) - n_train)


def cmd_synthesize(args) -> None:
    from clinskill.agents.runner import run_many
    from clinskill.bench.generate import read_instances
    from clinskill.graph.dag import topological_batches
    from clinskill.graph.manifest import load_graph
    from clinskill.guidelines.store import GuidelineStore
    from clinskill.skills.library import SkillLibrary
    from clinskill.skills.synthesis import (ConfigError as SynthConfigError, EmptySkillError, SynthesisAborted,
                                            SynthesisConfig, run_autoformalize, write_transcript)
    from clinskill.skills.verify import VerificationDataset

    store_path = _existing(args.store, "store")
    questions = _existing(args.questions, "questions file", False)
    manifest = _existing(args.manifest, "manifest directory", True)
    gdir = _existing(args.guidelines, "guideline directory", True)
    _backend_path(args.backend)
    overrides = {k: v for k, v in (("theta", args.theta), ("max_iterations", args.max_iterations),
                                    ("compression_trigger", args.compression_trigger)) if v is not None}
    try:
        if args.config:
            config = SynthesisConfig.from_file(_existing(args.config, "synthesis config", False), **overrides)
        else:
            config = SynthesisConfig(**overrides)
    except (SynthConfigError, ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from exc
    if args.parallelism < 1:
        raise ConfigError("--parallelism must be positive")

    instances = read_instances(questions)
    graph = load_graph(manifest, guidelines=gdir)
    guidelines = GuidelineStore.load(gdir)
    wanted = _csv_list(args.concepts) or sorted({i.concept for i in instances})
    missing = [c for c in wanted if c not in graph]
    if missing:
        raise ConfigError(f"concepts not in the graph: {', '.join(missing)}")
    store = _load_store(store_path)
    backend = _backend(args)
    out = Path(args.out)
    library = SkillLibrary(Path(args.library) if args.library else out / "library")

    def one(concept: str) -> dict:
        try:
            dataset = VerificationDataset.from_instances(instances, concept)
        except ValueError:
            logger.warning("%s: no train-split questions, skipped", concept)
            return {"concept": concept, "status": "skipped"}
        try:
            run = run_autoformalize(concept, dataset, store, guidelines, library, backend, config,
                                    description=graph[concept].description or "")
        except EmptySkillError as exc:
            return {"concept": concept, "status": "empty", "error": str(exc)}
        except SynthesisAborted as exc:
            rec = exc.partial
            return {"concept": concept, "status": "aborted", "error": str(exc),
                    "accuracy": rec.accuracy if rec else None}
        write_transcript(run.session, out / "transcripts" / f"{concept}.jsonl")
        rec = run.record
        if rec.accepted:
            library.put(rec)
        return {"concept": concept, "status": "accepted" if rec.accepted else "rejected", "skill": rec.name,
                "accuracy": rec.accuracy, "iterations": rec.iterations, "n_items": rec.n_items,
                "tokens": run.tokens}

    results = []
    for batch in topological_batches(graph):
        todo = [c for c in batch if c in wanted]
        if todo:
            results += run_many(one, todo, args.parallelism)
    _write_jsonl(out / "synthesis.jsonl", results)
    aborted = [r["concept"] for r in results if r["status"] == "aborted"]
    logger.info("synthesis: %d accepted of %d", sum(r["status"] == "accepted" for r in results), len(results))
    if aborted:
        raise RuntimeError(f"synthesis aborted for {', '.join(aborted)}")


def cmd_evaluate_qa(args) -> None:
    from clinskill.agents.qa import QA_BUDGET, run_qa_episode
    from clinskill.agents.runner import run_many
    from clinskill.bench.generate import read_instances
    from clinskill.skills.library import SkillLibrary

    store_path = _existing(args.store, "store")
    questions = _existing(args.questions, "questions file", False)
    _backend_path(args.backend)
    library = None
    if args.config == "autoform":
        if not args.library:
            raise ConfigError("--config autoform needs --library")
        library = SkillLibrary(_existing(args.library, "library directory", True))
    if args.parallelism < 1 or (args.limit is not None and args.limit < 1):
        raise ConfigError("--parallelism and --limit must be positive")
    items = [i for i in read_instances(questions) if args.split == "all" or i.split == args.split]
    items = items[: args.limit] if args.limit else items
    if not items:
        raise ConfigError(f"no {args.split}-split questions in {questions}")
    store = _load_store(store_path)
    backend = _backend(args)
    results = run_many(lambda i: run_qa_episode(i, store, backend, library, args.config, args.budget or QA_BUDGET),
                       items, args.parallelism)
    out = Path(args.out)
    _write_jsonl(out / f"qa_{args.config}.jsonl", [r.to_record() for r in results])
    _write_jsonl(out / "transcripts" / f"qa_{args.config}.jsonl",
                 [{"instance_id": r.instance_id, "messages": [m.to_record() for m in r.transcript]} for r in results])
    logger.info("%s: %d of %d correct", args.config, sum(r.correct for r in results), len(results))


def cmd_run_surveillance(args) -> None:
    from clinskill.agents.runner import run_many
    from clinskill.agents.surveillance import SURVEILLANCE_BUDGET, run_surveillance_episode
    from clinskill.oracle.labels import build_trajectory_labels, write_labels
    from clinskill.skills.library import SkillLibrary

    store_path = _existing(args.store, "store")
    _backend_path(args.backend)
    library = SkillLibrary(_existing(args.library, "library directory", True)) if args.library else None
    store = _load_store(store_path)
    if args.stay_ids:
        try:
            stays = [int(s) for s in _csv_list(args.stay_ids)]
        except ValueError as exc:
            raise ConfigError(f"--stay-ids: {exc}") from exc
        unknown = [s for s in stays if s not in set(store.stay_ids)]
        if unknown:
            raise ConfigError(f"unknown stays: {unknown}")
    else:
        if args.stays < 1:
            raise ConfigError("--stays must be positive")
        stays = sorted(store.stay_ids)[: args.stays]
    backend = _backend(args)
    runs = run_many(lambda s: run_surveillance_episode(store, s, backend, library, args.budget or SURVEILLANCE_BUDGET,
                                                       args.summaries), stays, args.parallelism)
    out = Path(args.out)
    _write_jsonl(out / "surveillance.jsonl", [c.to_record(r.stay_id) for r in runs for c in r.checkpoints])
    write_labels([lab for s in stays for lab in build_trajectory_labels(store, s)], out / "labels.jsonl")
    _write_jsonl(out / "surveillance_tokens.jsonl",
                 [{"stay_id": r.stay_id, "prompt_tokens": r.prompt_tokens, "completion_tokens": r.completion_tokens}
                  for r in runs])
    logger.info("surveillance: %d stays, %d checkpoints", len(runs), sum(len(r.checkpoints) for r in runs))


def cmd_report(args) -> None:
    from clinskill.agents.runner import read_jsonl
    from clinskill.bench.generate import read_instances
    from clinskill.metrics.report import emit_report
    from clinskill.metrics.scoring import score_qa, score_surveillance
    from clinskill.oracle.labels import read_labels

    qa_files = [_existing(p, "QA results file", False) for p in args.qa or []]
    if qa_files and not args.questions:
        raise ConfigError("--qa needs --questions")
    if bool(args.surveillance) != bool(args.labels):
        raise ConfigError("--surveillance and --labels go together")
    if not qa_files and not args.surveillance:
        raise ConfigError("nothing to report: pass --qa and/or --surveillance")
    qa = {}
    if qa_files:
        instances = read_instances(_existing(args.questions, "questions file", False))
        for path in qa_files:
            recs = read_jsonl(path)
            names = {r.get("config", path.stem) for r in recs} or {path.stem}
            if len(names) != 1:
                raise ConfigError(f"{path} mixes configs {sorted(names)}")
            qa[names.pop()] = score_qa(recs, instances)
    sv = {}
    if args.surveillance:
        recs = read_jsonl(_existing(args.surveillance, "surveillance file", False))
        labels = read_labels(_existing(args.labels, "labels file", False))
        by_stay: dict[int, list] = {}
        for r in sorted(recs, key=lambda r: (r["stay_id"], r["step_index"])):
            by_stay.setdefault(r["stay_id"], []).append(r)
        sv[args.surveillance_name] = score_surveillance(by_stay, labels, args.f1_mode)
    md, _ = emit_report(args.out, qa, sv)
    logger.info("wrote %s", md)


# -- parser --------------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="clinskill", description="Skill synthesis and evaluation over a synthetic ICU store.")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", metavar="command", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("generate-cohort", help="generate a synthetic cohort")
    p.add_argument("--seed", type=int, help="generator seed (overrides the config file)")
    p.add_argument("--n-stays", type=int, help="number of ICU stays (overrides the config file)")
    p.add_argument("--config", help="cohort spec file of key = value lines")
    p.add_argument("--duckdb", action="store_true", help="also write a single-file database")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_generate_cohort)

    p = sub.add_parser("build-graph", help="build the concept dependency graph")
    p.add_argument("--manifest", help="concept manifest directory (bundled by default)")
    p.add_argument("--guidelines", help="guideline directory (bundled by default)")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_build_graph)

    p = sub.add_parser("gen-questions", help="sample compositional questions")
    p.add_argument("--store", required=True, help="cohort CSV directory or database file")
    p.add_argument("--manifest", help="concept manifest directory (bundled by default)")
    p.add_argument("--concepts", help="comma-separated derived concepts (default all)")
    p.add_argument("--budget", type=int, default=1000, help="questions per concept, at most 1000")
    p.add_argument("--train-fraction", type=float, default=0.3, help="share of subjects in the train split")
    p.add_argument("--seed", type=int, default=0, help="sampling seed")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_gen_questions)

    p = sub.add_parser("synthesize", help="build the skill library from train-split questions")
    p.add_argument("--store", required=True, help="cohort CSV directory or database file")
    p.add_argument("--questions", required=True, help="questions.jsonl")
    p.add_argument("--manifest", help="concept manifest directory (bundled by default)")
    p.add_argument("--guidelines", help="guideline directory (bundled by default)")
    p.add_argument("--concepts", help="comma-separated concepts (default all in the questions file)")
    p.add_argument("--library", help="library directory (default <out>/library)")
    p.add_argument("--config", help="synthesis config file of key = value lines")
    p.add_argument("--theta", type=float, help="acceptance threshold")
    p.add_argument("--max-iterations", type=int, help="iteration cap per concept")
    p.add_argument("--compression-trigger", type=int, help="context size that triggers compression")
    _add_backend(p)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_synthesize)

    p = sub.add_parser("evaluate-qa", help="answer test-split questions with an agent")
    p.add_argument("--store", required=True, help="cohort CSV directory or database file")
    p.add_argument("--questions", required=True, help="questions.jsonl")
    p.add_argument("--config", choices=("zeroshot", "autoform"), default="zeroshot", help="agent configuration")
    p.add_argument("--library", help="skill library directory (autoform)")
    p.add_argument("--split", choices=("test", "train", "all"), default="test", help="questions to answer")
    p.add_argument("--limit", type=int, help="answer only the first N questions")
    p.add_argument("--budget", type=int, help="tool-turn budget per question (default 15)")
    _add_backend(p)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_evaluate_qa)

    p = sub.add_parser("run-surveillance", help="run 13-checkpoint surveillance episodes")
    p.add_argument("--store", required=True, help="cohort CSV directory or database file")
    p.add_argument("--stays", type=int, default=5, help="number of stays, lowest ids first")
    p.add_argument("--stay-ids", help="comma-separated stay ids (overrides --stays)")
    p.add_argument("--library", help="skill library exposed through call_function")
    p.add_argument("--summaries", choices=("model", "template"), default="model", help="rolling history source")
    p.add_argument("--budget", type=int, help="tool-turn budget per checkpoint (default 10)")
    _add_backend(p)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_run_surveillance)

    p = sub.add_parser("report", help="score runs and write report.md and scores.jsonl")
    p.add_argument("--qa", action="append", help="QA results file, repeatable")
    p.add_argument("--questions", help="questions.jsonl the QA results answer")
    p.add_argument("--surveillance", help="surveillance.jsonl")
    p.add_argument("--labels", help="labels.jsonl from run-surveillance")
    p.add_argument("--surveillance-name", default="agent", help="row label for the surveillance run")
    p.add_argument("--f1-mode", choices=("checkpoint", "class"), default="checkpoint", help="set F1 averaging")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_report)
    return parser


def run_command(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # runtime failures of any stage
        logger.debug("traceback", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def main() -> None:
    sys.exit(run_command())


if __name__ == "__main__":
    main()
