"""The synthesize, verify and refine loop that turns a concept into a verified skill."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Callable, Sequence

from clinskill.agents.backends import BackendError, GenerationBackend, Message
from clinskill.ehr.sql import DEFAULT_TIMEOUT_S
from clinskill.guidelines.store import GuidelineStore
from clinskill.skills import program as program_mod
from clinskill.skills.executor import SkillRuntimeError, execute_skill, render_value
from clinskill.skills.library import SkillLibrary, SkillRecord
from clinskill.skills.program import SkillProgram, extract_skill_candidates, final_candidate
from clinskill.skills.tools import TOOLSETS, ToolContext, describe_call, run_tool, specs
from clinskill.skills.verify import (
    FEEDBACK_CAP,
    VerificationDataset,
    VerificationReport,
    bind_args,
    build_feedback,
    verify_skill,
)

logger = logging.getLogger(__name__)

CHARS_PER_TOKEN = 4
MAX_FACTS = 30


class ConfigError(ValueError):
    pass


class EmptySkillError(RuntimeError):
    """No final candidate was produced within the iteration budget."""


class SynthesisAborted(RuntimeError):
    def __init__(self, message: str, partial: SkillRecord | None):
        self.partial = partial
        super().__init__(message)


@dataclass(frozen=True)
class SynthesisConfig:
    theta: float = 0.90
    max_iterations: int = 100
    compression_trigger: int = 25_000
    sql_timeout: float = DEFAULT_TIMEOUT_S
    feedback_cap: int = FEEDBACK_CAP
    max_retries: int = 2
    summarizer: str = "mechanical"  # or "backend"

    def __post_init__(self):
        if not 0 < self.theta <= 1:
            raise ConfigError(f"theta must be in (0, 1], got {self.theta}")
        if self.max_iterations < 1:
            raise ConfigError(f"max_iterations must be >= 1, got {self.max_iterations}")
        if self.compression_trigger < 1:
            raise ConfigError("compression_trigger must be positive")
        if self.sql_timeout is not None and self.sql_timeout <= 0:
            raise ConfigError("sql_timeout must be positive")
        if self.feedback_cap < 1 or self.max_retries < 0:
            raise ConfigError("feedback_cap must be >= 1 and max_retries >= 0")
        if self.summarizer not in ("mechanical", "backend"):
            raise ConfigError("summarizer must be 'mechanical' or 'backend'")

    @classmethod
    def from_text(cls, text: str, **overrides) -> "SynthesisConfig":
        """Plain ``key = value`` lines; ``#`` starts a comment."""
        types = {f.name: f.type for f in fields(cls)}
        values = {}
        for n, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"config line {n}: expected key = value")
            key, val = (s.strip() for s in line.split("=", 1))
            if key not in types:
                raise ConfigError(f"config line {n}: unknown key {key!r}")
            try:
                values[key] = val if key == "summarizer" else (int(val) if types[key] == "int" else float(val))
            except ValueError:
                raise ConfigError(f"config line {n}: bad value for {key}: {val!r}") from None
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**values)

    @classmethod
    def from_file(cls, path: str | Path, **overrides) -> "SynthesisConfig":
        return cls.from_text(Path(path).read_text(), **overrides)


def estimate_tokens(messages: Sequence[Message]) -> int:
    chars = 0
    for m in messages:
        chars += len(m.content)
        for c in m.tool_calls:
            chars += len(describe_call(c.name, c.arguments))
    return math.ceil(chars / CHARS_PER_TOKEN)


@dataclass
class SynthesisSession:
    system_prompt: str
    task_prompt: str
    messages: list[Message] = field(default_factory=list)
    tool_log: list[dict] = field(default_factory=list)
    namespace: dict[str, SkillProgram] = field(default_factory=dict)
    token_estimate: int = 0
    memory_document: str | None = None
    schema_facts: list[str] = field(default_factory=list)
    results: list[str] = field(default_factory=list)
    latest_candidate: SkillProgram | None = None
    compressions: int = 0
    flags: list[str] = field(default_factory=list)

    @classmethod
    def start(cls, system_prompt: str, task_prompt: str) -> "SynthesisSession":
        s = cls(system_prompt, task_prompt)
        s.append(Message("system", system_prompt))
        s.append(Message("user", task_prompt, tag="task"))
        return s

    def append(self, msg: Message) -> None:
        self.messages.append(msg)
        self.token_estimate = estimate_tokens(self.messages)

    def note_query(self, sql: str, output: str) -> None:
        head = output.splitlines()[0] if output else ""
        fact = f"{' '.join(sql.split())} -> {head}"
        if fact in self.schema_facts:
            return
        self.schema_facts.append(fact)
        del self.schema_facts[:-MAX_FACTS]


# -- context compression -------------------------------------------------

def mechanical_memory(session: SynthesisSession) -> str:
    lines = ["# Memory", "## Schema facts"]
    lines += [f"- {f}" for f in session.schema_facts] or ["- (none recorded)"]
    lines.append("## Latest candidate")
    lines.append(session.latest_candidate.source if session.latest_candidate else "(none yet)")
    lines.append("## Test results and fixes")
    lines += [f"- {r}" for r in session.results] or ["- (none yet)"]
    return "\n".join(lines)


def _transcript(messages: Sequence[Message]) -> str:
    return "\n\n".join(f"[{m.role}] {m.content}" for m in messages if m.role != "system")


Summarizer = Callable[[SynthesisSession], str]


def backend_summarizer(backend: GenerationBackend, episode: str) -> Summarizer:
    def summarize(session: SynthesisSession) -> str:
        msgs = [
            Message("system", "Condense this skill-writing session into short notes on what was learned."),
            Message("user", _transcript(session.messages)),
        ]
        return backend.complete(msgs, (), f"{episode}:summarize", session.compressions).message.content

    return summarize


def compress_context(session: SynthesisSession, summarize: Summarizer | None = None) -> SynthesisSession:
    """Replace the message log with the system prompt and a memory-resume message.

    The memory keeps schema facts, the latest candidate verbatim and the test
    history; an optional summarizer adds notes, and its failure is flagged.
    """
    memory = mechanical_memory(session)
    flags = list(session.flags)
    if summarize is not None:
        try:
            notes = summarize(session).strip()
            if notes:
                memory += "\n## Notes\n" + notes
        except Exception as exc:  # any summarizer failure degrades to the mechanical memory
            logger.warning("summarization failed, keeping mechanical memory: %s", exc)
            flags.append("summary_fallback")
    out = replace(
        session,
        messages=[],
        tool_log=list(session.tool_log),
        namespace=dict(session.namespace),
        memory_document=memory,
        compressions=session.compressions + 1,
        flags=flags,
        schema_facts=list(session.schema_facts),
        results=list(session.results),
    )
    out.append(Message("system", session.system_prompt))
    out.append(Message("user", f"The conversation was compacted. Resume from this memory.\n\n{memory}\n\n"
                               f"{session.task_prompt}", tag="resume"))
    return out


def maybe_compress(session: SynthesisSession, config: SynthesisConfig,
                   summarize: Summarizer | None = None) -> tuple[SynthesisSession, bool]:
    if session.token_estimate > config.compression_trigger:
        return compress_context(session, summarize), True
    return session, False


# -- prompts --------------------------------------------------------------

def system_prompt(tools: Sequence[str] = TOOLSETS["synthesis"]) -> str:
    grammar = program_mod.__doc__.split("\n", 2)[2].strip()
    return (
        "You write skills: small verified programs that compute one clinical concept for a patient "
        "from an ICU database.\n\n"
        f"Skill format:\n{grammar}\n\n"
        f"Tools: {', '.join(tools)}.\n"
        "Inspect the schema with query_db, read the relevant guideline, reuse library functions when they fit, "
        "then answer with skill blocks. Parameters of type stay, subject, hadm and variant are bound from each "
        "question; variant is the question's variant key, usable with choose. Give the skill a docstring."
    )


def task_prompt(concept: str, dataset: VerificationDataset, description: str = "", samples: int = 5) -> str:
    seen, examples = set(), []
    for item in dataset.items:
        if item.variant not in seen:
            seen.add(item.variant)
            examples.append(f"- ({item.variant}) {item.question_text}")
        if len(examples) >= samples:
            break
    text = f"Concept: {concept}\n"
    if description:
        text += f"{description}\n"
    text += "Example questions the skill must answer:\n" + "\n".join(examples)
    text += "\nReturn the answer with `return FINAL <value>`."
    return text


# -- the loop -------------------------------------------------------------

@dataclass(frozen=True)
class IterationLog:
    iteration: int
    tool_calls: int
    candidates: int
    final: str | None
    accuracy: float | None
    best_accuracy: float | None
    feedback: bool
    compressed: bool


@dataclass
class SynthesisRun:
    record: SkillRecord
    session: SynthesisSession
    history: list[IterationLog]
    reports: list[VerificationReport]
    tokens: int

    @property
    def accepted(self) -> bool:
        return self.record.accepted

    @property
    def iterations(self) -> int:
        return len(self.history)


def execute_blocks(programs, errors, session: SynthesisSession, ctx: ToolContext,
                   dataset: VerificationDataset) -> str:
    """Register blocks in the namespace and trial-run each on the first item."""
    lines = []
    for e in errors:
        lines.append(f"PARSE ERROR: {e}")
    probe = dataset.items[0]
    for p in programs:
        session.namespace[p.name] = p
        tag = "final candidate" if p.is_final else "helper"
        lines.append(f"registered {tag} {p.signature} (version {p.version})")
        missing = [c for c in p.calls if c not in ctx.loaded and (ctx.library is None or c not in ctx.library)]
        if missing:
            lines.append(f"  warning: {', '.join(missing)} not in the library; load or inline helpers")
        try:
            args = bind_args(p, probe)
        except SkillRuntimeError:
            continue
        try:
            out = execute_skill(p, args, ctx.target, ctx.resolve, ctx.sql_timeout)
            lines.append(f"  trial on {probe.instance_id}: {render_value(out)}")
        except SkillRuntimeError as exc:
            lines.append(f"  trial on {probe.instance_id} failed: {exc.trace}")
    if not programs and not errors:
        lines.append("No <skill> block found. Submit a block whose return label is FINAL.")
    return "\n".join(lines)


def _complete(backend, session, tools, episode, turn, retries):
    last = None
    for attempt in range(retries + 1):
        try:
            return backend.complete(session.messages, tools, episode, turn)
        except BackendError as exc:
            last = exc
            logger.warning("%s turn %d: backend error (attempt %d): %s", episode, turn, attempt + 1, exc)
    raise last


def run_autoformalize(
    concept: str,
    dataset: VerificationDataset,
    store,
    guidelines: GuidelineStore | None,
    library: SkillLibrary | None,
    backend: GenerationBackend,
    config: SynthesisConfig | None = None,
    description: str = "",
    episode: str | None = None,
) -> SynthesisRun:
    config = config or SynthesisConfig()
    bad = [i.instance_id for i in dataset.items if i.concept != concept]
    if bad:
        raise ValueError(f"dataset items belong to other concepts: {bad[:3]}")
    episode = episode or f"synth:{concept}"
    tool_names = TOOLSETS["synthesis"]
    tools = specs(tool_names)
    ctx = ToolContext(store, guidelines, library, config.sql_timeout)
    session = SynthesisSession.start(system_prompt(tool_names), task_prompt(concept, dataset, description))
    summarize = backend_summarizer(backend, episode) if config.summarizer == "backend" else None

    best: SkillProgram | None = None
    best_alpha, best_iter = -1.0, 0
    history: list[IterationLog] = []
    reports: list[VerificationReport] = []
    tokens = 0

    def record_for(prog: SkillProgram, alpha: float, it: int) -> SkillRecord:
        return SkillRecord(
            name=prog.name, program=prog, concept=concept, accuracy=alpha, accepted=alpha >= config.theta,
            dataset_id=dataset.dataset_id, n_items=len(dataset), iterations=it, dependencies=prog.calls,
        )

    for it in range(1, config.max_iterations + 1):
        session, compressed = maybe_compress(session, config, summarize)
        try:
            completion = _complete(backend, session, tools, episode, it - 1, config.max_retries)
        except BackendError as exc:
            partial = record_for(best, best_alpha, best_iter) if best else None
            raise SynthesisAborted(f"{concept}: backend failed at iteration {it}: {exc}", partial) from exc
        tokens += completion.total_tokens
        reply = completion.message
        session.append(reply)
        for call in reply.tool_calls:
            text, ok = run_tool(call.name, call.arguments, ctx, tool_names)
            session.tool_log.append({"iteration": it, "call": describe_call(call.name, call.arguments), "ok": ok})
            if call.name == "query_db" and isinstance(call.arguments.get("sql"), str):
                session.note_query(call.arguments["sql"], text)
            session.append(Message("tool", text, tool_call_id=call.call_id, name=call.name))

        programs, errors = extract_skill_candidates(reply.content)
        for e in errors:
            session.results.append(f"iteration {it}: parse error: {e}")
        cand = final_candidate(programs)
        if programs:
            session.latest_candidate = cand or programs[-1]
        if programs or errors or not reply.tool_calls:
            session.append(Message("user", execute_blocks(programs, errors, session, ctx, dataset), tag="execute"))

        alpha, feedback = None, False
        if cand is not None:
            report = verify_skill(cand, dataset, store, ctx.resolve, config.sql_timeout)
            reports.append(report)
            alpha = report.accuracy
            fails = report.failures()
            summary = f"iteration {it}: {cand.name} ({cand.version}) accuracy {alpha:.4f}, {len(fails)} failing"
            if fails:
                summary += f"; first failure {fails[0].instance_id}: predicted {fails[0].predicted or '(none)'}, " \
                           f"truth {fails[0].truth}"
            session.results.append(summary)
            if alpha > best_alpha:
                best, best_alpha, best_iter = cand, alpha, it
            if alpha < config.theta:
                session.append(Message("user", build_feedback(report, config.theta, config.feedback_cap),
                                       tag="feedback"))
                feedback = True
        history.append(IterationLog(it, len(reply.tool_calls), len(programs), cand.name if cand else None,
                                    alpha, best_alpha if best else None, feedback, compressed))
        logger.debug("%s iteration %d: alpha=%s best=%s", concept, it, alpha, best_alpha)
        if alpha is not None and alpha >= config.theta:
            break

    if best is None:
        raise EmptySkillError(f"{concept}: no final candidate in {config.max_iterations} iterations")
    return SynthesisRun(record_for(best, best_alpha, best_iter), session, history, reports, tokens)


def write_transcript(session: SynthesisSession, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        for m in session.messages:
            fh.write(json.dumps(m.to_record(), sort_keys=True) + "\n")
    return path
