"""Generation backends: a scripted offline mock and an HTTP chat-completions client."""

from __future__ import annotations

import fnmatch
import json
import logging
import os
import re
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol, Sequence

import httpx

logger = logging.getLogger(__name__)

ROLES = ("system", "user", "assistant", "tool")


@dataclass(frozen=True)
class ToolCall:
    name: str
    arguments: dict = field(hash=False)
    call_id: str = ""

    def key(self) -> str:
        return f"{self.name}({json.dumps(self.arguments, sort_keys=True)})"


@dataclass(frozen=True)
class Message:
    role: str
    content: str
    tool_calls: tuple[ToolCall, ...] = ()
    tool_call_id: str = ""
    name: str = ""
    tag: str = ""

    def __post_init__(self):
        if self.role not in ROLES:
            raise ValueError(f"unknown role {self.role!r}")

    def to_record(self) -> dict:
        rec = {"role": self.role, "content": self.content}
        if self.tool_calls:
            rec["tool_calls"] = [{"name": c.name, "arguments": c.arguments, "id": c.call_id} for c in self.tool_calls]
        if self.tool_call_id:
            rec["tool_call_id"] = self.tool_call_id
        if self.name:
            rec["name"] = self.name
        if self.tag:
            rec["tag"] = self.tag
        return rec


@dataclass(frozen=True)
class ToolSpec:
    name: str
    description: str
    parameters: dict = field(hash=False, default_factory=dict)

    def schema(self) -> dict:
        props = {k: {"type": v} for k, v in self.parameters.items()}
        return {
            "type": "function",
            "function": {
                "name": self.name,
                "description": self.description,
                "parameters": {"type": "object", "properties": props, "required": list(self.parameters)},
            },
        }


@dataclass(frozen=True)
class Completion:
    message: Message
    prompt_tokens: int
    completion_tokens: int

    @property
    def total_tokens(self) -> int:
        return self.prompt_tokens + self.completion_tokens


class BackendError(RuntimeError):
    """Transport or protocol failure talking to a backend."""


class ScriptError(RuntimeError):
    """The mock script has no response for the requested turn."""


class GenerationBackend(Protocol):
    def complete(
        self, messages: Sequence[Message], tools: Sequence[ToolSpec] = (), episode: str = "", turn: int = 0
    ) -> Completion: ...


def whitespace_tokens(text: str) -> int:
    return len(text.split())


# -- scripted mock ------------------------------------------------------------

_HEADER = re.compile(r"^### (.*)$")
_TOOL_LINE = re.compile(r"^TOOL\s+(\w+)\s*(\{.*\})?\s*$")


@dataclass(frozen=True)
class ScriptEntry:
    episode: str
    turn: int | None
    guard: re.Pattern | None
    response: str

    def matches(self, episode: str, turn: int, last_user: str) -> bool:
        if not fnmatch.fnmatchcase(episode, self.episode):
            return False
        if self.turn is not None and self.turn != turn:
            return False
        return self.guard is None or bool(self.guard.search(last_user))


def parse_script(text: str) -> list[ScriptEntry]:
    """Entries headed ``### episode=<glob> turn=<n|*> [guard=<regex>]``.

    The response is every line up to the next header. A response line of the
    form ``TOOL <name> {json}`` is a tool call; the rest is message text.
    """
    entries, cur, body = [], None, []

    def flush():
        if cur is not None:
            entries.append(ScriptEntry(cur[0], cur[1], cur[2], "\n".join(body).strip("\n")))

    for n, line in enumerate(text.splitlines(), 1):
        m = _HEADER.match(line)
        if not m:
            if cur is None and line.strip() and not line.startswith("#"):
                raise ScriptError(f"script line {n}: text before the first ### header")
            body.append(line)
            continue
        flush()
        body = []
        fields = dict(re.findall(r"(\w+)=(\S+)", m.group(1)))
        guard_m = re.search(r"guard=(.*)$", m.group(1))
        if "episode" not in fields:
            raise ScriptError(f"script line {n}: header needs episode=")
        turn_s = fields.get("turn", "*")
        try:
            turn = None if turn_s == "*" else int(turn_s)
        except ValueError:
            raise ScriptError(f"script line {n}: turn must be an integer or *") from None
        guard = re.compile(guard_m.group(1).strip()) if guard_m else None
        cur = (fields["episode"], turn, guard)
    flush()
    return entries


def split_response(text: str, turn: int) -> Message:
    calls, lines = [], []
    for line in text.splitlines():
        m = _TOOL_LINE.match(line.strip())
        if m:
            try:
                args = json.loads(m.group(2)) if m.group(2) else {}
            except json.JSONDecodeError as exc:
                raise ScriptError(f"bad tool arguments in script: {exc}") from None
            calls.append(ToolCall(m.group(1), args, f"call_{turn}_{len(calls)}"))
        else:
            lines.append(line)
    return Message("assistant", "\n".join(lines).strip("\n"), tuple(calls))


class ScriptedMockBackend:
    """Plays back scripted responses keyed by episode, turn and an optional guard.

    The first entry (in file order) whose episode glob, turn and guard all
    match is used; a request nothing matches raises ``ScriptError``. Token
    usage is the whitespace token count of the prompt and of the response.
    """

    def __init__(self, entries: Sequence[ScriptEntry]):
        self.entries = list(entries)
        self.calls: list[tuple[str, int]] = []

    @classmethod
    def from_text(cls, text: str) -> "ScriptedMockBackend":
        return cls(parse_script(text))

    @classmethod
    def from_file(cls, path: str | Path) -> "ScriptedMockBackend":
        return cls.from_text(Path(path).read_text())

    def complete(self, messages, tools=(), episode="", turn=0) -> Completion:
        last_user = next((m.content for m in reversed(messages) if m.role in ("user", "tool")), "")
        for e in self.entries:
            if e.matches(episode, turn, last_user):
                self.calls.append((episode, turn))
                msg = split_response(e.response, turn)
                prompt = sum(whitespace_tokens(m.content) for m in messages)
                return Completion(msg, prompt, whitespace_tokens(e.response))
        raise ScriptError(f"mock script has no response for episode {episode!r} turn {turn}")


# -- live HTTP backend -------------------------------------------------------

class ChatCompletionsBackend:
    """OpenAI-style ``/chat/completions`` client; usage comes from the response."""

    def __init__(
        self,
        url: str,
        model: str,
        api_key_env: str = "CLINSKILL_API_KEY",
        timeout_s: float = 120.0,
        retries: int = 2,
        temperature: float = 0.0,
        client: httpx.Client | None = None,
    ):
        self.url = url.rstrip("/")
        if not self.url.endswith("/chat/completions"):
            self.url += "/chat/completions"
        self.model = model
        self.api_key_env = api_key_env
        self.retries = retries
        self.temperature = temperature
        self.client = client or httpx.Client(timeout=timeout_s)

    def _payload(self, messages, tools) -> dict:
        out = []
        for m in messages:
            rec = {"role": m.role, "content": m.content}
            if m.tool_calls:
                rec["tool_calls"] = [
                    {"id": c.call_id, "type": "function",
                     "function": {"name": c.name, "arguments": json.dumps(c.arguments)}}
                    for c in m.tool_calls
                ]
            if m.role == "tool":
                rec["tool_call_id"] = m.tool_call_id
            out.append(rec)
        body = {"model": self.model, "messages": out, "temperature": self.temperature}
        if tools:
            body["tools"] = [t.schema() for t in tools]
        return body

    def complete(self, messages, tools=(), episode="", turn=0) -> Completion:
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(self.api_key_env)
        if key:
            headers["Authorization"] = f"Bearer {key}"
        last = None
        for attempt in range(self.retries + 1):
            try:
                r = self.client.post(self.url, json=self._payload(messages, tools), headers=headers)
                r.raise_for_status()
                return self._parse(r.json(), turn)
            except (httpx.HTTPError, ValueError, KeyError) as exc:
                last = exc
                logger.warning("backend call failed (attempt %d): %s", attempt + 1, exc)
                if attempt < self.retries:
                    time.sleep(min(2 ** attempt, 8))
        raise BackendError(f"backend unavailable after {self.retries + 1} attempts: {last}")

    @staticmethod
    def _parse(data: dict, turn: int) -> Completion:
        choice = data["choices"][0]["message"]
        calls = []
        for i, c in enumerate(choice.get("tool_calls") or []):
            fn = c["function"]
            args = fn.get("arguments") or "{}"
            calls.append(ToolCall(fn["name"], json.loads(args) if isinstance(args, str) else args,
                                  c.get("id") or f"call_{turn}_{i}"))
        usage = data.get("usage") or {}
        msg = Message("assistant", choice.get("content") or "", tuple(calls))
        return Completion(msg, int(usage.get("prompt_tokens", 0)), int(usage.get("completion_tokens", 0)))


def backend_from_spec(spec: str, model: str = "", api_key_env: str = "CLINSKILL_API_KEY") -> GenerationBackend:
    """``mock:<script path>`` or ``http(s)://...`` endpoint."""
    if spec.startswith("mock:"):
        return ScriptedMockBackend.from_file(spec[5:])
    if spec.startswith(("http://", "https://")):
        if not model:
            raise ValueError("a live backend needs a model name")
        return ChatCompletionsBackend(spec, model, api_key_env)
    raise ValueError(f"backend must be mock:<script> or an http(s) URL, got {spec!r}")
