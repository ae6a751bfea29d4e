"""Sectioned clinical guideline documents with lexical retrieval."""

from __future__ import annotations

import logging
import math
import re
from collections import Counter
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Callable, Iterable, Mapping

logger = logging.getLogger(__name__)

SECTION_TITLES = (
    "Definition",
    "Diagnostic Criteria",
    "Scoring System",
    "Time Windows",
    "Severity Staging",
    "Operational Notes",
)
PREVIEW_CHARS = 500
_HEADER = re.compile(r"^## (.+?)\s*$", re.MULTILINE)
_TOKEN = re.compile(r"[a-z0-9]+")
_STOP = frozenset(
    "a an and are as at be by for from has have in is it its of on or that the this to was were with".split()
)


class GuidelineError(LookupError):
    """Unknown guideline or section; carries the valid alternatives."""

    def __init__(self, message: str, options: Iterable[str] = ()):
        self.options = list(options)
        super().__init__(message)

    def __str__(self) -> str:
        return self.args[0]


def tokenize(text: str) -> list[str]:
    return [t for t in _TOKEN.findall(text.lower()) if t not in _STOP]


@dataclass(frozen=True)
class GuidelineDoc:
    name: str
    sections: Mapping[str, str]
    keywords: tuple[str, ...] = ()
    title: str = ""
    body: str = field(default="", repr=False)

    def __post_init__(self):
        bad = [s for s in self.sections if s not in SECTION_TITLES]
        if bad:
            raise ValueError(f"{self.name}: unknown section titles {bad}")
        if len(self.sections) < 2:
            raise ValueError(f"{self.name}: a guideline needs at least two sections")

    @property
    def menu(self) -> list[str]:
        return list(self.sections)

    @property
    def text(self) -> str:
        return "\n\n".join(f"{t}\n{b}" for t, b in self.sections.items())


@dataclass(frozen=True)
class GuidelinePreview:
    name: str
    preview: str
    menu: list[str]

    def render(self) -> str:
        items = "\n".join(f"- {s}" for s in self.menu)
        return f"{self.name}\n{self.preview}\n\nSections:\n{items}\n"


def parse_guideline(name: str, text: str) -> GuidelineDoc:
    """Read ``# Title``, an optional ``Keywords:`` line and ``## Section`` blocks."""
    heads = list(_HEADER.finditer(text))
    if not heads:
        raise ValueError(f"{name}: no '## Section' headers")
    title, keywords = "", ()
    for line in text[: heads[0].start()].splitlines():
        if line.startswith("# "):
            title = line[2:].strip()
        elif line.lower().startswith("keywords:"):
            keywords = tuple(k.strip() for k in line.split(":", 1)[1].split(",") if k.strip())
    sections: dict[str, str] = {}
    for i, m in enumerate(heads):
        end = heads[i + 1].start() if i + 1 < len(heads) else len(text)
        title_i = m.group(1)
        if title_i in sections:
            raise ValueError(f"{name}: duplicate section {title_i!r}")
        sections[title_i] = text[m.end():end].strip("\n")
    return GuidelineDoc(name, sections, keywords, title, text[heads[0].start():].strip("\n"))


def _field_score(query: Counter, tokens: Counter) -> float:
    return sum(1.0 + math.log(tokens[q]) for q in query if tokens[q] > 0)


class GuidelineStore:
    """Read-only corpus; ``scorer`` optionally replaces the lexical ranking."""

    def __init__(self, docs: Iterable[GuidelineDoc], scorer: Callable[[str, GuidelineDoc], float] | None = None):
        self._docs = {d.name: d for d in docs}
        self._scorer = scorer
        self._index = {
            name: (
                Counter(tokenize(" ".join([name.replace("_", " "), doc.title, *doc.keywords]))),
                [Counter(tokenize(f"{t} {b}")) for t, b in doc.sections.items()],
            )
            for name, doc in self._docs.items()
        }

    @classmethod
    def load(cls, directory: str | Path | None = None, **kw) -> "GuidelineStore":
        if directory is None:
            root = resources.files("clinskill.data").joinpath("guidelines")
            files = [f for f in root.iterdir() if f.name.endswith(".md")]
        else:
            root = Path(directory)
            if not root.is_dir():
                raise FileNotFoundError(f"guideline directory {root} does not exist")
            files = list(root.glob("*.md"))
        docs = [parse_guideline(f.name[:-3], f.read_text()) for f in sorted(files, key=lambda f: f.name)]
        if not docs:
            raise ValueError(f"no guideline documents in {root}")
        return cls(docs, **kw)

    def __contains__(self, name: str) -> bool:
        return name in self._docs

    def __len__(self) -> int:
        return len(self._docs)

    def names(self) -> list[str]:
        return sorted(self._docs)

    def doc(self, name: str) -> GuidelineDoc:
        if name not in self._docs:
            raise GuidelineError(
                f"unknown guideline {name!r}; did you mean: {', '.join(self.suggest(name))}",
                self.suggest(name),
            )
        return self._docs[name]

    def score(self, query: str, name: str) -> float:
        if self._scorer is not None:
            return self._scorer(query, self._docs[name])
        q = Counter(tokenize(query))
        meta, sections = self._index[name]
        return _field_score(q, meta) + max(_field_score(q, s) for s in sections)

    def search(self, query: str, limit: int | None = None) -> list[str]:
        """Doc names by descending relevance, ties by name; empty query lists all."""
        if not tokenize(query):
            ranked = self.names()
        else:
            scored = [(self.score(query, n), n) for n in self.names()]
            ranked = [n for s, n in sorted(scored, key=lambda x: (-x[0], x[1])) if s > 0]
        return ranked[:limit] if limit is not None else ranked

    def suggest(self, name: str, k: int = 3) -> list[str]:
        hits = self.search(name.replace("_", " "), limit=k)
        return hits or self.names()[:k]

    def get_guideline(self, name: str) -> GuidelinePreview:
        doc = self.doc(name)
        return GuidelinePreview(name, doc.body[:PREVIEW_CHARS], doc.menu)

    def get_guideline_section(self, name: str, section: str) -> str:
        doc = self.doc(name)
        if section not in doc.sections:
            raise GuidelineError(
                f"{name} has no section {section!r}; sections: {', '.join(doc.menu)}", doc.menu
            )
        return doc.sections[section]

    def spec_text(self, name: str) -> str | None:
        """Full text for condition-node edge inference; None if absent."""
        return self._docs[name].text if name in self._docs else None
