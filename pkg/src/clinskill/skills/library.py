"""Persistent, content-addressed skill library."""

from __future__ import annotations

import fcntl
import json
import logging
import math
import os
import tempfile
import threading
from collections import Counter
from contextlib import contextmanager
from dataclasses import dataclass, field, replace
from pathlib import Path

from clinskill.guidelines.store import tokenize
from clinskill.skills.program import SkillProgram, parse_program, program_hash

logger = logging.getLogger(__name__)

_PUT_LOCK = threading.Lock()


class LibraryError(KeyError):
    def __init__(self, message: str, options=()):
        self.options = list(options)
        super().__init__(message)

    def __str__(self) -> str:
        return self.args[0]


@dataclass(frozen=True)
class SkillRecord:
    name: str
    program: SkillProgram
    concept: str
    accuracy: float
    accepted: bool
    dataset_id: str = ""
    n_items: int = 0
    iterations: int = 0
    dependencies: tuple[str, ...] = ()
    superseded: tuple[str, ...] = field(default=(), compare=False)

    @property
    def version(self) -> str:
        return self.program.version

    @property
    def signature(self) -> str:
        return self.program.signature

    @property
    def docstring(self) -> str:
        return self.program.doc

    def info(self) -> str:
        """Signature and docstring, as shown by get_function_info."""
        doc = self.docstring or "(no docstring)"
        return f"{self.signature}\n{doc}\nconcept: {self.concept}; verified accuracy {self.accuracy:.4f}"

    def meta(self) -> dict:
        return {
            "name": self.name,
            "signature": [list(p) for p in self.program.params],
            "docstring": self.docstring,
            "concept": self.concept,
            "accuracy": self.accuracy,
            "accepted": self.accepted,
            "version": self.version,
            "dataset_id": self.dataset_id,
            "n_items": self.n_items,
            "iterations": self.iterations,
            "dependencies": list(self.dependencies),
            "superseded": list(self.superseded),
        }


def _write_atomic(path: Path, text: str) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


class SkillLibrary:
    """One directory per skill: ``versions/<hash>.skill`` plus ``meta.json``.

    ``meta.json`` names the current version and is replaced last, so a
    reader sees either the old or the new record, never a mix.
    """

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    @contextmanager
    def _locked(self):
        with _PUT_LOCK, open(self.root / ".lock", "w") as fh:
            fcntl.flock(fh, fcntl.LOCK_EX)
            try:
                yield
            finally:
                fcntl.flock(fh, fcntl.LOCK_UN)

    def names(self) -> list[str]:
        return sorted(d.name for d in self.root.iterdir() if (d / "meta.json").exists())

    def __contains__(self, name: str) -> bool:
        return (self.root / name / "meta.json").exists()

    def __len__(self) -> int:
        return len(self.names())

    def put(self, record: SkillRecord, force: bool = False) -> SkillRecord:
        if not record.accepted and not force:
            raise ValueError(f"{record.name}: only accepted skills enter the library (pass force=True to override)")
        if record.program.name != record.name:
            raise ValueError("record name must match the program name")
        with self._locked():
            d = self.root / record.name
            (d / "versions").mkdir(parents=True, exist_ok=True)
            old = []
            if (d / "meta.json").exists():
                prev = json.loads((d / "meta.json").read_text())
                old = [*prev.get("superseded", [])]
                if prev["version"] != record.version:
                    old.append(prev["version"])
                    logger.info("%s: version %s supersedes %s", record.name, record.version, prev["version"])
            record = replace(record, superseded=tuple(dict.fromkeys(old)))
            prog_path = d / "versions" / f"{record.version}.skill"
            if not prog_path.exists():
                _write_atomic(prog_path, record.program.source)
            _write_atomic(d / "meta.json", json.dumps(record.meta(), indent=2, sort_keys=True) + "\n")
        return record

    def get(self, name: str, version: str | None = None) -> SkillRecord:
        d = self.root / name
        if not (d / "meta.json").exists():
            raise LibraryError(f"no skill named {name!r}; similar: {', '.join(self.query(name)[:3]) or 'none'}",
                               self.query(name)[:3])
        meta = json.loads((d / "meta.json").read_text())
        v = version or meta["version"]
        path = d / "versions" / f"{v}.skill"
        if not path.exists():
            raise LibraryError(f"{name}: version {v} is not stored")
        source = path.read_text()
        if program_hash(source) != v:
            raise LibraryError(f"{name}: stored program does not match its hash {v}")
        return SkillRecord(
            name=meta["name"],
            program=parse_program(source),
            concept=meta["concept"],
            accuracy=meta["accuracy"],
            accepted=meta["accepted"],
            dataset_id=meta["dataset_id"],
            n_items=meta["n_items"],
            iterations=meta["iterations"],
            dependencies=tuple(meta["dependencies"]),
            superseded=tuple(meta["superseded"]),
        )

    def resolver(self):
        cache: dict[str, SkillProgram] = {}

        def resolve(name: str) -> SkillProgram:
            if name not in cache:
                cache[name] = self.get(name).program
            return cache[name]

        return resolve

    def query(self, keyword: str = "") -> list[str]:
        """Names ranked by lexical match over name and docstring; ties by name."""
        names = self.names()
        q = Counter(tokenize(keyword.replace("_", " ")))
        if not q:
            return names
        scored = []
        for n in names:
            meta = json.loads((self.root / n / "meta.json").read_text())
            name_tf = Counter(tokenize(n.replace("_", " ")))
            doc_tf = Counter(tokenize(meta.get("docstring", "") + " " + meta.get("concept", "").replace("_", " ")))
            s = sum(2 * (1 + math.log(name_tf[t])) for t in q if name_tf[t])
            s += sum(1 + math.log(doc_tf[t]) for t in q if doc_tf[t])
            if s > 0:
                scored.append((-s, n))
        return [n for _, n in sorted(scored)]
