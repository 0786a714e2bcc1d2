"""Theory graph, session grouping, and export blobs.

Theories import each other in an acyclic graph and contribute keyword-table
deltas declared in their headers; contexts merge canonically (set union,
conflicting redeclarations rejected).  Sessions group theories under a name
with an optional parent, forming a tree of specs.  Checking publishes named
blobs into an export store, kept in memory interactively and in a single-file
SQLite database in batch mode, with optional XZ compression.
"""

from __future__ import annotations

import lzma
import posixpath
import re
import sqlite3
import threading
from dataclasses import dataclass
from typing import Iterable, Mapping, Optional, Sequence

from .document import NodeName, normalize_path
from .syntax import (
    BASE_KEYWORDS,
    CommandSpec,
    KeywordTable,
    Token,
    TokenKind,
    tokenize,
    unquote_string,
)


@dataclass(frozen=True)
class TheoryHeader:
    name: str
    imports: tuple[NodeName, ...] = ()
    keywords: KeywordTable = KeywordTable()


class HeaderError(ValueError):
    pass


def _words(tokens: Sequence[Token]) -> list[Token]:
    return [t for t in tokens if not t.is_space]


def _name_of(tok: Token) -> Optional[str]:
    # word-like identifiers count as names; path-like names must be quoted
    if tok.kind is TokenKind.IDENT and (tok.source[0].isalpha() or tok.source[0] == "_"):
        return tok.source
    if tok.kind is TokenKind.STRING:
        return unquote_string(tok.source)
    return None


def resolve_import(importer: NodeName, name: str) -> NodeName:
    """An import names a sibling theory file, relative to the importer."""
    if not name.endswith(".thy"):
        name += ".thy"
    base = posixpath.dirname(importer.path)
    return NodeName.theory(normalize_path(posixpath.join(base, name)))


def parse_theory_header(text: str, node: NodeName) -> Optional[TheoryHeader]:
    """Parse ``theory NAME [imports ...] [keywords ...] begin``.

    Returns None when the text does not open with a well-formed header
    (callers report their own diagnostics).  Keyword declarations are
    name groups separated by ``and``: plain names declare minor keywords,
    ``:: command`` declares a command, ``:: load`` / ``:: load (ext)`` a
    load command with an optional extension hint.
    """
    toks = _words(tokenize(text, BASE_KEYWORDS))
    pos = 0

    def at_keyword(word: str) -> bool:
        return (pos < len(toks) and toks[pos].kind is TokenKind.KEYWORD
                and toks[pos].source == word)

    def take_name() -> Optional[str]:
        nonlocal pos
        if pos < len(toks):
            name = _name_of(toks[pos])
            if name is not None:
                pos += 1
                return name
        return None

    if not at_keyword("theory"):
        return None
    pos += 1
    theory_name = take_name()
    if theory_name is None:
        return None

    imports: list[NodeName] = []
    if at_keyword("imports"):
        pos += 1
        while True:
            name = take_name()
            if name is None:
                break
            imports.append(resolve_import(node, name))
        if not imports:
            return None

    commands: dict[str, CommandSpec] = {}
    minor: set[str] = set()
    if at_keyword("keywords"):
        pos += 1
        while True:
            group: list[str] = []
            while True:
                name = take_name()
                if name is None:
                    break
                group.append(name)
            if not group:
                return None
            if at_keyword("::"):
                pos += 1
                category = take_name()
                if category == "command":
                    spec = CommandSpec()
                elif category == "load":
                    hint = None
                    if at_keyword("("):
                        pos += 1
                        hint = take_name()
                        if hint is None or not at_keyword(")"):
                            return None
                        pos += 1
                    spec = CommandSpec(is_load_command=True, file_extension_hint=hint)
                else:
                    return None
                for name in group:
                    commands[name] = spec
            else:
                minor.update(group)
            if at_keyword("and"):
                pos += 1
                continue
            break

    if not at_keyword("begin"):
        return None
    return TheoryHeader(theory_name, tuple(imports),
                        KeywordTable(commands, frozenset(minor)))


class CycleError(ValueError):
    def __init__(self, members: Sequence[NodeName]):
        super().__init__("cyclic theory imports: " + ", ".join(str(m) for m in members))
        self.members = tuple(members)


def topological_order(headers: Mapping[NodeName, TheoryHeader]) -> list[NodeName]:
    """Import order: every node after all its (known) imports, ties broken
    by path for determinism."""
    known = set(headers)
    deps = {n: sorted(set(i for i in h.imports if i in known), key=lambda x: x.path)
            for n, h in headers.items()}
    indegree = {n: 0 for n in known}
    dependants: dict[NodeName, list[NodeName]] = {n: [] for n in known}
    for n, ds in deps.items():
        indegree[n] = len(ds)
        for d in ds:
            dependants[d].append(n)

    ready = sorted((n for n, k in indegree.items() if k == 0), key=lambda x: x.path)
    out: list[NodeName] = []
    while ready:
        node = ready.pop(0)
        out.append(node)
        changed = False
        for n in dependants[node]:
            indegree[n] -= 1
            if indegree[n] == 0:
                ready.append(n)
                changed = True
        if changed:
            ready.sort(key=lambda x: x.path)
    if len(out) != len(known):
        remaining = known - set(out)
        cycle = _find_cycle(deps, remaining)
        raise CycleError(cycle)
    return out


def _find_cycle(deps: Mapping[NodeName, list[NodeName]], remaining: set[NodeName]) -> list[NodeName]:
    start = min(remaining, key=lambda n: n.path)
    seen: list[NodeName] = []
    node = start
    while node not in seen:
        seen.append(node)
        node = next(d for d in deps[node] if d in remaining)
    return sorted(seen[seen.index(node):], key=lambda n: n.path)


def merge_contexts(tables: Iterable[KeywordTable]) -> KeywordTable:
    """Canonical merge: set union; conflicting command attributes raise."""
    merged = KeywordTable()
    for t in tables:
        merged = merged.merge(t)
    return merged


@dataclass(frozen=True)
class SessionSpec:
    name: str
    parent: Optional[str] = None
    roots: tuple[NodeName, ...] = ()


class SessionTreeError(ValueError):
    pass


def validate_session_tree(specs: Iterable[SessionSpec]) -> dict[str, SessionSpec]:
    by_name: dict[str, SessionSpec] = {}
    for spec in specs:
        if spec.name in by_name:
            raise SessionTreeError(f"duplicate session {spec.name!r}")
        by_name[spec.name] = spec
    for spec in by_name.values():
        seen = {spec.name}
        cur = spec.parent
        while cur is not None:
            if cur not in by_name:
                raise SessionTreeError(f"unknown parent session {cur!r}")
            if cur in seen:
                raise SessionTreeError(f"session parents form a cycle at {cur!r}")
            seen.add(cur)
            cur = by_name[cur].parent
    return by_name


# -- export store -------------------------------------------------------


class ExportError(ValueError):
    pass


class DuplicateExportError(ExportError):
    def __init__(self, session: str, theory: str, name: str):
        super().__init__(f"export {name!r} already stored for {session}/{theory}")


def _check_entry_name(name: str) -> str:
    if not name or name.startswith("/"):
        raise ExportError(f"invalid export name {name!r}")
    norm = posixpath.normpath(name)
    if norm.startswith("..") or norm == ".":
        raise ExportError(f"invalid export name {name!r}")
    return norm


@dataclass(frozen=True)
class ExportEntry:
    session: str
    theory: str
    name: str
    payload: bytes
    compressed: bool = False


def pattern_regex(pattern: str) -> "re.Pattern[str]":
    """Export name patterns: ``*`` matches within a path segment, ``**``
    across segments."""
    out = []
    i = 0
    while i < len(pattern):
        if pattern.startswith("**", i):
            out.append(".*")
            i += 2
        elif pattern[i] == "*":
            out.append("[^/]*")
            i += 1
        else:
            out.append(re.escape(pattern[i]))
            i += 1
    return re.compile("^" + "".join(out) + "$")


class MemoryExportStore:
    """Interactive-mode store; first writer wins, duplicates are errors."""

    def __init__(self):
        self._lock = threading.Lock()
        self._entries: dict[tuple[str, str, str], tuple[bytes, bool]] = {}

    def put(self, entry: ExportEntry) -> None:
        name = _check_entry_name(entry.name)
        blob = lzma.compress(entry.payload) if entry.compressed else entry.payload
        key = (entry.session, entry.theory, name)
        with self._lock:
            if key in self._entries:
                raise DuplicateExportError(*key)
            self._entries[key] = (blob, entry.compressed)

    def stored_size(self, session: str, theory: str, name: str) -> Optional[int]:
        with self._lock:
            row = self._entries.get((session, theory, name))
        return None if row is None else len(row[0])

    def retrieve(self, session: str, theory: Optional[str] = None,
                 pattern: str = "**") -> list[ExportEntry]:
        rx = pattern_regex(pattern)
        with self._lock:
            rows = [(k, v) for k, v in self._entries.items()
                    if k[0] == session and (theory is None or k[1] == theory)
                    and rx.match(k[2])]
        rows.sort(key=lambda kv: kv[0])
        return [ExportEntry(s, t, n, lzma.decompress(blob) if comp else blob, comp)
                for (s, t, n), (blob, comp) in rows]


class SqliteExportStore:
    """Batch-mode store: one SQLite file keyed by (session, theory, name)."""

    def __init__(self, path: str):
        self._lock = threading.Lock()
        self._conn = sqlite3.connect(path, check_same_thread=False)
        self._conn.execute(
            "CREATE TABLE IF NOT EXISTS exports ("
            " session TEXT NOT NULL, theory TEXT NOT NULL, name TEXT NOT NULL,"
            " compressed INTEGER NOT NULL, payload BLOB NOT NULL,"
            " PRIMARY KEY (session, theory, name))")
        self._conn.commit()

    def close(self) -> None:
        self._conn.close()

    def put(self, entry: ExportEntry) -> None:
        name = _check_entry_name(entry.name)
        blob = lzma.compress(entry.payload) if entry.compressed else entry.payload
        with self._lock:
            try:
                self._conn.execute(
                    "INSERT INTO exports VALUES (?, ?, ?, ?, ?)",
                    (entry.session, entry.theory, name, int(entry.compressed), blob))
                self._conn.commit()
            except sqlite3.IntegrityError:
                raise DuplicateExportError(entry.session, entry.theory, name) from None

    def stored_size(self, session: str, theory: str, name: str) -> Optional[int]:
        with self._lock:
            row = self._conn.execute(
                "SELECT length(payload) FROM exports"
                " WHERE session=? AND theory=? AND name=?",
                (session, theory, name)).fetchone()
        return None if row is None else int(row[0])

    def retrieve(self, session: str, theory: Optional[str] = None,
                 pattern: str = "**") -> list[ExportEntry]:
        rx = pattern_regex(pattern)
        with self._lock:
            if theory is None:
                rows = self._conn.execute(
                    "SELECT session, theory, name, compressed, payload FROM exports"
                    " WHERE session=? ORDER BY session, theory, name", (session,)).fetchall()
            else:
                rows = self._conn.execute(
                    "SELECT session, theory, name, compressed, payload FROM exports"
                    " WHERE session=? AND theory=? ORDER BY session, theory, name",
                    (session, theory)).fetchall()
        return [ExportEntry(s, t, n, lzma.decompress(blob) if comp else bytes(blob), bool(comp))
                for s, t, n, comp, blob in rows if rx.match(n)]


ExportStore = MemoryExportStore  # default interactive flavour
