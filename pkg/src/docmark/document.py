"""Versioned document model.

A :class:`History` holds immutable :class:`Version` values produced by
applying edit batches.  Each version maps node names to node states (text,
command spans, perspective).  Spans keep their identity across versions
within the longest common prefix/suffix of the old and new span lists, which
is what makes downstream work reusable; everything in between gets fresh
identities.

A single writer applies edits; versions are immutable and freely shared with
concurrent readers.
"""

from __future__ import annotations

import posixpath
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable, Mapping, Optional, Sequence, Union

from .syntax import BASE_KEYWORDS, KeywordTable, RawSpan, content_digest, parse_spans, tokenize


class NodeKind(Enum):
    THEORY = "theory"
    AUXILIARY = "auxiliary-file"


class NodePathError(ValueError):
    pass


def normalize_path(path: str) -> str:
    """Canonical relative path: no '.', '..', duplicate or trailing separators."""
    if not path or path.startswith("/"):
        raise NodePathError(f"node path must be relative and nonempty: {path!r}")
    norm = posixpath.normpath(path)
    if norm.startswith("..") or norm == ".":
        raise NodePathError(f"node path escapes its root: {path!r}")
    return norm


@dataclass(frozen=True)
class NodeName:
    kind: NodeKind
    path: str

    @staticmethod
    def theory(path: str) -> "NodeName":
        return NodeName(NodeKind.THEORY, normalize_path(path))

    @staticmethod
    def auxiliary(path: str) -> "NodeName":
        return NodeName(NodeKind.AUXILIARY, normalize_path(path))

    @property
    def extension(self) -> str:
        _, dot, ext = self.path.rpartition(".")
        return ext if dot else ""

    def __str__(self) -> str:
        return self.path


@dataclass(frozen=True)
class Insert:
    offset: int
    text: str


@dataclass(frozen=True)
class Remove:
    offset: int
    text: str


@dataclass(frozen=True)
class Perspective:
    """Client-declared view: which ranges matter, and whether the whole
    node must be checked regardless of visibility."""

    visible: tuple[tuple[int, int], ...] = ()
    required: bool = False

    def validate(self, length: int) -> None:
        prev_end = 0
        for lo, hi in self.visible:
            if not (0 <= lo <= hi <= length):
                raise EditError(f"perspective range [{lo},{hi}) out of bounds 0..{length}")
            if lo < prev_end:
                raise EditError("perspective ranges must be sorted and disjoint")
            prev_end = hi


@dataclass(frozen=True)
class SetNode:
    text: str


Edit = Union[Insert, Remove, Perspective, SetNode]


class EditError(ValueError):
    """An edit that cannot be applied to the text it targets."""

    def __init__(self, message: str, node: Optional[NodeName] = None,
                 offset: Optional[int] = None,
                 expected: Optional[str] = None, found: Optional[str] = None):
        detail = message
        if node is not None:
            detail += f" (node {node}"
            if offset is not None:
                detail += f", offset {offset}"
            if expected is not None:
                detail += f", expected {expected!r}, found {found!r}"
            detail += ")"
        super().__init__(detail)
        self.node = node
        self.offset = offset
        self.expected = expected
        self.found = found


@dataclass(frozen=True)
class CommandSpan:
    """A command-keyed segment of node text with a persistent identity.

    The id survives an edit exactly when the span's command and source are
    unchanged inside the reused prefix/suffix of the node's span list.
    """

    span_id: int
    command: str
    start: int
    end: int
    digest: str

    def source(self, text: str) -> str:
        return text[self.start:self.end]


@dataclass(frozen=True)
class NodeState:
    text: str
    spans: tuple[CommandSpan, ...] = ()
    perspective: Perspective = Perspective()
    table_key: str = ""


@dataclass(frozen=True)
class Version:
    id: int
    nodes: Mapping[NodeName, NodeState] = field(default_factory=dict)

    def node(self, name: NodeName) -> NodeState:
        try:
            return self.nodes[name]
        except KeyError:
            raise LookupError(f"unknown node {name} in version {self.id}") from None

    def text(self, name: NodeName) -> str:
        return self.node(name).text


KeywordResolver = Callable[[NodeName, Mapping[NodeName, str]], KeywordTable]


def _table_key(table: KeywordTable) -> str:
    parts = [f"{n}:{s.is_load_command}:{s.file_extension_hint}" for n, s in sorted(table.commands.items())]
    parts.extend(sorted(table.minor))
    return content_digest("\x00".join(parts))


def _raw_spans(name: NodeName, text: str, table: KeywordTable) -> list[RawSpan]:
    if name.kind is NodeKind.AUXILIARY:
        if not text:
            return []
        return [RawSpan("", 0, len(text), content_digest(text))]
    return parse_spans(tokenize(text, table), text)


class History:
    """Append-only version history under a single writer.

    ``keyword_resolver`` supplies the keyword table used to tokenize a
    theory node, given all node texts (so headers and imports can
    contribute); by default every node uses the base table.
    """

    def __init__(self, keyword_resolver: Optional[KeywordResolver] = None):
        self._resolver: KeywordResolver = keyword_resolver or (lambda name, texts: BASE_KEYWORDS)
        self._next_version_id = 0
        self._next_span_id = 1
        self._versions: dict[int, Version] = {}
        self._order: list[int] = []
        self._logs: dict[int, list[tuple[NodeName, Union[Insert, Remove]]]] = {}
        self._append(Version(self._fresh_version_id(), {}), [])

    def _fresh_version_id(self) -> int:
        vid = self._next_version_id
        self._next_version_id += 1
        return vid

    def _append(self, version: Version, log: list[tuple[NodeName, Union[Insert, Remove]]]) -> None:
        self._versions[version.id] = version
        self._order.append(version.id)
        self._logs[version.id] = log

    @property
    def latest(self) -> Version:
        return self._versions[self._order[-1]]

    def version(self, version_id: int) -> Version:
        try:
            return self._versions[version_id]
        except KeyError:
            raise LookupError(f"unknown version {version_id}") from None

    def version_ids(self) -> list[int]:
        return list(self._order)

    # -- edits ---------------------------------------------------------

    def apply_edits(self, edits: Sequence[tuple[NodeName, Edit]]) -> Version:
        """Apply an edit batch sequentially to the latest version.

        Returns the new version.  Invalid edits raise :class:`EditError`
        and leave the history untouched.
        """
        base = self.latest
        texts: dict[NodeName, str] = {n: s.text for n, s in base.nodes.items()}
        perspectives: dict[NodeName, Perspective] = {n: s.perspective for n, s in base.nodes.items()}
        touched: set[NodeName] = set()
        log: list[tuple[NodeName, Union[Insert, Remove]]] = []

        for name, edit in edits:
            old = texts.get(name, "")
            if name not in texts:
                texts[name] = old
                perspectives[name] = Perspective()
            if isinstance(edit, Insert):
                if not 0 <= edit.offset <= len(old):
                    raise EditError("insert offset out of bounds", name, edit.offset)
                texts[name] = old[:edit.offset] + edit.text + old[edit.offset:]
                log.append((name, edit))
                touched.add(name)
            elif isinstance(edit, Remove):
                lo, hi = edit.offset, edit.offset + len(edit.text)
                if not 0 <= lo <= hi <= len(old):
                    raise EditError("remove range out of bounds", name, edit.offset)
                found = old[lo:hi]
                if found != edit.text:
                    raise EditError("remove text mismatch", name, edit.offset,
                                    expected=edit.text, found=found)
                texts[name] = old[:lo] + old[hi:]
                log.append((name, edit))
                touched.add(name)
            elif isinstance(edit, Perspective):
                edit.validate(len(old))
                perspectives[name] = edit
                touched.add(name)
            elif isinstance(edit, SetNode):
                if edit.text != old:
                    log.append((name, Remove(0, old)))
                    log.append((name, Insert(0, edit.text)))
                texts[name] = edit.text
                touched.add(name)
            else:
                raise EditError(f"unsupported edit {edit!r}", name)

        nodes: dict[NodeName, NodeState] = dict(base.nodes)
        for name in texts:
            old_state = base.nodes.get(name)
            table = self._resolver(name, texts) if name.kind is NodeKind.THEORY else BASE_KEYWORDS
            key = _table_key(table)
            unchanged = (old_state is not None and old_state.text == texts[name]
                         and old_state.table_key == key)
            if unchanged and name not in touched:
                continue
            if unchanged:
                nodes[name] = replace(old_state, perspective=perspectives[name])
                continue
            raw = _raw_spans(name, texts[name], table)
            old_spans = old_state.spans if old_state else ()
            old_text = old_state.text if old_state else ""
            spans = self._match_span_ids(old_spans, old_text, raw, texts[name])
            nodes[name] = NodeState(texts[name], spans, perspectives[name], key)

        version = Version(self._fresh_version_id(), nodes)
        self._append(version, log)
        return version

    def set_perspective(self, name: NodeName, visible: Sequence[tuple[int, int]],
                        required: bool = False) -> Version:
        return self.apply_edits([(name, Perspective(tuple(tuple(r) for r in visible), required))])

    def _match_span_ids(self, old_spans: Sequence[CommandSpan], old_text: str,
                        raw: Sequence[RawSpan], new_text: str) -> tuple[CommandSpan, ...]:
        old_keys = [(s.command, s.digest, old_text[s.start:s.end]) for s in old_spans]
        new_keys = [(r.command, r.digest, new_text[r.start:r.end]) for r in raw]
        limit = min(len(old_keys), len(new_keys))
        prefix = 0
        while prefix < limit and old_keys[prefix] == new_keys[prefix]:
            prefix += 1
        suffix = 0
        while suffix < limit - prefix and old_keys[-1 - suffix] == new_keys[-1 - suffix]:
            suffix += 1

        spans: list[CommandSpan] = []
        for idx, r in enumerate(raw):
            if idx < prefix:
                span_id = old_spans[idx].span_id
            elif idx >= len(raw) - suffix:
                span_id = old_spans[len(old_spans) - (len(raw) - idx)].span_id
            else:
                span_id = self._next_span_id
                self._next_span_id += 1
            spans.append(CommandSpan(span_id, r.command, r.start, r.end, r.digest))
        return tuple(spans)

    # -- transposition -------------------------------------------------

    def edits_between(self, from_id: int, to_id: int,
                      name: NodeName) -> list[Union[Insert, Remove]]:
        self.version(from_id)
        self.version(to_id)
        try:
            lo = self._order.index(from_id)
            hi = self._order.index(to_id)
        except ValueError:
            raise LookupError("version outside retained history") from None
        if lo > hi:
            raise LookupError(f"version {from_id} does not precede {to_id}")
        out: list[Union[Insert, Remove]] = []
        for vid in self._order[lo + 1:hi + 1]:
            out.extend(e for n, e in self._logs[vid] if n == name)
        return out

    def transpose_offset(self, from_id: int, to_id: int, name: NodeName,
                         offset: int) -> Optional[int]:
        """Map a text offset forward through the edits between two versions.

        Offsets strictly inside removed regions map to None.  The mapping is
        monotone where defined.
        """
        if name not in self.version(from_id).nodes and name not in self.version(to_id).nodes:
            raise LookupError(f"unknown node {name}")
        return transpose_through(self.edits_between(from_id, to_id, name), offset)

    # -- housekeeping ---------------------------------------------------

    def remove_versions(self, retain: int = 10, pinned: Sequence[int] = ()) -> list[int]:
        """Drop oldest versions, keeping the newest ``retain`` plus pinned ids."""
        retain = max(1, retain)
        keep = set(self._order[-retain:]) | set(pinned)
        removed = [vid for vid in self._order if vid not in keep]
        for vid in removed:
            del self._versions[vid]
            del self._logs[vid]
        self._order = [vid for vid in self._order if vid in keep]
        return removed


def transpose_through(edits: Sequence[Union[Insert, Remove]], offset: int) -> Optional[int]:
    pos: Optional[int] = offset
    for edit in edits:
        if pos is None:
            return None
        if isinstance(edit, Insert):
            if pos >= edit.offset:
                pos += len(edit.text)
        else:
            lo, hi = edit.offset, edit.offset + len(edit.text)
            if pos <= lo:
                pass
            elif pos < hi:
                return None
            else:
                pos -= len(edit.text)
    return pos
