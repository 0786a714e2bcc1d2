"""Offset-anchored semantic annotations.

Markup lives in trees of nested, non-overlapping ranges over node text.
Trees are immutable values: adding an element returns a new tree, and an
element that overlaps existing markup without nesting is rejected (checkers
must emit well-nested markup).

A :class:`Snapshot` joins markup anchored to an older text with the edits
applied since, answering queries in current-text offsets without ever
waiting on checking.  Markup whose anchor range was edited away is dropped.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Iterator, NamedTuple, Optional, Sequence, Union

from .document import Insert, NodeName, Remove, transpose_through


class MarkupError(ValueError):
    """An element that cannot be added without breaking nesting."""


@dataclass(frozen=True)
class MarkupElement:
    name: str
    properties: tuple[tuple[str, str], ...] = ()

    def __post_init__(self):
        if not self.name:
            raise MarkupError("markup element name must be nonempty")
        keys = [k for k, _ in self.properties]
        if len(keys) != len(set(keys)):
            raise MarkupError(f"duplicate property keys in element {self.name!r}")

    def get(self, key: str, default: Optional[str] = None) -> Optional[str]:
        for k, v in self.properties:
            if k == key:
                return v
        return default


@dataclass(frozen=True)
class MarkupNode:
    start: int
    end: int
    element: MarkupElement
    children: tuple["MarkupNode", ...] = ()
    seq: int = 0


class Placed(NamedTuple):
    start: int
    end: int
    element: MarkupElement


NameFilter = Union[None, str, Iterable[str], Callable[[str], bool]]


def _accepts(name_filter: NameFilter, name: str) -> bool:
    if name_filter is None:
        return True
    if isinstance(name_filter, str):
        return name == name_filter
    if callable(name_filter):
        return bool(name_filter(name))
    return name in name_filter


def _intersects(ns: int, ne: int, qs: int, qe: int) -> bool:
    if qs == qe:
        if ns == ne:
            return ns == qs
        return ns <= qs < ne
    if ns == ne:
        return qs <= ns < qe
    return ns < qe and qs < ne


@dataclass(frozen=True)
class MarkupTree:
    root: tuple[MarkupNode, ...] = ()
    next_seq: int = 0

    def add(self, start: int, end: int, element: MarkupElement) -> "MarkupTree":
        """Insert an element, descending into the unique enclosing node or
        adopting fully-contained siblings; overlap without nesting raises
        :class:`MarkupError`."""
        if start > end:
            raise MarkupError(f"inverted range [{start},{end})")
        return MarkupTree(_insert(self.root, start, end, element, self.next_seq),
                          self.next_seq + 1)

    def _flat(self) -> list[MarkupNode]:
        out: list[MarkupNode] = []

        def walk(nodes: Sequence[MarkupNode]) -> None:
            for n in nodes:
                out.append(n)
                walk(n.children)

        walk(self.root)
        # ancestors always sort before descendants; equal ranges resolve by
        # insertion order
        out.sort(key=lambda n: (n.start, -n.end, n.seq))
        return out

    def cumulate(self, start: int, end: int, name_filter: NameFilter = None) -> list[Placed]:
        """All elements intersecting the query range, document order,
        outermost first."""
        return [Placed(n.start, n.end, n.element) for n in self._flat()
                if _intersects(n.start, n.end, start, end)
                and _accepts(name_filter, n.element.name)]

    def elements(self) -> Iterator[Placed]:
        """Flatten in document order, outermost first."""
        for n in self._flat():
            yield Placed(n.start, n.end, n.element)

    def check_nesting(self) -> None:
        """Structural invariant check (used by tests)."""

        def walk(nodes: Sequence[MarkupNode], lo: int, hi: int) -> None:
            prev_end = lo
            for n in nodes:
                if not (lo <= n.start and n.end <= hi):
                    raise MarkupError(f"child [{n.start},{n.end}) escapes [{lo},{hi})")
                if n.start < prev_end:
                    raise MarkupError(f"siblings overlap at {n.start}")
                if n.start > n.end:
                    raise MarkupError("inverted range")
                walk(n.children, n.start, n.end)
                prev_end = max(prev_end, n.end)

        walk(self.root, 0, float("inf"))  # type: ignore[arg-type]


def _insert(nodes: tuple[MarkupNode, ...], start: int, end: int,
            element: MarkupElement, seq: int) -> tuple[MarkupNode, ...]:
    for i, n in enumerate(nodes):
        if n.start <= start and end <= n.end:
            inner = replace(n, children=_insert(n.children, start, end, element, seq))
            return nodes[:i] + (inner,) + nodes[i + 1:]

    before: list[MarkupNode] = []
    inside: list[MarkupNode] = []
    after: list[MarkupNode] = []
    for n in nodes:
        if start <= n.start and n.end <= end:
            inside.append(n)
        elif n.end <= start:
            before.append(n)
        elif n.start >= end:
            after.append(n)
        else:
            raise MarkupError(
                f"element {element.name!r} [{start},{end}) overlaps [{n.start},{n.end}) "
                "without nesting")
    node = MarkupNode(start, end, element, tuple(inside), seq)
    return tuple(before) + (node,) + tuple(after)


PendingEdit = Union[Insert, Remove]


@dataclass(frozen=True)
class Snapshot:
    """A read-only view joining markup anchored at a base version with the
    edits applied since; query results are always in current-text offsets."""

    node: NodeName
    base_version_id: int
    base_text: str
    text: str
    edits: tuple[PendingEdit, ...] = ()
    trees: tuple[MarkupTree, ...] = ()

    def to_current(self, offset: int) -> Optional[int]:
        return transpose_through(self.edits, offset)

    def to_base(self, offset: int) -> Optional[int]:
        inverted = [Remove(e.offset, e.text) if isinstance(e, Insert) else Insert(e.offset, e.text)
                    for e in reversed(self.edits)]
        return transpose_through(inverted, offset)

    def query(self, start: int = 0, end: Optional[int] = None,
              name_filter: NameFilter = None) -> list[Placed]:
        """Elements intersecting [start, end) of the *current* text; with no
        explicit end, every surviving element is reported."""
        out: list[Placed] = []
        for tree in self.trees:
            for p in tree.elements():
                if not _accepts(name_filter, p.element.name):
                    continue
                lo = self.to_current(p.start)
                hi = self.to_current(p.end)
                if lo is None or hi is None:
                    continue
                if p.start < p.end and lo >= hi:
                    continue
                if end is not None and not _intersects(lo, hi, start, end):
                    continue
                out.append(Placed(lo, hi, p.element))
        out.sort(key=lambda p: (p.start, -p.end))
        return out
