"""Block-and-break pretty printing in the style of Oppen's printer.

Message bodies are trees of strings, optional breaks, and indenting blocks.
``format`` lays a tree out against a margin using a pluggable width metric
(character count by default; a per-character width table gives proportional
fonts).  A *consistent* block whose content does not fit breaks at every
break; an inconsistent block breaks greedily, break by break.

Classic two-pass scheme: widths are measured bottom-up, then emission decides
each break with one-line lookahead and no backtracking.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable, Sequence, Union

Metric = Callable[[str], float]


def char_metric(text: str) -> float:
    return float(len(text))


@dataclass(frozen=True)
class Str:
    text: str

    def __post_init__(self):
        if "\n" in self.text or "\r" in self.text:
            raise ValueError("Str must not contain line separators")


@dataclass(frozen=True)
class Break:
    spaces: int = 1
    indent: int = 0

    def __post_init__(self):
        if self.spaces < 0 or self.indent < 0:
            raise ValueError("break widths must be nonnegative")


@dataclass(frozen=True)
class Block:
    indent: int
    body: tuple["PrettyTree", ...]
    consistent: bool = False

    def __post_init__(self):
        if self.indent < 0:
            raise ValueError("block indent must be nonnegative")


PrettyTree = Union[Str, Break, Block]


def block(*items: Union[PrettyTree, str], indent: int = 0,
          consistent: bool = False) -> Block:
    """Convenience constructor; bare strings become Str leaves."""
    body = tuple(Str(it) if isinstance(it, str) else it for it in items)
    return Block(indent, body, consistent)


def from_plain_text(text: str) -> PrettyTree:
    """Wrap arbitrary text (possibly multi-line) as a tree; line boundaries
    become breaks."""
    lines = text.split("\n")
    if len(lines) == 1:
        return Str(text)
    items: list[PrettyTree] = []
    for i, line in enumerate(lines):
        if i:
            items.append(Break(1, 0))
        if line:
            items.append(Str(line))
    return Block(0, tuple(items))


def tree_width(tree: PrettyTree, metric: Metric = char_metric) -> float:
    if isinstance(tree, Str):
        return metric(tree.text)
    if isinstance(tree, Break):
        return metric(" " * tree.spaces)
    return sum(tree_width(t, metric) for t in tree.body)


def unbroken(tree: PrettyTree) -> str:
    """Reference rendering with every break as spaces (the infinite-margin
    output)."""
    if isinstance(tree, Str):
        return tree.text
    if isinstance(tree, Break):
        return " " * tree.spaces
    return "".join(unbroken(t) for t in tree.body)


def format(tree: PrettyTree, margin: float, metric: Metric = char_metric) -> list[str]:
    """Lay the tree out against the margin; returns output lines.

    Breaks render as their spaces when the content up to the next break
    still fits, and otherwise as a newline plus the enclosing block's
    indentation (block start column + block indent + break indent).
    """
    if margin <= 0:
        raise ValueError("margin must be positive")
    space_w = metric(" ") or 1.0

    lines: list[str] = []
    cur: list[str] = []
    pos = 0.0

    def breakdist(items: Sequence[PrettyTree], i: int, after: float) -> float:
        total = 0.0
        for it in items[i:]:
            if isinstance(it, Break):
                return total
            total += tree_width(it, metric)
        return total + after

    def emit(it: PrettyTree, base: int, force: bool, after: float) -> None:
        nonlocal pos
        if isinstance(it, Str):
            cur.append(it.text)
            pos += metric(it.text)
        elif isinstance(it, Break):
            gap = " " * it.spaces
            if not force and pos + metric(gap) + after <= margin:
                cur.append(gap)
                pos += metric(gap)
            else:
                lines.append("".join(cur))
                cur.clear()
                indent = " " * (base + it.indent)
                cur.append(indent)
                pos = metric(indent)
        else:
            sub_base = int(round(pos / space_w)) + it.indent
            sub_force = it.consistent and pos + tree_width(it, metric) + after > margin
            for idx, child in enumerate(it.body):
                emit(child, sub_base, sub_force, breakdist(it.body, idx + 1, after))

    emit(tree, 0, False, 0.0)
    lines.append("".join(cur))
    return lines
