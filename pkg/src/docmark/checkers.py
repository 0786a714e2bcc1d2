"""Checker integration: demo checkers, result caching, external tools.

A checker is a function from input text to a stream of offset-anchored
events (messages and markup), emitted incrementally: syntax events as soon
as parsing is done, semantic events as each sub-element finishes.  Results
for unchanged sub-elements come from a content-hash cache instead of being
recomputed, and long checks poll a cancel signal so edits can interrupt
them quickly.

Checkers never touch the global file system; external tools get their input
via stdin or a file in a per-run temporary directory that is removed
afterwards.
"""

from __future__ import annotations

import os
import re
import signal
import subprocess
import tempfile
import threading
import time
from collections import OrderedDict
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable, Iterable, Mapping, Optional, Sequence, Union

from .document import NodeName, normalize_path
from .markup import MarkupElement
from .pretty import Break, PrettyTree, Str, block, from_plain_text, unbroken
from .sessions import TheoryHeader, parse_theory_header
from .syntax import BASE_KEYWORDS, KeywordTable, TokenKind, content_digest, tokenize


class Severity(Enum):
    STATUS = "status"
    WRITELN = "writeln"
    WARNING = "warning"
    ERROR = "error"


class Phase(Enum):
    SYNTAX = "syntax"
    SEMANTICS = "semantics"


@dataclass(frozen=True)
class CheckerMessage:
    severity: Severity
    start: int
    end: int
    body: PrettyTree
    phase: Phase

    def __post_init__(self):
        if self.severity is not Severity.STATUS and not unbroken(self.body).strip():
            raise ValueError("message body must be nonempty for non-status severity")

    @property
    def text(self) -> str:
        return unbroken(self.body)


def message(severity: Severity, start: int, end: int,
            body: Union[str, PrettyTree], phase: Phase) -> CheckerMessage:
    if isinstance(body, str):
        body = from_plain_text(body)
    return CheckerMessage(severity, start, end, body, phase)


@dataclass(frozen=True)
class MarkupEvent:
    start: int
    end: int
    element: MarkupElement


Event = Union[CheckerMessage, MarkupEvent]


def shift_event(event: Event, delta: int) -> Event:
    if delta == 0:
        return event
    return replace(event, start=event.start + delta, end=event.end + delta)


class CheckCancelled(Exception):
    pass


class ResultCache:
    """Digest-keyed store of per-sub-element results.

    get_or_compute coalesces concurrent computations of the same key and
    counts actual evaluations (cache misses that ran the computation).
    An optional cap evicts least-recently-used entries.
    """

    def __init__(self, cap: int = 0):
        self._cap = cap
        self._lock = threading.Lock()
        self._entries: "OrderedDict[str, tuple[Event, ...]]" = OrderedDict()
        self._inflight: dict[str, threading.Event] = {}
        self.evaluations = 0
        self.hits = 0

    def get_or_compute(self, key: str,
                       compute: Callable[[], Sequence[Event]]) -> tuple[Event, ...]:
        while True:
            with self._lock:
                if key in self._entries:
                    self._entries.move_to_end(key)
                    self.hits += 1
                    return self._entries[key]
                waiter = self._inflight.get(key)
                if waiter is None:
                    self._inflight[key] = threading.Event()
                    break
            waiter.wait()
        try:
            with self._lock:
                self.evaluations += 1
            value = tuple(compute())
        except BaseException:
            with self._lock:
                done = self._inflight.pop(key)
            done.set()
            raise
        with self._lock:
            self._entries[key] = value
            if self._cap and len(self._entries) > self._cap:
                self._entries.popitem(last=False)
            done = self._inflight.pop(key)
        done.set()
        return value

    def stats(self) -> dict[str, int]:
        with self._lock:
            return {"entries": len(self._entries), "evaluations": self.evaluations,
                    "hits": self.hits}

    def reset_counters(self) -> None:
        with self._lock:
            self.evaluations = 0
            self.hits = 0


@dataclass
class CheckContext:
    """Everything a checker may use while running one unit of work."""

    emit: Callable[[Event], None]
    cancel: threading.Event = field(default_factory=threading.Event)
    cache: Optional[ResultCache] = None
    node: Optional[NodeName] = None
    command: str = ""
    keywords: KeywordTable = BASE_KEYWORDS
    context_key: str = ""
    attachments: Mapping[str, str] = field(default_factory=dict)
    export: Optional[Callable[[str, bytes, bool], None]] = None
    config: Mapping[str, object] = field(default_factory=dict)

    def check_cancelled(self) -> None:
        if self.cancel.is_set():
            raise CheckCancelled()

    def cached(self, key_parts: Sequence[str],
               compute: Callable[[], Sequence[Event]]) -> tuple[Event, ...]:
        if self.cache is None:
            return tuple(compute())
        return self.cache.get_or_compute(content_digest("\x1f".join(key_parts)), compute)

    def sleep_slices(self, total_ms: int) -> None:
        """Sleep in small slices, honouring cancellation promptly."""
        deadline = time.monotonic() + total_ms / 1000.0
        while time.monotonic() < deadline:
            self.check_cancelled()
            time.sleep(min(0.01, max(0.0, deadline - time.monotonic())))
        self.check_cancelled()


Checker = Callable[[str, CheckContext], None]


@dataclass(frozen=True)
class FileFormat:
    """Registration of a file extension as a checkable auxiliary format."""

    extension: str
    checker_id: str
    theory_template: Callable[[str], TheoryHeader] = lambda name: TheoryHeader(name)


class RegistryError(ValueError):
    pass


class CheckerRegistry:
    def __init__(self):
        self._checkers: dict[str, Checker] = {}
        self._formats: dict[str, FileFormat] = {}

    def register_checker(self, checker_id: str, checker: Checker) -> None:
        if checker_id in self._checkers:
            raise RegistryError(f"checker {checker_id!r} already registered")
        self._checkers[checker_id] = checker

    def register_format(self, fmt: FileFormat) -> None:
        if fmt.extension in self._formats:
            raise RegistryError(f"file format {fmt.extension!r} already registered")
        if fmt.checker_id not in self._checkers:
            raise RegistryError(f"file format {fmt.extension!r} names unknown checker "
                                f"{fmt.checker_id!r}")
        self._formats[fmt.extension] = fmt

    def checker(self, checker_id: str) -> Checker:
        try:
            return self._checkers[checker_id]
        except KeyError:
            raise RegistryError(f"unknown checker {checker_id!r}") from None

    def format_for(self, extension: str) -> Optional[FileFormat]:
        return self._formats.get(extension)

    def extensions(self) -> list[str]:
        return sorted(self._formats)

    def check(self, checker_id: str, content: str, ctx: CheckContext) -> str:
        """Run a checker over content; returns terminal status
        ("finished" | "cancelled" | "failed")."""
        checker = self.checker(checker_id)
        try:
            checker(content, ctx)
            return "finished"
        except CheckCancelled:
            return "cancelled"
        except Exception as exc:  # checker crash: one error covering everything
            try:
                ctx.emit(message(Severity.ERROR, 0, len(content),
                                 f"checker {checker_id} crashed: {exc}", Phase.SEMANTICS))
            except Exception:
                pass
            return "failed"


# -- arithmetic claims ---------------------------------------------------

_COMPARATORS = ("!=", "<=", ">=", "=", "<", ">", "≠", "≤", "≥")
_CMP_EVAL = {
    "=": lambda a, b: a == b, "!=": lambda a, b: a != b, "≠": lambda a, b: a != b,
    "<": lambda a, b: a < b, ">": lambda a, b: a > b,
    "<=": lambda a, b: a <= b, "≤": lambda a, b: a <= b,
    ">=": lambda a, b: a >= b, "≥": lambda a, b: a >= b,
}


@dataclass(frozen=True)
class Claim:
    ok: bool
    comparator: str
    left_value: int
    right_value: int
    right_start: int
    right_end: int


class ClaimSyntaxError(ValueError):
    pass


class _ExprParser:
    """Integer expressions with + - *, parentheses and unary minus."""

    def __init__(self, text: str):
        self.text = text
        self.pos = 0

    def skip_ws(self) -> None:
        while self.pos < len(self.text) and self.text[self.pos].isspace():
            self.pos += 1

    def expr(self) -> int:
        value = self.term()
        while True:
            self.skip_ws()
            if self.pos < len(self.text) and self.text[self.pos] in "+-":
                op = self.text[self.pos]
                self.pos += 1
                rhs = self.term()
                value = value + rhs if op == "+" else value - rhs
            else:
                return value

    def term(self) -> int:
        value = self.factor()
        while True:
            self.skip_ws()
            if self.pos < len(self.text) and self.text[self.pos] == "*":
                self.pos += 1
                value *= self.factor()
            else:
                return value

    def factor(self) -> int:
        self.skip_ws()
        if self.pos >= len(self.text):
            raise ClaimSyntaxError("unexpected end of expression")
        ch = self.text[self.pos]
        if ch == "-":
            self.pos += 1
            return -self.factor()
        if ch == "(":
            self.pos += 1
            value = self.expr()
            self.skip_ws()
            if self.pos >= len(self.text) or self.text[self.pos] != ")":
                raise ClaimSyntaxError("missing closing parenthesis")
            self.pos += 1
            return value
        if ch.isdigit():
            start = self.pos
            while self.pos < len(self.text) and self.text[self.pos].isdigit():
                self.pos += 1
            return int(self.text[start:self.pos])
        raise ClaimSyntaxError(f"unexpected character {ch!r}")


def evaluate_claim(text: str) -> Claim:
    """Evaluate an integer comparison claim like ``2 + 2 = 4``.

    Raises :class:`ClaimSyntaxError` when the text is not a claim.
    """
    split_at = None
    comparator = None
    depth = 0
    i = 0
    while i < len(text):
        ch = text[i]
        if ch == "(":
            depth += 1
        elif ch == ")":
            depth -= 1
        elif depth == 0:
            for cmp_op in _COMPARATORS:
                if text.startswith(cmp_op, i):
                    split_at, comparator = i, cmp_op
                    break
        if split_at is not None:
            break
        i += 1
    if split_at is None or comparator is None:
        raise ClaimSyntaxError("no comparison operator")

    left_text = text[:split_at]
    right_start = split_at + len(comparator)
    right_text = text[right_start:]

    lp = _ExprParser(left_text)
    left_value = lp.expr()
    lp.skip_ws()
    if lp.pos != len(left_text):
        raise ClaimSyntaxError("trailing input on left side")

    rp = _ExprParser(right_text)
    right_value = rp.expr()
    rhs_lo = right_start + _leading_ws(right_text)
    rhs_hi = right_start + rp.pos
    rp.skip_ws()
    if rp.pos != len(right_text):
        raise ClaimSyntaxError("trailing input on right side")

    ok = _CMP_EVAL[comparator](left_value, right_value)
    return Claim(ok, comparator, left_value, right_value, rhs_lo, rhs_hi)


def _leading_ws(text: str) -> int:
    return len(text) - len(text.lstrip())


# -- block documents (ftl demo) ------------------------------------------

BLOCK_MARKERS = ("Proposition.", "Definition.", "Axiom.")


@dataclass(frozen=True)
class DocBlock:
    kind: str
    start: int
    end: int
    source: str
    body_offset: int  # offset of the claim text within source

    @property
    def claim(self) -> str:
        return self.source[self.body_offset:]


def parse_blocks(content: str) -> list[DocBlock]:
    """Blocks are paragraphs beginning with a marker and ending at a blank
    line (or end of input)."""
    blocks: list[DocBlock] = []
    offset = 0
    lines = content.splitlines(keepends=True)
    i = 0
    while i < len(lines):
        line = lines[i]
        stripped = line.lstrip()
        marker = next((m for m in BLOCK_MARKERS if stripped.startswith(m)), None)
        if marker is None:
            offset += len(line)
            i += 1
            continue
        start = offset + (len(line) - len(stripped))
        end = offset + len(line.rstrip("\r\n"))
        i += 1
        offset += len(line)
        while i < len(lines) and lines[i].strip():
            end = offset + len(lines[i].rstrip("\r\n"))
            offset += len(lines[i])
            i += 1
        source = content[start:end]
        blocks.append(DocBlock(marker[:-1].lower(), start, end, source, len(marker)))
    return blocks


def _strip_claim(claim: str) -> tuple[str, int]:
    """The claim is the first sentence: text up to the first period (or the
    end), surrounding whitespace dropped.  Returns (text, offset within the
    input); later prose in the block is not part of the claim."""
    dot = claim.find(".")
    sentence = claim if dot < 0 else claim[:dot]
    lead = _leading_ws(sentence)
    return sentence.strip(), lead


def _check_block(blk: DocBlock, slow_ms: int, ctx: CheckContext) -> list[Event]:
    """Semantic result for one block, in block-local offsets."""
    if slow_ms:
        ctx.sleep_slices(slow_ms)
    events: list[Event] = []
    length = len(blk.source)
    if blk.kind != "proposition":
        events.append(message(Severity.WRITELN, 0, length, "accepted", Phase.SEMANTICS))
        events.append(MarkupEvent(0, length, MarkupElement("accepted")))
        return events

    claim_text, rel = _strip_claim(blk.claim)
    claim_lo = blk.body_offset + rel
    claim_hi = claim_lo + len(claim_text)
    try:
        claim = evaluate_claim(claim_text)
    except ClaimSyntaxError as exc:
        events.append(message(Severity.WARNING, claim_lo, claim_hi,
                              f"cannot evaluate claim: {exc}", Phase.SEMANTICS))
        events.append(MarkupEvent(claim_lo, claim_hi, MarkupElement("warning")))
        return events
    if claim.ok:
        events.append(message(Severity.WRITELN, 0, length, "checked", Phase.SEMANTICS))
        events.append(MarkupEvent(0, length, MarkupElement("checked")))
        return events

    body = block(Str("claim is false:"), Break(1, 2),
                 Str(f"left side evaluates to {claim.left_value},"), Break(1, 2),
                 Str(f"right side to {claim.right_value}"), indent=0)
    events.append(CheckerMessage(Severity.ERROR, claim_lo, claim_hi, body, Phase.SEMANTICS))
    events.append(MarkupEvent(claim_lo, claim_hi, MarkupElement("error")))
    if claim.comparator == "=":
        fix_lo = claim_lo + claim.right_start
        fix_hi = claim_lo + claim.right_end
        # replacement offsets are relative to this element's own start
        events.append(MarkupEvent(fix_lo, fix_hi, MarkupElement("active", (
            ("kind", "replace"),
            ("start", "0"),
            ("end", str(fix_hi - fix_lo)),
            ("text", str(claim.left_value)),
            ("title", f"replace with {claim.left_value}"),
        ))))
    return events


def arith_checker(content: str, ctx: CheckContext) -> None:
    """Paragraph-block demo checker: marker keywords, then per-block
    arithmetic claim evaluation with caching."""
    slow_ms = int(ctx.config.get("slow_ms", 0))
    blocks = parse_blocks(content)
    for blk in blocks:
        ctx.check_cancelled()
        ctx.emit(MarkupEvent(blk.start, blk.end,
                             MarkupElement("block", (("kind", blk.kind),))))
        ctx.emit(MarkupEvent(blk.start, blk.start + blk.body_offset,
                             MarkupElement("keyword", (("kind", "marker"),))))
        ctx.emit(message(Severity.STATUS, blk.start, blk.end,
                         f"{blk.kind} block", Phase.SYNTAX))
    counts = {"checked": 0, "failed": 0, "other": 0}
    for blk in blocks:
        ctx.check_cancelled()
        events = ctx.cached(
            ["arith", str(slow_ms), ctx.context_key, blk.kind, blk.source],
            lambda blk=blk: _check_block(blk, slow_ms, ctx))
        for ev in events:
            ctx.emit(shift_event(ev, blk.start))
        severities = [ev.severity for ev in events if isinstance(ev, CheckerMessage)]
        if Severity.ERROR in severities:
            counts["failed"] += 1
        elif Severity.WRITELN in severities:
            counts["checked"] += 1
        else:
            counts["other"] += 1
    if ctx.export is not None:
        summary = "".join(f"{k}: {v}\n" for k, v in sorted(counts.items()))
        ctx.export("results/summary.txt", summary.encode("utf-8"), False)
        ctx.export("results/blocks.tsv",
                   "".join(f"{b.kind}\t{b.start}\t{b.end}\n" for b in blocks).encode("utf-8"),
                   True)


# -- bibliography entries (bib demo) ---------------------------------------

_ENTRY_RE = re.compile(r"@([A-Za-z]+)\s*\{\s*([^,\s{}]*)", re.MULTILINE)
_KNOWN_ENTRY_TYPES = {
    "article": ("author", "title", "journal", "year"),
    "book": ("author", "title", "publisher", "year"),
    "inproceedings": ("author", "title", "booktitle", "year"),
    "misc": (),
    "techreport": ("author", "title", "institution", "year"),
}
_FIELD_RE = re.compile(r"([A-Za-z]+)\s*=")


@dataclass(frozen=True)
class BibEntry:
    entry_type: str
    key: str
    start: int
    end: int
    source: str


def parse_bib_entries(content: str) -> list[BibEntry]:
    entries: list[BibEntry] = []
    for m in _ENTRY_RE.finditer(content):
        start = m.start()
        depth = 0
        end = len(content)
        for i in range(content.index("{", m.start()), len(content)):
            if content[i] == "{":
                depth += 1
            elif content[i] == "}":
                depth -= 1
                if depth == 0:
                    end = i + 1
                    break
        entries.append(BibEntry(m.group(1).lower(), m.group(2), start, end,
                                content[start:end]))
    return entries


def _check_bib_entry(entry: BibEntry, ctx: CheckContext) -> list[Event]:
    slow_ms = int(ctx.config.get("slow_ms", 0))
    if slow_ms:
        ctx.sleep_slices(slow_ms)
    events: list[Event] = []
    length = len(entry.source)
    if entry.entry_type not in _KNOWN_ENTRY_TYPES:
        events.append(message(Severity.WARNING, 0, length,
                              f"unknown entry type @{entry.entry_type}", Phase.SEMANTICS))
        events.append(MarkupEvent(0, length, MarkupElement("warning")))
        return events
    present = {f.lower() for f in _FIELD_RE.findall(entry.source)}
    missing = [f for f in _KNOWN_ENTRY_TYPES[entry.entry_type] if f not in present]
    if missing:
        events.append(message(Severity.WARNING, 0, length,
                              f"missing fields: {', '.join(missing)}", Phase.SEMANTICS))
        events.append(MarkupEvent(0, length, MarkupElement("warning")))
    else:
        events.append(message(Severity.WRITELN, 0, length, "entry ok", Phase.SEMANTICS))
        events.append(MarkupEvent(0, length, MarkupElement("checked")))
    return events


def bib_checker(content: str, ctx: CheckContext) -> None:
    entries = parse_bib_entries(content)
    seen: dict[str, BibEntry] = {}
    for entry in entries:
        ctx.check_cancelled()
        ctx.emit(MarkupEvent(entry.start, entry.end,
                             MarkupElement("entry", (("type", entry.entry_type),))))
        ctx.emit(message(Severity.STATUS, entry.start, entry.end,
                         f"@{entry.entry_type} {entry.key}", Phase.SYNTAX))
        # duplicate keys are a cross-entry property: checked fresh, never cached
        if entry.key:
            if entry.key in seen:
                ctx.emit(message(Severity.ERROR, entry.start, entry.end,
                                 f"duplicate entry key {entry.key!r}", Phase.SYNTAX))
                ctx.emit(MarkupEvent(entry.start, entry.end, MarkupElement("error")))
            else:
                seen[entry.key] = entry
    for entry in entries:
        ctx.check_cancelled()
        events = ctx.cached(["bib", ctx.context_key, entry.source],
                            lambda entry=entry: _check_bib_entry(entry, ctx))
        for ev in events:
            ctx.emit(shift_event(ev, entry.start))


# -- theory spans -----------------------------------------------------------

_TOKEN_MARKUP = {
    TokenKind.COMMAND: "keyword1",
    TokenKind.KEYWORD: "keyword2",
    TokenKind.STRING: "string",
    TokenKind.CARTOUCHE: "cartouche",
    TokenKind.COMMENT: "comment",
    TokenKind.ERROR: "bad_syntax",
}


def _syntax_markup(source: str, ctx: CheckContext) -> None:
    for tok in tokenize(source, ctx.keywords):
        name = _TOKEN_MARKUP.get(tok.kind)
        if name:
            ctx.emit(MarkupEvent(tok.start, tok.end, MarkupElement(name)))


def _first_payload(source: str, ctx: CheckContext) -> Optional[tuple[int, int, str]]:
    """The first cartouche or quoted string in the span: (start, end, text)."""
    for tok in tokenize(source, ctx.keywords):
        if tok.kind is TokenKind.CARTOUCHE:
            inner = _cartouche_body(tok.source)
            body_lo = tok.start + _cartouche_open_len(tok.source)
            return (body_lo, body_lo + len(inner), inner)
        if tok.kind is TokenKind.STRING:
            return (tok.start + 1, tok.end - 1, tok.source[1:-1])
    return None


def _cartouche_open_len(source: str) -> int:
    return len("\\<open>") if source.startswith("\\<open>") else 1


def _cartouche_close_len(source: str) -> int:
    return len("\\<close>") if source.endswith("\\<close>") else 1


def _cartouche_body(source: str) -> str:
    return source[_cartouche_open_len(source):len(source) - _cartouche_close_len(source)]


def theory_span_checker(source: str, ctx: CheckContext) -> None:
    """Check one command span of a theory node, dispatching on the command."""
    _syntax_markup(source, ctx)
    command = ctx.command
    length = len(source)
    if not source.strip():
        return
    ctx.emit(message(Severity.STATUS, 0, length, "", Phase.SYNTAX))

    if command == "":
        _check_prelude(source, ctx)
        return

    spec = ctx.keywords.commands.get(command)
    if spec is not None and spec.is_load_command:
        _check_load(source, ctx, spec.file_extension_hint)
        return
    if command == "eval":
        _check_eval(source, ctx)
        return
    if command in ("text", "section", "subsection"):
        payload = _first_payload(source, ctx)
        if payload is None:
            ctx.emit(message(Severity.WARNING, 0, length,
                             f"{command} expects a cartouche body", Phase.SEMANTICS))
            return
        lo, hi, _body = payload
        ctx.emit(MarkupEvent(lo, hi, MarkupElement("document", (("kind", command),))))
        return
    if command == "ML":
        payload = _first_payload(source, ctx)
        if payload is not None:
            lo, hi, _body = payload
            ctx.emit(MarkupEvent(lo, hi, MarkupElement("language", (("name", "ML"),))))
        events = ctx.cached(["thy-ml", ctx.context_key, source],
                            lambda: [message(Severity.WRITELN, 0, length, "accepted",
                                             Phase.SEMANTICS)])
        for ev in events:
            ctx.emit(ev)
        return
    ctx.emit(message(Severity.WARNING, 0, length,
                     f"no checker for command {command!r}", Phase.SEMANTICS))


def _check_prelude(source: str, ctx: CheckContext) -> None:
    words = source.split()
    node = ctx.node or NodeName.theory("Scratch.thy")
    if not words or words[0] != "theory":
        return
    header = parse_theory_header(source, node)
    if header is None:
        ctx.emit(message(Severity.ERROR, 0, len(source),
                         "malformed theory header", Phase.SYNTAX))
        return
    if ctx.config.get("import_cycle"):
        ctx.emit(message(Severity.ERROR, 0, len(source),
                         str(ctx.config["import_cycle"]), Phase.SEMANTICS))
        return
    missing = [str(i) for i in header.imports if str(i) not in ctx.attachments]
    for name in missing:
        ctx.emit(message(Severity.ERROR, 0, len(source),
                         f"unknown import {name}", Phase.SEMANTICS))
    if not missing:
        ctx.emit(message(Severity.WRITELN, 0, len(source), "header ok", Phase.SEMANTICS))


def _check_eval(source: str, ctx: CheckContext) -> None:
    payload = _first_payload(source, ctx)
    if payload is None:
        ctx.emit(message(Severity.WARNING, 0, len(source),
                         "eval expects a claim in a cartouche", Phase.SEMANTICS))
        return
    lo, hi, body = payload
    slow_ms = int(ctx.config.get("slow_ms", 0))

    def compute() -> list[Event]:
        if slow_ms:
            ctx.sleep_slices(slow_ms)
        events: list[Event] = []
        claim_text, rel = _strip_claim(body)
        try:
            claim = evaluate_claim(claim_text)
        except ClaimSyntaxError as exc:
            events.append(message(Severity.WARNING, rel, rel + len(claim_text),
                                  f"cannot evaluate claim: {exc}", Phase.SEMANTICS))
            return events
        if claim.ok:
            events.append(message(Severity.WRITELN, rel, rel + len(claim_text),
                                  "checked", Phase.SEMANTICS))
            events.append(MarkupEvent(rel, rel + len(claim_text), MarkupElement("checked")))
            return events
        events.append(message(Severity.ERROR, rel, rel + len(claim_text),
                              f"claim is false: left side evaluates to {claim.left_value}",
                              Phase.SEMANTICS))
        events.append(MarkupEvent(rel, rel + len(claim_text), MarkupElement("error")))
        if claim.comparator == "=":
            events.append(MarkupEvent(rel + claim.right_start, rel + claim.right_end,
                                      MarkupElement("active", (
                                          ("kind", "replace"), ("start", "0"),
                                          ("end", str(claim.right_end - claim.right_start)),
                                          ("text", str(claim.left_value)),
                                          ("title", f"replace with {claim.left_value}"),
                                      ))))
        return events

    events = ctx.cached(["thy-eval", str(slow_ms), ctx.context_key, body], compute)
    for ev in events:
        ctx.emit(shift_event(ev, lo))


def _check_load(source: str, ctx: CheckContext, extension_hint: Optional[str]) -> None:
    payload = _first_payload(source, ctx)
    if payload is None:
        ctx.emit(message(Severity.ERROR, 0, len(source),
                         "load command expects a file name", Phase.SEMANTICS))
        return
    lo, hi, name = payload
    node = ctx.node or NodeName.theory("Scratch.thy")
    base = os.path.dirname(node.path)
    try:
        path = normalize_path(os.path.join(base, name) if base else name)
    except ValueError:
        ctx.emit(message(Severity.ERROR, lo, hi, f"bad file name {name!r}", Phase.SEMANTICS))
        return
    if extension_hint and not path.endswith("." + extension_hint):
        ctx.emit(message(Severity.WARNING, lo, hi,
                         f"expected a .{extension_hint} file", Phase.SEMANTICS))
    if path not in ctx.attachments:
        ctx.emit(message(Severity.ERROR, lo, hi, f"file not attached: {path}",
                         Phase.SEMANTICS))
        return
    ctx.emit(MarkupEvent(lo, hi, MarkupElement("file", (("path", path),))))
    ctx.emit(message(Severity.WRITELN, lo, hi, "loaded", Phase.SEMANTICS))


# -- stub checkers for tests ------------------------------------------------

def sleeper_checker(content: str, ctx: CheckContext) -> None:
    """Pretends to work for a configurable time; used to exercise
    cancellation."""
    ctx.sleep_slices(int(ctx.config.get("sleep_ms", 60_000)))
    ctx.emit(message(Severity.WRITELN, 0, len(content), "slept", Phase.SEMANTICS))


# -- external tools ---------------------------------------------------------

_LINE_RE = re.compile(r"^(status|writeln|warning|error)\t(\d+)\t(\d+)\t(.*)$")

#: escalation deadline for cancellation, in seconds
CANCEL_DEADLINE = 2.0


def run_external(argv: Sequence[str], content: str, cancel: threading.Event,
                 emit: Callable[[Event], None], temp_root: Optional[str] = None,
                 deadline: float = CANCEL_DEADLINE) -> str:
    """Run an external tool as a function from content to messages.

    ``{file}`` in the argv template is replaced by a temporary file holding
    the content; without it the content is piped to stdin.  Output lines
    follow ``SEVERITY<TAB>START<TAB>END<TAB>body``.  Cancellation sends
    SIGINT and escalates to SIGKILL at the deadline.  Returns the terminal
    status.
    """
    with tempfile.TemporaryDirectory(dir=temp_root) as tmp:
        argv = list(argv)
        if any("{file}" in a for a in argv):
            path = os.path.join(tmp, "input.txt")
            with open(path, "w", encoding="utf-8") as handle:
                handle.write(content)
            argv = [a.replace("{file}", path) for a in argv]
            stdin_data = None
        else:
            stdin_data = content.encode("utf-8")

        try:
            proc = subprocess.Popen(
                argv, stdin=subprocess.PIPE, stdout=subprocess.PIPE,
                stderr=subprocess.DEVNULL, cwd=tmp, start_new_session=True)
        except OSError as exc:
            emit(message(Severity.ERROR, 0, len(content),
                         f"cannot start tool {argv[0]!r}: {exc}", Phase.SEMANTICS))
            return "failed"

        out: list[bytes] = []

        def pump() -> None:
            if proc.stdin is not None:
                try:
                    if stdin_data is not None:
                        proc.stdin.write(stdin_data)
                    proc.stdin.close()
                except OSError:
                    pass
            if proc.stdout is not None:
                out.append(proc.stdout.read())

        reader = threading.Thread(target=pump, daemon=True)
        reader.start()

        interrupted_at: Optional[float] = None
        killed = False
        while True:
            try:
                proc.wait(timeout=0.01)
                break
            except subprocess.TimeoutExpired:
                pass
            now = time.monotonic()
            if cancel.is_set() and interrupted_at is None:
                interrupted_at = now
                try:
                    os.killpg(proc.pid, signal.SIGINT)
                except OSError:
                    proc.send_signal(signal.SIGINT)
            if interrupted_at is not None and now - interrupted_at > deadline:
                killed = True
                try:
                    os.killpg(proc.pid, signal.SIGKILL)
                except OSError:
                    proc.kill()
                proc.wait()
                break
        reader.join(timeout=deadline)

        if cancel.is_set():
            if killed:
                emit(message(Severity.STATUS, 0, len(content),
                             "tool killed at cancellation deadline", Phase.SEMANTICS))
            return "cancelled"

        text = b"".join(out).decode("utf-8", errors="replace")
        parsed = 0
        for line in text.splitlines():
            if not line.strip():
                continue
            m = _LINE_RE.match(line)
            if m is None:
                emit(message(Severity.WARNING, 0, len(content),
                             f"unparseable tool output: {line[:80]}", Phase.SEMANTICS))
                continue
            severity = Severity(m.group(1))
            lo, hi = int(m.group(2)), int(m.group(3))
            clamped_lo = max(0, min(lo, len(content)))
            clamped_hi = max(clamped_lo, min(hi, len(content)))
            if (clamped_lo, clamped_hi) != (lo, hi):
                emit(message(Severity.WARNING, clamped_lo, clamped_hi,
                             f"tool reported out-of-bounds range [{lo},{hi})",
                             Phase.SEMANTICS))
            phase = Phase.SYNTAX if severity is Severity.STATUS else Phase.SEMANTICS
            emit(message(severity, clamped_lo, clamped_hi, m.group(4) or "(no detail)",
                         phase))
            parsed += 1

        if proc.returncode != 0 and parsed == 0:
            emit(message(Severity.ERROR, 0, len(content),
                         f"tool exited with code {proc.returncode} and no diagnostics",
                         Phase.SEMANTICS))
            return "failed"
        return "finished"


def external_checker(argv: Sequence[str], env_override: Optional[str] = None) -> Checker:
    """Wrap an external command template as a registered checker."""

    def run(content: str, ctx: CheckContext) -> None:
        template = list(argv)
        if env_override:
            override = os.environ.get(env_override)
            if override:
                template[0] = override
        status = run_external(template, content, ctx.cancel, ctx.emit,
                              temp_root=ctx.config.get("temp_root"))
        if status == "cancelled":
            raise CheckCancelled()

    return run


def builtin_registry() -> CheckerRegistry:
    """Registry with the bundled demo checkers and file formats."""
    registry = CheckerRegistry()
    registry.register_checker("arith", arith_checker)
    registry.register_checker("bib", bib_checker)
    registry.register_checker("thy", theory_span_checker)
    registry.register_checker("sleeper", sleeper_checker)
    registry.register_format(FileFormat("ftl", "arith"))
    registry.register_format(FileFormat("bib", "bib"))
    return registry
