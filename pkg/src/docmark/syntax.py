"""Symbol decoding and outer-syntax tokenization.

The lexical layer has two stages.  ``decode_symbols`` splits text into
*symbols*: plain characters, named escapes like ``\\<alpha>``, and control
escapes like ``\\<^item>``.  ``tokenize`` then groups symbols into outer-syntax
tokens: keywords, identifiers, numerals, quoted strings with backslash
escapes, nested ``(* ... *)`` comments, and cartouches (directed-quote
delimited embedded source, nesting freely without escapes).

Both stages are lossless: concatenating the ``source`` fields of the output
reproduces the input text exactly, malformed input included.  Offsets are
character (Unicode scalar value) indices.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Mapping, Optional, Sequence


class SymbolKind(Enum):
    PLAIN = "plain"
    NAMED = "named"
    CONTROL = "control"
    MALFORMED = "malformed"


@dataclass(frozen=True)
class Symbol:
    """One lexical atom of the symbol layer."""

    kind: SymbolKind
    source: str
    offset: int

    @property
    def name(self) -> str:
        """Bare name of a named/control symbol (``alpha`` for ``\\<alpha>``)."""
        if self.kind is SymbolKind.NAMED:
            return self.source[2:-1]
        if self.kind is SymbolKind.CONTROL:
            return self.source[3:-1]
        return ""


_SYMBOL_RE = re.compile(r"\\<(\^?)([A-Za-z][A-Za-z0-9_']*)>")
_MALFORMED_TAIL_RE = re.compile(r"\\<\^?[A-Za-z0-9_']*")

# Literal cartouche delimiters accepted alongside the escaped forms.
_OPEN_CHARS = "\u2039\u27e8"   # ‹ ⟨
_CLOSE_CHARS = "\u203a\u27e9"  # › ⟩


def decode_symbols(text: str) -> list[Symbol]:
    """Split text into symbols; total and lossless.

    Every well-shaped ``\\<name>`` / ``\\<^name>`` escape becomes a single
    named/control symbol whether or not the name is known anywhere; a
    structurally broken escape (``\\<`` without a proper close) becomes a
    MALFORMED symbol covering the escape prefix, with the remaining
    characters decoded normally.
    """
    out: list[Symbol] = []
    i = 0
    n = len(text)
    while i < n:
        ch = text[i]
        if ch == "\\" and i + 1 < n and text[i + 1] == "<":
            m = _SYMBOL_RE.match(text, i)
            if m:
                kind = SymbolKind.CONTROL if m.group(1) else SymbolKind.NAMED
                out.append(Symbol(kind, m.group(0), i))
                i = m.end()
                continue
            m = _MALFORMED_TAIL_RE.match(text, i)
            assert m is not None  # "\<" always matches the prefix
            out.append(Symbol(SymbolKind.MALFORMED, m.group(0), i))
            i = m.end()
            continue
        out.append(Symbol(SymbolKind.PLAIN, ch, i))
        i += 1
    return out


def _is_open_delim(sym: Symbol) -> bool:
    if sym.kind is SymbolKind.NAMED and sym.name == "open":
        return True
    return sym.kind is SymbolKind.PLAIN and sym.source in _OPEN_CHARS


def _is_close_delim(sym: Symbol) -> bool:
    if sym.kind is SymbolKind.NAMED and sym.name == "close":
        return True
    return sym.kind is SymbolKind.PLAIN and sym.source in _CLOSE_CHARS


class KeywordConflictError(ValueError):
    """Raised when merged tables redefine a command with different attributes."""

    def __init__(self, command: str):
        super().__init__(f"conflicting declarations for command {command!r}")
        self.command = command


@dataclass(frozen=True)
class CommandSpec:
    """Attributes of a declared command keyword."""

    is_load_command: bool = False
    file_extension_hint: Optional[str] = None


@dataclass(frozen=True)
class KeywordTable:
    """Declared command names plus minor keywords.

    Tables merge with set-union semantics; merging is associative,
    commutative and idempotent.  Redeclaring a command with different
    attributes raises :class:`KeywordConflictError`.
    """

    commands: Mapping[str, CommandSpec] = field(default_factory=dict)
    minor: frozenset[str] = frozenset()

    def merge(self, other: "KeywordTable") -> "KeywordTable":
        commands = dict(self.commands)
        for name, spec in other.commands.items():
            if name in commands and commands[name] != spec:
                raise KeywordConflictError(name)
            commands[name] = spec
        return KeywordTable(commands, self.minor | other.minor)

    def with_commands(self, **named: CommandSpec) -> "KeywordTable":
        return self.merge(KeywordTable(dict(named)))

    def is_command(self, word: str) -> bool:
        return word in self.commands

    def is_minor(self, word: str) -> bool:
        return word in self.minor


#: Minor keywords every document understands (header words and punctuation).
DEFAULT_MINOR = frozenset(
    ["theory", "imports", "keywords", "begin", "end", "and",
     "(", ")", "[", "]", "{", "}", ",", ";", ".", "=", "::", ":", "|"]
)

EMPTY_KEYWORDS = KeywordTable()
BASE_KEYWORDS = KeywordTable(minor=DEFAULT_MINOR)


class TokenKind(Enum):
    COMMAND = "command-keyword"
    KEYWORD = "keyword"
    IDENT = "identifier"
    NUMBER = "number"
    STRING = "quoted-string"
    CARTOUCHE = "cartouche"
    COMMENT = "comment"
    WHITESPACE = "whitespace"
    ERROR = "error"


@dataclass(frozen=True)
class Token:
    kind: TokenKind
    start: int
    end: int
    source: str

    @property
    def is_space(self) -> bool:
        return self.kind in (TokenKind.WHITESPACE, TokenKind.COMMENT)


_SYM_CHARS = frozenset("!#$%&*+-/:<=>?@^|~\\")
_PUNCT_CHARS = frozenset("()[]{},;.")


def _is_word_start(sym: Symbol) -> bool:
    if sym.kind in (SymbolKind.NAMED, SymbolKind.CONTROL):
        return not (_is_open_delim(sym) or _is_close_delim(sym))
    return sym.kind is SymbolKind.PLAIN and (sym.source.isalpha() or sym.source == "_")


def _is_word_part(sym: Symbol) -> bool:
    if _is_word_start(sym):
        return True
    return sym.kind is SymbolKind.PLAIN and (sym.source.isdigit() or sym.source == "'")


def tokenize(text: str, keywords: KeywordTable = BASE_KEYWORDS) -> list[Token]:
    """Tokenize text into a covering, non-overlapping token sequence.

    Unterminated strings, comments and cartouches produce a single trailing
    ERROR token; a stray cartouche close and malformed symbol escapes also
    land in ERROR tokens.  Everything else is classified against the
    keyword table.
    """
    syms = decode_symbols(text)
    tokens: list[Token] = []
    i = 0
    n = len(syms)

    def emit(kind: TokenKind, lo: int, hi: int) -> None:
        start = syms[lo].offset
        end = syms[hi - 1].offset + len(syms[hi - 1].source)
        tokens.append(Token(kind, start, end, text[start:end]))

    def word_kind(source: str) -> TokenKind:
        if keywords.is_command(source):
            return TokenKind.COMMAND
        if keywords.is_minor(source):
            return TokenKind.KEYWORD
        return TokenKind.IDENT

    while i < n:
        sym = syms[i]
        if sym.kind is SymbolKind.PLAIN and sym.source.isspace():
            j = i + 1
            while j < n and syms[j].kind is SymbolKind.PLAIN and syms[j].source.isspace():
                j += 1
            emit(TokenKind.WHITESPACE, i, j)
            i = j
            continue

        if (sym.kind is SymbolKind.PLAIN and sym.source == "(" and i + 1 < n
                and syms[i + 1].kind is SymbolKind.PLAIN and syms[i + 1].source == "*"):
            depth = 1
            j = i + 2
            while j < n and depth > 0:
                a, b = syms[j], syms[j + 1] if j + 1 < n else None
                if a.kind is SymbolKind.PLAIN and a.source == "(" and b is not None \
                        and b.kind is SymbolKind.PLAIN and b.source == "*":
                    depth += 1
                    j += 2
                elif a.kind is SymbolKind.PLAIN and a.source == "*" and b is not None \
                        and b.kind is SymbolKind.PLAIN and b.source == ")":
                    depth -= 1
                    j += 2
                else:
                    j += 1
            emit(TokenKind.COMMENT if depth == 0 else TokenKind.ERROR, i, j)
            i = j
            continue

        if sym.kind is SymbolKind.PLAIN and sym.source == '"':
            j = i + 1
            closed = False
            while j < n:
                s = syms[j]
                if s.kind is SymbolKind.PLAIN and s.source == "\\" and j + 1 < n:
                    j += 2
                    continue
                if s.kind is SymbolKind.PLAIN and s.source == '"':
                    j += 1
                    closed = True
                    break
                j += 1
            emit(TokenKind.STRING if closed else TokenKind.ERROR, i, j)
            i = j
            continue

        if _is_open_delim(sym):
            depth = 1
            j = i + 1
            while j < n and depth > 0:
                if _is_open_delim(syms[j]):
                    depth += 1
                elif _is_close_delim(syms[j]):
                    depth -= 1
                j += 1
            emit(TokenKind.CARTOUCHE if depth == 0 else TokenKind.ERROR, i, j)
            i = j
            continue

        if _is_close_delim(sym):
            emit(TokenKind.ERROR, i, i + 1)
            i += 1
            continue

        if sym.kind is SymbolKind.PLAIN and sym.source.isdigit():
            j = i + 1
            while j < n and syms[j].kind is SymbolKind.PLAIN and syms[j].source.isdigit():
                j += 1
            emit(TokenKind.NUMBER, i, j)
            i = j
            continue

        if _is_word_start(sym):
            j = i + 1
            while j < n and _is_word_part(syms[j]):
                j += 1
            start = syms[i].offset
            end = syms[j - 1].offset + len(syms[j - 1].source)
            tokens.append(Token(word_kind(text[start:end]), start, end, text[start:end]))
            i = j
            continue

        if sym.kind is SymbolKind.PLAIN and sym.source in _SYM_CHARS:
            j = i + 1
            while j < n and syms[j].kind is SymbolKind.PLAIN and syms[j].source in _SYM_CHARS:
                j += 1
            start = syms[i].offset
            end = syms[j - 1].offset + len(syms[j - 1].source)
            tokens.append(Token(word_kind(text[start:end]), start, end, text[start:end]))
            i = j
            continue

        if sym.kind is SymbolKind.PLAIN and sym.source in _PUNCT_CHARS:
            start = sym.offset
            source = sym.source
            tokens.append(Token(word_kind(source), start, start + 1, source))
            i += 1
            continue

        # malformed escapes and anything unclassifiable
        j = i + 1
        while j < n and syms[j].kind is SymbolKind.MALFORMED:
            j += 1
        emit(TokenKind.ERROR, i, j)
        i = j

    return tokens


@dataclass(frozen=True)
class RawSpan:
    """A command-keyed segment of node text, before identity assignment.

    ``command`` is the command keyword the span starts with, or ``""`` for
    the prelude (material before the first command).  ``digest`` hashes the
    exact span source.
    """

    command: str
    start: int
    end: int
    digest: str


def content_digest(source: str) -> str:
    return hashlib.blake2b(source.encode("utf-8"), digest_size=16).hexdigest()


def parse_spans(tokens: Sequence[Token], text: str) -> list[RawSpan]:
    """Segment a token sequence into command spans.

    Spans begin at each command keyword; leading material (e.g. a theory
    header) forms a prelude span.  Concatenating span sources reproduces
    the node text.
    """
    if not tokens:
        return []
    boundaries = [k for k, tok in enumerate(tokens) if tok.kind is TokenKind.COMMAND]
    spans: list[RawSpan] = []

    def add(first: int, last_exclusive: int, command: str) -> None:
        start = tokens[first].start
        end = tokens[last_exclusive - 1].end
        spans.append(RawSpan(command, start, end, content_digest(text[start:end])))

    if not boundaries:
        add(0, len(tokens), "")
        return spans
    if boundaries[0] > 0:
        add(0, boundaries[0], "")
    for pos, k in enumerate(boundaries):
        nxt = boundaries[pos + 1] if pos + 1 < len(boundaries) else len(tokens)
        add(k, nxt, tokens[k].source)
    return spans


def escape_embedded(payload: str) -> str:
    """One application of the string-escaping function (backslash doubling)."""
    return payload.replace("\\", "\\\\").replace('"', '\\"')


def quote_string(payload: str) -> str:
    return '"' + escape_embedded(payload) + '"'


def unquote_string(literal: str) -> str:
    """Inverse of :func:`quote_string`; rejects malformed literals."""
    if len(literal) < 2 or literal[0] != '"' or literal[-1] != '"':
        raise ValueError("not a quoted string literal")
    body = literal[1:-1]
    out: list[str] = []
    i = 0
    while i < len(body):
        ch = body[i]
        if ch == "\\":
            if i + 1 >= len(body):
                raise ValueError("dangling escape in string literal")
            out.append(body[i + 1])
            i += 2
        elif ch == '"':
            raise ValueError("unescaped quote inside string literal")
        else:
            out.append(ch)
            i += 1
    return "".join(out)


def quote_depth_demo(payload: str, depth: int) -> str:
    """The string literal for ``payload`` after ``depth`` extra quoting levels.

    Each embedded quote character accumulates 2**depth - 1 backslashes, which
    is why deeply nested quoted strings are impractical and cartouches exist.
    """
    if depth < 0:
        raise ValueError("depth must be nonnegative")
    if '"' in payload or "\\" in payload:
        raise ValueError("demo payload must not contain quotes or backslashes")
    literal = '"' + payload + '"'
    for _ in range(depth):
        literal = quote_string(literal)
    return literal
