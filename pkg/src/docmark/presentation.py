"""Shallow offline presentation of document sources.

No semantic information is used: symbols are blindly substituted from a
table, markup commands (``section``/``subsection``/``text`` with a cartouche
body) become headings and paragraphs, lines starting with repeated
``\\<^item>``/``\\<^enum>``/``\\<^descr>`` control symbols become nested list
environments, ``\\<comment> <cartouche>`` becomes a comment macro, and
``@{name args}`` antiquotations are evaluated by registered handlers and
inlined.  Everything else is rendered verbatim-escaped, so no input
character is ever silently dropped.

Two writers share one event stream: a LaTeX-flavoured macro text and HTML.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Callable, Iterator, Mapping, Optional, Sequence

from .syntax import (
    BASE_KEYWORDS,
    KeywordTable,
    SymbolKind,
    Token,
    TokenKind,
    decode_symbols,
    tokenize,
)


class PresentationError(ValueError):
    def __init__(self, message: str, offset: int, end: Optional[int] = None):
        super().__init__(f"{message} (at offset {offset})")
        self.offset = offset
        self.end = offset if end is None else end


@dataclass(frozen=True)
class SymbolInfo:
    latex: str
    display: str


#: bundled substitutions; unknown symbols fall back to escaped verbatim
DEFAULT_SYMBOLS: Mapping[str, SymbolInfo] = {
    "alpha": SymbolInfo(r"\(\alpha\)", "\u03b1"),
    "beta": SymbolInfo(r"\(\beta\)", "\u03b2"),
    "gamma": SymbolInfo(r"\(\gamma\)", "\u03b3"),
    "delta": SymbolInfo(r"\(\delta\)", "\u03b4"),
    "lambda": SymbolInfo(r"\(\lambda\)", "\u03bb"),
    "forall": SymbolInfo(r"\(\forall\)", "\u2200"),
    "exists": SymbolInfo(r"\(\exists\)", "\u2203"),
    "and": SymbolInfo(r"\(\wedge\)", "\u2227"),
    "or": SymbolInfo(r"\(\vee\)", "\u2228"),
    "not": SymbolInfo(r"\(\neg\)", "\u00ac"),
    "le": SymbolInfo(r"\(\le\)", "\u2264"),
    "ge": SymbolInfo(r"\(\ge\)", "\u2265"),
    "noteq": SymbolInfo(r"\(\neq\)", "\u2260"),
    "in": SymbolInfo(r"\(\in\)", "\u2208"),
    "rightarrow": SymbolInfo(r"\(\rightarrow\)", "\u2192"),
    "Rightarrow": SymbolInfo(r"\(\Rightarrow\)", "\u21d2"),
    "longrightarrow": SymbolInfo(r"\(\longrightarrow\)", "\u27f6"),
    "times": SymbolInfo(r"\(\times\)", "\u00d7"),
    "open": SymbolInfo("\u2039", "\u2039"),
    "close": SymbolInfo("\u203a", "\u203a"),
    "comment": SymbolInfo("\u2015", "\u2015"),
    "dots": SymbolInfo(r"\dots{}", "\u2026"),
}

AntiquotationHandler = Callable[[str, str], str]


class HandlerRegistry:
    """Named antiquotation handlers: argument text and target format in,
    inlined output text out."""

    def __init__(self):
        self._handlers: dict[str, AntiquotationHandler] = {}

    def register(self, name: str, handler: AntiquotationHandler) -> None:
        if name in self._handlers:
            raise PresentationError(f"antiquotation {name!r} already registered", 0)
        self._handlers[name] = handler

    def get(self, name: str) -> Optional[AntiquotationHandler]:
        return self._handlers.get(name)

    def names(self) -> list[str]:
        return sorted(self._handlers)


def default_handlers() -> HandlerRegistry:
    handlers = HandlerRegistry()

    def url(arg: str, fmt: str) -> str:
        target = arg.strip().strip('"')
        if fmt == "html":
            return f'<a href="{target}">{target}</a>'
        return "\\url{" + target + "}"

    handlers.register("url", url)
    return handlers


_MARKUP_COMMANDS = {"section": 1, "subsection": 2, "text": 0}
_ITEM_KINDS = {"item": "itemize", "enum": "enumerate", "descr": "description"}

# (kind, payload) event stream consumed by the writers
Event = tuple


def present(text: str, keywords: KeywordTable = BASE_KEYWORDS,
            symbols: Mapping[str, SymbolInfo] = DEFAULT_SYMBOLS,
            handlers: Optional[HandlerRegistry] = None,
            fmt: str = "latex") -> str:
    """Render document source to presentation text in the given format."""
    if fmt not in ("latex", "html"):
        raise ValueError(f"unknown format {fmt!r}")
    handlers = handlers if handlers is not None else default_handlers()
    events = list(_events(text, keywords, handlers, fmt))
    writer = _LatexWriter(symbols) if fmt == "latex" else _HtmlWriter(symbols)
    return writer.render(events)


def _events(text: str, keywords: KeywordTable, handlers: HandlerRegistry,
            fmt: str) -> Iterator[Event]:
    tokens = tokenize(text, keywords)
    i = 0
    while i < len(tokens):
        tok = tokens[i]
        if tok.kind is TokenKind.COMMAND and tok.source in _MARKUP_COMMANDS:
            j = i + 1
            while j < len(tokens) and tokens[j].kind is TokenKind.WHITESPACE:
                j += 1
            if j < len(tokens) and tokens[j].kind is TokenKind.CARTOUCHE:
                level = _MARKUP_COMMANDS[tok.source]
                body, body_offset = _cartouche_inner(tokens[j])
                if level:
                    yield ("begin_heading", level)
                else:
                    yield ("begin_par", None)
                yield from _markdown(body, body_offset, handlers, fmt)
                yield ("end_heading", level) if level else ("end_par", None)
                i = j + 1
                continue
            if j < len(tokens) and tokens[j].kind is TokenKind.ERROR:
                raise PresentationError("unterminated cartouche", tokens[j].start)
        if tok.kind is TokenKind.ERROR and _looks_like_open(tok.source):
            raise PresentationError("unterminated cartouche", tok.start)
        if tok.kind is TokenKind.COMMENT:
            yield ("begin_comment", None)
            yield from _plain(tok.source[2:-2], tok.start + 2)
            yield ("end_comment", None)
            i += 1
            continue
        yield from _plain(tok.source, tok.start)
        i += 1


def _looks_like_open(source: str) -> bool:
    return source.startswith("\\<open>") or (source and source[0] in "\u2039\u27e8")


def _cartouche_inner(tok: Token) -> tuple[str, int]:
    src = tok.source
    open_len = len("\\<open>") if src.startswith("\\<open>") else 1
    close_len = len("\\<close>") if src.endswith("\\<close>") else 1
    return src[open_len:len(src) - close_len], tok.start + open_len


def _plain(source: str, offset: int) -> Iterator[Event]:
    """Formal source: symbols substituted, the rest escaped verbatim."""
    for sym in decode_symbols(source):
        if sym.kind in (SymbolKind.NAMED, SymbolKind.CONTROL):
            yield ("symbol", sym)
        else:
            yield ("text", sym.source)


_ITEM_PREFIX = re.compile(r"(?:\\<\^(?:item|enum|descr)>)+")


def _markdown(body: str, offset: int, handlers: HandlerRegistry,
              fmt: str) -> Iterator[Event]:
    """Markup-command body: markdown items, comments, antiquotations,
    symbols."""
    stack: list[str] = []
    pos = 0
    lines = body.split("\n")
    for line_no, line in enumerate(lines):
        if line_no:
            pos += 1  # the newline
        stripped = line.lstrip()
        indent = len(line) - len(stripped)
        m = _ITEM_PREFIX.match(stripped)
        if m:
            markers = re.findall(r"\\<\^(item|enum|descr)>", m.group(0))
            depth = len(markers)
            kind = _ITEM_KINDS[markers[-1]]
            while len(stack) > depth:
                yield ("end_list", stack.pop())
            while len(stack) < depth:
                stack.append(kind)
                yield ("begin_list", kind)
            if stack and stack[-1] != kind and len(stack) == depth:
                yield ("end_list", stack.pop())
                stack.append(kind)
                yield ("begin_list", kind)
            yield ("begin_item", kind)
            content = stripped[m.end():]
            yield from _inline(content, offset + pos + indent + m.end(), handlers, fmt)
            yield ("end_item", kind)
        elif not stripped:
            if not stack:
                yield ("par_break", None)
        else:
            if not stack:
                yield from _inline(line, offset + pos, handlers, fmt)
                if line_no < len(lines) - 1:
                    yield ("text", "\n")
            else:
                # continuation of the current item
                yield ("text", " ")
                yield from _inline(stripped, offset + pos + indent, handlers, fmt)
        pos += len(line)
    while stack:
        yield ("end_list", stack.pop())


def _inline(source: str, offset: int, handlers: HandlerRegistry,
            fmt: str) -> Iterator[Event]:
    i = 0
    while i < len(source):
        if source.startswith("@{", i):
            end = _matching_brace(source, i + 1)
            if end is None:
                raise PresentationError("unterminated antiquotation", offset + i)
            inner = source[i + 2:end]
            name, _, arg = inner.partition(" ")
            handler = handlers.get(name)
            if handler is None:
                raise PresentationError(
                    f"unknown antiquotation {name!r}; registered: "
                    f"{', '.join(handlers.names()) or '(none)'}",
                    offset + i, offset + end + 1)
            try:
                yield ("inline", handler(arg, fmt))
            except PresentationError:
                raise
            except Exception as exc:
                raise PresentationError(f"antiquotation {name!r} failed: {exc}",
                                        offset + i, offset + end + 1) from exc
            i = end + 1
            continue
        if source.startswith("\\<comment>", i):
            j = i + len("\\<comment>")
            while j < len(source) and source[j].isspace():
                j += 1
            inner = _cartouche_at(source, j)
            if inner is not None:
                content, content_lo, after = inner
                yield ("begin_comment", None)
                yield from _plain(content, offset + content_lo)
                yield ("end_comment", None)
                i = after
                continue
        m = re.compile(r"\\<[^>]*>?").match(source, i)
        if m and m.group(0).startswith("\\<"):
            syms = decode_symbols(m.group(0))
            if syms and syms[0].kind in (SymbolKind.NAMED, SymbolKind.CONTROL):
                yield ("symbol", syms[0])
                i += len(syms[0].source)
                continue
        yield ("text", source[i])
        i += 1


def _matching_brace(source: str, open_at: int) -> Optional[int]:
    depth = 0
    for k in range(open_at, len(source)):
        if source[k] == "{":
            depth += 1
        elif source[k] == "}":
            depth -= 1
            if depth == 0:
                return k
    return None


def _cartouche_at(source: str, pos: int) -> Optional[tuple[str, int, int]]:
    for opener, closer in (("\\<open>", "\\<close>"), ("\u2039", "\u203a"),
                           ("\u27e8", "\u27e9")):
        if source.startswith(opener, pos):
            depth = 1
            k = pos + len(opener)
            while k < len(source) and depth:
                if source.startswith(opener, k):
                    depth += 1
                    k += len(opener)
                elif source.startswith(closer, k):
                    depth -= 1
                    k += len(closer)
                else:
                    k += 1
            if depth == 0:
                return source[pos + len(opener):k - len(closer)], pos + len(opener), k
    return None


LATEX_ESCAPES: Mapping[str, str] = {
    "\\": r"\textbackslash{}",
    "{": r"\{", "}": r"\}",
    "$": r"\$", "&": r"\&", "#": r"\#", "%": r"\%", "_": r"\_",
    "~": r"\textasciitilde{}", "^": r"\textasciicircum{}",
}


def escape_latex(text: str) -> str:
    return "".join(LATEX_ESCAPES.get(ch, ch) for ch in text)


def unescape_latex(text: str) -> str:
    out = text
    for ch, esc in sorted(LATEX_ESCAPES.items(), key=lambda kv: -len(kv[1])):
        out = out.replace(esc, ch)
    return out


def escape_html(text: str) -> str:
    return text.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


class _LatexWriter:
    HEADINGS = {1: "section", 2: "subsection"}
    LISTS = {"itemize": "itemize", "enumerate": "enumerate", "description": "description"}

    def __init__(self, symbols: Mapping[str, SymbolInfo]):
        self.symbols = symbols

    def render(self, events: Sequence[Event]) -> str:
        out: list[str] = []
        for kind, payload in events:
            if kind == "text":
                out.append(escape_latex(payload))
            elif kind == "symbol":
                info = self.symbols.get(payload.name)
                out.append(info.latex if info else escape_latex(payload.source))
            elif kind == "inline":
                out.append(payload)
            elif kind == "begin_heading":
                out.append("\\" + self.HEADINGS.get(payload, "paragraph") + "{")
            elif kind == "end_heading":
                out.append("}\n")
            elif kind == "begin_par":
                out.append("")
            elif kind == "end_par":
                out.append("\n\n")
            elif kind == "par_break":
                out.append("\n\n")
            elif kind == "begin_list":
                out.append("\\begin{" + self.LISTS[payload] + "}\n")
            elif kind == "end_list":
                out.append("\\end{" + self.LISTS[payload] + "}\n")
            elif kind == "begin_item":
                out.append("\\item ")
            elif kind == "end_item":
                out.append("\n")
            elif kind == "begin_comment":
                out.append("\\cmt{")
            elif kind == "end_comment":
                out.append("}")
        return "".join(out)


class _HtmlWriter:
    LISTS = {"itemize": "ul", "enumerate": "ol", "description": "dl"}

    def __init__(self, symbols: Mapping[str, SymbolInfo]):
        self.symbols = symbols

    def render(self, events: Sequence[Event]) -> str:
        out: list[str] = []
        for kind, payload in events:
            if kind == "text":
                out.append(escape_html(payload))
            elif kind == "symbol":
                info = self.symbols.get(payload.name)
                out.append(escape_html(info.display) if info else escape_html(payload.source))
            elif kind == "inline":
                out.append(payload)
            elif kind == "begin_heading":
                out.append(f"<h{payload}>")
            elif kind == "end_heading":
                out.append(f"</h{payload}>\n")
            elif kind == "begin_par":
                out.append("<p>")
            elif kind == "end_par":
                out.append("</p>\n")
            elif kind == "par_break":
                out.append("</p>\n<p>")
            elif kind == "begin_list":
                out.append(f"<{self.LISTS[payload]}>\n")
            elif kind == "end_list":
                out.append(f"</{self.LISTS[payload]}>\n")
            elif kind == "begin_item":
                out.append("<li>" if payload != "description" else "<dt>")
            elif kind == "end_item":
                out.append("</li>\n" if payload != "description" else "</dt>\n")
            elif kind == "begin_comment":
                out.append('<span class="comment">')
            elif kind == "end_comment":
                out.append("</span>")
        return "".join(out)
