"""Byte-channel message framing and payload serialization.

Framing: a message is a nonempty list of chunks.  On the wire it is the
ASCII decimal chunk lengths joined by commas, a newline, then the chunks'
raw bytes concatenated.  The decoder is incremental and indifferent to how
the stream is split into reads; it never scans payload bytes for
separators.

Structured payloads (edits, reports, markup, pretty trees) are encoded
inside a single chunk with two reserved control bytes: 0x05 brackets an
element header, 0x06 separates its fields.  ``docs/wire-protocol.md`` is
the normative description.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Iterator, Optional, Sequence, Union

from .checkers import CheckerMessage, MarkupEvent, Phase, Severity
from .document import Edit, Insert, NodeKind, NodeName, Perspective, Remove, SetNode
from .markup import MarkupElement
from .pretty import Block, Break, PrettyTree, Str

X = b"\x05"  # element bracket
Y = b"\x06"  # field separator
X_S = "\x05"
Y_S = "\x06"

MAX_MESSAGE_BYTES = 1 << 28
MAX_CHUNKS = 4096


class ProtocolError(ValueError):
    """Recoverable: the connection survives, an error report goes back."""


class ProtocolFatalError(ValueError):
    """Unrecoverable framing damage: the byte stream cannot be trusted."""


# -- framing -----------------------------------------------------------------


def encode_chunks(chunks: Sequence[bytes]) -> bytes:
    if not chunks:
        raise ProtocolError("a message needs at least one chunk")
    header = ",".join(str(len(c)) for c in chunks).encode("ascii") + b"\n"
    return header + b"".join(chunks)


def encode_message(name: str, *args: Union[bytes, str]) -> bytes:
    payload = [name.encode("ascii")]
    for arg in args:
        payload.append(arg.encode("utf-8") if isinstance(arg, str) else arg)
    return encode_chunks(payload)


class FrameDecoder:
    """Incremental frame parser; feed() returns complete chunk lists."""

    def __init__(self):
        self._buf = bytearray()
        self._lengths: Optional[list[int]] = None

    def feed(self, data: bytes) -> list[list[bytes]]:
        self._buf.extend(data)
        out: list[list[bytes]] = []
        while True:
            if self._lengths is None:
                nl = self._buf.find(b"\n")
                if nl < 0:
                    if len(self._buf) > 64 * MAX_CHUNKS:
                        raise ProtocolFatalError("unterminated frame header")
                    return out
                header = bytes(self._buf[:nl])
                del self._buf[:nl + 1]
                self._lengths = _parse_header(header)
            total = sum(self._lengths)
            if len(self._buf) < total:
                return out
            chunks: list[bytes] = []
            pos = 0
            for length in self._lengths:
                chunks.append(bytes(self._buf[pos:pos + length]))
                pos += length
            del self._buf[:total]
            self._lengths = None
            out.append(chunks)

    @property
    def awaiting_input(self) -> bool:
        return bool(self._buf) or self._lengths is not None


def _parse_header(header: bytes) -> list[int]:
    if not header:
        raise ProtocolFatalError("empty frame header")
    lengths: list[int] = []
    for part in header.split(b","):
        if not part.isdigit():
            raise ProtocolFatalError(f"malformed frame header {header[:40]!r}")
        lengths.append(int(part))
    if len(lengths) > MAX_CHUNKS:
        raise ProtocolFatalError("too many chunks in one message")
    if sum(lengths) > MAX_MESSAGE_BYTES:
        raise ProtocolFatalError("message exceeds size limit")
    return lengths


@dataclass(frozen=True)
class Message:
    name: str
    args: tuple[bytes, ...] = ()

    @staticmethod
    def of(chunks: Sequence[bytes]) -> "Message":
        if not chunks:
            raise ProtocolFatalError("empty message")
        try:
            name = chunks[0].decode("ascii")
        except UnicodeDecodeError:
            raise ProtocolError(f"message name is not ASCII: {chunks[0][:20]!r}") from None
        return Message(name, tuple(chunks[1:]))

    def arg(self, index: int) -> bytes:
        try:
            return self.args[index]
        except IndexError:
            raise ProtocolError(f"message {self.name!r} misses argument {index}") from None

    def text_arg(self, index: int) -> str:
        return self.arg(index).decode("utf-8", errors="replace")

    def int_arg(self, index: int) -> int:
        raw = self.text_arg(index)
        if not raw.lstrip("-").isdigit():
            raise ProtocolError(f"message {self.name!r}: argument {index} is not a number")
        return int(raw)

    def encode(self) -> bytes:
        return encode_chunks([self.name.encode("ascii"), *self.args])


# -- structured payload trees -------------------------------------------------


@dataclass(frozen=True)
class TreeElem:
    name: str
    props: tuple[tuple[str, str], ...] = ()
    children: tuple["TreeItem", ...] = ()

    def get(self, key: str, default: Optional[str] = None) -> Optional[str]:
        for k, v in self.props:
            if k == key:
                return v
        return default


TreeItem = Union[str, TreeElem]


def _check_text(text: str) -> str:
    if X_S in text or Y_S in text:
        raise ProtocolError("payload text contains reserved control bytes")
    return text


def encode_tree(items: Iterable[TreeItem]) -> str:
    out: list[str] = []

    def walk(item: TreeItem) -> None:
        if isinstance(item, str):
            out.append(_check_text(item))
            return
        head = Y_S + _check_text(item.name)
        for k, v in item.props:
            head += Y_S + _check_text(k) + "=" + _check_text(v)
        out.append(X_S + head + X_S)
        for child in item.children:
            walk(child)
        out.append(X_S + Y_S + X_S)

    for item in items:
        walk(item)
    return "".join(out)


def decode_tree(data: str) -> tuple[TreeItem, ...]:
    stack: list[list[TreeItem]] = [[]]
    pending: list[TreeElem] = []
    parts = data.split(X_S)
    for idx, part in enumerate(parts):
        if idx % 2 == 0:
            if part:
                stack[-1].append(part)
            continue
        if not part.startswith(Y_S):
            raise ProtocolError("malformed tree payload (missing control byte)")
        fields = part.split(Y_S)[1:]
        if fields == [""]:
            if not pending:
                raise ProtocolError("unbalanced tree payload (extra close)")
            elem = pending.pop()
            children = tuple(stack.pop())
            stack[-1].append(TreeElem(elem.name, elem.props, children))
            continue
        name = fields[0]
        if not name:
            raise ProtocolError("tree element with empty name")
        props = []
        for f in fields[1:]:
            key, eq, value = f.partition("=")
            if not eq:
                raise ProtocolError(f"malformed property {f!r}")
            props.append((key, value))
        pending.append(TreeElem(name, tuple(props)))
        stack.append([])
    if pending:
        raise ProtocolError("unbalanced tree payload (unclosed element)")
    return tuple(stack[0])


# -- pretty trees --------------------------------------------------------------


def pretty_to_tree(tree: PrettyTree) -> TreeItem:
    if isinstance(tree, Str):
        return tree.text
    if isinstance(tree, Break):
        return TreeElem("break", (("spaces", str(tree.spaces)), ("indent", str(tree.indent))))
    return TreeElem("block", (("indent", str(tree.indent)),
                              ("consistent", "1" if tree.consistent else "0")),
                    tuple(pretty_to_tree(t) for t in tree.body))


def tree_to_pretty(item: TreeItem) -> PrettyTree:
    if isinstance(item, str):
        return Str(item)
    if item.name == "break":
        return Break(int(item.get("spaces", "1")), int(item.get("indent", "0")))
    if item.name == "block":
        return Block(int(item.get("indent", "0")),
                     tuple(tree_to_pretty(c) for c in item.children),
                     item.get("consistent", "0") == "1")
    raise ProtocolError(f"unknown pretty-tree element {item.name!r}")


def pretty_tree_payload(tree: PrettyTree) -> str:
    return encode_tree([pretty_to_tree(tree)])


def payload_to_pretty(data: str) -> PrettyTree:
    items = decode_tree(data)
    if len(items) != 1:
        return Block(0, tuple(tree_to_pretty(i) for i in items))
    return tree_to_pretty(items[0])


# -- edits ---------------------------------------------------------------------


def node_to_tree(node: NodeName) -> tuple[tuple[str, str], ...]:
    return (("kind", node.kind.value), ("path", node.path))


def tree_to_node(elem: TreeElem) -> NodeName:
    kind = elem.get("kind", "")
    path = elem.get("path", "")
    try:
        node_kind = NodeKind(kind)
    except ValueError:
        raise ProtocolError(f"unknown node kind {kind!r}") from None
    try:
        return (NodeName.theory(path) if node_kind is NodeKind.THEORY
                else NodeName.auxiliary(path))
    except ValueError as exc:
        raise ProtocolError(str(exc)) from None


def edits_to_payload(edits: Sequence[tuple[NodeName, Edit]]) -> str:
    items: list[TreeItem] = []
    for node, edit in edits:
        if isinstance(edit, Insert):
            child = TreeElem("insert", (("offset", str(edit.offset)),), (edit.text,))
        elif isinstance(edit, Remove):
            child = TreeElem("remove", (("offset", str(edit.offset)),), (edit.text,))
        elif isinstance(edit, Perspective):
            ranges = tuple(TreeElem("range", (("start", str(lo)), ("end", str(hi))))
                           for lo, hi in edit.visible)
            child = TreeElem("perspective",
                             (("required", "1" if edit.required else "0"),), ranges)
        elif isinstance(edit, SetNode):
            child = TreeElem("set", (), (edit.text,))
        else:
            raise ProtocolError(f"unsupported edit {edit!r}")
        items.append(TreeElem("node", node_to_tree(node), (child,)))
    return encode_tree(items)


def payload_to_edits(data: str) -> list[tuple[NodeName, Edit]]:
    out: list[tuple[NodeName, Edit]] = []
    for item in decode_tree(data):
        if isinstance(item, str) or item.name != "node":
            raise ProtocolError("edit payload must contain node elements")
        node = tree_to_node(item)
        for child in item.children:
            if isinstance(child, str):
                raise ProtocolError("unexpected text in edit payload")
            text = "".join(c for c in child.children if isinstance(c, str))
            if child.name == "insert":
                out.append((node, Insert(int(child.get("offset", "0")), text)))
            elif child.name == "remove":
                out.append((node, Remove(int(child.get("offset", "0")), text)))
            elif child.name == "set":
                out.append((node, SetNode(text)))
            elif child.name == "perspective":
                ranges = tuple(
                    (int(r.get("start", "0")), int(r.get("end", "0")))
                    for r in child.children if isinstance(r, TreeElem) and r.name == "range")
                out.append((node, Perspective(ranges, child.get("required") == "1")))
            else:
                raise ProtocolError(f"unknown edit element {child.name!r}")
    return out


# -- reports ---------------------------------------------------------------------


def markup_element_to_tree(element: MarkupElement) -> TreeElem:
    return TreeElem("elem", (("name", element.name), *element.properties))


def tree_to_markup_element(elem: TreeElem) -> MarkupElement:
    name = elem.get("name")
    if not name:
        raise ProtocolError("markup element without a name")
    props = tuple((k, v) for k, v in elem.props if k != "name")
    return MarkupElement(name, props)


def report_event_to_tree(event: Union[CheckerMessage, MarkupEvent]) -> TreeElem:
    if isinstance(event, CheckerMessage):
        return TreeElem("message", (
            ("severity", event.severity.value),
            ("start", str(event.start)), ("end", str(event.end)),
            ("phase", event.phase.value)),
            (pretty_to_tree(event.body),))
    return TreeElem("markup", (("start", str(event.start)), ("end", str(event.end))),
                    (markup_element_to_tree(event.element),))


def tree_to_report_event(elem: TreeElem) -> Union[CheckerMessage, MarkupEvent]:
    if elem.name == "message":
        body_items = elem.children
        body = (tree_to_pretty(body_items[0]) if len(body_items) == 1
                else Block(0, tuple(tree_to_pretty(c) for c in body_items)))
        return CheckerMessage(Severity(elem.get("severity", "status")),
                              int(elem.get("start", "0")), int(elem.get("end", "0")),
                              body, Phase(elem.get("phase", "semantics")))
    if elem.name == "markup":
        inner = [c for c in elem.children if isinstance(c, TreeElem)]
        if len(inner) != 1:
            raise ProtocolError("markup report needs exactly one element")
        return MarkupEvent(int(elem.get("start", "0")), int(elem.get("end", "0")),
                           tree_to_markup_element(inner[0]))
    raise ProtocolError(f"unknown report element {elem.name!r}")


def assigned_to_payload(exec_of) -> str:
    items = [TreeElem("span", (("id", str(span_id)), ("exec", str(exec_id))))
             for span_id, exec_id in sorted(exec_of.items())]
    return encode_tree(items)


def payload_to_assigned(data: str) -> dict[int, int]:
    out: dict[int, int] = {}
    for item in decode_tree(data):
        if isinstance(item, TreeElem) and item.name == "span":
            out[int(item.get("id", "0"))] = int(item.get("exec", "0"))
    return out


# -- vocabulary ----------------------------------------------------------------

CLIENT_MESSAGES = ("session_start", "node_edits", "blob_update", "dialog_result")
SERVER_MESSAGES = ("assigned", "report", "status", "removed_versions", "protocol_error")
