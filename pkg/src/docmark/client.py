"""Headless client: a thin typed wrapper over the wire vocabulary.

Suitable for scripting and tests: it speaks exactly the protocol a front-end
would, keeps the streamed state (assignments, statuses, reports) and offers
an await for quiescence — all exec units of the latest assignment having
reached a terminal state.  Use it with full or required perspectives;
deliberately unchecked regions would otherwise wait forever.
"""

from __future__ import annotations

import socket
import threading
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

from .checkers import CheckerMessage, MarkupEvent
from .document import Edit, NodeName
from .protocol import (
    FrameDecoder,
    Message,
    decode_tree,
    edits_to_payload,
    encode_message,
    payload_to_assigned,
    tree_to_report_event,
    TreeElem,
)

TERMINAL_STATES = ("finished", "failed", "cancelled")


@dataclass
class ClientState:
    assigned: dict[int, dict[int, int]] = field(default_factory=dict)
    latest_version: Optional[int] = None
    statuses: dict[int, str] = field(default_factory=dict)
    reports: dict[int, list[Union[CheckerMessage, MarkupEvent]]] = field(default_factory=dict)
    report_nodes: dict[int, str] = field(default_factory=dict)
    removed: list[int] = field(default_factory=list)
    protocol_errors: list[str] = field(default_factory=list)


class HeadlessClient:
    def __init__(self, sock: socket.socket):
        self._sock = sock
        self._lock = threading.Condition()
        self.state = ClientState()
        self._next_version = 1
        self._decoder = FrameDecoder()
        self._reader = threading.Thread(target=self._read_loop, daemon=True)
        self._reader.start()

    @classmethod
    def connect_unix(cls, path: str, timeout: float = 5.0) -> "HeadlessClient":
        sock = socket.socket(socket.AF_UNIX, socket.SOCK_STREAM)
        sock.settimeout(timeout)
        sock.connect(path)
        sock.settimeout(None)
        return cls(sock)

    # -- sending ---------------------------------------------------------

    def session_start(self, name: str) -> None:
        self._sock.sendall(encode_message("session_start", name))

    def send_edits(self, edits: Sequence[tuple[NodeName, Edit]]) -> int:
        with self._lock:
            version = self._next_version
            self._next_version += 1
        payload = edits_to_payload(edits)
        self._sock.sendall(encode_message("node_edits", str(version), payload))
        return version

    def blob_update(self, path: str, content: str) -> int:
        with self._lock:
            version = self._next_version
            self._next_version += 1
        self._sock.sendall(encode_message("blob_update", str(version), path, content))
        return version

    def dialog_result(self, dialog_id: str, value: str) -> None:
        self._sock.sendall(encode_message("dialog_result", dialog_id, value))

    def send_raw(self, data: bytes) -> None:
        self._sock.sendall(data)

    # -- receiving --------------------------------------------------------

    def _read_loop(self) -> None:
        try:
            while True:
                data = self._sock.recv(65536)
                if not data:
                    break
                for chunks in self._decoder.feed(data):
                    self._dispatch(Message.of(chunks))
        except (OSError, ValueError):
            pass
        with self._lock:
            self._lock.notify_all()

    def _dispatch(self, msg: Message) -> None:
        with self._lock:
            if msg.name == "assigned":
                version = msg.int_arg(0)
                self.state.assigned[version] = payload_to_assigned(msg.text_arg(1))
                self.state.latest_version = version
            elif msg.name == "status":
                self.state.statuses[msg.int_arg(0)] = msg.text_arg(1)
            elif msg.name == "report":
                exec_id = msg.int_arg(0)
                node = msg.text_arg(1)
                for item in decode_tree(msg.text_arg(2)):
                    if isinstance(item, TreeElem):
                        self.state.reports.setdefault(exec_id, []).append(
                            tree_to_report_event(item))
                        self.state.report_nodes[exec_id] = node
            elif msg.name == "removed_versions":
                raw = msg.text_arg(0)
                self.state.removed.extend(int(v) for v in raw.split(",") if v)
            elif msg.name == "protocol_error":
                self.state.protocol_errors.append(msg.text_arg(0))
            self._lock.notify_all()

    # -- queries -----------------------------------------------------------

    def await_version(self, version: int, timeout: float = 10.0) -> bool:
        with self._lock:
            return self._lock.wait_for(lambda: version in self.state.assigned, timeout)

    def _latest_terminal(self) -> bool:
        version = self.state.latest_version
        if version is None:
            return False
        execs = set(self.state.assigned[version].values())
        return all(self.state.statuses.get(e) in TERMINAL_STATES for e in execs)

    def await_quiescence(self, timeout: float = 30.0) -> bool:
        with self._lock:
            return self._lock.wait_for(self._latest_terminal, timeout)

    def messages(self) -> list[tuple[str, CheckerMessage]]:
        """Checker messages of the latest assignment, in exec order."""
        with self._lock:
            version = self.state.latest_version
            if version is None:
                return []
            out = []
            for exec_id in sorted(set(self.state.assigned[version].values())):
                node = self.state.report_nodes.get(exec_id, "")
                for ev in self.state.reports.get(exec_id, []):
                    if isinstance(ev, CheckerMessage):
                        out.append((node, ev))
            return out

    def markup(self) -> list[tuple[str, MarkupEvent]]:
        with self._lock:
            version = self.state.latest_version
            if version is None:
                return []
            out = []
            for exec_id in sorted(set(self.state.assigned[version].values())):
                node = self.state.report_nodes.get(exec_id, "")
                for ev in self.state.reports.get(exec_id, []):
                    if isinstance(ev, MarkupEvent):
                        out.append((node, ev))
            return out

    def close(self) -> None:
        try:
            self._sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self._sock.close()
