"""Document server: the edit/check/report loop over a byte channel.

One connection at a time; reads arrive on a dedicated thread, reports from
any number of exec units multiplex into a single ordered output stream via
an outbound queue, and input handling never waits on checking.  Batch mode
(`batch_check`) runs the same engine synchronously over files.
"""

from __future__ import annotations

import os
import queue
import socket
import sys
import threading
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

from .checkers import CheckerMessage, Severity
from .config import Config, build_registry
from .document import EditError, NodeName, Perspective, SetNode
from .execution import (
    AssignedEvent,
    CheckEngine,
    EngineEvent,
    RemovedVersionsEvent,
    ReportEvent,
    StatusEvent,
)
from .pretty import unbroken
from .protocol import (
    FrameDecoder,
    Message,
    ProtocolError,
    ProtocolFatalError,
    assigned_to_payload,
    edits_to_payload,
    encode_message,
    encode_tree,
    payload_to_edits,
    report_event_to_tree,
)
from .sessions import SqliteExportStore

TRACE_ENV = "DOCMARK_PROTOCOL_TRACE"


def build_engine(cfg: Config, temp_root: Optional[str] = None) -> CheckEngine:
    registry = build_registry(cfg)
    configs = dict(cfg.checker_configs)
    if temp_root:
        for checker_id in list(cfg.external):
            configs.setdefault(checker_id, {})
            configs[checker_id] = {**configs[checker_id], "temp_root": temp_root}
    return CheckEngine(registry=registry, workers=cfg.workers,
                       checker_configs=configs, cache_cap=cfg.cache_cap,
                       retain_versions=cfg.retain_versions)


class Connection:
    """Serves one client on a pair of byte streams."""

    def __init__(self, engine: CheckEngine,
                 send: Callable[[bytes], None],
                 trace: Optional[Callable[[str], None]] = None):
        self._engine = engine
        self._send = send
        self._trace = trace
        self._out: "queue.Queue[Optional[bytes]]" = queue.Queue()
        self._writer = threading.Thread(target=self._drain, daemon=True)
        self._writer.start()
        self._decoder = FrameDecoder()
        self._session = "interactive"
        self._client_version: dict[int, int] = {}
        self._pending_proposal: Optional[int] = None
        self._dialog_results: dict[str, str] = {}
        engine.add_listener(self._on_engine_event)

    # -- outbound --------------------------------------------------------

    def _drain(self) -> None:
        while True:
            data = self._out.get()
            if data is None:
                return
            try:
                self._send(data)
            except OSError:
                return

    def _enqueue(self, data: bytes) -> None:
        if self._trace:
            self._trace(f"send {data[:120]!r}")
        self._out.put(data)

    def _on_engine_event(self, event: EngineEvent) -> None:
        if isinstance(event, AssignedEvent):
            proposal = self._pending_proposal
            if proposal is None:
                return
            self._client_version[event.version_id] = proposal
            self._enqueue(encode_message(
                "assigned", str(proposal), assigned_to_payload(event.exec_of)))
        elif isinstance(event, StatusEvent):
            self._enqueue(encode_message("status", str(event.exec_id), event.state))
        elif isinstance(event, ReportEvent):
            payload = encode_tree([report_event_to_tree(event.event)])
            self._enqueue(encode_message(
                "report", str(event.exec_id), str(event.node), payload))
        elif isinstance(event, RemovedVersionsEvent):
            known = [str(self._client_version.pop(vid))
                     for vid in event.version_ids if vid in self._client_version]
            if known:
                self._enqueue(encode_message("removed_versions", ",".join(known)))

    def _error(self, detail: str) -> None:
        self._enqueue(encode_message("protocol_error", detail))

    # -- inbound --------------------------------------------------------

    def feed(self, data: bytes) -> None:
        """Process raw bytes from the client; raises ProtocolFatalError when
        the stream is beyond repair."""
        for chunks in self._decoder.feed(data):
            if self._trace:
                self._trace(f"recv {chunks[:2]!r}")
            try:
                self._handle(Message.of(chunks))
            except ProtocolError as exc:
                self._error(str(exc))
            except EditError as exc:
                self._error(f"rejected edit: {exc}")

    def _handle(self, msg: Message) -> None:
        if msg.name == "session_start":
            self._session = msg.text_arg(0) if msg.args else "interactive"
        elif msg.name == "node_edits":
            proposal = msg.int_arg(0)
            edits = payload_to_edits(msg.text_arg(1))
            self._pending_proposal = proposal
            try:
                self._engine.update(edits)
            finally:
                self._pending_proposal = None
        elif msg.name == "blob_update":
            proposal = msg.int_arg(0)
            path = msg.text_arg(1)
            content = msg.text_arg(2)
            try:
                node = NodeName.auxiliary(path)
            except ValueError as exc:
                raise ProtocolError(str(exc)) from None
            self._pending_proposal = proposal
            try:
                self._engine.update([(node, SetNode(content))])
            finally:
                self._pending_proposal = None
        elif msg.name == "dialog_result":
            self._dialog_results[msg.text_arg(0)] = msg.text_arg(1)
        else:
            self._error(f"unknown message {msg.name!r}")

    def close(self) -> None:
        self._out.put(None)
        self._writer.join(timeout=5)


def serve_stream(engine: CheckEngine, recv: Callable[[int], bytes],
                 send: Callable[[bytes], None]) -> None:
    """Run the protocol loop until the peer disconnects."""
    trace = None
    if os.environ.get(TRACE_ENV):
        trace = lambda line: print(f"[trace] {line}", file=sys.stderr)
    conn = Connection(engine, send, trace)
    try:
        while True:
            data = recv(65536)
            if not data:
                break
            try:
                conn.feed(data)
            except ProtocolFatalError as exc:
                conn._error(f"fatal: {exc}")
                break
    finally:
        conn.close()


def serve(cfg: Config, socket_path: Optional[str] = None, stdio: bool = False) -> int:
    """Accept one connection (unix socket or stdio) and serve it."""
    engine = build_engine(cfg)
    try:
        if stdio:
            stdin = sys.stdin.buffer
            stdout = sys.stdout.buffer

            def send(data: bytes) -> None:
                stdout.write(data)
                stdout.flush()

            serve_stream(engine, stdin.read1, send)
            return 0
        if not socket_path:
            print("serve: need --socket PATH or --stdio", file=sys.stderr)
            return 2
        if os.path.exists(socket_path):
            os.unlink(socket_path)
        listener = socket.socket(socket.AF_UNIX, socket.SOCK_STREAM)
        try:
            listener.bind(socket_path)
        except OSError as exc:
            print(f"serve: cannot bind {socket_path}: {exc}", file=sys.stderr)
            return 2
        listener.listen(1)
        print(f"listening on {socket_path}", file=sys.stderr, flush=True)
        conn_sock, _ = listener.accept()
        with conn_sock:
            serve_stream(engine, conn_sock.recv,
                         lambda data: conn_sock.sendall(data))
        listener.close()
        os.unlink(socket_path)
        return 0
    except KeyboardInterrupt:
        return 130
    finally:
        engine.shutdown()


# -- batch mode ----------------------------------------------------------


@dataclass
class BatchResult:
    exit_code: int
    lines: list[str] = field(default_factory=list)
    messages: list[tuple[str, CheckerMessage]] = field(default_factory=list)


def _classify(path: str) -> NodeName:
    rel = os.path.basename(path) if os.path.isabs(path) else path
    if rel.endswith(".thy"):
        return NodeName.theory(rel)
    return NodeName.auxiliary(rel)


def batch_check(paths: Sequence[str], cfg: Config,
                store_path: Optional[str] = None,
                verbose: bool = False,
                timeout: float = 300.0) -> BatchResult:
    """Check files to quiescence; diagnostics as FILE:START-END lines.

    Exit code 0 exactly when no error-severity message was produced.
    """
    engine = build_engine(cfg)
    result = BatchResult(0)
    display: dict[NodeName, str] = {}
    try:
        edits = []
        for path in paths:
            node = _classify(path)
            display[node] = path
            try:
                with open(path, "r", encoding="utf-8") as handle:
                    content = handle.read()
            except OSError as exc:
                result.lines.append(f"{path}:0-0: error: cannot read file: {exc}")
                result.exit_code = 1
                continue
            edits.append((node, SetNode(content)))
            edits.append((node, Perspective((), required=True)))
        if edits:
            engine.update(edits)
        if not engine.await_quiescence(timeout):
            result.lines.append("error: checking did not reach quiescence in time")
            result.exit_code = 1
            return result
        shown = {Severity.WRITELN, Severity.WARNING, Severity.ERROR}
        if verbose:
            shown.add(Severity.STATUS)
        for node, msg in engine.messages():
            result.messages.append((str(node), msg))
            if msg.severity in shown:
                body = " ".join(unbroken(msg.body).split())
                result.lines.append(
                    f"{display.get(node, str(node))}:{msg.start}-{msg.end}: "
                    f"{msg.severity.value}: {body}")
            if msg.severity is Severity.ERROR:
                result.exit_code = 1
        if store_path:
            store = SqliteExportStore(store_path)
            try:
                engine.collect_exports(store, cfg.session)
            finally:
                store.close()
        return result
    finally:
        engine.shutdown()
