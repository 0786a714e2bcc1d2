"""Scheduling and cancellation of checking work.

Every command span of a version owns an exec unit.  Units survive a new
version only inside the unchanged prefix of their node's span list (linear
context dependency: everything after the first changed span must re-run),
and nodes whose checking context changed (imports, keyword tables) are
reassigned wholesale.  Eligible units — those intersecting the perspective,
their in-node predecessors, required nodes and transitive imports — run on a
worker pool; visible work outranks merely-required work.

Results publish atomically per unit; superseded running units receive a
cancel signal and are forcibly marked cancelled at the deadline, their late
results discarded.  Snapshots and message queries only take the engine lock
briefly and never wait for checkers.
"""

from __future__ import annotations

import heapq
import itertools
import os
import threading
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable, Iterable, Mapping, Optional, Sequence, Union

from .checkers import (
    CheckContext,
    CheckerMessage,
    CheckerRegistry,
    Event,
    MarkupEvent,
    ResultCache,
    builtin_registry,
    shift_event,
)
from .document import Edit, History, NodeKind, NodeName, NodeState, Version
from .markup import MarkupError, MarkupTree, Snapshot
from .sessions import (
    CycleError,
    ExportEntry,
    TheoryHeader,
    merge_contexts,
    parse_theory_header,
    topological_order,
)
from .syntax import BASE_KEYWORDS, CommandSpec, KeywordTable, content_digest

#: commands every theory understands without declaring them
THEORY_COMMANDS = KeywordTable({
    "eval": CommandSpec(),
    "text": CommandSpec(),
    "section": CommandSpec(),
    "subsection": CommandSpec(),
    "ML": CommandSpec(),
    "check_file": CommandSpec(is_load_command=True, file_extension_hint="ftl"),
})

#: seconds a cancelled unit may take before it is forcibly marked cancelled
CANCEL_DEADLINE = 2.0


class Status(Enum):
    UNPROCESSED = "unprocessed"
    RUNNING = "running"
    FINISHED = "finished"
    FAILED = "failed"
    CANCELLED = "cancelled"

TERMINAL = (Status.FINISHED, Status.FAILED, Status.CANCELLED)


@dataclass
class ExecUnit:
    exec_id: int
    span_id: int
    node: NodeName
    command: str
    source: str
    start: int
    version_id: int
    checker_id: str
    context_key: str = ""
    status: Status = Status.UNPROCESSED
    cancel: threading.Event = field(default_factory=threading.Event)
    messages: tuple[CheckerMessage, ...] = ()
    markup: MarkupTree = MarkupTree()
    exports: tuple[tuple[str, bytes, bool], ...] = ()


@dataclass(frozen=True)
class Assignment:
    version_id: int
    exec_of: Mapping[int, int]  # span-id -> exec-id

    def exec_ids(self) -> frozenset[int]:
        return frozenset(self.exec_of.values())


@dataclass(frozen=True)
class StatusEvent:
    exec_id: int
    state: str


@dataclass(frozen=True)
class ReportEvent:
    exec_id: int
    node: NodeName
    event: Event  # node-level offsets


@dataclass(frozen=True)
class AssignedEvent:
    version_id: int
    exec_of: Mapping[int, int]


@dataclass(frozen=True)
class RemovedVersionsEvent:
    version_ids: tuple[int, ...]


EngineEvent = Union[StatusEvent, ReportEvent, AssignedEvent, RemovedVersionsEvent]
Listener = Callable[[EngineEvent], None]


@dataclass(frozen=True)
class NodeContext:
    header: Optional[TheoryHeader]
    keywords: KeywordTable
    context_key: str
    checker_id: Optional[str]
    cycle: Optional[str] = None


class CheckEngine:
    """Single-writer document checking engine.

    Owns the version history, assigns exec units per span, runs them on a
    worker pool and publishes results.  ``listener`` callbacks observe the
    streamed protocol events (assigned, status, report, removed_versions).
    """

    def __init__(self, registry: Optional[CheckerRegistry] = None,
                 workers: Optional[int] = None,
                 checker_configs: Optional[Mapping[str, Mapping[str, object]]] = None,
                 cache_cap: int = 0, retain_versions: int = 10):
        self.registry = registry or builtin_registry()
        self.cache = ResultCache(cache_cap)
        self._configs = {k: dict(v) for k, v in (checker_configs or {}).items()}
        self._lock = threading.RLock()
        self._quiet = threading.Condition(self._lock)
        self._listeners: list[Listener] = []
        self._units: dict[int, ExecUnit] = {}
        self._eligible: set[int] = set()
        self._next_exec_id = itertools.count(1)
        self._contexts: dict[NodeName, NodeContext] = {}
        self._retain = retain_versions
        self.history = History(self._keywords_for)
        self._assignment = Assignment(self.history.latest.id, {})
        self._pool = _WorkerPool(workers or os.cpu_count() or 2, self._run_unit)
        self._closed = False

    # -- node contexts ---------------------------------------------------

    def _keywords_for(self, name: NodeName, texts: Mapping[NodeName, str]) -> KeywordTable:
        if name.kind is not NodeKind.THEORY:
            return BASE_KEYWORDS
        headers: dict[NodeName, TheoryHeader] = {}

        def header_of(n: NodeName) -> Optional[TheoryHeader]:
            if n not in headers:
                text = texts.get(n)
                headers[n] = (parse_theory_header(text, n)
                              if text is not None else None)
            return headers[n]

        table = BASE_KEYWORDS.merge(THEORY_COMMANDS)
        seen: set[NodeName] = set()
        stack = [name]
        while stack:
            n = stack.pop()
            if n in seen:
                continue
            seen.add(n)
            h = header_of(n)
            if h is None:
                continue
            try:
                table = table.merge(h.keywords)
            except Exception:
                pass  # conflicting declarations surface as checker messages
            stack.extend(h.imports)
        return table

    def _refresh_contexts(self, version: Version) -> set[NodeName]:
        """Recompute per-node checking contexts; returns nodes whose context
        changed (they must be fully reassigned)."""
        texts = {n: s.text for n, s in version.nodes.items()}
        headers: dict[NodeName, TheoryHeader] = {}
        for n, s in version.nodes.items():
            if n.kind is NodeKind.THEORY:
                h = parse_theory_header(s.text, n)
                if h is not None:
                    headers[n] = h

        cycle_msg: dict[NodeName, str] = {}
        try:
            topological_order(headers)
        except CycleError as err:
            for member in err.members:
                cycle_msg[member] = str(err)

        known_paths = sorted(str(n) for n in version.nodes)
        changed: set[NodeName] = set()
        contexts: dict[NodeName, NodeContext] = {}
        for n, s in version.nodes.items():
            if n.kind is NodeKind.THEORY:
                table = self._keywords_for(n, texts)
                header = headers.get(n)
                imports = tuple(str(i) for i in header.imports) if header else ()
                key = content_digest("\x1f".join(
                    [s.table_key, *imports, cycle_msg.get(n, ""), *known_paths]))
                ctx = NodeContext(header, table, key, "thy", cycle_msg.get(n))
            else:
                fmt = self.registry.format_for(n.extension)
                checker_id = fmt.checker_id if fmt else None
                ctx = NodeContext(None, BASE_KEYWORDS, content_digest(n.extension),
                                  checker_id)
            contexts[n] = ctx
            old = self._contexts.get(n)
            if old is None or old.context_key != ctx.context_key:
                changed.add(n)
        self._contexts = contexts
        return changed

    # -- public API --------------------------------------------------------

    def add_listener(self, listener: Listener) -> None:
        with self._lock:
            self._listeners.append(listener)

    def _notify(self, event: EngineEvent) -> None:
        for listener in list(self._listeners):
            listener(event)

    def update(self, edits: Sequence[tuple[NodeName, Edit]]) -> Assignment:
        """Apply an edit batch: new version, new assignment, obsolete work
        cancelled, eligible work scheduled."""
        with self._lock:
            if self._closed:
                raise RuntimeError("engine is shut down")
            version = self.history.apply_edits(edits)
            invalidated = self._refresh_contexts(version)
            assignment = self._assign(version, self._assignment, invalidated)
            self._assignment = assignment
            self._cancel_obsolete(assignment)
            removed = self.history.remove_versions(self._retain)
            self._notify(AssignedEvent(assignment.version_id, dict(assignment.exec_of)))
            if removed:
                self._notify(RemovedVersionsEvent(tuple(removed)))
            self._schedule(version, assignment)
            self._quiet.notify_all()
        return assignment

    def set_perspective(self, node: NodeName, visible: Sequence[tuple[int, int]],
                        required: bool = False) -> Assignment:
        from .document import Perspective
        return self.update([(node, Perspective(tuple(tuple(r) for r in visible), required))])

    def assignment(self) -> Assignment:
        with self._lock:
            return self._assignment

    def unit(self, exec_id: int) -> ExecUnit:
        with self._lock:
            return self._units[exec_id]

    # -- assignment ---------------------------------------------------------

    def _assign(self, version: Version, previous: Assignment,
                invalidated: set[NodeName]) -> Assignment:
        exec_of: dict[int, int] = {}
        for name, state in version.nodes.items():
            ctx = self._contexts[name]
            reusing = name not in invalidated
            for span in state.spans:
                prev_exec = previous.exec_of.get(span.span_id) if reusing else None
                if prev_exec is not None:
                    exec_of[span.span_id] = prev_exec
                    continue
                reusing = False  # linear context: everything after is fresh
                unit = self._new_unit(name, state, span, version.id, ctx)
                exec_of[span.span_id] = unit.exec_id
        return Assignment(version.id, exec_of)

    def _new_unit(self, name: NodeName, state: NodeState, span, version_id: int,
                  ctx: NodeContext) -> ExecUnit:
        unit = ExecUnit(
            exec_id=next(self._next_exec_id),
            span_id=span.span_id,
            node=name,
            command=span.command,
            source=span.source(state.text),
            start=span.start,
            version_id=version_id,
            checker_id=ctx.checker_id or "",
            context_key=ctx.context_key,
        )
        self._units[unit.exec_id] = unit
        return unit

    # -- scheduling ----------------------------------------------------------

    def _node_order(self, version: Version) -> dict[NodeName, int]:
        headers = {n: self._contexts[n].header or TheoryHeader(str(n))
                   for n in version.nodes if n.kind is NodeKind.THEORY}
        try:
            ordered = topological_order(headers)
        except CycleError:
            ordered = sorted(headers, key=lambda n: n.path)
        order = {n: i for i, n in enumerate(ordered)}
        for n in sorted(version.nodes, key=lambda n: n.path):
            order.setdefault(n, len(order))
        return order

    def _eligible_units(self, version: Version) -> dict[int, int]:
        """exec-id -> priority rank (0 visible, 1 required/imported)."""
        span_rank: dict[tuple[NodeName, int], int] = {}
        base_nodes: set[NodeName] = set()
        for name, state in version.nodes.items():
            persp = state.perspective
            visible_idx = [i for i, span in enumerate(state.spans)
                           if any(span.start < hi and lo < span.end or
                                  (span.start == span.end and lo <= span.start <= hi)
                                  for lo, hi in persp.visible)]
            if visible_idx:
                base_nodes.add(name)
                for i in range(max(visible_idx) + 1):
                    span_rank[(name, i)] = 0
            if persp.required:
                base_nodes.add(name)
                for i in range(len(state.spans)):
                    span_rank.setdefault((name, i), 1)

        # transitive imports of any node with eligible work are fully checked
        pending = list(base_nodes)
        seen: set[NodeName] = set()
        while pending:
            n = pending.pop()
            if n in seen:
                continue
            seen.add(n)
            ctx = self._contexts.get(n)
            header = ctx.header if ctx else None
            if header is None:
                continue
            for imp in header.imports:
                if imp in version.nodes:
                    if imp not in seen:
                        state = version.nodes[imp]
                        for i in range(len(state.spans)):
                            span_rank.setdefault((imp, i), 1)
                        pending.append(imp)

        out: dict[int, int] = {}
        for (name, idx), rank in span_rank.items():
            span = version.nodes[name].spans[idx]
            exec_id = self._assignment.exec_of.get(span.span_id)
            if exec_id is not None:
                out[exec_id] = rank
        return out

    def _schedule(self, version: Version, assignment: Assignment) -> None:
        ranks = self._eligible_units(version)
        self._eligible = set(ranks)
        order = self._node_order(version)
        span_index: dict[int, tuple[int, int]] = {}
        for name, state in version.nodes.items():
            for idx, span in enumerate(state.spans):
                exec_id = assignment.exec_of.get(span.span_id)
                if exec_id is not None:
                    span_index[exec_id] = (order.get(name, 0), idx)
        batch = []
        for exec_id, rank in ranks.items():
            unit = self._units[exec_id]
            if unit.status is Status.UNPROCESSED:
                node_pos, idx = span_index[exec_id]
                batch.append(((rank, node_pos, idx, exec_id), unit))
        self._pool.submit_many(batch)

    # -- cancellation ---------------------------------------------------------

    def _cancel_obsolete(self, latest: Assignment) -> None:
        live = latest.exec_ids()
        for unit in self._units.values():
            if unit.exec_id in live or unit.status in TERMINAL:
                continue
            unit.cancel.set()
            if unit.status is Status.UNPROCESSED:
                unit.status = Status.CANCELLED
                self._notify(StatusEvent(unit.exec_id, Status.CANCELLED.value))
            elif unit.status is Status.RUNNING:
                timer = threading.Timer(CANCEL_DEADLINE, self._force_cancel, (unit.exec_id,))
                timer.daemon = True
                timer.start()
        self._gc_units(live)

    def _force_cancel(self, exec_id: int) -> None:
        with self._lock:
            unit = self._units.get(exec_id)
            if unit is not None and unit.status is Status.RUNNING:
                unit.status = Status.CANCELLED
                unit.messages = ()
                unit.markup = MarkupTree()
                unit.exports = ()
                self._notify(StatusEvent(exec_id, Status.CANCELLED.value))
                self._quiet.notify_all()

    def _gc_units(self, live: frozenset[int]) -> None:
        dead = [eid for eid, u in self._units.items()
                if eid not in live and u.status in TERMINAL]
        for eid in dead:
            del self._units[eid]

    # -- unit execution ---------------------------------------------------------

    def _run_unit(self, unit: ExecUnit) -> None:
        with self._lock:
            if (unit.status is not Status.UNPROCESSED or unit.cancel.is_set()
                    or unit.exec_id not in self._eligible
                    or unit.exec_id not in self._assignment.exec_ids()):
                if unit.status is Status.UNPROCESSED and unit.cancel.is_set():
                    unit.status = Status.CANCELLED
                    self._notify(StatusEvent(unit.exec_id, Status.CANCELLED.value))
                    self._quiet.notify_all()
                return
            unit.status = Status.RUNNING
            ctx_info = self._contexts.get(unit.node)
            attachments = {str(n): "" for n in self.history.latest.nodes}
            self._notify(StatusEvent(unit.exec_id, Status.RUNNING.value))

        messages: list[CheckerMessage] = []
        tree = MarkupTree()
        exports: list[tuple[str, bytes, bool]] = []
        length = len(unit.source)

        def emit(event: Event) -> None:
            nonlocal tree
            lo = max(0, min(event.start, length))
            hi = max(lo, min(event.end, length))
            event = replace(event, start=lo, end=hi)
            shifted = shift_event(event, unit.start)
            if isinstance(event, CheckerMessage):
                messages.append(shifted)
            else:
                try:
                    tree = tree.add(shifted.start, shifted.end, shifted.element)
                except MarkupError:
                    pass  # ill-nested markup is reported, not fatal
            with self._lock:
                self._notify(ReportEvent(unit.exec_id, unit.node, shifted))

        config = dict(self._configs.get(unit.checker_id, {}))
        if ctx_info and ctx_info.cycle:
            config["import_cycle"] = ctx_info.cycle
        ctx = CheckContext(
            emit=emit, cancel=unit.cancel, cache=self.cache, node=unit.node,
            command=unit.command, keywords=ctx_info.keywords if ctx_info else BASE_KEYWORDS,
            context_key=unit.context_key, attachments=attachments,
            export=lambda name, payload, compressed: exports.append((name, payload, compressed)),
            config=config,
        )

        if not unit.checker_id:
            status = "failed"
            emit(_no_checker_message(unit))
        else:
            status = self.registry.check(unit.checker_id, unit.source, ctx)

        with self._lock:
            if unit.status is Status.RUNNING:
                if status == "finished" and not unit.cancel.is_set():
                    unit.status = Status.FINISHED
                    unit.messages = tuple(messages)
                    unit.markup = tree
                    unit.exports = tuple(exports)
                elif status == "failed" and not unit.cancel.is_set():
                    unit.status = Status.FAILED
                    unit.messages = tuple(messages)
                    unit.markup = tree
                else:
                    unit.status = Status.CANCELLED
                self._notify(StatusEvent(unit.exec_id, unit.status.value))
                self._quiet.notify_all()

    # -- queries ------------------------------------------------------------

    def _latest_units(self) -> list[tuple[NodeName, int, ExecUnit]]:
        version = self.history.version(self._assignment.version_id)
        out = []
        for name, state in version.nodes.items():
            for idx, span in enumerate(state.spans):
                exec_id = self._assignment.exec_of.get(span.span_id)
                if exec_id is not None and exec_id in self._units:
                    out.append((name, idx, self._units[exec_id]))
        out.sort(key=lambda row: (row[0].path, row[1]))
        return out

    def snapshot(self, node: NodeName) -> Snapshot:
        """Read-only view of the node's current text and published markup;
        never waits on checking."""
        with self._lock:
            version = self.history.latest
            state = version.node(node)
            trees = tuple(unit.markup for name, _idx, unit in self._latest_units()
                          if name == node and unit.status in (Status.FINISHED, Status.FAILED))
            return Snapshot(node, version.id, state.text, state.text, (), trees)

    def messages(self, node: Optional[NodeName] = None) -> list[tuple[NodeName, CheckerMessage]]:
        with self._lock:
            out = []
            for name, _idx, unit in self._latest_units():
                if node is None or name == node:
                    out.extend((name, m) for m in unit.messages)
            return out

    def results(self) -> dict[NodeName, list[tuple[str, tuple[CheckerMessage, ...], MarkupTree]]]:
        """(span source, messages, markup) per node, for equivalence checks."""
        with self._lock:
            out: dict[NodeName, list] = {}
            for name, _idx, unit in self._latest_units():
                out.setdefault(name, []).append((unit.source, unit.messages, unit.markup))
            return out

    def collect_exports(self, store, session: str) -> list[ExportEntry]:
        """Publish the latest assignment's exports into a store."""
        entries = []
        with self._lock:
            rows = [(name, unit) for name, _idx, unit in self._latest_units() if unit.exports]
            for name, unit in rows:
                theory = self._contexts[name].header.name if (
                    self._contexts.get(name) and self._contexts[name].header) else str(name)
                for export_name, payload, compressed in unit.exports:
                    entries.append(ExportEntry(session, theory, export_name, payload, compressed))
        for entry in entries:
            store.put(entry)
        return entries

    # -- quiescence ------------------------------------------------------------

    def _is_quiet(self) -> bool:
        live = self._assignment.exec_ids()
        for exec_id in live:
            unit = self._units.get(exec_id)
            if unit is None:
                continue
            if unit.status is Status.RUNNING:
                return False
            if unit.status is Status.UNPROCESSED and exec_id in self._eligible:
                return False
        return True

    def await_quiescence(self, timeout: float = 30.0) -> bool:
        """Block until no eligible-unprocessed or running unit remains for
        the latest version."""
        deadline = None if timeout is None else (threading.TIMEOUT_MAX
                                                 if timeout < 0 else timeout)
        with self._quiet:
            return self._quiet.wait_for(self._is_quiet, timeout=deadline)

    def shutdown(self) -> None:
        with self._lock:
            if self._closed:
                return
            self._closed = True
            for unit in self._units.values():
                unit.cancel.set()
        self._pool.stop()


def _no_checker_message(unit: ExecUnit) -> CheckerMessage:
    from .checkers import Phase, Severity, message
    return message(Severity.ERROR, 0, len(unit.source),
                   f"no checker registered for {unit.node.extension!r} files",
                   Phase.SEMANTICS)


class _WorkerPool:
    """Fixed pool of worker threads draining a priority heap."""

    def __init__(self, workers: int, run: Callable[[ExecUnit], None]):
        self._run = run
        self._cv = threading.Condition()
        self._heap: list[tuple[tuple, int, ExecUnit]] = []
        self._seq = itertools.count()
        self._stop = False
        self._threads = [threading.Thread(target=self._loop, daemon=True,
                                          name=f"docmark-worker-{i}")
                         for i in range(max(1, workers))]
        for t in self._threads:
            t.start()

    def submit(self, priority: tuple, unit: ExecUnit) -> None:
        self.submit_many([(priority, unit)])

    def submit_many(self, batch: Sequence[tuple[tuple, ExecUnit]]) -> None:
        """Push a whole batch before waking workers, so priorities decide the
        start order even with a single worker."""
        if not batch:
            return
        with self._cv:
            for priority, unit in batch:
                heapq.heappush(self._heap, (priority, next(self._seq), unit))
            self._cv.notify_all()

    def _loop(self) -> None:
        while True:
            with self._cv:
                while not self._heap and not self._stop:
                    self._cv.wait()
                if self._stop and not self._heap:
                    return
                _prio, _seq, unit = heapq.heappop(self._heap)
            try:
                self._run(unit)
            except Exception:
                pass  # unit bookkeeping already handles checker crashes

    def stop(self) -> None:
        with self._cv:
            self._stop = True
            self._cv.notify_all()
        for t in self._threads:
            t.join(timeout=5)
