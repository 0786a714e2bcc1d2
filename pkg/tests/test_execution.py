import random
import threading
import time

import pytest

from docmark.checkers import CheckerMessage, FileFormat, builtin_registry
from docmark.document import Insert, NodeName, Perspective, Remove, SetNode
from docmark.execution import (
    AssignedEvent,
    CheckEngine,
    ReportEvent,
    Status,
    StatusEvent,
)
from docmark.pretty import unbroken


def make_engine(**kw):
    registry = builtin_registry()
    registry.register_format(FileFormat("slow", "sleeper"))
    kw.setdefault("workers", 2)
    return CheckEngine(registry=registry, **kw)


@pytest.fixture
def engine():
    eng = make_engine()
    yield eng
    eng.shutdown()


THY = NodeName.theory("T.thy")
FTL = NodeName.auxiliary("doc.ftl")

DOC3 = "theory T begin eval ⟨1+1=2⟩ eval ⟨2*3=6⟩ eval ⟨9-4=5⟩"


def full_view(engine, node):
    text = engine.history.latest.node(node).text
    return engine.update([(node, Perspective(((0, len(text)),), required=True))])


def message_rows(engine, node=None):
    return [(str(n), m.severity.value, m.start, m.end, unbroken(m.body), m.phase.value)
            for n, m in engine.messages(node)]


def results_key(engine):
    out = {}
    for node, rows in engine.results().items():
        out[str(node)] = [
            (src,
             tuple((m.severity.value, m.start, m.end, unbroken(m.body), m.phase.value)
                   for m in msgs),
             tuple(tree.elements()))
            for src, msgs, tree in rows]
    return out


class TestAssign:
    def test_identical_version_identical_assignment(self, engine):
        engine.update([(THY, SetNode(DOC3))])
        a1 = engine.assignment()
        a2 = engine.update([])
        assert dict(a2.exec_of) == dict(a1.exec_of)

    def test_middle_edit_invalidates_suffix_execs(self, engine):
        engine.update([(THY, SetNode(DOC3))])
        a1 = engine.assignment()
        spans1 = engine.history.latest.node(THY).spans
        assert len(spans1) == 4  # header + three evals
        off = DOC3.index("2*3")
        a2 = engine.update([(THY, Insert(off, " "))])
        spans2 = engine.history.latest.node(THY).spans
        # prefix (header, first eval) reuses exec ids
        for idx in (0, 1):
            assert a2.exec_of[spans2[idx].span_id] == a1.exec_of[spans1[idx].span_id]
        # edited span and everything after it are fresh
        for idx in (2, 3):
            assert a2.exec_of[spans2[idx].span_id] != a1.exec_of[spans1[idx].span_id]

    def test_header_import_edit_reassigns_whole_node(self, engine):
        other = NodeName.theory("B.thy")
        engine.update([(other, SetNode("theory B begin")),
                       (THY, SetNode("theory T imports B begin eval ⟨1=1⟩"))])
        a1 = engine.assignment()
        spans1 = engine.history.latest.node(THY).spans
        # edit only the header: everything in the node is fresh
        text = engine.history.latest.node(THY).text
        off = text.index("imports B") + len("imports B")
        a2 = engine.update([(THY, Insert(off, " "))])
        spans2 = engine.history.latest.node(THY).spans
        old_ids = {a1.exec_of[s.span_id] for s in spans1}
        new_ids = {a2.exec_of[s.span_id] for s in spans2}
        assert old_ids.isdisjoint(new_ids)

    def test_import_list_change_invalidates_importer(self, engine):
        b = NodeName.theory("B.thy")
        engine.update([(b, SetNode("theory B begin")),
                       (THY, SetNode("theory T imports B begin eval ⟨1=1⟩"))])
        a1 = engine.assignment()
        spans1 = engine.history.latest.node(THY).spans
        # add a keyword declaration to B's header: T's merged context changes
        a2 = engine.update([(b, SetNode('theory B keywords extra :: command begin'))])
        spans2 = engine.history.latest.node(THY).spans
        assert {a2.exec_of[s.span_id] for s in spans2}.isdisjoint(
            {a1.exec_of[s.span_id] for s in spans1})


class TestSchedule:
    def test_empty_perspective_nothing_runs(self, engine):
        engine.update([(THY, SetNode(DOC3))])
        assert engine.await_quiescence(5)
        assert engine.messages(THY) == []
        for _n, _i, unit in engine._latest_units():
            assert unit.status is Status.UNPROCESSED

    def test_perspective_on_last_span_runs_predecessors(self, engine):
        engine.update([(THY, SetNode(DOC3))])
        lo = DOC3.rindex("eval")
        engine.update([(THY, Perspective(((lo, len(DOC3)),)))])
        assert engine.await_quiescence(5)
        statuses = [u.status for _n, _i, u in engine._latest_units()]
        assert statuses == [Status.FINISHED] * 4

    def test_scroll_starts_new_without_rerunning_finished(self, engine):
        engine.update([(THY, SetNode(DOC3))])
        first_eval_end = DOC3.index("eval") + 20
        engine.update([(THY, Perspective(((0, first_eval_end),)))])
        assert engine.await_quiescence(5)
        before = {u.exec_id: u.status for _n, _i, u in engine._latest_units()}
        evals_before = engine.cache.stats()["evaluations"]
        # scroll to reveal the tail
        engine.update([(THY, Perspective(((0, len(DOC3)),)))])
        assert engine.await_quiescence(5)
        after = {u.exec_id: u.status for _n, _i, u in engine._latest_units()}
        for exec_id, status in before.items():
            if status is Status.FINISHED:
                assert after[exec_id] is Status.FINISHED
        assert set(after) == set(before)  # same exec ids: nothing re-assigned
        assert all(s is Status.FINISHED for s in after.values())

    def test_required_import_checked_transitively(self, engine):
        b = NodeName.theory("B.thy")
        c = NodeName.theory("C.thy")
        engine.update([
            (c, SetNode("theory C begin eval ⟨5=5⟩")),
            (b, SetNode("theory B imports C begin eval ⟨6=6⟩")),
            (THY, SetNode("theory T imports B begin eval ⟨7=7⟩")),
        ])
        engine.update([(THY, Perspective((), required=True))])
        assert engine.await_quiescence(5)
        for node in (THY, b, c):
            rows = message_rows(engine, node)
            assert any(r[4] == "checked" for r in rows), node

    def test_visible_starts_before_required(self):
        engine = make_engine(workers=1, checker_configs={"arith": {"slow_ms": 30}})
        try:
            vis = NodeName.auxiliary("vis.ftl")
            req = NodeName.auxiliary("req.ftl")
            running_order = []

            def listen(ev):
                if isinstance(ev, StatusEvent) and ev.state == "running":
                    running_order.append(ev.exec_id)

            engine.add_listener(listen)
            a = engine.update([
                (req, SetNode("Proposition. 1 = 1.")),
                (req, Perspective((), required=True)),
                (vis, SetNode("Proposition. 2 = 2.")),
                (vis, Perspective(((0, 19),))),
            ])
            assert engine.await_quiescence(5)
            version = engine.history.latest
            vis_exec = a.exec_of[version.node(vis).spans[0].span_id]
            req_exec = a.exec_of[version.node(req).spans[0].span_id]
            assert running_order.index(vis_exec) < running_order.index(req_exec)
        finally:
            engine.shutdown()


class TestCancellation:
    def test_nothing_cancelled_without_edits(self, engine):
        engine.update([(FTL, SetNode("Proposition. 1 = 1."))])
        events = []
        engine.add_listener(events.append)
        full_view(engine, FTL)
        assert engine.await_quiescence(5)
        cancelled = [e for e in events if isinstance(e, StatusEvent) and e.state == "cancelled"]
        assert cancelled == []

    def test_edit_cancels_running_unit_keeps_finished(self):
        engine = make_engine(workers=1, checker_configs={"thy": {"slow_ms": 400}})
        try:
            doc = "theory T begin eval ⟨1+1=2⟩ eval ⟨2+2=4⟩"
            states = {}

            def listen(ev):
                if isinstance(ev, StatusEvent):
                    states.setdefault(ev.exec_id, []).append(ev.state)

            engine.add_listener(listen)
            engine.update([(THY, SetNode(doc))])
            a1 = full_view(engine, THY)
            spans = engine.history.latest.node(THY).spans
            first_eval = a1.exec_of[spans[1].span_id]
            second_eval = a1.exec_of[spans[2].span_id]
            # single worker: wait until the second eval is mid-flight
            deadline = time.monotonic() + 10
            while time.monotonic() < deadline and "running" not in states.get(second_eval, []):
                time.sleep(0.002)
            assert "running" in states.get(second_eval, [])
            assert "finished" in states.get(first_eval, [])
            off = doc.index("2+2")
            engine.update([(THY, Insert(off, "0+"))])
            assert engine.await_quiescence(5)
            assert states[second_eval][-1] == "cancelled"
            # the finished predecessor kept its unit and results
            a2 = engine.assignment()
            spans2 = engine.history.latest.node(THY).spans
            assert a2.exec_of[spans2[1].span_id] == first_eval
            assert engine.unit(first_eval).status is Status.FINISHED
        finally:
            engine.shutdown()

    def test_long_stub_cancelled_within_deadline(self):
        engine = make_engine(workers=2, checker_configs={"sleeper": {"sleep_ms": 60_000}})
        try:
            slow = NodeName.auxiliary("x.slow")
            states = {}

            def listen(ev):
                if isinstance(ev, StatusEvent):
                    states.setdefault(ev.exec_id, []).append((time.monotonic(), ev.state))

            engine.add_listener(listen)
            engine.update([(slow, SetNode("zzz"))])
            a1 = full_view(engine, slow)
            span = engine.history.latest.node(slow).spans[0]
            exec_id = a1.exec_of[span.span_id]
            deadline = time.monotonic() + 5
            while time.monotonic() < deadline and not any(
                    s == "running" for _t, s in states.get(exec_id, [])):
                time.sleep(0.005)
            t_edit = time.monotonic()
            engine.update([(slow, SetNode("zzz but different"))])
            deadline = time.monotonic() + 4
            while time.monotonic() < deadline and states.get(exec_id, [])[-1][1] != "cancelled":
                time.sleep(0.01)
            t_cancelled, state = states[exec_id][-1]
            assert state == "cancelled"
            assert t_cancelled - t_edit < 2.0
        finally:
            engine.shutdown()

    def test_edit_storm_no_stale_results(self):
        engine = make_engine(workers=2)
        try:
            for k in range(20):
                text = f"Proposition. {k} + 1 = {k + 1}."
                engine.update([(FTL, SetNode(text))])
                engine.update([(FTL, Perspective(((0, len(text)),)))])
            assert engine.await_quiescence(10)
            live = engine.assignment().exec_ids()
            for exec_id, unit in engine._units.items():
                assert unit.status is not Status.RUNNING or exec_id in live
                if unit.messages:
                    assert exec_id in live
            rows = message_rows(engine, FTL)
            assert any("checked" == r[4] for r in rows)
        finally:
            engine.shutdown()


class TestIncrementalEquivalence:
    def scratch_results(self, final_texts):
        engine = make_engine()
        try:
            edits = []
            for node, text in final_texts.items():
                edits.append((node, SetNode(text)))
                edits.append((node, Perspective((), required=True)))
            engine.update(edits)
            assert engine.await_quiescence(10)
            return results_key(engine)
        finally:
            engine.shutdown()

    @pytest.mark.parametrize("seed", range(6))
    def test_matches_from_scratch(self, seed):
        rng = random.Random(seed)
        engine = make_engine()
        try:
            nodes = [NodeName.auxiliary(f"n{k}.ftl") for k in range(rng.randint(1, 3))]
            nodes.append(NodeName.theory("T.thy"))
            texts = {}
            for node in nodes:
                if node.kind.value == "theory":
                    body = " ".join(f"eval ⟨{rng.randint(0, 9)} + 1 = {rng.randint(1, 10)}⟩"
                                    for _ in range(rng.randint(1, 5)))
                    texts[node] = f"theory T begin {body}"
                else:
                    texts[node] = "\n\n".join(
                        f"Proposition. {rng.randint(0, 9)} * 2 = {rng.randint(0, 18)}."
                        for _ in range(rng.randint(1, 6)))
            batch = []
            for node in nodes:
                batch.append((node, SetNode(texts[node])))
                batch.append((node, Perspective((), required=True)))
            engine.update(batch)
            for _ in range(rng.randint(1, 12)):
                node = rng.choice(nodes)
                text = texts[node]
                if text and rng.random() < 0.5:
                    off = rng.randrange(len(text))
                    chunk = text[off:off + rng.randint(1, 3)]
                    # avoid tearing the header apart too badly: skip removes on 'theory'
                    if "theory" in chunk:
                        continue
                    texts[node] = text[:off] + text[off + len(chunk):]
                    engine.update([(node, Remove(off, chunk))])
                else:
                    off = rng.randint(0, len(text))
                    ins = rng.choice(["1", "7", " ", "+1"])
                    texts[node] = text[:off] + ins + text[off:]
                    engine.update([(node, Insert(off, ins))])
            assert engine.await_quiescence(10)
            assert results_key(engine) == self.scratch_results(texts)
        finally:
            engine.shutdown()


class TestSnapshotNonBlocking:
    def test_snapshot_during_slow_check(self):
        engine = make_engine(checker_configs={"arith": {"slow_ms": 200}})
        try:
            engine.update([(FTL, SetNode("Proposition. 1 = 1.\n\nProposition. 2 = 2."))])
            full_view(engine, FTL)
            start = time.monotonic()
            snap = engine.snapshot(FTL)
            elapsed = time.monotonic() - start
            assert elapsed < 0.01
            assert snap.text.startswith("Proposition")
            assert engine.await_quiescence(5)
            snap2 = engine.snapshot(FTL)
            assert any(p.element.name == "checked" for p in snap2.query())
        finally:
            engine.shutdown()

    def test_unknown_node_raises(self, engine):
        with pytest.raises(LookupError):
            engine.snapshot(NodeName.auxiliary("ghost.ftl"))


class TestExports:
    def test_collect_exports_from_latest(self, engine):
        from docmark.sessions import MemoryExportStore
        engine.update([(FTL, SetNode("Proposition. 2 + 2 = 4."))])
        full_view(engine, FTL)
        assert engine.await_quiescence(5)
        store = MemoryExportStore()
        entries = engine.collect_exports(store, "demo")
        names = sorted(e.name for e in entries)
        assert names == ["results/blocks.tsv", "results/summary.txt"]
        (summary,) = store.retrieve("demo", pattern="results/summary.txt")
        assert b"checked: 1" in summary.payload
