"""Acceptance suite: one test per release criterion, at fixed tolerances.

Run with ``pytest tests/test_acceptance.py -v`` to get one pass/fail line
per criterion.  Thresholds are part of the contract and are not tunable
from the outside.
"""

import random
import re
import socket
import threading
import time

import pytest

from docmark.checkers import (
    CheckerMessage,
    FileFormat,
    Phase,
    Severity,
    builtin_registry,
)
from docmark.client import HeadlessClient
from docmark.config import Config
from docmark.document import Insert, NodeName, Perspective, Remove, SetNode
from docmark.execution import CheckEngine, ReportEvent, Status, StatusEvent
from docmark.markup import MarkupTree
from docmark.pretty import Block, Break, Str, char_metric, format, unbroken
from docmark.protocol import (
    FrameDecoder,
    encode_chunks,
    encode_tree,
    report_event_to_tree,
)
from docmark.server import Connection, build_engine
from docmark.sessions import ExportEntry, MemoryExportStore, SqliteExportStore
from docmark.syntax import escape_embedded, quote_depth_demo, tokenize

pytestmark = pytest.mark.acceptance


def new_engine(**kw):
    registry = builtin_registry()
    registry.register_format(FileFormat("slow", "sleeper"))
    kw.setdefault("workers", 2)
    return CheckEngine(registry=registry, **kw)


def serialize_results(engine):
    """Byte-exact fingerprint of (messages, markup) per span, per node."""
    out = {}
    for node, rows in engine.results().items():
        serialized = []
        for source, messages, tree in rows:
            msg_bytes = encode_tree(
                [report_event_to_tree(m) for m in messages]).encode("utf-8")
            markup_bytes = encode_tree(
                [encode_placed(p) for p in tree.elements()]).encode("utf-8")
            serialized.append((source, msg_bytes, markup_bytes))
        out[str(node)] = serialized
    return out


def encode_placed(placed):
    from docmark.protocol import TreeElem, markup_element_to_tree
    return TreeElem("markup", (("start", str(placed.start)), ("end", str(placed.end))),
                    (markup_element_to_tree(placed.element),))


# -- criterion 1: incremental checking equals checking from scratch ----------


def random_document(rng):
    """Up to ~20 spans across a theory and a couple of block files."""
    texts = {}
    thy = NodeName.theory("T.thy")
    spans = rng.randint(1, 10)
    body = []
    for _ in range(spans):
        roll = rng.random()
        if roll < 0.6:
            body.append(f"eval ⟨{rng.randint(0, 12)} + {rng.randint(0, 9)} = "
                        f"{rng.randint(0, 20)}⟩")
        elif roll < 0.8:
            body.append(f"text ⟨note {rng.randint(0, 99)}⟩")
        else:
            body.append(f"ML ⟨val it = {rng.randint(0, 9)}⟩")
    texts[thy] = "theory T begin " + " ".join(body)
    for k in range(rng.randint(0, 2)):
        blocks = [
            f"{rng.choice(['Proposition', 'Definition', 'Axiom'])}. "
            f"{rng.randint(0, 9)} * {rng.randint(0, 5)} = {rng.randint(0, 45)}."
            for _ in range(rng.randint(1, 5))
        ]
        texts[NodeName.auxiliary(f"n{k}.ftl")] = "\n\n".join(blocks)
    return texts


def random_edit(rng, text):
    if text and rng.random() < 0.45:
        off = rng.randrange(len(text))
        length = rng.randint(1, min(4, len(text) - off))
        return Remove(off, text[off:off + length])
    off = rng.randint(0, len(text))
    return Insert(off, rng.choice(["1", "9", " ", "+2", "eval ", "⟨", "."]))


def apply_to_text(text, edit):
    if isinstance(edit, Insert):
        return text[:edit.offset] + edit.text + text[edit.offset:]
    return text[:edit.offset] + text[edit.offset + len(edit.text):]


N_TRIALS = 500


def test_incremental_equals_scratch_500_trials():
    started = time.monotonic()
    for seed in range(N_TRIALS):
        rng = random.Random(990_000 + seed)
        texts = random_document(rng)
        engine = new_engine()
        try:
            batch = []
            for node, text in texts.items():
                batch.append((node, SetNode(text)))
                batch.append((node, Perspective((), required=True)))
            engine.update(batch)
            for _ in range(rng.randint(0, 30)):
                node = rng.choice(list(texts))
                edit = random_edit(rng, texts[node])
                texts[node] = apply_to_text(texts[node], edit)
                engine.update([(node, edit)])
            assert engine.await_quiescence(30), f"no quiescence (seed {seed})"
            incremental = serialize_results(engine)
        finally:
            engine.shutdown()

        scratch_engine = new_engine()
        try:
            batch = []
            for node, text in texts.items():
                batch.append((node, SetNode(text)))
                batch.append((node, Perspective((), required=True)))
            scratch_engine.update(batch)
            assert scratch_engine.await_quiescence(30)
            scratch = serialize_results(scratch_engine)
        finally:
            scratch_engine.shutdown()

        assert incremental == scratch, f"divergence at seed {seed}"
    elapsed = time.monotonic() - started
    assert elapsed < 60.0, f"500 trials took {elapsed:.1f}s (target < 60s)"


# -- criterion 2: reactivity bands -------------------------------------------


def test_first_syntax_report_within_100ms_and_snapshot_under_10ms():
    engine = new_engine(checker_configs={"arith": {"slow_ms": 300}})
    server_sock, client_sock = socket.socketpair()
    conn = Connection(engine, server_sock.sendall)

    def pump():
        try:
            while True:
                data = server_sock.recv(65536)
                if not data:
                    return
                conn.feed(data)
        except (OSError, ValueError):
            pass

    threading.Thread(target=pump, daemon=True).start()

    first_syntax = {}
    client = HeadlessClient(client_sock)
    original_dispatch = client._dispatch

    def timed_dispatch(msg):
        if msg.name == "report" and "syntax" in msg.text_arg(2) and not first_syntax:
            first_syntax["t"] = time.monotonic()
        original_dispatch(msg)

    client._dispatch = timed_dispatch
    try:
        node = NodeName.auxiliary("doc.ftl")
        blocks = "\n\n".join(f"Proposition. {k} + 1 = {k + 1}." for k in range(10))
        t_edit = time.monotonic()
        client.send_edits([(node, SetNode(blocks)),
                           (node, Perspective((), required=True))])
        deadline = time.monotonic() + 5
        while time.monotonic() < deadline and "t" not in first_syntax:
            time.sleep(0.001)
        assert "t" in first_syntax, "no syntax-phase report arrived"
        latency = first_syntax["t"] - t_edit
        assert latency < 0.100, f"first syntax report took {latency * 1000:.1f}ms"

        # snapshots must not wait for the 300ms/block semantic phase
        t0 = time.monotonic()
        snap = engine.snapshot(node)
        snap.query()
        snapshot_time = time.monotonic() - t0
        assert snapshot_time < 0.010, f"snapshot took {snapshot_time * 1000:.2f}ms"
        assert snap.text == blocks
    finally:
        client.close()
        server_sock.close()
        conn.close()
        engine.shutdown()


# -- criterion 3: cache effectiveness ------------------------------------------


def test_single_block_edit_one_evaluation_and_move_zero():
    engine = new_engine()
    try:
        node = NodeName.auxiliary("doc.ftl")
        blocks = [f"Proposition. {k} + 1 = {k + 1}." for k in range(50)]
        text = "\n\n".join(blocks)
        engine.update([(node, SetNode(text)),
                       (node, Perspective((), required=True))])
        assert engine.await_quiescence(30)
        assert engine.cache.stats()["evaluations"] == 50

        engine.cache.reset_counters()
        blocks[17] = "Proposition. 17 + 5 = 22."
        engine.update([(node, SetNode("\n\n".join(blocks)))])
        assert engine.await_quiescence(30)
        assert engine.cache.stats()["evaluations"] == 1, "expected exactly one evaluation"

        engine.cache.reset_counters()
        moved = blocks[10:] + blocks[:10]
        engine.update([(node, SetNode("\n\n".join(moved)))])
        assert engine.await_quiescence(30)
        assert engine.cache.stats()["evaluations"] == 0, "moving blocks must hit the cache"
    finally:
        engine.shutdown()


# -- criterion 4: cancellation ---------------------------------------------------


def test_superseding_edit_cancels_long_checker_within_2s():
    engine = new_engine(checker_configs={"sleeper": {"sleep_ms": 60_000}})
    try:
        node = NodeName.auxiliary("x.slow")
        states = {}

        def listen(ev):
            if isinstance(ev, StatusEvent):
                states.setdefault(ev.exec_id, []).append((time.monotonic(), ev.state))

        engine.add_listener(listen)
        a1 = engine.update([(node, SetNode("long run")),
                            (node, Perspective((), required=True))])
        span = engine.history.latest.node(node).spans[0]
        exec_id = a1.exec_of[span.span_id]
        deadline = time.monotonic() + 5
        while time.monotonic() < deadline and not any(
                s == "running" for _t, s in states.get(exec_id, [])):
            time.sleep(0.002)
        assert any(s == "running" for _t, s in states.get(exec_id, []))

        t_edit = time.monotonic()
        engine.update([(node, SetNode("superseded content"))])
        deadline = time.monotonic() + 3
        while time.monotonic() < deadline:
            rows = states.get(exec_id, [])
            if rows and rows[-1][1] == "cancelled":
                break
            time.sleep(0.005)
        rows = states.get(exec_id, [])
        assert rows and rows[-1][1] == "cancelled", "unit never reached cancelled"
        assert rows[-1][0] - t_edit < 2.0, "cancellation exceeded the 2s deadline"
    finally:
        engine.shutdown()


def test_edit_storm_leaves_no_stale_results():
    engine = new_engine()
    try:
        node = NodeName.auxiliary("doc.ftl")
        for k in range(20):
            text = f"Proposition. {k} + {k} = {2 * k}."
            engine.update([(node, SetNode(text)),
                           (node, Perspective(((0, len(text)),)))])
        assert engine.await_quiescence(30)
        live = engine.assignment().exec_ids()
        for exec_id, unit in engine._units.items():
            assert unit.status is not Status.RUNNING or exec_id in live
            if unit.messages or list(unit.markup.elements()):
                assert exec_id in live, f"stale exec {exec_id} holds results"
        texts = [unbroken(m.body) for _n, m in engine.messages()]
        assert "checked" in texts
    finally:
        engine.shutdown()


# -- criterion 5: tokenizer round-trip corpus --------------------------------------


OPEN_DELIMS = ("\\<open>", "‹", "⟨")
CLOSE_DELIMS = ("\\<close>", "›", "⟩")


def corpus_file(rng):
    parts = []
    for _ in range(rng.randint(1, 30)):
        roll = rng.random()
        if roll < 0.2:
            depth = rng.randint(1, 12)
            piece = "payload"
            for _ in range(depth):
                which = rng.randrange(len(OPEN_DELIMS))
                piece = OPEN_DELIMS[which] + piece + CLOSE_DELIMS[which]
            parts.append(piece)
        elif roll < 0.4:
            inner = "".join(rng.choice(['a', '\\"', "\\\\", " ", "z"])
                            for _ in range(rng.randint(0, 8)))
            parts.append('"' + inner + '"')
        elif roll < 0.55:
            depth = rng.randint(1, 4)
            comment = "c"
            for _ in range(depth):
                comment = "(* " + comment + " *)"
            parts.append(comment)
        elif roll < 0.7:
            parts.append(rng.choice(["eval", "theory", "x'", "_tmp", "12345",
                                     "\\<alpha>", "\\<^item>", "\\<", "+=*"]))
        else:
            parts.append(rng.choice([" ", "\n", "\t", " . ", "(", ")"]))
    return " ".join(parts)


def test_tokenizer_round_trip_100_file_corpus():
    rng = random.Random(230_101)
    for index in range(100):
        text = corpus_file(rng)
        tokens = tokenize(text)
        assert "".join(t.source for t in tokens) == text, f"file {index} diverged"
        pos = 0
        for t in tokens:
            assert t.start == pos and t.end == pos + len(t.source)
            pos = t.end


def test_exponential_escape_law_up_to_depth_6():
    for depth in range(7):
        probe = '"'
        for _ in range(depth):
            probe = escape_embedded(probe)
        assert probe.count("\\") == 2 ** depth - 1
        lit = quote_depth_demo("x", depth)
        m = re.search(r'(\\*)"x', lit)
        assert m is not None and len(m.group(1)) == 2 ** depth - 1
        assert [t.kind.value for t in tokenize(lit)] == ["quoted-string"]


# -- criterion 6: protocol codec fuzz ------------------------------------------------


def test_codec_fuzz_10000_messages_random_chunking():
    rng = random.Random(7_654_321)
    remaining = 10_000
    while remaining > 0:
        batch = min(remaining, rng.randint(50, 400))
        remaining -= batch
        messages = []
        stream = bytearray()
        for _ in range(batch):
            chunks = [bytes(rng.randrange(256) for _ in range(rng.randint(0, 48)))
                      for _ in range(rng.randint(1, 10))]
            messages.append(chunks)
            stream.extend(encode_chunks(chunks))
        decoder = FrameDecoder()
        got = []
        pos = 0
        while pos < len(stream):
            step = rng.randint(1, 61)
            got.extend(decoder.feed(bytes(stream[pos:pos + step])))
            pos += step
        assert got == messages
        assert b"".join(encode_chunks(m) for m in got) == bytes(stream)
        assert not decoder.awaiting_input


# -- criterion 7: pretty printer laws --------------------------------------------------


def acceptance_tree(rng, depth=0):
    def atom():
        if depth < 3 and rng.random() < 0.3:
            return acceptance_tree(rng, depth + 1)
        return Str("x" * rng.randint(1, 26))

    items = [atom()]
    for _ in range(rng.randint(0, 5)):
        items.append(Break(rng.randint(0, 2), rng.randint(0, 3)))
        items.append(atom())
    return Block(rng.randint(0, 4), tuple(items), consistent=rng.random() < 0.4)


def test_pretty_laws_1000_random_trees_and_worked_example():
    rng = random.Random(31_337)
    for _ in range(1000):
        margin = rng.randint(4, 40)
        tree = acceptance_tree(rng)
        lines = format(tree, margin)
        for line in lines:
            content = line.lstrip(" ")
            if char_metric(content) > margin:
                assert "x" * (margin + 1) in content, (
                    f"line wider than margin without an over-wide atom: {line!r}")
        assert format(tree, 10 ** 9) == [unbroken(tree)]

    worked = Block(2, (Str("f("), Break(0, 0), Str("x)")), consistent=True)
    assert format(worked, 3) == ["f(", "  x)"]


# -- criterion 8: export round trip ----------------------------------------------------


def test_export_round_trip_with_xz_and_wildcards(tmp_path):
    for store in (MemoryExportStore(), SqliteExportStore(str(tmp_path / "e.db"))):
        payload = bytes(512 * 1024)
        store.put(ExportEntry("S", "T", "big/zeros.bin", payload, compressed=True))
        store.put(ExportEntry("S", "T", "big/more.bin", b"more", compressed=False))
        store.put(ExportEntry("S", "T", "top.txt", b"top", compressed=True))
        assert store.stored_size("S", "T", "big/zeros.bin") < len(payload)
        (zeros,) = store.retrieve("S", "T", "big/zeros.bin")
        assert zeros.payload == payload and zeros.compressed
        assert [e.name for e in store.retrieve("S", "T", "big/*")] == [
            "big/more.bin", "big/zeros.bin"]
        assert [e.name for e in store.retrieve("S", "T", "*")] == ["top.txt"]
        assert [e.name for e in store.retrieve("S", "T", "**")] == [
            "big/more.bin", "big/zeros.bin", "top.txt"]


# -- criterion 9: no external prover, property suites instead ----------------------------


def test_demo_checkers_stand_in_for_external_provers():
    """Scale figures from interactive proof corpora are out of reach by
    design: no prover process exists here.  The bundled checkers are the
    arithmetic/bibliography demos, and the contract is carried by the
    property suites in this module instead."""
    registry = builtin_registry()
    assert set(registry.extensions()) == {"bib", "ftl"}
    covering = {name for name in globals() if name.startswith("test_")}
    assert {"test_incremental_equals_scratch_500_trials",
            "test_single_block_edit_one_evaluation_and_move_zero",
            "test_superseding_edit_cancels_long_checker_within_2s"} <= covering
