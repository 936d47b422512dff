from __future__ import annotations

import inspect
import io
import threading
import time
from decimal import Decimal

import pytest
from websockets.sync.server import serve

from haai import Engine, errors
from haai.boundary import (CollectSink, EventQueue, ReplaySource, Runtime, SinkAdapter,
                           SourceAdapter, StdinSource, StdoutSink, TimerSource, WebSocketSink,
                           WebSocketSource, decode_payload, encode_payload, load_script)
from haai.fixtures import fixture_source
from haai.model import Pair

from support import make_engine, write_script


# --- payloads ---------------------------------------------------------------

def test_payload_decoding():
    assert decode_payload("270.0") == Decimal("270.0")
    assert decode_payload('{"pair": [1, "a"]}') == Pair(1, "a")
    assert decode_payload("[1, true]") == (1, True)
    for bad in ("nope", "NaN", '{"x": 1}'):
        with pytest.raises(errors.BadPayload):
            decode_payload(bad)


def test_payload_encoding():
    assert encode_payload(Decimal("26.85")) == "26.85"
    assert encode_payload(Pair(1, (2, 3))) == '{"pair":[1,[2,3]]}'


# --- queue --------------------------------------------------------------------

def test_live_events_from_distinct_sources_share_a_batch():
    q = EventQueue()
    q.put("a", 1)
    q.put("b", 2)
    q.put("a", 3)
    first = q.next_batch(blocking=False)
    assert [(e.source, e.value) for e in first] == [("a", 1), ("b", 2)]
    assert [(e.source, e.value) for e in q.next_batch(blocking=False)] == [("a", 3)]
    assert q.next_batch(blocking=False) is None


def test_put_after_handout_starts_new_batch():
    q = EventQueue()
    q.put("a", 1)
    q.next_batch(blocking=False)
    ev = q.put("b", 2)
    assert ev.batch == 1


def test_explicit_batches_come_out_in_order():
    q = EventQueue()
    q.enqueue("x", "late", 5)
    q.enqueue("x", "early", 2)
    q.enqueue("y", "early-y", 2)
    assert [e.value for e in q.next_batch(blocking=False)] == ["early", "early-y"]
    assert [e.value for e in q.next_batch(blocking=False)] == ["late"]


def test_blocking_timeout_and_close():
    q = EventQueue()
    t0 = time.monotonic()
    assert q.next_batch(timeout=0.05) is None
    assert time.monotonic() - t0 >= 0.04
    q.close()
    assert q.next_batch() is None
    with pytest.raises(errors.QueueClosed):
        q.put("a", 1)


def test_concurrent_producers_keep_per_source_order():
    q = EventQueue()

    def producer(name: str) -> None:
        for i in range(100):
            q.put(name, i)
    threads = [threading.Thread(target=producer, args=(n,)) for n in "abc"]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    seen: dict[str, list[int]] = {"a": [], "b": [], "c": []}
    while (batch := q.next_batch(blocking=False)) is not None:
        assert len({e.source for e in batch}) == len(batch)
        for e in batch:
            seen[e.source].append(e.value)
    assert all(v == list(range(100)) for v in seen.values())


# --- replay -----------------------------------------------------------------

def test_load_script_errors(tmp_path):
    with pytest.raises(errors.ScriptNotFound):
        load_script(tmp_path / "missing.jsonl")
    bad = tmp_path / "bad.jsonl"
    bad.write_text('{"batch": 0, "source": "x"}\n')
    with pytest.raises(errors.BadPayload):
        load_script(bad)


def run_listing3(script) -> tuple[list, list[str]]:
    eng = Engine()
    rt = Runtime(eng, replay=True)
    lines: list[str] = []
    rt.listeners.append(lambda r: lines.extend(r.trace_lines()))
    rt.load(fixture_source("listing3"))
    ReplaySource.from_file(script).feed(rt.queue)
    rt.drain()
    sink = rt.sinks[eng.signal("output").id]
    assert isinstance(sink, CollectSink)
    return sink.buffer, lines


def test_replay_listing3_freezing(tmp_path):
    script = write_script(tmp_path / "s.jsonl", [
        (0, "ws-in:localhost:3333", 270.0),
        (1, "ws-in:localhost:3333", 280.0),
        (2, "temperature", 273.15),
    ])
    values, lines = run_listing3(script)
    assert values == [True, False, False]
    again = run_listing3(script)
    assert again[1] == lines


def test_replay_does_not_start_live_adapters():
    eng = make_engine("listing3")
    rt = Runtime(eng, replay=True)
    rt.attach()
    assert rt.sources == {}


def test_sink_delivery_follows_emission_order():
    eng = Engine()
    buf = io.StringIO()
    rt = Runtime(eng, replay=True, stdout=buf)
    rt.load('(def x (manual-in "x")) (def o (stdout-out (* x 2)))')
    for v in [3, 1, 2]:
        rt.queue.put("x", v)
    rt.drain()
    assert buf.getvalue().split() == ["6", "2", "4"]


def test_unknown_source_events_are_dropped(caplog):
    rt = Runtime(Engine(), replay=True)
    rt.queue.put("ghost", 1)
    report = rt.step(blocking=False)
    assert report is not None and report.recomputed_count == 0
    assert "ghost" in caplog.text


# --- adapters -----------------------------------------------------------------

def test_adapters_never_receive_the_engine():
    for cls in (SourceAdapter, TimerSource, StdinSource, WebSocketSource, SinkAdapter,
                CollectSink, StdoutSink, WebSocketSink):
        params = inspect.signature(cls.__init__).parameters
        assert "engine" not in params
        assert all(p.annotation not in ("Engine", Engine) for p in params.values())


def test_timer_source_ticks():
    q = EventQueue()
    t = TimerSource("timer:5", q.put, 5)
    t.start()
    time.sleep(0.06)
    t.stop()
    ticks = []
    while (batch := q.next_batch(blocking=False)) is not None:
        ticks += [e.value for e in batch]
    assert len(ticks) >= 3 and ticks == list(range(len(ticks)))
    with pytest.raises(ValueError):
        TimerSource("timer:0", q.put, 0)


def test_stdin_source_lines():
    q = EventQueue()
    s = StdinSource("stdin-lines:x", q.put, io.StringIO('1\nhello\n{"pair": [1, 2]}\n'))
    s.start()
    s.stop()
    got = []
    while (batch := q.next_batch(blocking=False)) is not None:
        got += [e.value for e in batch]
    assert got == [1, "hello", Pair(1, 2)]


@pytest.fixture
def ws_server():
    """Local server that sends scripted frames and records what it receives."""
    received: list[str] = []
    outgoing: list[str] = []

    def handler(conn):
        for frame in outgoing:
            conn.send(frame)
        try:
            for msg in conn:
                received.append(msg)
        except Exception:
            pass

    with serve(handler, "127.0.0.1", 0) as server:
        thread = threading.Thread(target=server.serve_forever, daemon=True)
        thread.start()
        port = server.socket.getsockname()[1]
        yield f"127.0.0.1:{port}", outgoing, received
        server.shutdown()
    thread.join(2)


def wait_for(cond, timeout: float = 3.0) -> bool:
    end = time.monotonic() + timeout
    while time.monotonic() < end:
        if cond():
            return True
        time.sleep(0.01)
    return False


def test_websocket_source_decodes_and_drops_bad_frames(ws_server):
    address, outgoing, _ = ws_server
    outgoing += ["1", "not json", "2.5"]
    q = EventQueue()
    src = WebSocketSource(f"ws-in:{address}", q.put, address)
    src.start()
    assert wait_for(lambda: len(q) == 2)
    src.stop()
    got = []
    while (batch := q.next_batch(blocking=False)) is not None:
        got += [e.value for e in batch]
    assert got == [1, Decimal("2.5")]


def test_websocket_source_connect_failure():
    with pytest.raises(errors.ConnectFailed):
        WebSocketSource("ws-in:x", EventQueue().put, "127.0.0.1:1").start()


def test_websocket_sink_sends_json(ws_server):
    address, _, received = ws_server
    sink = WebSocketSink(address)
    sink.deliver(True)
    sink.deliver(Decimal("26.85"))
    assert wait_for(lambda: len(received) == 2)
    sink.close()
    assert received == ["true", "26.85"]


def test_websocket_sink_drops_after_retries(caplog):
    sink = WebSocketSink("127.0.0.1:1")
    sink.deliver(1)
    assert sink.dropped == 1
    assert "WriteFailed" in caplog.text


def test_live_runtime_with_websockets(ws_server):
    address, outgoing, received = ws_server
    outgoing += ["270.0", "300"]
    eng = make_engine("listing1", program=(
        f'(def t (ws-in "{address}")) (def f (negative? (to-celsius t))) '
        f'(def o (ws-out "{address}" f))'))
    rt = Runtime(eng, window=0.0)
    rt.attach()
    try:
        def pumped() -> bool:
            rt.step(timeout=0.05)
            return len(received) >= 2
        assert wait_for(pumped)
    finally:
        rt.close()
    assert received[:2] == ["true", "false"]
