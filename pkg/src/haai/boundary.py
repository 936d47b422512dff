"""Data producing and consuming reactors: the only route between a program and the world.

Adapters never see the engine. Sources get a ``put`` callable that feeds the
event queue; sinks get values from sealed turn reports.
"""

from __future__ import annotations

import heapq
import itertools
import json
import logging
import os
import sys
import threading
import time
from dataclasses import dataclass, field
from decimal import Decimal
from pathlib import Path
from typing import Any, Callable, Iterable, TextIO

from . import errors
from .engine import Engine, TurnReport
from .model import display, from_json, to_json

log = logging.getLogger(__name__)

Put = Callable[[str, Any], None]


def poll_interval() -> float:
    """Live batching window in seconds (``HAAI_POLL_MS``, default 10)."""
    return int(os.environ.get("HAAI_POLL_MS", "10")) / 1000.0


def decode_payload(text: str) -> Any:
    try:
        raw = json.loads(text, parse_float=Decimal)
    except json.JSONDecodeError as exc:
        raise errors.BadPayload(f"not JSON: {exc.msg}") from None
    return from_json(raw)


def encode_payload(value: Any) -> str:
    return json.dumps(to_json(value), separators=(",", ":"))


# --- event queue ----------------------------------------------------------

@dataclass(order=True)
class ExternalEvent:
    batch: int
    seq: int = field(compare=True)
    source: str = field(compare=False, default="")
    value: Any = field(compare=False, default=None)


class EventQueue:
    """Thread-safe handoff to the turn executor, FIFO by batch id."""

    def __init__(self) -> None:
        self._cv = threading.Condition()
        self._heap: list[ExternalEvent] = []
        self._seq = itertools.count()
        self._floor = 0  # oldest batch id not yet handed out
        self._last: dict[str, int] = {}
        self._closed = False

    @property
    def closed(self) -> bool:
        return self._closed

    def __len__(self) -> int:
        with self._cv:
            return len(self._heap)

    def enqueue(self, source: str, value: Any, batch: int) -> ExternalEvent:
        """Add an event with an explicit batch id (replay scripts)."""
        with self._cv:
            if self._closed:
                raise errors.QueueClosed("event queue is closed")
            ev = ExternalEvent(batch, next(self._seq), source, value)
            heapq.heappush(self._heap, ev)
            self._last[source] = max(self._last.get(source, -1), batch)
            self._cv.notify_all()
            return ev

    def put(self, source: str, value: Any) -> ExternalEvent:
        """Add a live event; a repeated source spills into the following batch."""
        with self._cv:
            batch = max(self._floor, self._last.get(source, -1) + 1)
        return self.enqueue(source, value, batch)

    def next_batch(self, blocking: bool = True, timeout: float | None = None,
                   window: float = 0.0) -> list[ExternalEvent] | None:
        """Remove and return every event of the oldest batch.

        Returns ``None`` when nothing arrives (non-blocking, timeout, or closed
        and drained). ``window`` lets simultaneous live events coalesce.
        """
        with self._cv:
            if blocking:
                deadline = None if timeout is None else time.monotonic() + timeout
                while not self._heap and not self._closed:
                    remaining = None if deadline is None else deadline - time.monotonic()
                    if remaining is not None and remaining <= 0:
                        return None
                    self._cv.wait(remaining)
            if not self._heap:
                return None
        if window > 0:
            time.sleep(window)
        with self._cv:
            oldest = self._heap[0].batch
            out = []
            while self._heap and self._heap[0].batch == oldest:
                out.append(heapq.heappop(self._heap))
            self._floor = max(self._floor, oldest + 1)
            return out

    def close(self) -> None:
        with self._cv:
            self._closed = True
            self._cv.notify_all()


# --- sources --------------------------------------------------------------

class SourceAdapter:
    kind = "source"

    def __init__(self, source_id: str, put: Put):
        self.source_id = source_id
        self._put = put
        self._stop = threading.Event()
        self._thread: threading.Thread | None = None

    def start(self) -> None:
        self._thread = threading.Thread(target=self._run, name=self.source_id, daemon=True)
        self._thread.start()

    def stop(self, timeout: float = 1.0) -> None:
        self._stop.set()
        if self._thread is not None:
            self._thread.join(timeout)

    def emit(self, value: Any) -> None:
        try:
            self._put(self.source_id, value)
        except errors.QueueClosed:
            self._stop.set()

    def _run(self) -> None:
        raise NotImplementedError


class TimerSource(SourceAdapter):
    kind = "timer"

    def __init__(self, source_id: str, put: Put, period_ms: int):
        if period_ms <= 0:
            raise ValueError("timer period must be positive")
        super().__init__(source_id, put)
        self.period = period_ms / 1000.0

    def _run(self) -> None:
        for tick in itertools.count():
            self.emit(tick)
            if self._stop.wait(self.period):
                return


class StdinSource(SourceAdapter):
    """One event per line; JSON when it parses, otherwise the raw string."""

    kind = "stdin-lines"

    def __init__(self, source_id: str, put: Put, stream: TextIO | None = None):
        super().__init__(source_id, put)
        self.stream = stream if stream is not None else sys.stdin

    def _run(self) -> None:
        for line in self.stream:
            if self._stop.is_set():
                return
            line = line.rstrip("\n")
            try:
                value = decode_payload(line)
            except errors.BadPayload:
                value = line
            self.emit(value)


class WebSocketSource(SourceAdapter):
    """Client connection; each text frame carries one JSON value."""

    kind = "ws-in"

    def __init__(self, source_id: str, put: Put, address: str):
        super().__init__(source_id, put)
        self.url = address if "://" in address else f"ws://{address}"
        self._conn = None

    def start(self) -> None:
        from websockets.sync.client import connect
        try:
            self._conn = connect(self.url, open_timeout=5)
        except Exception as exc:  # socket, timeout and handshake failures alike
            raise errors.ConnectFailed(f"{self.url}: {exc}") from None
        super().start()

    def _run(self) -> None:
        from websockets.exceptions import ConnectionClosed
        conn = self._conn
        assert conn is not None
        while not self._stop.is_set():
            try:
                frame = conn.recv(timeout=0.1)
            except TimeoutError:
                continue
            except ConnectionClosed:
                log.info("%s: connection closed", self.url)
                return
            if isinstance(frame, bytes):
                frame = frame.decode("utf-8", errors="replace")
            try:
                value = decode_payload(frame)
            except errors.BadPayload as exc:
                log.warning("%s: dropped frame: %s", self.url, exc)
                continue
            self.emit(value)

    def stop(self, timeout: float = 1.0) -> None:
        super().stop(timeout)
        if self._conn is not None:
            self._conn.close()


def load_script(path: str | Path) -> list[tuple[int, str, Any]]:
    """Read a replay script: one ``{"batch", "source", "value"}`` object per line."""
    p = Path(path)
    if not p.is_file():
        raise errors.ScriptNotFound(f"replay script {str(p)!r} not found")
    events = []
    for lineno, line in enumerate(p.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line, parse_float=Decimal)
            events.append((int(rec["batch"]), str(rec["source"]), from_json(rec["value"])))
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise errors.BadPayload(f"{p}:{lineno}: bad replay record: {exc}") from None
    return events


class ReplaySource:
    """Feeds scripted batches verbatim."""

    kind = "replay"

    def __init__(self, events: Iterable[tuple[int, str, Any]]):
        self.events = list(events)

    @classmethod
    def from_file(cls, path: str | Path) -> ReplaySource:
        return cls(load_script(path))

    def feed(self, queue: EventQueue) -> int:
        for batch, source, value in self.events:
            queue.enqueue(source, value, batch)
        return len({b for b, _, _ in self.events})


# --- sinks ----------------------------------------------------------------

class SinkAdapter:
    kind = "sink"

    def deliver(self, value: Any) -> None:
        raise NotImplementedError

    def close(self) -> None:
        pass


class CollectSink(SinkAdapter):
    kind = "collect"

    def __init__(self) -> None:
        self.buffer: list[Any] = []

    def deliver(self, value: Any) -> None:
        self.buffer.append(value)


class StdoutSink(SinkAdapter):
    kind = "stdout"

    def __init__(self, stream: TextIO | None = None):
        self.stream = stream

    def deliver(self, value: Any) -> None:
        out = self.stream if self.stream is not None else sys.stdout
        print(display(value), file=out, flush=True)


class WebSocketSink(SinkAdapter):
    kind = "ws-out"
    attempts = 3

    def __init__(self, address: str):
        self.url = address if "://" in address else f"ws://{address}"
        self._conn = None
        self.dropped = 0

    def _connect(self):
        from websockets.sync.client import connect
        try:
            self._conn = connect(self.url, open_timeout=5)
        except Exception as exc:
            raise errors.ConnectFailed(f"{self.url}: {exc}") from None
        return self._conn

    def deliver(self, value: Any) -> None:
        payload = encode_payload(value)
        last: Exception | None = None
        for _ in range(self.attempts):
            try:
                conn = self._conn or self._connect()
                conn.send(payload)
                return
            except Exception as exc:
                last = exc
                self._conn = None
        self.dropped += 1
        log.warning("%s", errors.WriteFailed(f"{self.url}: dropped {payload} after "
                                             f"{self.attempts} attempts: {last}"))

    def close(self) -> None:
        if self._conn is not None:
            self._conn.close()
            self._conn = None


# --- runtime --------------------------------------------------------------

class Runtime:
    """Couples an engine to its queue, source adapters and sink adapters.

    In replay mode no live adapters are started: sources are fed only from
    the script, and network consumers collect instead of sending.
    """

    def __init__(self, engine: Engine, queue: EventQueue | None = None, *, replay: bool = False,
                 stdout: TextIO | None = None, window: float | None = None):
        self.engine = engine
        self.queue = queue if queue is not None else EventQueue()
        self.replay = replay
        self.stdout = stdout
        self.window = poll_interval() if window is None else window
        self.sources: dict[str, SourceAdapter] = {}
        self.sinks: dict[int, SinkAdapter] = {}
        self.reports: list[TurnReport] = []
        self.listeners: list[Callable[[TurnReport], None]] = []
        self._bound_sources = 0
        self._bound_consumers = 0

    def attach(self) -> None:
        """Create adapters for producers and consumers deployed since the last call."""
        for binding in self.engine.source_bindings[self._bound_sources:]:
            adapter = None if self.replay else self._make_source(binding.kind, binding.source_id,
                                                                 binding.config)
            if adapter is not None:
                adapter.start()
                self.sources[binding.source_id] = adapter
        self._bound_sources = len(self.engine.source_bindings)
        for binding in self.engine.consumers[self._bound_consumers:]:
            self.sinks.setdefault(binding.signal.id, self._make_sink(binding.kind, binding.config))
        self._bound_consumers = len(self.engine.consumers)

    def _make_source(self, kind: str, source_id: str, config: tuple) -> SourceAdapter | None:
        put = self.queue.put
        if kind == "ws-in":
            return WebSocketSource(source_id, put, str(config[0]))
        if kind == "timer":
            return TimerSource(source_id, put, int(config[0]))
        if kind == "stdin-lines":
            return StdinSource(source_id, put)
        return None  # manual-in: fed by :inject or scripts

    def _make_sink(self, kind: str, config: tuple) -> SinkAdapter:
        if kind == "ws-out" and not self.replay:
            return WebSocketSink(str(config[0]))
        if kind == "stdout-out":
            return StdoutSink(self.stdout)
        return CollectSink()

    def set_sink(self, signal_name: str, sink: SinkAdapter) -> None:
        self.sinks[self.engine.signal(signal_name).id] = sink

    def deliver(self, report: TurnReport) -> int:
        """Hand sealed emissions to sink adapters, in trace order."""
        n = 0
        for ev in report.events:
            if ev.kind == "emit":
                sink = self.sinks.get(ev.id)
                if sink is not None:
                    sink.deliver(ev.value)
                    n += 1
        return n

    def record(self, report: TurnReport) -> TurnReport:
        self.reports.append(report)
        self.attach()
        self.deliver(report)
        for listener in self.listeners:
            listener(report)
        return report

    def load(self, text: str, filename: str = "<input>") -> list[TurnReport]:
        reports = self.engine.load(text, filename)
        for r in reports:
            self.record(r)
        return reports

    def step(self, blocking: bool = True, timeout: float | None = None) -> TurnReport | None:
        events = self.queue.next_batch(blocking, timeout,
                                       window=0.0 if self.replay else self.window)
        if events is None:
            return None
        batch = []
        for ev in events:
            try:
                batch.append((self.engine.resolve_source(ev.source), ev.value))
            except errors.UnknownSource as exc:
                log.warning("dropping event: %s", exc)
        return self.record(self.engine.run_turn(batch))

    def drain(self) -> int:
        """Run turns until the queue is empty (replay mode)."""
        n = 0
        while self.step(blocking=False) is not None:
            n += 1
        return n

    def run_forever(self, stop: threading.Event | None = None) -> None:
        while stop is None or not stop.is_set():
            if self.step(timeout=0.1) is None and self.queue.closed:
                return

    def close(self) -> None:
        self.queue.close()
        for adapter in self.sources.values():
            adapter.stop()
        for sink in self.sinks.values():
            sink.close()
