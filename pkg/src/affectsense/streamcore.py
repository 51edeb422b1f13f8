"""Timestamped stream dataflow engine.

Messages are (payload, originating_time) envelopes moving through named
streams between components. Every component owns one worker thread, so its
receivers run serially; each stream delivers FIFO. The join and window
operators are watermark-driven: what they emit depends only on what the
input streams contained, never on thread interleaving, which is what makes
replay runs reproducible.
"""

from __future__ import annotations

import heapq
import itertools
import threading
from collections import deque
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Iterator

US_PER_SECOND = 1_000_000

DEFAULT_QUEUE_CAPACITY = 256

# The sensor/metric kinds plus derived kinds (pair/window) and auxiliary
# kinds for streams emitted by in-tree components.
PAYLOAD_KINDS = frozenset({
    "video_frame", "audio_buffer", "face_tracks", "emotion_scores",
    "hr_estimate", "resp_estimate", "vad_flag", "transcript", "prosody",
    "valence", "app_event", "calendar_event", "email_score",
    "input_activity", "metrics_row",
    "pose_keypoints", "speech_segment", "raw_event", "pair", "window",
    "language_sentiment",
})


def seconds(value: float) -> int:
    """Convert seconds to the integer microsecond timestamps streams use."""
    return int(round(value * US_PER_SECOND))


class UnknownStream(KeyError):
    """Emit or subscribe against a stream this pipeline never created."""


class NonMonotonicTimestamp(ValueError):
    """originating_time went backwards on a single stream."""


class CyclicGraph(ValueError):
    """The component/stream graph contains a cycle."""


class PipelineStateError(RuntimeError):
    """Operation not valid for the pipeline's current run state."""


class ComponentFailure(RuntimeError):
    """A component receiver or source raised; carries the original error."""

    def __init__(self, component: str, error: BaseException):
        super().__init__(f"component {component!r} failed: {error!r}")
        self.component = component
        self.error = error


@dataclass(frozen=True)
class Timestamped:
    """A payload stamped with its sensor-side originating time (microseconds)."""

    payload: Any
    originating_time: int


@dataclass(frozen=True)
class StreamDescriptor:
    name: str
    payload_kind: str


@dataclass(frozen=True)
class WindowSpec:
    """Fixed windowing over one stream: [start, start + length) half-open."""

    length: int
    hop: int
    alignment: str = "wall_clock"

    def __post_init__(self):
        if self.length <= 0 or self.hop <= 0:
            raise ValueError("window length and hop must be positive")
        if self.hop > self.length:
            raise ValueError("hop larger than length would skip messages")
        if self.alignment not in ("wall_clock", "first_message"):
            raise ValueError(f"unknown alignment {self.alignment!r}")


@dataclass
class StreamCounts:
    emitted: int = 0
    delivered: int = 0
    dropped: int = 0


@dataclass
class CompletionReport:
    """Per-stream message accounting for one pipeline run."""

    streams: dict[str, StreamCounts] = field(default_factory=dict)
    diagnostics: dict[str, int] = field(default_factory=dict)


class _Subscription:
    __slots__ = ("stream", "node", "handler", "capacity", "policy", "queue",
                 "delivered", "dropped", "close_notified")

    def __init__(self, stream, node, handler, capacity, policy):
        self.stream = stream
        self.node = node
        self.handler = handler
        self.capacity = capacity
        self.policy = policy
        self.queue: deque = deque()
        self.delivered = 0
        self.dropped = 0
        self.close_notified = False


class _Stream:
    __slots__ = ("desc", "last_t", "subs", "producers", "closed", "counts")

    def __init__(self, desc: StreamDescriptor):
        self.desc = desc
        self.last_t: int | None = None
        self.subs: list[_Subscription] = []
        self.producers: set[str] = set()
        self.closed = False
        self.counts = StreamCounts()


class _Node:
    __slots__ = ("name", "subs", "outputs", "flush", "on_input_closed",
                 "thread", "done", "flushed")

    def __init__(self, name: str, flush, on_input_closed=None):
        self.name = name
        self.subs: list[_Subscription] = []
        self.outputs: list[str] = []
        self.flush = flush
        self.on_input_closed = on_input_closed
        self.thread: threading.Thread | None = None
        self.done = False
        self.flushed = False


class Pipeline:
    """A named-stream dataflow graph that can be run to completion."""

    def __init__(self):
        self._lock = threading.Lock()
        self._cond = threading.Condition(self._lock)
        self._streams: dict[str, _Stream] = {}
        self._nodes: dict[str, _Node] = {}
        self._sources: list[tuple[str, Iterable]] = []
        self._seq = itertools.count()
        self._running = False
        self._stop = False
        self._abort: tuple[str, BaseException] | None = None
        self._end_time: int | None = None
        self._tls = threading.local()
        self._diag_hooks: list[Callable[[dict], None]] = []

    # ── graph construction ────────────────────────────────────────────────

    def create_stream(self, name: str, payload_kind: str) -> StreamDescriptor:
        if payload_kind not in PAYLOAD_KINDS:
            raise ValueError(f"unknown payload kind {payload_kind!r}")
        if name in self._streams:
            raise ValueError(f"stream {name!r} already exists")
        desc = StreamDescriptor(name, payload_kind)
        self._streams[name] = _Stream(desc)
        return desc

    def attach(self, name: str,
               inputs: dict[StreamDescriptor, Callable[[Any, int], None]],
               outputs: Iterable[StreamDescriptor] = (),
               flush: Callable[[int], None] | None = None,
               *, capacity: int | None = DEFAULT_QUEUE_CAPACITY,
               policy: str = "drop_oldest",
               on_input_closed: Callable[[StreamDescriptor], None] | None
               = None) -> None:
        """Register a component: per-input handlers plus declared outputs.

        Handlers are called as handler(payload, originating_time) on the
        component's worker thread. ``on_input_closed(desc)`` fires once per
        input as that stream closes and drains; ``flush(end_time)`` runs
        once after all of them have. Both may still emit.
        """
        if self._running:
            raise PipelineStateError("cannot attach while running")
        if name in self._nodes:
            raise ValueError(f"component {name!r} already attached")
        if policy not in ("drop_oldest", "block"):
            raise ValueError(f"unknown policy {policy!r}")
        node = _Node(name, flush, on_input_closed)
        for desc, handler in inputs.items():
            stream = self._require(desc)
            sub = _Subscription(stream, node, handler, capacity, policy)
            stream.subs.append(sub)
            node.subs.append(sub)
        for desc in outputs:
            stream = self._require(desc)
            stream.producers.add(name)
            node.outputs.append(desc.name)
        self._nodes[name] = node

    def subscribe(self, stream: StreamDescriptor,
                  handler: Callable[[Any, int], None], *,
                  name: str | None = None,
                  capacity: int | None = DEFAULT_QUEUE_CAPACITY,
                  policy: str = "drop_oldest") -> None:
        name = name or f"subscriber:{stream.name}#{len(self._nodes)}"
        self.attach(name, {stream: handler}, capacity=capacity, policy=policy)

    def collect(self, stream: StreamDescriptor,
                name: str | None = None) -> list[tuple[Any, int]]:
        """Subscribe a lossless list sink; handy for tests and demos."""
        sink: list[tuple[Any, int]] = []
        self.subscribe(stream, lambda p, t: sink.append((p, t)),
                       name=name or f"collect:{stream.name}#{len(self._nodes)}",
                       capacity=None)
        return sink

    def add_source(self, name: str, events: Iterable,
                   outputs: Iterable[StreamDescriptor]) -> None:
        """Register a source: an iterable of (descriptor, payload, time)."""
        if self._running:
            raise PipelineStateError("cannot add sources while running")
        if any(name == n for n, _ in self._sources) or name in self._nodes:
            raise ValueError(f"component {name!r} already attached")
        outs = list(outputs)
        for desc in outs:
            self._require(desc).producers.add(name)
        self._sources.append((name, events))

    # ── operators ─────────────────────────────────────────────────────────

    def join(self, a: StreamDescriptor, b: StreamDescriptor, tolerance: int,
             name: str | None = None) -> StreamDescriptor:
        """Pair each a-message with the nearest b-message within tolerance.

        At most one pair per a-message; ties resolve to the earlier b;
        unmatched a-messages are dropped and counted. Output time is the
        a-message's time.
        """
        if tolerance < 0:
            raise ValueError("tolerance must be non-negative")
        out_name = name or self._unique_stream_name(f"{a.name}&{b.name}")
        out = self.create_stream(out_name, "pair")
        op = _JoinOp(self, out, tolerance)
        self.attach(f"join:{out_name}", {a: op.on_left, b: op.on_right},
                    outputs=[out], flush=op.on_flush, capacity=None)
        self._diag_hooks.append(
            lambda d: d.__setitem__(f"{out_name}.unmatched", op.unmatched))
        return out

    def window(self, stream: StreamDescriptor, spec: WindowSpec,
               name: str | None = None) -> StreamDescriptor:
        """Emit the list of payloads per fixed window; empty windows emit []."""
        out_name = name or self._unique_stream_name(f"{stream.name}.windows")
        out = self.create_stream(out_name, "window")
        op = _WindowOp(self, out, spec)
        self.attach(f"window:{out_name}", {stream: op.on_message},
                    outputs=[out], flush=op.on_flush, capacity=None)
        return out

    # ── emission ──────────────────────────────────────────────────────────

    def emit(self, stream: StreamDescriptor, payload: Any, t: int) -> None:
        t = int(t)
        with self._cond:
            s = self._streams.get(stream.name)
            if s is None:
                raise UnknownStream(stream.name)
            if self._running:
                node = getattr(self._tls, "node", None)
                if node is not None and node not in s.producers:
                    raise PipelineStateError(
                        f"{node!r} emits to {stream.name!r} without declaring it")
            if s.last_t is not None and t < s.last_t:
                raise NonMonotonicTimestamp(
                    f"stream {stream.name!r}: {t} after {s.last_t}")
            s.last_t = t
            s.counts.emitted += 1
            msg = Timestamped(payload, t)
            for sub in s.subs:
                if sub.capacity is not None and sub.policy == "block":
                    while len(sub.queue) >= sub.capacity and not self._abort:
                        self._cond.wait()
                if self._abort:
                    return
                if sub.capacity is not None and len(sub.queue) >= sub.capacity:
                    sub.queue.popleft()
                    sub.dropped += 1
                    s.counts.dropped += 1
                sub.queue.append((next(self._seq), msg))
            self._cond.notify_all()

    # ── running ───────────────────────────────────────────────────────────

    def run(self, end_time: int | None = None) -> CompletionReport:
        """Drain all sources, flush every component, and report counts."""
        if self._running:
            raise PipelineStateError("pipeline already running")
        self._check_acyclic()
        self._running = True
        self._stop = False
        self._abort = None
        try:
            for node in self._nodes.values():
                node.thread = threading.Thread(
                    target=self._worker, args=(node,),
                    name=f"pipeline:{node.name}", daemon=True)
                node.thread.start()
            self._drive_sources()
            with self._cond:
                if end_time is not None:
                    self._end_time = end_time
                else:
                    seen = [s.last_t for s in self._streams.values()
                            if s.last_t is not None]
                    self._end_time = max(seen) if seen else 0
                for src_name, _ in self._sources:
                    self._producer_done(src_name)
                for s in self._streams.values():
                    if not s.producers:
                        s.closed = True
                self._cond.notify_all()
                while (not all(n.done for n in self._nodes.values())
                       and self._abort is None):
                    self._cond.wait()
            for node in self._nodes.values():
                if node.thread is not None:
                    node.thread.join(timeout=10.0)
        finally:
            self._running = False
        if self._abort is not None:
            component, error = self._abort
            raise ComponentFailure(component, error)
        return self._report()

    def request_stop(self) -> None:
        """Stop pulling from sources; the pipeline still drains and flushes."""
        with self._cond:
            self._stop = True
            self._cond.notify_all()

    # ── internals ─────────────────────────────────────────────────────────

    def _require(self, desc: StreamDescriptor) -> _Stream:
        s = self._streams.get(desc.name)
        if s is None:
            raise UnknownStream(desc.name)
        return s

    def _unique_stream_name(self, base: str) -> str:
        name, n = base, 1
        while name in self._streams:
            name = f"{base}.{n}"
            n += 1
        return name

    def _check_acyclic(self) -> None:
        edges: dict[str, set[str]] = {n: set() for n in self._nodes}
        for node in self._nodes.values():
            for out_name in node.outputs:
                for sub in self._streams[out_name].subs:
                    edges[node.name].add(sub.node.name)
        state: dict[str, int] = {}

        def visit(u: str, trail: list[str]) -> None:
            state[u] = 1
            trail.append(u)
            for v in edges[u]:
                if state.get(v, 0) == 1:
                    cycle = trail[trail.index(v):] + [v]
                    raise CyclicGraph(" -> ".join(cycle))
                if state.get(v, 0) == 0:
                    visit(v, trail)
            trail.pop()
            state[u] = 2

        for u in edges:
            if state.get(u, 0) == 0:
                visit(u, [])

    def _drive_sources(self) -> None:
        def keyed(idx: int, name: str, events: Iterable) -> Iterator:
            for seq, item in enumerate(events):
                desc, payload, t = item
                yield (int(t), idx, seq, name, desc, payload)

        merged = heapq.merge(*(keyed(i, n, ev)
                               for i, (n, ev) in enumerate(self._sources)))
        while True:
            with self._cond:
                if self._stop or self._abort:
                    return
            try:
                t, _, _, name, desc, payload = next(merged)
            except StopIteration:
                return
            except Exception as err:
                with self._cond:
                    if self._abort is None:
                        self._abort = ("sources", err)
                    self._cond.notify_all()
                return
            self._tls.node = name
            try:
                self.emit(desc, payload, t)
            except Exception as err:
                with self._cond:
                    if self._abort is None:
                        self._abort = (name, err)
                    self._cond.notify_all()
                return
            finally:
                self._tls.node = None

    def _producer_done(self, name: str) -> None:
        # caller holds the lock
        for s in self._streams.values():
            if name in s.producers:
                s.producers.discard(name)
                if not s.producers:
                    s.closed = True

    def _worker(self, node: _Node) -> None:
        self._tls.node = node.name
        while True:
            sub = msg = None
            closed_sub = None
            flush_now = False
            with self._cond:
                while True:
                    if self._abort is not None:
                        node.done = True
                        self._cond.notify_all()
                        return
                    best = None
                    for cand in node.subs:
                        if cand.queue:
                            seq, head = cand.queue[0]
                            key = (head.originating_time, seq)
                            if best is None or key < best[0]:
                                best = (key, cand)
                    if best is not None:
                        sub = best[1]
                        _, msg = sub.queue.popleft()
                        self._cond.notify_all()
                        break
                    closed_sub = next(
                        (c for c in node.subs
                         if c.stream.closed and not c.close_notified), None)
                    if closed_sub is not None:
                        closed_sub.close_notified = True
                        break
                    if all(s.stream.closed for s in node.subs):
                        flush_now = True
                        break
                    self._cond.wait()
            if closed_sub is not None:
                try:
                    if node.on_input_closed is not None:
                        node.on_input_closed(closed_sub.stream.desc)
                except Exception as err:
                    with self._cond:
                        if self._abort is None:
                            self._abort = (node.name, err)
                        node.done = True
                        self._cond.notify_all()
                    return
                continue
            if flush_now:
                try:
                    if node.flush is not None and not node.flushed:
                        node.flushed = True
                        node.flush(self._end_time or 0)
                except Exception as err:
                    with self._cond:
                        if self._abort is None:
                            self._abort = (node.name, err)
                        node.done = True
                        self._cond.notify_all()
                    return
                with self._cond:
                    self._producer_done(node.name)
                    node.done = True
                    self._cond.notify_all()
                return
            try:
                sub.handler(msg.payload, msg.originating_time)
            except Exception as err:
                with self._cond:
                    if self._abort is None:
                        self._abort = (node.name, err)
                    node.done = True
                    self._cond.notify_all()
                return
            with self._cond:
                sub.delivered += 1
                sub.stream.counts.delivered += 1

    def _report(self) -> CompletionReport:
        report = CompletionReport()
        for name, s in self._streams.items():
            report.streams[name] = s.counts
        for hook in self._diag_hooks:
            hook(report.diagnostics)
        return report


class _JoinOp:
    """Nearest-within-tolerance pairing, resolved by b-side watermark."""

    def __init__(self, pipeline: Pipeline, out: StreamDescriptor,
                 tolerance: int):
        self._p = pipeline
        self._out = out
        self._tol = tolerance
        self._pending: deque[tuple[Any, int]] = deque()
        self._buf: deque[tuple[Any, int]] = deque()
        self._b_watermark: int | None = None
        self.unmatched = 0

    def on_left(self, payload: Any, t: int) -> None:
        self._pending.append((payload, t))
        self._resolve(final=False)

    def on_right(self, payload: Any, t: int) -> None:
        self._buf.append((payload, t))
        self._b_watermark = t
        self._resolve(final=False)

    def on_flush(self, end_time: int) -> None:
        self._resolve(final=True)

    def _resolve(self, final: bool) -> None:
        while self._pending:
            pa, ta = self._pending[0]
            if not final and (self._b_watermark is None
                              or self._b_watermark <= ta + self._tol):
                return
            best = None
            for pb, tb in self._buf:
                if tb > ta + self._tol:
                    break
                dist = abs(tb - ta)
                if dist <= self._tol and (best is None or dist < best[0]):
                    best = (dist, pb, tb)
            self._pending.popleft()
            if best is None:
                self.unmatched += 1
            else:
                self._p.emit(self._out, (pa, best[1]), ta)
            if self._pending:
                next_ta = self._pending[0][1]
                while self._buf and self._buf[0][1] < next_ta - self._tol:
                    self._buf.popleft()


class _WindowOp:
    """Fixed windowing with hop; closes windows as the watermark passes."""

    def __init__(self, pipeline: Pipeline, out: StreamDescriptor,
                 spec: WindowSpec):
        self._p = pipeline
        self._out = out
        self._spec = spec
        self._buf: deque[tuple[Any, int]] = deque()
        self._next_start: int | None = None

    def on_message(self, payload: Any, t: int) -> None:
        spec = self._spec
        if self._next_start is None:
            if spec.alignment == "first_message":
                self._next_start = t
            else:
                self._next_start = ((t - spec.length) // spec.hop + 1) * spec.hop
        while t >= self._next_start + spec.length:
            self._close_one()
        self._buf.append((payload, t))

    def on_flush(self, end_time: int) -> None:
        if self._next_start is None:
            return
        while self._buf or self._next_start + self._spec.length <= end_time:
            self._close_one()

    def _close_one(self) -> None:
        start = self._next_start
        end = start + self._spec.length
        members = [p for p, t in self._buf if start <= t < end]
        self._p.emit(self._out, members, end)
        self._next_start = start + self._spec.hop
        while self._buf and self._buf[0][1] < self._next_start:
            self._buf.popleft()
