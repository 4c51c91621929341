"""Per-run event streams.

Every long-running action publishes a strictly ordered event sequence under
its run id. Subscribers attach at any time: a late subscriber first gets one
synthetic snapshot event reconstructing current run state, then the live
tail. A reconnecting subscriber that presents its last seen sequence number
gets the raw tail from that point instead.

Event kinds and payloads:
- run_started        {run_id, run_kind, version_index, total_tests}
- test_started       {run_id, test_id}
- test_finished      {run_id, test_id, overall, pass_count, fail_count}
- iteration_finished {run_id, iteration_index, pass_count, fail_count, repair_version?}
- paused             {version_index}
- drift_event        {event_id, newly_failing_tests}
- run_finished       {run_id, converged?, total, passed, failed}
- run_error          {code, message}
- snapshot           (synthetic; reduced state, never stored)
"""

from __future__ import annotations

import json
import queue
import threading
from dataclasses import dataclass
from typing import Any, Callable, Iterator, Mapping, Sequence

from .clock import SYSTEM_CLOCK, Clock
from .errors import RunStateError
from .model import Verdict, to_iso
from .runner import RunObserver

EVENT_KINDS = (
    "run_started",
    "test_started",
    "test_finished",
    "iteration_finished",
    "paused",
    "drift_event",
    "run_finished",
    "run_error",
)
TERMINAL_KINDS = ("run_finished", "run_error")
SNAPSHOT_KIND = "snapshot"


@dataclass(frozen=True)
class StreamEvent:
    seq: int
    run_id: str
    kind: str
    payload: Mapping[str, Any]
    created_at: str

    def to_dict(self) -> dict:
        return {
            "seq": self.seq,
            "run_id": self.run_id,
            "kind": self.kind,
            "payload": dict(self.payload),
            "created_at": self.created_at,
        }


def sse_format(event: StreamEvent) -> str:
    """One event in server-sent-events wire form."""
    data = json.dumps(event.to_dict(), separators=(",", ":"))
    return f"id: {event.seq}\nevent: {event.kind}\ndata: {data}\n\n"


_CLOSE = object()


class EventBus:
    """In-memory fan-out with an optional durable sink.

    The sink (the store's event log) is written before fan-out, so no
    subscriber ever sees an event that did not reach disk. One producer per
    run keeps sequences gapless.
    """

    def __init__(
        self,
        sink: Callable[[str, str, Mapping[str, Any]], None] | None = None,
        clock: Clock = SYSTEM_CLOCK,
    ):
        self._sink = sink
        self._clock = clock
        self._lock = threading.Lock()
        self._buffers: dict[str, list[StreamEvent]] = {}
        self._subscribers: dict[str, list[queue.SimpleQueue]] = {}
        self._closed: set[str] = set()

    def publish(self, run_id: str, kind: str, payload: Mapping[str, Any]) -> StreamEvent:
        if kind not in EVENT_KINDS:
            raise RunStateError(f"unknown event kind {kind!r}")
        with self._lock:
            if run_id in self._closed:
                raise RunStateError(f"run {run_id!r} stream is closed")
        if self._sink is not None:
            self._sink(run_id, kind, payload)
        with self._lock:
            buffer = self._buffers.setdefault(run_id, [])
            event = StreamEvent(
                seq=len(buffer) + 1,
                run_id=run_id,
                kind=kind,
                payload=dict(payload),
                created_at=to_iso(self._clock.now()),
            )
            buffer.append(event)
            subscribers = list(self._subscribers.get(run_id, ()))
            terminal = kind in TERMINAL_KINDS
            if terminal:
                self._closed.add(run_id)
                self._subscribers.pop(run_id, None)
        for q in subscribers:
            q.put(event)
            if terminal:
                q.put(_CLOSE)
        return event

    def events(self, run_id: str) -> tuple[StreamEvent, ...]:
        """The full ordered log published so far."""
        with self._lock:
            return tuple(self._buffers.get(run_id, ()))

    def is_closed(self, run_id: str) -> bool:
        with self._lock:
            return run_id in self._closed

    def reopen(self, run_id: str) -> None:
        """Arm a closed stream for more events. Used when a suspended job
        resumes: the buffer and sequence numbering continue where the
        terminal event left them."""
        with self._lock:
            self._closed.discard(run_id)

    def subscribe(self, run_id: str, after_seq: int | None = None) -> Iterator[StreamEvent]:
        """Yield events until the run's terminal event.

        after_seq None: snapshot-then-tail (fresh subscriber).
        after_seq >= 0: raw replay of events with seq > after_seq, then the
        tail (0 replays everything; a reconnect passes its last seen id).

        The subscription registers before this returns, so events published
        after the call are never missed even if iteration starts later.
        """
        with self._lock:
            backlog = list(self._buffers.get(run_id, ()))
            closed = run_id in self._closed
            q: queue.SimpleQueue | None = None
            if not closed:
                q = queue.SimpleQueue()
                self._subscribers.setdefault(run_id, []).append(q)
        return self._stream(run_id, backlog, q, after_seq)

    def _stream(
        self,
        run_id: str,
        backlog: list[StreamEvent],
        q: queue.SimpleQueue | None,
        after_seq: int | None,
    ) -> Iterator[StreamEvent]:
        try:
            if after_seq is not None:
                for event in backlog:
                    if event.seq > after_seq:
                        yield event
            elif backlog:
                yield StreamEvent(
                    seq=backlog[-1].seq,
                    run_id=run_id,
                    kind=SNAPSHOT_KIND,
                    payload=reduce_run_state(backlog),
                    created_at=to_iso(self._clock.now()),
                )
            if q is None:
                return
            while True:
                item = q.get()
                if item is _CLOSE:
                    return
                yield item
        finally:
            with self._lock:
                subscribers = self._subscribers.get(run_id)
                if subscribers and q in subscribers:
                    subscribers.remove(q)


class PublishingObserver(RunObserver):
    """Maps evaluation callbacks onto bus events under one stream id.

    Emits test, iteration and pause events only. The stream's own
    run_started / run_finished / run_error envelope is the orchestrator's
    job, because an optimization job runs many evaluation passes under a
    single stream.
    """

    def __init__(self, bus: EventBus, stream_id: str):
        self.bus = bus
        self.stream_id = stream_id
        self._pass_count = 0
        self._fail_count = 0

    def on_run_started(self, run_id, run_kind, version_index):
        # fresh evaluation pass: running totals restart
        self._pass_count = 0
        self._fail_count = 0

    def on_test_started(self, run_id, test_id):
        self.bus.publish(
            self.stream_id, "test_started", {"run_id": run_id, "test_id": test_id}
        )

    def on_test_result(self, run_id, test, transcript, report, transcript_ref, verdict_ref):
        if report.overall is Verdict.PASS:
            self._pass_count += 1
        else:
            self._fail_count += 1
        self.bus.publish(
            self.stream_id,
            "test_finished",
            {
                "run_id": run_id,
                "test_id": test.id,
                "overall": report.overall.value,
                "pass_count": self._pass_count,
                "fail_count": self._fail_count,
            },
        )

    def on_iteration_finished(self, record):
        self.bus.publish(
            self.stream_id,
            "iteration_finished",
            {
                "run_id": record.run_record_ref,
                "iteration_index": record.iteration_index,
                "pass_count": record.pass_count,
                "fail_count": record.fail_count,
                "repair_version": record.repair_version,
            },
        )

    def on_paused(self, version_index):
        self.bus.publish(self.stream_id, "paused", {"version_index": version_index})


class CompositeObserver(RunObserver):
    """Fans every callback out to several observers in order."""

    def __init__(self, *observers: RunObserver):
        self.observers = observers

    def on_run_started(self, run_id, run_kind, version_index):
        for o in self.observers:
            o.on_run_started(run_id, run_kind, version_index)

    def on_test_started(self, run_id, test_id):
        for o in self.observers:
            o.on_test_started(run_id, test_id)

    def on_test_result(self, run_id, test, transcript, report, transcript_ref, verdict_ref):
        for o in self.observers:
            o.on_test_result(run_id, test, transcript, report, transcript_ref, verdict_ref)

    def on_run_finished(self, record):
        for o in self.observers:
            o.on_run_finished(record)

    def on_version_created(self, version):
        for o in self.observers:
            o.on_version_created(version)

    def on_iteration_finished(self, record):
        for o in self.observers:
            o.on_iteration_finished(record)

    def on_paused(self, version_index):
        for o in self.observers:
            o.on_paused(version_index)


def reduce_run_state(events: Sequence[StreamEvent]) -> dict:
    """Fold an event log into the current run state; the payload of the
    snapshot event and the reference reducer for UI clients."""
    state: dict[str, Any] = {
        "status": "pending",
        "run_kind": None,
        "version_index": None,
        "total_tests": None,
        "tests": {},
        "iterations": [],
        "pass_count": 0,
        "fail_count": 0,
        "paused_version": None,
        "converged": None,
        "drift_event_ids": [],
        "error": None,
        "last_seq": 0,
    }
    for event in events:
        payload = event.payload
        kind = event.kind
        if kind == "run_started":
            state["status"] = "running"
            state["run_kind"] = payload.get("run_kind")
            state["version_index"] = payload.get("version_index")
            state["total_tests"] = payload.get("total_tests")
        elif kind == "test_started":
            state["tests"][payload["test_id"]] = {"status": "running", "overall": None}
        elif kind == "test_finished":
            state["tests"][payload["test_id"]] = {
                "status": "finished",
                "overall": payload["overall"],
            }
            state["pass_count"] = payload.get("pass_count", state["pass_count"])
            state["fail_count"] = payload.get("fail_count", state["fail_count"])
        elif kind == "iteration_finished":
            state["iterations"].append(dict(payload))
            state["paused_version"] = None
            if payload.get("repair_version") is not None:
                state["version_index"] = payload["repair_version"]
        elif kind == "paused":
            state["status"] = "paused"
            state["paused_version"] = payload.get("version_index")
        elif kind == "drift_event":
            state["drift_event_ids"].append(payload.get("event_id"))
        elif kind == "run_finished":
            state["status"] = "finished"
            state["converged"] = payload.get("converged")
        elif kind == "run_error":
            state["status"] = "errored"
            state["error"] = payload.get("code")
        state["last_seq"] = event.seq
        if kind == "paused":
            continue
        if state["status"] == "paused" and kind not in TERMINAL_KINDS:
            # any activity after a pause means the run resumed
            state["status"] = "running"
    return state


def replay_summary(events: Sequence[StreamEvent], run_id: str | None = None) -> dict:
    """Reconstruct a RunRecord summary from test_finished events. For
    optimization streams, pass the inner evaluation run id to select one
    pass; the last evaluation's events win otherwise."""
    per_test: dict[str, str] = {}
    selected = run_id
    if selected is None:
        for event in events:
            if event.kind == "test_finished":
                selected = event.payload.get("run_id")
    for event in events:
        if event.kind != "test_finished":
            continue
        if selected is not None and event.payload.get("run_id") != selected:
            continue
        per_test[event.payload["test_id"]] = event.payload["overall"]
    passed = sum(1 for v in per_test.values() if v == "PASS")
    return {"total": len(per_test), "passed": passed, "failed": len(per_test) - passed}
