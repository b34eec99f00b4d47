"""Executor for the asynchronous message-passing model.

Processes take atomic steps in scheduler-chosen order; a step optionally
consumes one in-flight message addressed to the stepping process, updates
state, and sends any number of messages.  At most one process may crash-stop,
after which it takes no further steps.  Fair schedulers keep every live
process stepping and deliver every message within a bounded window, which a
finite-horizon fairness check can audit on any recorded run.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, replace
from typing import Iterable, Optional, Sequence

from .core import (
    AdversimError,
    AsyncProtocol,
    EngineError,
    ExecutionTrace,
    FlpStep,
    LocalState,
    Pid,
)


class ScheduleError(AdversimError):
    """Scheduler produced an event the current state cannot accept."""


@dataclass(frozen=True, slots=True)
class InFlight:
    sender: Pid
    dest: Pid
    payload: bytes
    index: int  # global send order; doubles as the message id in traces
    sent_at: int  # step count when sent, for fairness ageing


@dataclass(frozen=True)
class AsyncSystemState:
    states: tuple[LocalState, ...]
    in_flight: tuple[InFlight, ...]
    crashed: Optional[Pid]
    next_index: int
    step_count: int

    @property
    def n(self) -> int:
        return len(self.states)

    def live(self) -> list[Pid]:
        return [q for q in range(self.n) if q != self.crashed]

    def addressed_to(self, pid: Pid) -> list[InFlight]:
        return [m for m in self.in_flight if m.dest == pid]

    def outputs(self) -> dict[Pid, int]:
        return {q: s.output for q, s in enumerate(self.states) if s.output is not None}


@dataclass(frozen=True)
class AsyncEvent:
    pid: Pid
    deliver: Optional[int] = None  # send index of the message to consume
    crash: bool = False


def initial_async_state(protocol: AsyncProtocol, inputs: Iterable[int]) -> AsyncSystemState:
    states = []
    for pid, b in enumerate(inputs):
        if b not in (0, 1):
            raise AdversimError(f"inputs must be binary, got {b!r}")
        states.append(LocalState(input=b, internal=protocol.init(pid, b)))
    if len(states) < 2:
        raise AdversimError("need at least 2 processes")
    return AsyncSystemState(
        states=tuple(states), in_flight=(), crashed=None, next_index=0, step_count=0
    )


def step_async(
    state: AsyncSystemState, protocol: AsyncProtocol, event: AsyncEvent
) -> tuple[AsyncSystemState, tuple[tuple[Pid, int], ...]]:
    """Apply one scheduler event; returns the new state and the outputs
    written during the step."""
    n = state.n
    if not 0 <= event.pid < n:
        raise ScheduleError(f"pid {event.pid} out of range")
    if event.crash:
        if state.crashed is not None:
            raise ScheduleError(f"second crash ({event.pid}); {state.crashed} already crashed")
        if event.deliver is not None:
            raise ScheduleError("a crash event delivers nothing")
        return (
            replace(state, crashed=event.pid, step_count=state.step_count + 1),
            (),
        )
    if event.pid == state.crashed:
        raise ScheduleError(f"crashed process {event.pid} cannot step")

    incoming = None
    in_flight = state.in_flight
    if event.deliver is not None:
        msg = next((m for m in in_flight if m.index == event.deliver), None)
        if msg is None:
            raise ScheduleError(f"message {event.deliver} is not in flight")
        if msg.dest != event.pid:
            raise ScheduleError(
                f"message {event.deliver} is addressed to {msg.dest}, not {event.pid}"
            )
        incoming = (msg.sender, msg.payload)
        in_flight = tuple(m for m in in_flight if m.index != event.deliver)

    local = state.states[event.pid]
    try:
        internal, sends, out = protocol.step(local.internal, incoming)
    except Exception as exc:  # noqa: BLE001 - protocol bug surfaced as engine error
        raise EngineError(f"step() failed: {exc}", round=state.step_count, pid=event.pid) from exc

    new_msgs = []
    next_index = state.next_index
    for dest, payload in sends:
        dests = [q for q in range(n) if q != event.pid] if dest is None else [dest]
        for d in dests:
            if d == event.pid:
                raise EngineError(
                    "a process never sends to itself", round=state.step_count, pid=event.pid
                )
            if not 0 <= d < n:
                raise EngineError(
                    f"send destination {d} out of range", round=state.step_count, pid=event.pid
                )
            new_msgs.append(
                InFlight(
                    sender=event.pid,
                    dest=d,
                    payload=payload,
                    index=next_index,
                    sent_at=state.step_count,
                )
            )
            next_index += 1

    before = local.output
    new_local = LocalState(local.input, internal, local.output).write(out)
    states = tuple(
        new_local if q == event.pid else s for q, s in enumerate(state.states)
    )
    wrote = ()
    if before is None and new_local.output is not None:
        wrote = ((event.pid, new_local.output),)
    new_state = AsyncSystemState(
        states=states,
        in_flight=in_flight + tuple(new_msgs),
        crashed=state.crashed,
        next_index=next_index,
        step_count=state.step_count + 1,
    )
    return new_state, wrote


# ---------------------------------------------------------------------------
# Schedulers
# ---------------------------------------------------------------------------


class Scheduler:
    """Chooses the next event.  Only ever delivers in-flight messages
    addressed to the process it steps."""

    def next_event(self, state: AsyncSystemState) -> AsyncEvent:
        raise NotImplementedError


def _oldest_addressed(state: AsyncSystemState, pid: Pid) -> Optional[int]:
    msgs = state.addressed_to(pid)
    return min((m.index for m in msgs), default=None)


class RoundRobinScheduler(Scheduler):
    """Cycle the live processes in ascending id order, always delivering the
    oldest message addressed to the stepped process."""

    def __init__(self, n: int, crash: Optional[tuple[Pid, int]] = None):
        self.n = n
        self.crash = crash
        self._pos = 0

    def next_event(self, state: AsyncSystemState) -> AsyncEvent:
        if self.crash is not None and state.crashed is None and state.step_count >= self.crash[1]:
            return AsyncEvent(pid=self.crash[0], crash=True)
        for _ in range(self.n):
            pid = self._pos % self.n
            self._pos += 1
            if pid != state.crashed:
                return AsyncEvent(pid=pid, deliver=_oldest_addressed(state, pid))
        raise ScheduleError("no live process to step")


class SeededFairScheduler(Scheduler):
    """Random but fair: steps the live processes in seeded shuffled batches
    (every live process steps at least once every 2n events) and always
    delivers the oldest message addressed to the stepped process."""

    def __init__(self, n: int, seed: int, crash: Optional[tuple[Pid, int]] = None):
        self.n = n
        self.rng = random.Random(seed)
        self.crash = crash
        self._batch: list[Pid] = []

    def next_event(self, state: AsyncSystemState) -> AsyncEvent:
        if self.crash is not None and state.crashed is None and state.step_count >= self.crash[1]:
            return AsyncEvent(pid=self.crash[0], crash=True)
        while True:
            if not self._batch:
                self._batch = state.live()
                self.rng.shuffle(self._batch)
            pid = self._batch.pop()
            if pid != state.crashed:
                return AsyncEvent(pid=pid, deliver=_oldest_addressed(state, pid))


class ScriptedScheduler(Scheduler):
    """Plays back a fixed event sequence (e.g. from a recorded trace)."""

    def __init__(self, events: Sequence[AsyncEvent]):
        self.events = list(events)
        self._pos = 0

    def next_event(self, state: AsyncSystemState) -> AsyncEvent:
        if self._pos >= len(self.events):
            raise ScheduleError("scheduler script exhausted")
        event = self.events[self._pos]
        self._pos += 1
        return event


def make_scheduler(
    kind: str,
    n: int,
    seed: Optional[int] = None,
    script: Optional[Sequence[AsyncEvent]] = None,
    crash: Optional[tuple[Pid, int]] = None,
) -> Scheduler:
    if kind == "round-robin":
        return RoundRobinScheduler(n, crash=crash)
    if kind == "seeded-random-fair":
        if seed is None:
            raise AdversimError("seeded-random-fair scheduler requires a seed")
        return SeededFairScheduler(n, seed, crash=crash)
    if kind == "scripted":
        if script is None:
            raise AdversimError("scripted scheduler requires a script")
        return ScriptedScheduler(script)
    raise AdversimError(f"unknown scheduler kind {kind!r}")


def scheduler_events_from_trace(trace: ExecutionTrace) -> list[AsyncEvent]:
    if trace.model != "flp":
        raise AdversimError("only flp traces script a scheduler")
    return [AsyncEvent(pid=s.pid, deliver=s.deliver, crash=s.crash) for s in trace.steps]


def scripted_scheduler_from_file(path) -> ScriptedScheduler:
    """Read a JSONL event script (same record schema as flp trace steps)."""
    import json

    from .core import TraceFormatError, _parse_step

    events = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise TraceFormatError(f"script line {lineno}: {exc}") from None
            step = _parse_step("flp", record, lineno)
            events.append(AsyncEvent(pid=step.pid, deliver=step.deliver, crash=step.crash))
    return ScriptedScheduler(events)


# ---------------------------------------------------------------------------
# Run loop with optional fairness audit
# ---------------------------------------------------------------------------


@dataclass
class FairnessReport:
    ok: bool
    violations: list[str]


@dataclass
class AsyncRunResult:
    trace: ExecutionTrace
    final_state: AsyncSystemState
    fairness: Optional[FairnessReport] = None
    states: Optional[tuple[AsyncSystemState, ...]] = None


def run_async(
    inputs: Iterable[int],
    protocol: AsyncProtocol,
    scheduler: Scheduler,
    horizon: int,
    fairness_window: Optional[int] = None,
    keep_states: bool = False,
) -> AsyncRunResult:
    """Drive ``horizon`` scheduler events and record the trace.

    With ``fairness_window`` set, audits the run: every live process must
    step, and every message addressed to a live process must be delivered,
    within that many events.  (Messages addressed to a crashed process can
    never be delivered and are exempt.)
    """
    if horizon < 0:
        raise AdversimError("horizon must be >= 0")
    state = initial_async_state(protocol, tuple(inputs))
    steps: list[FlpStep] = []
    kept = [state] if keep_states else None
    violations: list[str] = []
    reported_msgs: set[int] = set()
    reported_pids: set[Pid] = set()
    last_stepped = {q: 0 for q in range(state.n)}

    for _ in range(horizon):
        event = scheduler.next_event(state)
        state, wrote = step_async(state, protocol, event)
        steps.append(
            FlpStep(pid=event.pid, deliver=event.deliver, crash=event.crash, outputs=wrote)
        )
        if kept is not None:
            kept.append(state)
        if not event.crash:
            last_stepped[event.pid] = state.step_count
        if fairness_window is not None:
            now = state.step_count
            for q in state.live():
                if now - last_stepped[q] > fairness_window and q not in reported_pids:
                    violations.append(
                        f"process {q} unstepped for more than {fairness_window} steps at step {now}"
                    )
                    reported_pids.add(q)
            for m in state.in_flight:
                if (
                    m.dest != state.crashed
                    and now - m.sent_at > fairness_window
                    and m.index not in reported_msgs
                ):
                    violations.append(
                        f"message {m.index} to process {m.dest} undelivered after "
                        f"{fairness_window} steps"
                    )
                    reported_msgs.add(m.index)

    trace = ExecutionTrace(
        model="flp",
        n=state.n,
        protocol=protocol.protocol_id,
        inputs=tuple(s.input for s in state.states),
        steps=tuple(steps),
    )
    fairness = None
    if fairness_window is not None:
        fairness = FairnessReport(ok=not violations, violations=violations)
    return AsyncRunResult(
        trace=trace,
        final_state=state,
        fairness=fairness,
        states=tuple(kept) if kept else None,
    )


def replay_flp_steps(trace: ExecutionTrace, protocol: AsyncProtocol):
    """Re-execute a recorded event sequence; outputs written per step."""
    state = initial_async_state(protocol, trace.inputs)
    per_step = []
    for step in trace.steps:
        state, wrote = step_async(
            state, protocol, AsyncEvent(pid=step.pid, deliver=step.deliver, crash=step.crash)
        )
        per_step.append(wrote)
    return per_step
