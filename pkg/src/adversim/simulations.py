"""Model reductions realized as protocol wrappers.

Three directions, each usable on its host engine and composable:

* ``fts-over-ftr`` - a three-phase gather (phase 1: broadcast your simulated
  message; phases 2 and 3: broadcast everything you have seen so far) that
  simulates one fail-to-send round on three fail-to-receive rounds.  Every
  simulated round, at least n-1 senders' messages reach everybody, so the
  delivered pattern always matches a single legal fail-to-send fault.
* ``ftr-over-flp`` - a synchronizer: broadcast your round-r message on
  entering round r, buffer messages from the future, discard stale ones, and
  advance once n-2 current-round messages are buffered.
* ``flp-over-ftr`` - piggybacked delivery: every real message carries the
  set of all simulated messages its sender has ever seen; a process delivers
  any simulated message addressed to itself the moment it first sees it.

The trivial fourth direction (a fail-to-send fault as a fail-to-receive
fault) is the one-line translator ``sync_engine.receive_fault_for``.
"""

from __future__ import annotations

import base64
import json
from dataclasses import dataclass
from typing import Any, Iterable, Mapping, Optional, Sequence

from .core import (
    AdversimError,
    AsyncProtocol,
    Configuration,
    ExecutionTrace,
    FtrStep,
    Pid,
    ReceiveFault,
    RoundFault,
    RoundProtocol,
    ValidationReport,
    validate_trace,
)
from .sync_engine import NO_FAULT


class EmulationLemmaViolation(AdversimError):
    """A simulated round left fewer than n-1 senders commonly delivered.
    Carries the three-phase fault script as a counterexample when known."""

    def __init__(self, message: str, script=None):
        if script is not None:
            message += f"; fault script: {[f.mapping for f in script]}"
        super().__init__(message)
        self.script = script


class ResourceLimitError(AdversimError):
    """A wrapper's accumulated message set outgrew its configured cap."""


# ---------------------------------------------------------------------------
# Wire codec for wrapper payloads: canonical JSON, bytes tagged as base64
# ---------------------------------------------------------------------------


def _enc(obj) -> bytes:
    return json.dumps(_enc_obj(obj), sort_keys=True, separators=(",", ":")).encode("utf-8")


def _enc_obj(obj):
    if isinstance(obj, bytes):
        return {"b": base64.b64encode(obj).decode("ascii")}
    if isinstance(obj, (list, tuple)):
        return [_enc_obj(x) for x in obj]
    if obj is None or isinstance(obj, (int, str)):
        return obj
    raise AdversimError(f"cannot encode {type(obj).__name__} on the wire")


def _dec(data: bytes):
    return _dec_obj(json.loads(data.decode("utf-8")))


def _dec_obj(obj):
    if isinstance(obj, dict):
        return base64.b64decode(obj["b"])
    if isinstance(obj, list):
        return tuple(_dec_obj(x) for x in obj)
    return obj


# ---------------------------------------------------------------------------
# fail-to-send over fail-to-receive: three-phase gather
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GetCoreState:
    pid: Pid
    inner: Any
    sim_round: int
    phase: int  # 1..3 within the current simulated round
    seen: frozenset  # (sender, payload) pairs gathered this simulated round
    last_delivery: Optional[tuple[int, tuple[Pid, ...]]] = None  # analysis aid


class GetCoreWrapper(RoundProtocol):
    """Runs a fail-to-send protocol on the fail-to-receive engine, three real
    rounds per simulated round.  Broadcasts accumulate: each phase a process
    sends everything it has gathered, own message included, which is what
    guarantees the common core of n-1 senders."""

    def __init__(self, inner: RoundProtocol, n: int):
        if n < 3:
            raise AdversimError("the three-phase gather needs n >= 3")
        self.inner = inner
        self.n = n
        self.protocol_id = f"fts-over-ftr:{inner.protocol_id}"

    def init(self, pid: Pid, input: int) -> GetCoreState:
        return GetCoreState(
            pid=pid, inner=self.inner.init(pid, input), sim_round=1, phase=1, seen=frozenset()
        )

    def message(self, internal: GetCoreState, round: int) -> bytes:
        own = (internal.pid, self.inner.message(internal.inner, internal.sim_round))
        return _enc(sorted(internal.seen | {own}))

    def transition(
        self, internal: GetCoreState, round: int, received: Mapping[Pid, bytes]
    ) -> tuple[GetCoreState, Optional[int]]:
        merged = set(internal.seen)
        for raw in received.values():
            for entry in _dec(raw):
                sender, payload = entry
                if sender != internal.pid:
                    merged.add((sender, payload))
        if internal.phase < 3:
            return (
                GetCoreState(
                    pid=internal.pid,
                    inner=internal.inner,
                    sim_round=internal.sim_round,
                    phase=internal.phase + 1,
                    seen=frozenset(merged),
                    last_delivery=internal.last_delivery,
                ),
                None,
            )
        delivered: dict[Pid, bytes] = {}
        for sender, payload in sorted(merged):
            if sender in delivered and delivered[sender] != payload:
                raise AdversimError(f"two payloads for sender {sender} in one simulated round")
            delivered[sender] = payload
        inner, out = self.inner.transition(internal.inner, internal.sim_round, delivered)
        return (
            GetCoreState(
                pid=internal.pid,
                inner=inner,
                sim_round=internal.sim_round + 1,
                phase=1,
                seen=frozenset(),
                last_delivery=(internal.sim_round, tuple(sorted(delivered))),
            ),
            out,
        )


def get_core_wrap(inner: RoundProtocol, n: int) -> RoundProtocol:
    return GetCoreWrapper(inner, n)


def core_set(delivery: Mapping[Pid, Iterable[Pid]], n: int) -> set[Pid]:
    """Senders whose simulated message every other process delivered."""
    return {
        s
        for s in range(n)
        if all(s in set(delivery[q]) for q in range(n) if q != s)
    }


def classify_delivery(delivery: Mapping[Pid, Iterable[Pid]], n: int) -> RoundFault:
    """Express one simulated round's delivery pattern as a fail-to-send
    fault, or fail if the pattern is outside the model (two distinct senders
    missed, i.e. the common core fell below n-1)."""
    missing: dict[Pid, list[Pid]] = {}
    for q in range(n):
        got = set(delivery[q])
        for s in range(n):
            if s != q and s not in got:
                missing.setdefault(s, []).append(q)
    if not missing:
        return NO_FAULT
    if len(missing) > 1:
        raise EmulationLemmaViolation(
            f"multiple senders missed in one simulated round: {sorted(missing)}"
        )
    ((sender, victims),) = missing.items()
    return RoundFault(sender, victims)


@dataclass(frozen=True)
class SimulatedRound:
    sim_round: int
    delivery: dict[Pid, tuple[Pid, ...]]
    core: tuple[Pid, ...]
    fault: RoundFault


def getcore_rounds(
    configs: Sequence[Configuration], faults: Optional[Sequence[ReceiveFault]] = None
) -> list[SimulatedRound]:
    """Per-simulated-round delivery reports from a kept-config wrapped run.

    ``configs`` must include the initial configuration; a simulated round
    completes every third real round.  Pass the run's fault sequence to get
    the offending three-phase script attached to any lemma violation."""
    if not configs:
        return []
    n = configs[0].n
    reports = []
    for i in range(3, len(configs), 3):
        states = configs[i].states
        script = None if faults is None else list(faults[i - 3 : i])
        delivery = {}
        sim_round = None
        for q in range(n):
            internal: GetCoreState = states[q].internal
            if internal.last_delivery is None:
                raise AdversimError("wrapped run out of phase: no delivery recorded")
            r, senders = internal.last_delivery
            sim_round = r if sim_round is None else sim_round
            if r != sim_round:
                raise AdversimError("wrapped run out of lockstep across processes")
            delivery[q] = tuple(s for s in senders if s != q)
        core = tuple(sorted(core_set(delivery, n)))
        if len(core) < n - 1:
            raise EmulationLemmaViolation(
                f"simulated round {sim_round}: core {core} smaller than n-1",
                script=script,
            )
        reports.append(
            SimulatedRound(
                sim_round=sim_round,
                delivery=delivery,
                core=core,
                fault=classify_delivery(delivery, n),
            )
        )
    return reports


# ---------------------------------------------------------------------------
# fail-to-receive over the asynchronous model: synchronizer
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SynchronizerState:
    pid: Pid
    inner: Any
    round: int
    started: bool
    buffer: frozenset  # (round, sender, payload) with round >= current
    # Completed rounds, for projection back onto the synchronous model:
    # (round, delivered (sender, payload) pairs, output emitted then).
    log: tuple = ()


class SynchronizerWrapper(AsyncProtocol):
    """Runs a fail-to-receive protocol in the asynchronous model.  A process
    broadcasts its round-r message on entering round r, buffers messages
    tagged with the current or a future round, discards stale ones, and
    advances as soon as n-2 current-round messages are buffered."""

    def __init__(self, inner: RoundProtocol, n: int):
        if n < 3:
            raise AdversimError("the synchronizer needs n >= 3")
        self.inner = inner
        self.n = n
        self.protocol_id = f"ftr-over-flp:{inner.protocol_id}"

    def init(self, pid: Pid, input: int) -> SynchronizerState:
        return SynchronizerState(
            pid=pid,
            inner=self.inner.init(pid, input),
            round=1,
            started=False,
            buffer=frozenset(),
        )

    def step(
        self, internal: SynchronizerState, incoming: Optional[tuple[Pid, bytes]]
    ) -> tuple[SynchronizerState, list, Optional[int]]:
        buffer = set(internal.buffer)
        if incoming is not None:
            sender, raw = incoming
            r, payload = _dec(raw)
            if r >= internal.round:
                buffer.add((r, sender, payload))
        inner = internal.inner
        round = internal.round
        log = internal.log
        sends = []
        output = None
        if not internal.started:
            sends.append((None, _enc((round, self.inner.message(inner, round)))))
        while True:
            current = sorted(
                (sender, payload) for (r, sender, payload) in buffer if r == round
            )
            if len(current) < self.n - 2:
                break
            received = dict(current)
            inner, out = self.inner.transition(inner, round, received)
            if output is None:
                output = out
            log = log + ((round, tuple(current), out),)
            buffer = {e for e in buffer if e[0] != round}
            round += 1
            sends.append((None, _enc((round, self.inner.message(inner, round)))))
        return (
            SynchronizerState(
                pid=internal.pid,
                inner=inner,
                round=round,
                started=True,
                buffer=frozenset(buffer),
                log=log,
            ),
            sends,
            output,
        )


def synchronizer_wrap(inner: RoundProtocol, n: int) -> AsyncProtocol:
    return SynchronizerWrapper(inner, n)


@dataclass
class SynchronizerProjection:
    """A synchronized run re-expressed as a fail-to-receive trace over all n
    simulated processes, truncated at the last round every live process
    completed.  A crashed process stops being simulated faithfully at its
    crash, so its outputs are exempted from the replay comparison; everything
    the survivors did must replay exactly."""

    trace: ExecutionTrace
    crashed: Optional[Pid]
    min_round: int
    completed_rounds: dict[Pid, int]
    report: ValidationReport


def project_synchronized_run(final_states, crashed: Optional[Pid], base: RoundProtocol, inputs) -> SynchronizerProjection:
    """Build and validate the fail-to-receive projection of a synchronized
    asynchronous run.  ``final_states`` are the per-process SynchronizerState
    values at the end of the run."""
    n = len(final_states)
    completed = {q: len(final_states[q].log) for q in range(n)}
    live = [q for q in range(n) if q != crashed]
    min_round = min(completed[q] for q in live) if live else 0

    steps = []
    for r in range(1, min_round + 1):
        dropped = {}
        outputs = []
        for q in range(n):
            if completed[q] < r:
                continue  # crashed mid-run; replay continues it unchecked
            round_no, received, out = final_states[q].log[r - 1]
            if round_no != r:
                raise AdversimError(f"process {q} log out of order at round {r}")
            senders = {s for s, _ in received}
            missing = [s for s in range(n) if s != q and s not in senders]
            if len(missing) > 1:
                raise AdversimError(
                    f"process {q} missed {len(missing)} senders in round {r}"
                )
            if missing:
                dropped[q] = missing[0]
            if out is not None:
                outputs.append((q, out))
        steps.append(
            FtrStep(round=r, fault=ReceiveFault(dropped), outputs=tuple(sorted(outputs)))
        )

    trace = ExecutionTrace(
        model="ftr",
        n=n,
        protocol=base.protocol_id,
        inputs=tuple(inputs),
        steps=tuple(steps),
    )
    ignore = (crashed,) if crashed is not None else ()
    report = validate_trace(trace, ignore_outputs=ignore)
    return SynchronizerProjection(
        trace=trace,
        crashed=crashed,
        min_round=min_round,
        completed_rounds=completed,
        report=report,
    )


# ---------------------------------------------------------------------------
# asynchronous model over fail-to-receive: piggybacked delivery
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PiggybackState:
    pid: Pid
    inner: Any
    started: bool
    next_seq: int
    # Own simulated sends: (seq, dest or None for broadcast, payload, round sent).
    my_sends: tuple = ()
    # Simulated messages learned from others: (sender, seq, dest, payload).
    others: frozenset = frozenset()
    # Deliveries consumed by this process: ((sender, seq), round delivered).
    delivered: tuple = ()


class PiggybackWrapper(RoundProtocol):
    """Runs an asynchronous protocol on the fail-to-receive engine.  Every
    real broadcast carries all simulated messages the sender has ever seen;
    a process delivers a simulated message addressed to itself the first
    time it sees one, in ascending (sender, sequence) order.  Each round a
    process delivers everything newly addressed to it, or takes one
    spontaneous step if nothing arrived, so the simulated processes keep
    taking steps forever."""

    def __init__(self, inner: AsyncProtocol, n: int, seen_cap: int = 100_000):
        if n < 3:
            raise AdversimError("piggybacked delivery needs n >= 3")
        self.inner = inner
        self.n = n
        self.seen_cap = seen_cap
        self.protocol_id = f"flp-over-ftr:{inner.protocol_id}"

    def init(self, pid: Pid, input: int) -> PiggybackState:
        return PiggybackState(
            pid=pid, inner=self.inner.init(pid, input), started=False, next_seq=0
        )

    def message(self, internal: PiggybackState, round: int) -> bytes:
        sends = [(seq, dest, payload) for seq, dest, payload, _ in internal.my_sends]
        return _enc((sends, sorted(internal.others, key=_entry_key)))

    def transition(
        self, internal: PiggybackState, round: int, received: Mapping[Pid, bytes]
    ) -> tuple[PiggybackState, Optional[int]]:
        others = set(internal.others)
        for sender, raw in received.items():
            their_sends, their_others = _dec(raw)
            for seq, dest, payload in their_sends:
                if sender != internal.pid:
                    others.add((sender, seq, dest, payload))
            for entry in their_others:
                if entry[0] != internal.pid:
                    others.add(tuple(entry))
        if len(others) + len(internal.my_sends) > self.seen_cap:
            raise ResourceLimitError(
                f"seen set exceeded cap of {self.seen_cap} simulated messages"
            )

        inner = internal.inner
        delivered_ids = {mid for mid, _ in internal.delivered}
        delivered = list(internal.delivered)
        outbox = []
        output = None
        stepped = False

        def take(step_incoming):
            nonlocal inner, output, stepped
            new_inner, sends, out = self.inner.step(inner, step_incoming)
            inner = new_inner
            outbox.extend(sends)
            stepped = True
            if output is None and out is not None:
                output = out

        if not internal.started:
            take(None)  # bootstrap step: first sends happen here

        pending = sorted(
            (
                entry
                for entry in others
                if (entry[0], entry[1]) not in delivered_ids
                and (entry[2] == internal.pid or entry[2] is None)
            ),
            key=_entry_key,
        )
        for sender, seq, dest, payload in pending:
            take((sender, payload))
            delivered.append(((sender, seq), round))
            delivered_ids.add((sender, seq))
        if not stepped:
            take(None)  # idle round: the simulated process still steps

        my_sends = list(internal.my_sends)
        next_seq = internal.next_seq
        for dest, payload in outbox:
            if dest == internal.pid:
                raise AdversimError("a process never sends to itself")
            my_sends.append((next_seq, dest, payload, round))
            next_seq += 1

        return (
            PiggybackState(
                pid=internal.pid,
                inner=inner,
                started=True,
                next_seq=next_seq,
                my_sends=tuple(my_sends),
                others=frozenset(others),
                delivered=tuple(delivered),
            ),
            output,
        )


def _entry_key(entry):
    sender, seq, dest, payload = entry
    return (sender, seq, -1 if dest is None else dest, payload)


def piggyback_wrap(inner: AsyncProtocol, n: int, seen_cap: int = 100_000) -> RoundProtocol:
    return PiggybackWrapper(inner, n, seen_cap)


@dataclass(frozen=True)
class LedgerEntry:
    sender: Pid
    seq: int
    dest: Optional[Pid]  # None = broadcast
    sent_round: int
    deliveries: tuple[tuple[Pid, int], ...]  # (receiver, round delivered)

    def expected_receivers(self, n: int) -> tuple[Pid, ...]:
        if self.dest is None:
            return tuple(q for q in range(n) if q != self.sender)
        return (self.dest,)

    def fully_delivered(self, n: int) -> bool:
        got = {q for q, _ in self.deliveries}
        return got == set(self.expected_receivers(n))

    def max_lag(self) -> Optional[int]:
        if not self.deliveries:
            return None
        return max(r for _, r in self.deliveries) - self.sent_round


def piggyback_ledger(config: Configuration) -> list[LedgerEntry]:
    """Reconstruct the simulated-message delivery ledger from the final
    configuration of a piggybacked run."""
    n = config.n
    states = [config.states[q].internal for q in range(n)]
    deliveries: dict[tuple[Pid, int], list[tuple[Pid, int]]] = {}
    for q in range(n):
        for mid, round in states[q].delivered:
            deliveries.setdefault(tuple(mid), []).append((q, round))
    entries = []
    for p in range(n):
        for seq, dest, _payload, sent_round in states[p].my_sends:
            entries.append(
                LedgerEntry(
                    sender=p,
                    seq=seq,
                    dest=dest,
                    sent_round=sent_round,
                    deliveries=tuple(sorted(deliveries.get((p, seq), []))),
                )
            )
    return sorted(entries, key=lambda e: (e.sender, e.seq))


# ---------------------------------------------------------------------------
# Stack composition
# ---------------------------------------------------------------------------

_WRAPPERS = {
    ("fts", "ftr"): get_core_wrap,
    ("ftr", "flp"): synchronizer_wrap,
    ("flp", "ftr"): piggyback_wrap,
}


def build_stack(stack: str, base_id: str, n: int):
    """Compose wrappers per a stack descriptor such as ``fts-over-ftr`` or
    ``fts-over-ftr-over-flp``.  The leftmost model is the base protocol's
    native model and the rightmost is the engine the result runs on.  A
    stack starting at ``flp`` takes round-based targets through the
    synchronizer first (the only bridge from round protocols into the
    asynchronous world)."""
    from .protocols import get_protocol

    models = stack.split("-over-")
    if len(models) < 2 or any(m not in ("fts", "ftr", "flp") for m in models):
        raise AdversimError(f"malformed stack descriptor {stack!r}")
    protocol = get_protocol(base_id, n)
    if models[0] == "flp" and isinstance(protocol, RoundProtocol):
        protocol = synchronizer_wrap(protocol, n)
    for inner_model, outer_model in zip(models, models[1:]):
        try:
            wrap = _WRAPPERS[(inner_model, outer_model)]
        except KeyError:
            raise AdversimError(
                f"no simulation of {inner_model!r} on {outer_model!r}"
            ) from None
        protocol = wrap(protocol, n)
    protocol.protocol_id = f"{stack}:{base_id}"
    return protocol


def stack_model(stack: str) -> str:
    """The engine model a stack descriptor runs on."""
    models = stack.split("-over-")
    if len(models) < 2:
        raise AdversimError(f"malformed stack descriptor {stack!r}")
    return models[-1]
