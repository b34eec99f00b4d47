"""Shared domain types for the simulation lab.

Processes are numbered 0..n-1.  A process owns a read-only binary input, an
opaque internal state, and a write-once binary output register.  Engines own
all registers; protocols are pure state machines that never mutate anything.

This module also defines the trace model (JSON Lines, canonical form,
bit-exact round trip) and trace validation by deterministic replay.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Any, Callable, Iterable, Mapping, Optional

MODELS = ("fts", "ftr", "flp")


class AdversimError(Exception):
    """Base class for all lab errors."""


class UnknownProtocolError(AdversimError):
    """Protocol id not present in the registry."""


class TraceFormatError(AdversimError):
    """Trace file cannot be parsed or violates the declared model's shape."""


class EngineError(AdversimError):
    """A protocol step failed inside an engine; carries round and pid."""

    def __init__(self, message: str, *, round: int, pid: int):
        super().__init__(f"round {round}, process {pid}: {message}")
        self.round = round
        self.pid = pid


# ---------------------------------------------------------------------------
# Process-local state and configurations
# ---------------------------------------------------------------------------

Pid = int


@dataclass(frozen=True, slots=True)
class LocalState:
    """One process: binary input, opaque internal state, write-once output."""

    input: int
    internal: Any
    output: Optional[int] = None

    def write(self, value: Optional[int]) -> "LocalState":
        """First write sticks; later writes are ignored (write-once register)."""
        if value is None or self.output is not None:
            return self
        if value not in (0, 1):
            raise AdversimError(f"output must be 0 or 1, got {value!r}")
        return LocalState(self.input, self.internal, value)


@dataclass(frozen=True, slots=True)
class Configuration:
    """Snapshot of every process state plus the index of the next round."""

    round: int
    states: tuple[LocalState, ...]

    @property
    def n(self) -> int:
        return len(self.states)

    def outputs(self) -> dict[Pid, int]:
        """Outputs written so far, keyed by process id."""
        return {q: s.output for q, s in enumerate(self.states) if s.output is not None}

    def inputs(self) -> tuple[int, ...]:
        return tuple(s.input for s in self.states)

    def all_decided(self) -> bool:
        return all(s.output is not None for s in self.states)

    def differing_processes(self, other: "Configuration") -> list[Pid]:
        """Process ids whose local state differs between two configurations."""
        if self.n != other.n:
            raise AdversimError("configurations have different sizes")
        return [q for q in range(self.n) if self.states[q] != other.states[q]]


def initial_configuration(protocol: "RoundProtocol", inputs: Iterable[int]) -> Configuration:
    """Round-1 configuration: fresh internal states, empty output registers."""
    states = []
    for pid, b in enumerate(inputs):
        if b not in (0, 1):
            raise AdversimError(f"inputs must be binary, got {b!r}")
        states.append(LocalState(input=b, internal=protocol.init(pid, b)))
    if len(states) < 2:
        raise AdversimError("need at least 2 processes")
    return Configuration(round=1, states=tuple(states))


# ---------------------------------------------------------------------------
# Per-round adversary choices
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RoundFault:
    """One round's fault in the fail-to-send model: a single sender whose
    broadcast is withheld from a set of victims.

    Canonical form never lists the sender among its victims (a process does
    not message itself, so membership would be meaningless)."""

    sender: Pid
    victims: frozenset[Pid]

    def __init__(self, sender: Pid, victims: Iterable[Pid]):
        object.__setattr__(self, "sender", sender)
        object.__setattr__(self, "victims", frozenset(victims) - {sender})

    def validate(self, n: int) -> None:
        if not 0 <= self.sender < n:
            raise TraceFormatError(f"fault sender {self.sender} out of range for n={n}")
        bad = [q for q in self.victims if not 0 <= q < n]
        if bad:
            raise TraceFormatError(f"fault victims {bad} out of range for n={n}")


NO_FAULT = RoundFault(0, frozenset())


@dataclass(frozen=True)
class ReceiveFault:
    """One round's fault in the fail-to-receive model: per receiver, at most
    one sender whose message that receiver misses."""

    drops: tuple[tuple[Pid, Pid], ...]  # (receiver, dropped sender), sorted

    def __init__(self, dropped: Mapping[Pid, Pid] | Iterable[tuple[Pid, Pid]]):
        items = dict(dropped)
        object.__setattr__(self, "drops", tuple(sorted(items.items())))

    @property
    def mapping(self) -> dict[Pid, Pid]:
        return dict(self.drops)

    def validate(self, n: int) -> None:
        for receiver, sender in self.drops:
            if not 0 <= receiver < n or not 0 <= sender < n:
                raise TraceFormatError(f"drop ({receiver},{sender}) out of range for n={n}")
            if receiver == sender:
                raise TraceFormatError(f"process {receiver} cannot drop its own message")


NO_DROPS = ReceiveFault({})


# ---------------------------------------------------------------------------
# Protocol interfaces
# ---------------------------------------------------------------------------


class RoundProtocol:
    """Deterministic state machine for the synchronous round-based models.

    All three methods are pure.  ``transition`` receives the messages
    delivered this round as a mapping sender -> payload, built by the engine
    in ascending sender order (the models fix a delivery order; ascending id
    is the one used throughout this lab).  Payloads are opaque bytes.
    """

    protocol_id: str = "?"
    n: Optional[int] = None

    def init(self, pid: Pid, input: int) -> Any:
        raise NotImplementedError

    def message(self, internal: Any, round: int) -> bytes:
        raise NotImplementedError

    def transition(
        self, internal: Any, round: int, received: Mapping[Pid, bytes]
    ) -> tuple[Any, Optional[int]]:
        raise NotImplementedError


class AsyncProtocol:
    """Deterministic state machine for the asynchronous model.

    One step optionally consumes a single incoming message (delivered by the
    engine as an ``(sender, payload)`` envelope), updates the internal state,
    and sends any number of messages.  A destination of ``None`` means
    broadcast to every other process; a process never sends to itself.
    """

    protocol_id: str = "?"
    n: Optional[int] = None

    def init(self, pid: Pid, input: int) -> Any:
        raise NotImplementedError

    def step(
        self, internal: Any, incoming: Optional[tuple[Pid, bytes]]
    ) -> tuple[Any, list[tuple[Optional[Pid], bytes]], Optional[int]]:
        raise NotImplementedError


# ---------------------------------------------------------------------------
# Execution traces
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FtsStep:
    round: int
    fault: RoundFault
    outputs: tuple[tuple[Pid, int], ...]  # outputs written this round, sorted


@dataclass(frozen=True)
class FtrStep:
    round: int
    fault: ReceiveFault
    outputs: tuple[tuple[Pid, int], ...]


@dataclass(frozen=True)
class FlpStep:
    pid: Pid
    deliver: Optional[int]  # send index of the delivered message, if any
    crash: bool
    outputs: tuple[tuple[Pid, int], ...]


TraceStep = FtsStep | FtrStep | FlpStep


@dataclass(frozen=True)
class ExecutionTrace:
    """Finite prefix of an execution: header plus one record per step.

    Replaying the steps from the inputs under the named protocol must
    reproduce the recorded outputs exactly.
    """

    model: str
    n: int
    protocol: str
    inputs: tuple[int, ...]
    steps: tuple[TraceStep, ...]

    def output_map(self) -> dict[Pid, int]:
        """First written output per process across the whole trace."""
        outs: dict[Pid, int] = {}
        for step in self.steps:
            for pid, value in step.outputs:
                outs.setdefault(pid, value)
        return outs

    # -- canonical JSON Lines form ------------------------------------------

    def to_jsonl(self) -> str:
        lines = [
            _dumps(
                {
                    "model": self.model,
                    "n": self.n,
                    "protocol": self.protocol,
                    "inputs": list(self.inputs),
                }
            )
        ]
        for step in self.steps:
            lines.append(_dumps(_step_record(step)))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_jsonl(cls, text: str) -> "ExecutionTrace":
        lines = [line for line in text.splitlines() if line.strip()]
        if not lines:
            raise TraceFormatError("empty trace file")
        header = _loads(lines[0], 1)
        for key in ("model", "n", "protocol", "inputs"):
            if key not in header:
                raise TraceFormatError(f"header missing {key!r}")
        model = header["model"]
        if model not in MODELS:
            raise TraceFormatError(f"unknown model tag {model!r}")
        n = header["n"]
        inputs = tuple(header["inputs"])
        if not isinstance(n, int) or n < 2:
            raise TraceFormatError(f"bad n {n!r}")
        if len(inputs) != n or any(b not in (0, 1) for b in inputs):
            raise TraceFormatError("inputs must be a binary array of length n")
        steps = tuple(
            _parse_step(model, _loads(line, i + 2), i + 2) for i, line in enumerate(lines[1:])
        )
        return cls(model=model, n=n, protocol=header["protocol"], inputs=inputs, steps=steps)

    def write(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_jsonl())

    @classmethod
    def read(cls, path) -> "ExecutionTrace":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_jsonl(fh.read())


def _dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def _loads(line: str, lineno: int):
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise TraceFormatError(f"line {lineno}: invalid JSON ({exc})") from None
    if not isinstance(obj, dict):
        raise TraceFormatError(f"line {lineno}: expected an object")
    return obj


def _outputs_record(outputs: tuple[tuple[Pid, int], ...]) -> dict[str, int]:
    return {str(pid): value for pid, value in outputs}


def _step_record(step: TraceStep) -> dict:
    if isinstance(step, FtsStep):
        return {
            "round": step.round,
            "sender": step.fault.sender,
            "victims": sorted(step.fault.victims),
            "outputs": _outputs_record(step.outputs),
        }
    if isinstance(step, FtrStep):
        return {
            "round": step.round,
            "dropped": {str(r): s for r, s in step.fault.drops},
            "outputs": _outputs_record(step.outputs),
        }
    return {
        "event": "step",
        "pid": step.pid,
        "deliver": step.deliver,
        "crash": step.crash,
        "outputs": _outputs_record(step.outputs),
    }


def _parse_outputs(record: dict, lineno: int) -> tuple[tuple[Pid, int], ...]:
    raw = record.get("outputs", {})
    if not isinstance(raw, dict):
        raise TraceFormatError(f"line {lineno}: outputs must be an object")
    outs = []
    for key, value in raw.items():
        try:
            pid = int(key)
        except ValueError:
            raise TraceFormatError(f"line {lineno}: bad output pid {key!r}") from None
        if value not in (0, 1):
            raise TraceFormatError(f"line {lineno}: output value must be 0 or 1")
        outs.append((pid, value))
    return tuple(sorted(outs))


def _parse_step(model: str, record: dict, lineno: int) -> TraceStep:
    outputs = _parse_outputs(record, lineno)
    if model == "fts":
        for key in ("round", "sender", "victims"):
            if key not in record:
                raise TraceFormatError(f"line {lineno}: fts step missing {key!r}")
        return FtsStep(
            round=record["round"],
            fault=RoundFault(record["sender"], record["victims"]),
            outputs=outputs,
        )
    if model == "ftr":
        for key in ("round", "dropped"):
            if key not in record:
                raise TraceFormatError(f"line {lineno}: ftr step missing {key!r}")
        try:
            dropped = {int(k): v for k, v in record["dropped"].items()}
        except (ValueError, AttributeError):
            raise TraceFormatError(f"line {lineno}: bad dropped map") from None
        return FtrStep(round=record["round"], fault=ReceiveFault(dropped), outputs=outputs)
    if record.get("event") != "step":
        raise TraceFormatError(f"line {lineno}: flp step must have event='step'")
    for key in ("pid", "deliver", "crash"):
        if key not in record:
            raise TraceFormatError(f"line {lineno}: flp step missing {key!r}")
    return FlpStep(
        pid=record["pid"], deliver=record["deliver"], crash=bool(record["crash"]), outputs=outputs
    )


# ---------------------------------------------------------------------------
# Consensus outcome check (colorless relation)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ConsensusCheck:
    ok: bool
    violation: Optional[str] = None  # "agreement" | "validity"

    def __bool__(self) -> bool:
        return self.ok


def check_colorless_outcome(inputs: Iterable[int], outputs: Iterable[int]) -> ConsensusCheck:
    """Check collected outputs against the consensus relation.

    Fails on agreement if both values were output, and on validity if the
    inputs were unanimously b yet some process output the other value.  An
    empty output set passes (a truncated run has not violated anything).
    """
    ins = set(inputs)
    outs = set(outputs)
    if {0, 1} <= outs:
        return ConsensusCheck(False, "agreement")
    if len(ins) == 1:
        (b,) = ins
        if (1 - b) in outs:
            return ConsensusCheck(False, "validity")
    return ConsensusCheck(True)


# ---------------------------------------------------------------------------
# Trace validation by replay
# ---------------------------------------------------------------------------


@dataclass
class ValidationReport:
    valid: bool
    problems: list[str]

    def __bool__(self) -> bool:
        return self.valid


def validate_trace(
    trace: ExecutionTrace,
    resolver: Optional[Callable[[str, int], Any]] = None,
    ignore_outputs: Iterable[Pid] = (),
) -> ValidationReport:
    """Replay a trace deterministically and report every divergence.

    Checks, in order: fault/event shape for the declared model, write-once
    discipline of the recorded outputs, and exact agreement between recorded
    and replayed outputs.  ``ignore_outputs`` exempts the named processes
    from the output comparison (used when a projected trace intentionally
    omits part of a process's behaviour).

    Raises UnknownProtocolError if the header names an unregistered protocol.
    """
    if resolver is None:
        from .protocols import get_protocol

        resolver = get_protocol

    problems: list[str] = []
    ignore = frozenset(ignore_outputs)

    written: dict[Pid, int] = {}
    for i, step in enumerate(trace.steps):
        where = f"step {i + 1}"
        for pid, value in step.outputs:
            if not 0 <= pid < trace.n:
                problems.append(f"{where}: output pid {pid} out of range")
            elif pid in written:
                problems.append(f"{where}: write-once violation for process {pid}")
            else:
                written[pid] = value

    shape_problems = _check_shape(trace)
    problems.extend(shape_problems)

    protocol = resolver(trace.protocol, trace.n)  # may raise UnknownProtocolError

    want_async = trace.model == "flp"
    if isinstance(protocol, AsyncProtocol) != want_async:
        problems.append(
            f"protocol {trace.protocol!r} does not run on the {trace.model} model"
        )
    elif not shape_problems:
        try:
            replayed = _replay_outputs(trace, protocol)
        except Exception as exc:  # noqa: BLE001 - any replay failure invalidates
            problems.append(f"replay failed: {exc}")
        else:
            problems.extend(_compare_outputs(trace, replayed, ignore))

    return ValidationReport(valid=not problems, problems=problems)


def _check_shape(trace: ExecutionTrace) -> list[str]:
    problems: list[str] = []
    if trace.model in ("fts", "ftr"):
        expected_round = 1
        seen_rounds: set[int] = set()
        for i, step in enumerate(trace.steps):
            where = f"step {i + 1}"
            if not isinstance(step, (FtsStep, FtrStep)):
                problems.append(f"{where}: wrong step kind for model {trace.model}")
                continue
            if step.round in seen_rounds:
                problems.append(f"{where}: multiple faulty senders in round {step.round}")
                continue
            if step.round != expected_round:
                problems.append(
                    f"{where}: expected round {expected_round}, found {step.round}"
                )
            seen_rounds.add(step.round)
            expected_round = step.round + 1
            try:
                step.fault.validate(trace.n)
            except TraceFormatError as exc:
                problems.append(f"{where}: {exc}")
    else:
        crashed: Optional[Pid] = None
        for i, step in enumerate(trace.steps):
            where = f"step {i + 1}"
            if not isinstance(step, FlpStep):
                problems.append(f"{where}: wrong step kind for model flp")
                continue
            if not 0 <= step.pid < trace.n:
                problems.append(f"{where}: pid {step.pid} out of range")
            if step.pid == crashed:
                problems.append(f"{where}: crashed process {step.pid} takes a step")
            if step.crash:
                if crashed is not None:
                    problems.append(f"{where}: second crash (already crashed {crashed})")
                else:
                    crashed = step.pid
    return problems


def _replay_outputs(trace: ExecutionTrace, protocol) -> list[tuple[tuple[Pid, int], ...]]:
    """Outputs written per step when the trace is replayed from its header."""
    if trace.model == "flp":
        from .async_engine import replay_flp_steps

        return replay_flp_steps(trace, protocol)

    from .sync_engine import step_fts, step_ftr

    config = initial_configuration(protocol, trace.inputs)
    per_step: list[tuple[tuple[Pid, int], ...]] = []
    for step in trace.steps:
        before = config.outputs()
        if trace.model == "fts":
            config = step_fts(config, protocol, step.fault)
        else:
            config = step_ftr(config, protocol, step.fault)
        after = config.outputs()
        per_step.append(tuple(sorted((q, v) for q, v in after.items() if q not in before)))
    return per_step


def _compare_outputs(
    trace: ExecutionTrace,
    replayed: list[tuple[tuple[Pid, int], ...]],
    ignore: frozenset[Pid],
) -> list[str]:
    problems = []
    for i, (step, rep) in enumerate(zip(trace.steps, replayed)):
        rec = {pid: v for pid, v in step.outputs if pid not in ignore}
        exp = {pid: v for pid, v in rep if pid not in ignore}
        if rec != exp:
            problems.append(
                f"step {i + 1}: recorded outputs {rec} diverge from replayed {exp}"
            )
    return problems
