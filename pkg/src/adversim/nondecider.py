"""Constructive adversary against pseudo-consensus targets.

Given a protocol that always satisfies agreement and validity and that
terminates in failure-free and single-silenced executions, this module
synthesizes an arbitrarily long fail-to-send execution in which no process
ever writes an output.

The machinery: two decision oracles (the failure-free decision and the
p-silent decision from a configuration), a dependence test (the two oracles
disagree), a flip scan over chains of adjacent configurations, and an attack
loop that keeps every reached configuration dependent.  Each extension round
either silences the pivot process completely or walks the progressive
delivery chain of its payload until the dependence flips hands.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

from .core import (
    AdversimError,
    Configuration,
    ExecutionTrace,
    FtsStep,
    Pid,
    RoundFault,
    RoundProtocol,
    initial_configuration,
)
from .sync_engine import NO_FAULT, step_fts


class OracleCapExceeded(AdversimError):
    """The probed continuation did not fully decide within the round cap:
    the target is not live in the probed benign execution class."""

    def __init__(self, kind: str, cap: int):
        super().__init__(f"{kind} oracle exceeded cap of {cap} rounds")
        self.kind = kind
        self.cap = cap


class AgreementViolation(AdversimError):
    """A probed continuation produced two different outputs."""

    def __init__(self, outputs: dict[Pid, int], trace: ExecutionTrace):
        super().__init__(f"agreement violation in probed continuation: {outputs}")
        self.outputs = outputs
        self.trace = trace


class NoFlipInChain(AdversimError):
    """Chain scan found no adjacent failure-free flip (precondition broken)."""


class ChainExhausted(AdversimError):
    """Restricted adversary ran out of chain: with full-silence faults
    forbidden, the progressive delivery chain is one configuration short and
    may present no failure-free flip."""

    def __init__(self, round: Optional[int] = None):
        self.round = round
        super().__init__(
            "chain exhausted" if round is None else f"chain exhausted at round {round}"
        )


class InvariantViolation(AdversimError):
    """An identity the construction guarantees failed; the target is not a
    deterministic pseudo-consensus machine (or there is an engine bug)."""


@dataclass(frozen=True)
class DecisionOracleResult:
    decision: int
    rounds_used: int


@dataclass(frozen=True)
class DependenceWitness:
    """Proof that a configuration's decision hangs on one process: the
    failure-free continuation and the continuation silencing that process
    decide differently."""

    config: Configuration
    process: Pid
    ff_decision: int
    silent_decision: int


@dataclass(frozen=True)
class AdjacentChain:
    """Configurations c_0..c_m where consecutive entries differ exactly in
    the local state of ``differing[i]``."""

    configs: tuple[Configuration, ...]
    differing: tuple[Pid, ...]

    def __post_init__(self):
        if len(self.differing) != len(self.configs) - 1:
            raise AdversimError("chain needs one differing process per adjacent pair")

    def check_adjacency(self) -> None:
        for i, p in enumerate(self.differing):
            diff = self.configs[i].differing_processes(self.configs[i + 1])
            if diff != [p]:
                raise AdversimError(
                    f"chain entries {i},{i + 1} differ in {diff}, expected [{p}]"
                )


def default_cap(n: int) -> int:
    """Generous round budget for decision oracles.  The bundled target
    decides benign continuations within a handful of rounds; anything that
    needs more than 10n rounds is treated as non-live rather than hung."""
    return 10 * n


def _probe(
    config: Configuration,
    protocol: RoundProtocol,
    fault: RoundFault,
    cap: int,
    kind: str,
) -> DecisionOracleResult:
    """Run the same fault every round until all processes have output."""
    if cap < 1:
        raise AdversimError("oracle cap must be >= 1")
    current = config
    steps = []
    rounds = 0
    while not current.all_decided():
        if rounds >= cap:
            raise OracleCapExceeded(kind, cap)
        before = current.outputs()
        current = step_fts(current, protocol, fault)
        rounds += 1
        wrote = tuple(sorted((q, v) for q, v in current.outputs().items() if q not in before))
        steps.append(FtsStep(round=current.round - 1, fault=fault, outputs=wrote))
    outputs = current.outputs()
    values = set(outputs.values())
    if len(values) != 1:
        trace = ExecutionTrace(
            model="fts",
            n=config.n,
            protocol=protocol.protocol_id,
            inputs=config.inputs(),
            steps=tuple(steps),
        )
        raise AgreementViolation(outputs, trace)
    return DecisionOracleResult(decision=values.pop(), rounds_used=rounds)


def failure_free_decision(
    config: Configuration, protocol: RoundProtocol, cap: int
) -> DecisionOracleResult:
    """Decision of the continuation with no faults at all."""
    return _probe(config, protocol, NO_FAULT, cap, "failure-free")


def silent_decision(
    config: Configuration, p: Pid, protocol: RoundProtocol, cap: int
) -> DecisionOracleResult:
    """Decision of the continuation in which p is silenced every round
    (fault (p, everyone else)); p still hears the others and must also
    output for the probe to complete."""
    fault = RoundFault(p, [q for q in range(config.n) if q != p])
    return _probe(config, protocol, fault, cap, f"{p}-silent")


def is_p_dependent(
    config: Configuration, p: Pid, protocol: RoundProtocol, cap: int
) -> Optional[DependenceWitness]:
    """Fresh two-oracle dependence test; the sole constructor of witnesses."""
    ff = failure_free_decision(config, protocol, cap)
    sil = silent_decision(config, p, protocol, cap)
    if ff.decision == sil.decision:
        return None
    if config.outputs():
        # Decisions are irrevocable: a configuration with a written output
        # cannot have two continuations deciding differently.
        raise InvariantViolation(
            f"dependent configuration already has outputs {config.outputs()}"
        )
    return DependenceWitness(
        config=config, process=p, ff_decision=ff.decision, silent_decision=sil.decision
    )


def find_dependent_in_chain(
    chain: AdjacentChain, protocol: RoundProtocol, cap: int
) -> tuple[int, Pid, DependenceWitness]:
    """Locate a dependent configuration on a chain whose failure-free
    decisions flip somewhere.

    Scans for the first adjacent pair (c_{j-1}, c_j) with differing
    failure-free decisions.  If the silent decision of the differing process
    at c_j disagrees with c_j's failure-free decision, c_j is dependent.
    Otherwise c_{j-1} is: silencing the differing process erases the only
    state distinction between the two, so their silent decisions coincide,
    and that value disagrees with c_{j-1}'s failure-free decision.  The
    returned witness is re-established by a fresh two-oracle test either way.
    """
    ffs = [failure_free_decision(c, protocol, cap).decision for c in chain.configs]
    flip = None
    for j in range(1, len(ffs)):
        if ffs[j - 1] != ffs[j]:
            flip = j
            break
    if flip is None:
        raise NoFlipInChain("no flip in chain")
    p = chain.differing[flip - 1]
    sil = silent_decision(chain.configs[flip], p, protocol, cap)
    k = flip if sil.decision != ffs[flip] else flip - 1
    witness = is_p_dependent(chain.configs[k], p, protocol, cap)
    if witness is None:
        raise InvariantViolation(
            f"chain entry {k} failed re-verification as {p}-dependent"
        )
    return k, p, witness


def find_initial_dependent(
    protocol: RoundProtocol, n: int, cap: Optional[int] = None
) -> tuple[Configuration, Pid, DependenceWitness]:
    """Dependent initial configuration, found on the monotone input chain.

    The chain runs from the all-0 input vector to the all-1 vector, flipping
    one process's input per step in ascending id order; validity pins the
    failure-free decisions of the endpoints to 0 and 1, so the chain scan
    always succeeds on a live target.
    """
    if n < 2:
        raise AdversimError("need n >= 2")
    cap = default_cap(n) if cap is None else cap
    configs = []
    for i in range(n + 1):
        inputs = tuple(1 if j < i else 0 for j in range(n))
        configs.append(initial_configuration(protocol, inputs))
    chain = AdjacentChain(configs=tuple(configs), differing=tuple(range(n)))
    k, p, witness = find_dependent_in_chain(chain, protocol, cap)
    return configs[k], p, witness


@dataclass(frozen=True)
class ExtensionStep:
    fault: RoundFault
    config: Configuration
    process: Pid
    witness: DependenceWitness


def extend_dependent(
    config: Configuration,
    p: Pid,
    witness: DependenceWitness,
    protocol: RoundProtocol,
    cap: Optional[int] = None,
    restricted: bool = False,
) -> ExtensionStep:
    """One attack round: from a p-dependent configuration, pick a fault whose
    successor is again dependent for some process.

    Let b be the p-silent decision from here.  Silencing p completely gives
    c_1; if its failure-free decision is not b, c_1 is itself p-dependent
    (its p-silent continuation is a suffix of this one's, so it still
    decides b).  Otherwise walk the chain c_1..c_n in which p's payload is
    delivered to one more process each time, in ascending id order: the
    failure-free decisions at the ends are b and (not b), and consecutive
    entries differ only in whether one process heard p, so the chain scan
    lands on a dependent successor and the generating fault is returned.

    With ``restricted`` set, full-silence faults are forbidden: the chain
    starts at c_2 and is one configuration short, so the scan may find no
    flip; that outcome is reported as ChainExhausted.
    """
    n = config.n
    cap = default_cap(n) if cap is None else cap
    if witness.config != config or witness.process != p:
        raise AdversimError("witness does not match the configuration being extended")
    b = witness.silent_decision
    others = [q for q in range(n) if q != p]

    if not restricted:
        full = RoundFault(p, others)
        c1 = step_fts(config, protocol, full)
        ff1 = failure_free_decision(c1, protocol, cap)
        if ff1.decision != b:
            w = is_p_dependent(c1, p, protocol, cap)
            if w is None:
                raise InvariantViolation("full-silence successor failed re-verification")
            return ExtensionStep(fault=full, config=c1, process=p, witness=w)
        start = 1
    else:
        start = 2

    # c_i delivers p's payload to exactly the first i-1 of the others.
    faults = [RoundFault(p, others[i - 1 :]) for i in range(start, n + 1)]
    configs = tuple(step_fts(config, protocol, f) for f in faults)
    differing = tuple(others[start - 1 : n - 1])
    chain = AdjacentChain(configs=configs, differing=differing)
    try:
        k, q, w = find_dependent_in_chain(chain, protocol, cap)
    except NoFlipInChain:
        if restricted:
            raise ChainExhausted() from None
        raise InvariantViolation(
            "progressive delivery chain endpoints failed to flip"
        ) from None
    return ExtensionStep(fault=faults[k], config=configs[k], process=q, witness=w)


@dataclass(frozen=True)
class AttackRound:
    round: int
    fault: RoundFault
    config: Configuration
    process: Pid
    witness: DependenceWitness


@dataclass
class AttackResult:
    """A synthesized non-deciding execution prefix plus its dependence
    witnesses: entry 0 certifies the initial configuration, entry r the
    configuration after round r.  ``exhausted_at`` is set when the
    restricted adversary could not extend (and the trace stops short)."""

    trace: ExecutionTrace
    witnesses: list[AttackRound]
    exhausted_at: Optional[int] = None

    @property
    def rounds_built(self) -> int:
        return len(self.trace.steps)

    def outputs_written(self) -> int:
        return len(self.trace.output_map())


def build_nondeciding_execution(
    protocol: RoundProtocol,
    n: int,
    rounds: int,
    cap: Optional[int] = None,
    restricted: bool = False,
) -> AttackResult:
    """Inductively build a ``rounds``-long execution every prefix of which
    ends in a dependent configuration, hence writes no output at all."""
    if rounds < 1:
        raise AdversimError("rounds must be >= 1")
    cap = default_cap(n) if cap is None else cap
    config, p, witness = find_initial_dependent(protocol, n, cap)
    records = [AttackRound(round=0, fault=NO_FAULT, config=config, process=p, witness=witness)]
    steps: list[FtsStep] = []
    exhausted_at = None
    current, cur_p, cur_w = config, p, witness
    for r in range(1, rounds + 1):
        try:
            ext = extend_dependent(current, cur_p, cur_w, protocol, cap, restricted)
        except ChainExhausted:
            exhausted_at = r
            break
        if ext.config.outputs():
            raise InvariantViolation(
                f"round {r}: output written in supposedly dependent configuration"
            )
        steps.append(FtsStep(round=current.round, fault=ext.fault, outputs=()))
        records.append(
            AttackRound(round=r, fault=ext.fault, config=ext.config, process=ext.process, witness=ext.witness)
        )
        current, cur_p, cur_w = ext.config, ext.process, ext.witness
    trace = ExecutionTrace(
        model="fts",
        n=n,
        protocol=protocol.protocol_id,
        inputs=config.inputs(),
        steps=tuple(steps),
    )
    return AttackResult(trace=trace, witnesses=records, exhausted_at=exhausted_at)


def verify_witness(witness: DependenceWitness, protocol: RoundProtocol, cap: int) -> bool:
    """Re-establish a witness with two fresh oracle calls."""
    ff = failure_free_decision(witness.config, protocol, cap)
    sil = silent_decision(witness.config, witness.process, protocol, cap)
    return (
        ff.decision == witness.ff_decision
        and sil.decision == witness.silent_decision
        and ff.decision != sil.decision
    )


def report_records(result: AttackResult) -> list[dict]:
    """Machine-readable attack report: one record per witness, carrying the
    generating fault and the cumulative output count (which must stay 0)."""
    records = []
    for entry in result.witnesses:
        rec: dict = {"round": entry.round}
        if entry.round > 0:
            rec["fault"] = {
                "sender": entry.fault.sender,
                "victims": sorted(entry.fault.victims),
            }
        rec["witness"] = {
            "pid": entry.process,
            "ff": entry.witness.ff_decision,
            "silent": entry.witness.silent_decision,
        }
        # registers persist, so the current count is the cumulative count
        rec["outputs_written"] = len(entry.config.outputs())
        records.append(rec)
    if result.exhausted_at is not None:
        records.append({"round": result.exhausted_at, "chain_exhausted": True})
    return records
