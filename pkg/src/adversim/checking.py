"""Agreement/validity/write-once checking over fault schedules.

Exhaustive mode walks every canonical fault sequence to a depth (depth-first,
pruning once all processes have decided, since output registers are frozen
from then on).  Fuzz mode draws seeded random inputs and faults; every run's
randomness derives from (seed, run index), so a reported counterexample
replays in isolation.  Both modes return the first violation together with a
replayable trace.
"""

from __future__ import annotations

import hashlib
import random
from dataclasses import dataclass
from itertools import product
from typing import Optional

from .core import (
    AdversimError,
    Configuration,
    ExecutionTrace,
    FtrStep,
    FtsStep,
    RoundProtocol,
    initial_configuration,
)
from .sync_engine import (
    NoFaultPolicy,
    RandomFaultPolicy,
    SilentPolicy,
    enumerate_faults,
    step_fts,
    step_ftr,
)


class BudgetExceeded(AdversimError):
    """Projected exploration size is over the configured budget."""


@dataclass(frozen=True)
class CheckViolation:
    kind: str  # "agreement" | "validity" | "write-once"
    inputs: tuple[int, ...]
    round: int
    outputs: dict[int, int]
    trace: ExecutionTrace
    run_index: Optional[int] = None  # fuzz only

    def record(self) -> dict:
        return {
            "violation": self.kind,
            "inputs": list(self.inputs),
            "round": self.round,
            "outputs": {str(q): v for q, v in sorted(self.outputs.items())},
            **({"run": self.run_index} if self.run_index is not None else {}),
        }


@dataclass
class CheckResult:
    violation: Optional[CheckViolation]
    explored: int  # rounds stepped (exhaustive: tree nodes; fuzz: total rounds)

    @property
    def ok(self) -> bool:
        return self.violation is None


def _violation_kind(inputs, before: dict, after: dict) -> Optional[str]:
    for q, v in before.items():
        if after.get(q) != v:
            return "write-once"
    values = set(after.values())
    if {0, 1} <= values:
        return "agreement"
    if len(set(inputs)) == 1 and (1 - inputs[0]) in values:
        return "validity"
    return None


def _trace_from_path(model, protocol, inputs, path) -> ExecutionTrace:
    step_cls = FtsStep if model == "fts" else FtrStep
    steps = tuple(
        step_cls(round=i + 1, fault=fault, outputs=outs) for i, (fault, outs) in enumerate(path)
    )
    return ExecutionTrace(
        model=model, n=len(inputs), protocol=protocol.protocol_id, inputs=tuple(inputs), steps=steps
    )


def check_exhaustive(
    protocol: RoundProtocol,
    n: int,
    depth: int,
    model: str = "fts",
    restricted: bool = False,
    budget: int = 2_000_000,
) -> CheckResult:
    """Explore every canonical fault sequence up to ``depth`` for every input
    vector; return the first violation in depth-first order."""
    if depth < 1:
        raise AdversimError("depth must be >= 1")
    faults = enumerate_faults(model, n, restricted=restricted)
    step = step_fts if model == "fts" else step_ftr
    per_vector = sum(len(faults) ** d for d in range(1, depth + 1))
    if per_vector * 2**n > budget:
        raise BudgetExceeded(
            f"{per_vector * 2 ** n} rounds projected exceeds budget {budget}"
        )

    explored = 0

    def dfs(config: Configuration, path: list) -> Optional[CheckViolation]:
        nonlocal explored
        if config.all_decided() or len(path) == depth:
            return None
        before = config.outputs()
        for fault in faults:
            child = step(config, protocol, fault)
            explored += 1
            after = child.outputs()
            wrote = tuple(sorted((q, v) for q, v in after.items() if q not in before))
            path.append((fault, wrote))
            kind = _violation_kind(config.inputs(), before, after)
            if kind is not None:
                return CheckViolation(
                    kind=kind,
                    inputs=config.inputs(),
                    round=child.round - 1,
                    outputs=after,
                    trace=_trace_from_path(model, protocol, config.inputs(), path),
                )
            found = dfs(child, path)
            if found is not None:
                return found
            path.pop()
        return None

    for bits in product((0, 1), repeat=n):
        config = initial_configuration(protocol, bits)
        found = dfs(config, [])
        if found is not None:
            return CheckResult(violation=found, explored=explored)
    return CheckResult(violation=None, explored=explored)


def stream_seed(seed: int, *parts) -> int:
    """Derive an independent, platform-stable RNG seed for a named stream.

    All randomness in a command flows from one user seed through streams
    named like ("run", 17, "faults"), so any single run replays in isolation.
    """
    text = "|".join(str(p) for p in (seed, *parts))
    return int.from_bytes(hashlib.sha256(text.encode()).digest()[:8], "big")


def check_fuzz(
    protocol: RoundProtocol,
    n: int,
    runs: int,
    depth: int,
    seed: int,
    model: str = "fts",
    restricted: bool = False,
) -> CheckResult:
    """Seeded random input vectors and fault schedules.  Runs stop early once
    every process has decided (registers are frozen after that)."""
    step = step_fts if model == "fts" else step_ftr
    explored = 0
    for run_index in range(runs):
        rng_inputs = random.Random(stream_seed(seed, "run", run_index, "inputs"))
        inputs = tuple(rng_inputs.randrange(2) for _ in range(n))
        rng_faults = random.Random(stream_seed(seed, "run", run_index, "faults"))
        policy = RandomFaultPolicy(n, rng_faults, model=model, restricted=restricted)
        config = initial_configuration(protocol, inputs)
        path = []
        for _ in range(depth):
            if config.all_decided():
                break
            fault = policy.next_fault(config.round, path)
            before = config.outputs()
            config = step(config, protocol, fault)
            explored += 1
            after = config.outputs()
            wrote = tuple(sorted((q, v) for q, v in after.items() if q not in before))
            path.append((fault, wrote))
            kind = _violation_kind(inputs, before, after)
            if kind is not None:
                return CheckResult(
                    violation=CheckViolation(
                        kind=kind,
                        inputs=inputs,
                        round=config.round - 1,
                        outputs=after,
                        trace=_trace_from_path(model, protocol, inputs, path),
                        run_index=run_index,
                    ),
                    explored=explored,
                )
    return CheckResult(violation=None, explored=explored)


@dataclass(frozen=True)
class LivenessFailure:
    inputs: tuple[int, ...]
    policy: str
    undecided: tuple[int, ...]


def check_liveness(
    protocol: RoundProtocol, n: int, deadline: int = 6, model: str = "fts"
) -> list[LivenessFailure]:
    """Every failure-free and every single-silenced run, from every input
    vector, must fully decide within ``deadline`` rounds."""
    failures = []
    policies = [("failure-free", NoFaultPolicy(model))] + [
        (f"silent({p})", SilentPolicy(p, n, model)) for p in range(n)
    ]
    step = step_fts if model == "fts" else step_ftr
    for bits in product((0, 1), repeat=n):
        for name, policy in policies:
            config = initial_configuration(protocol, bits)
            for _ in range(deadline):
                if config.all_decided():
                    break
                fault = policy.next_fault(config.round, [])
                config = step(config, protocol, fault)
            if not config.all_decided():
                undecided = tuple(
                    q for q in range(n) if config.states[q].output is None
                )
                failures.append(
                    LivenessFailure(inputs=bits, policy=name, undecided=undecided)
                )
    return failures
