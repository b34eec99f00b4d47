"""Command-line front end.

Subcommands: ``run`` (one model directly), ``attack`` (synthesize a
non-deciding execution), ``check`` (exhaustive or fuzz property checking),
``simulate`` (composed model stacks with faithfulness reports), ``validate``
(replay a trace file).

Exit codes: 0 ok, 1 property violation, 2 oracle cap exceeded, 3 unknown
protocol, 4 budget exceeded, 5 trace error (64 for usage errors).  Reports
are machine-readable JSON Lines; the human-readable summary goes to stderr.
All randomness in a command flows from its single --seed through named
derived streams, so identical invocations are byte-identical.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from typing import Optional

from . import checking, nondecider
from .async_engine import (
    make_scheduler,
    run_async,
    scripted_scheduler_from_file,
)
from .core import (
    AdversimError,
    AsyncProtocol,
    ExecutionTrace,
    TraceFormatError,
    UnknownProtocolError,
    initial_configuration,
    validate_trace,
    _dumps,
)
from .checking import BudgetExceeded
from .nondecider import AgreementViolation, OracleCapExceeded
from .protocols import get_protocol
from .simulations import (
    EmulationLemmaViolation,
    build_stack,
    getcore_rounds,
    piggyback_ledger,
    project_synchronized_run,
    stack_model,
)
from .sync_engine import (
    NoFaultPolicy,
    RandomFaultPolicy,
    SilentPolicy,
    run,
    scripted_policy_from_file,
    step_fts,
)

EXIT_OK = 0
EXIT_VIOLATION = 1
EXIT_ORACLE_CAP = 2
EXIT_UNKNOWN_PROTOCOL = 3
EXIT_BUDGET = 4
EXIT_TRACE = 5
EXIT_USAGE = 64

OUTDIR_ENV = "ADVERSIM_OUTDIR"


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # keep usage errors off the contract codes
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


class UsageError(AdversimError):
    pass


def _say(msg: str) -> None:
    print(msg, file=sys.stderr)


def _outpath(arg: Optional[str], default_name: str) -> str:
    if arg:
        return arg
    return os.path.join(os.environ.get(OUTDIR_ENV, "."), default_name)


def _write_jsonl(path: str, records) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(_dumps(rec) + "\n")


def _parse_inputs(args, n: int, rng_seed_tag: str = "inputs") -> tuple[int, ...]:
    if args.inputs:
        try:
            bits = tuple(int(b) for b in args.inputs.split(","))
        except ValueError:
            raise UsageError(f"bad --inputs {args.inputs!r}") from None
        if len(bits) != n or any(b not in (0, 1) for b in bits):
            raise UsageError("--inputs must be n comma-separated bits")
        return bits
    if args.seed is None:
        raise UsageError("provide --inputs or --seed for random inputs")
    import random

    rng = random.Random(checking.stream_seed(args.seed, rng_seed_tag))
    return tuple(rng.randrange(2) for _ in range(n))


def _make_policy(spec: str, model: str, n: int, seed: Optional[int], restricted: bool):
    if spec == "none":
        return NoFaultPolicy(model)
    if spec.startswith("silent:"):
        try:
            p = int(spec.split(":", 1)[1])
        except ValueError:
            raise UsageError(f"bad adversary spec {spec!r}") from None
        if not 0 <= p < n:
            raise UsageError(f"silent process {p} out of range")
        return SilentPolicy(p, n, model)
    if spec.startswith("script:"):
        return scripted_policy_from_file(spec.split(":", 1)[1], model)
    if spec == "random":
        if seed is None:
            raise UsageError("--adversary random requires --seed")
        import random

        rng = random.Random(checking.stream_seed(seed, "adversary"))
        return RandomFaultPolicy(n, rng, model=model, restricted=restricted)
    raise UsageError(f"unknown adversary spec {spec!r}")


def _parse_crash(spec: Optional[str]):
    if not spec:
        return None
    try:
        pid, step = spec.split(":")
        return (int(pid), int(step))
    except ValueError:
        raise UsageError(f"bad --crash {spec!r}, expected PID:STEP") from None


def _scheduler_for(args, n: int):
    spec = args.scheduler
    crash = _parse_crash(args.crash)
    if spec == "round-robin":
        return make_scheduler("round-robin", n, crash=crash)
    if spec == "random":
        if args.seed is None:
            raise UsageError("--scheduler random requires --seed")
        return make_scheduler(
            "seeded-random-fair", n, seed=checking.stream_seed(args.seed, "scheduler"), crash=crash
        )
    if spec.startswith("script:"):
        return scripted_scheduler_from_file(spec.split(":", 1)[1])
    raise UsageError(f"unknown scheduler spec {spec!r}")


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_run(args) -> int:
    protocol = get_protocol(args.protocol, args.n)
    if args.model == "flp":
        if not isinstance(protocol, AsyncProtocol):
            raise UsageError(
                f"{args.protocol!r} is round-based; run it under fts/ftr or via a stack id"
            )
        inputs = _parse_inputs(args, args.n)
        scheduler = _scheduler_for(args, args.n)
        result = run_async(
            inputs, protocol, scheduler, args.horizon, fairness_window=args.fairness_window
        )
        trace = result.trace
        outputs = result.final_state.outputs()
        fairness_note = ""
        if result.fairness is not None:
            fairness_note = " fairness=ok" if result.fairness.ok else " fairness=VIOLATED"
            for v in (result.fairness.violations or [])[:5]:
                _say(f"fairness: {v}")
    else:
        if isinstance(protocol, AsyncProtocol):
            raise UsageError(f"{args.protocol!r} is asynchronous; use --model flp")
        if ":" in args.protocol and stack_model(args.protocol.split(":", 1)[0]) != args.model:
            raise UsageError(
                f"stack {args.protocol!r} runs on model "
                f"{stack_model(args.protocol.split(':', 1)[0])!r}, not {args.model!r}"
            )
        inputs = _parse_inputs(args, args.n)
        policy = _make_policy(args.adversary, args.model, args.n, args.seed, args.restricted)
        config = initial_configuration(protocol, inputs)
        result = run(config, protocol, policy, args.horizon)
        trace = result.trace
        outputs = result.final_config.outputs()
        fairness_note = ""

    out = _outpath(args.out, "run.trace.jsonl")
    trace.write(out)
    _say(
        f"run: model={args.model} protocol={args.protocol} n={args.n} "
        f"horizon={args.horizon} outputs={outputs}{fairness_note}"
    )
    _say(f"trace written to {out}")
    return EXIT_OK


def cmd_attack(args) -> int:
    protocol = get_protocol(args.protocol, args.n)
    try:
        result = nondecider.build_nondeciding_execution(
            protocol, args.n, rounds=args.rounds, cap=args.cap, restricted=args.restricted
        )
    except nondecider.NoFlipInChain:
        _say(
            "attack: no dependent initial configuration (failure-free decisions "
            "never flip across the input chain; target is not pseudo-consensus)"
        )
        return EXIT_VIOLATION
    out = _outpath(args.out, "attack.trace.jsonl")
    report = _outpath(args.report, "attack.report.jsonl")
    result.trace.write(out)
    _write_jsonl(report, nondecider.report_records(result))
    written = result.outputs_written()
    if result.exhausted_at is not None:
        _say(
            f"attack: chain exhausted at round {result.exhausted_at} "
            f"({result.rounds_built} rounds built, {written} outputs written)"
        )
        if not args.restricted:
            # Unrestricted extension is total on live targets; only the
            # restricted adversary may legitimately run out of chain.
            return EXIT_VIOLATION
    else:
        _say(
            f"attack: built {result.rounds_built} non-deciding rounds, "
            f"{len(result.witnesses)} witnesses, {written} outputs written"
        )
    _say(f"trace written to {out}; report written to {report}")
    return EXIT_OK


def cmd_check(args) -> int:
    protocol = get_protocol(args.protocol, args.n)
    if args.mode == "exhaustive":
        result = checking.check_exhaustive(
            protocol,
            args.n,
            depth=args.depth,
            model=args.model,
            restricted=args.restricted,
            budget=args.budget,
        )
    else:
        if args.seed is None:
            raise UsageError("fuzz mode requires --seed")
        result = checking.check_fuzz(
            protocol,
            args.n,
            runs=args.runs,
            depth=args.depth,
            seed=args.seed,
            model=args.model,
            restricted=args.restricted,
        )
    if result.ok:
        _say(
            f"check: no violation ({args.mode}, protocol={args.protocol}, n={args.n}, "
            f"depth={args.depth}, {result.explored} rounds explored)"
        )
        return EXIT_OK
    v = result.violation
    out = _outpath(args.out, "violation.trace.jsonl")
    v.trace.write(out)
    report = _outpath(args.report, "violation.report.jsonl")
    _write_jsonl(report, [v.record()])
    _say(
        f"check: {v.kind} violation at round {v.round}, inputs={list(v.inputs)}, "
        f"outputs={v.outputs}"
    )
    _say(f"replayable trace written to {out}; report written to {report}")
    return EXIT_VIOLATION


def cmd_simulate(args) -> int:
    model = stack_model(args.stack)
    protocol = build_stack(args.stack, args.protocol, args.n)
    inputs = _parse_inputs(args, args.n)
    out = _outpath(args.out, "simulate.trace.jsonl")
    report_path = _outpath(args.report, "simulate.report.jsonl")
    records = []
    code = EXIT_OK

    if model in ("fts", "ftr"):
        policy = _make_policy(args.adversary, model, args.n, args.seed, False)
        config = initial_configuration(protocol, inputs)
        result = run(config, protocol, policy, args.horizon, keep_configs=True)
        result.trace.write(out)
        models = args.stack.split("-over-")
        if models[-2:] == ["fts", "ftr"]:
            rounds = getcore_rounds(result.configs, [s.fault for s in result.trace.steps])
            for rep in rounds:
                records.append(
                    {
                        "sim_round": rep.sim_round,
                        "core": list(rep.core),
                        "core_size": len(rep.core),
                        "fault": {
                            "sender": rep.fault.sender,
                            "victims": sorted(rep.fault.victims),
                        },
                    }
                )
            if args.stack == "fts-over-ftr":
                ok = _getcore_equivalent(args, result, rounds, inputs)
                records.append({"equivalent_direct_run": ok})
                if not ok:
                    code = EXIT_VIOLATION
            _say(
                f"simulate: {len(rounds)} simulated rounds, "
                f"min core size {min((len(r.core) for r in rounds), default=args.n)}"
            )
        if models[-2:] == ["flp", "ftr"]:
            ledger = piggyback_ledger(result.final_config)
            undelivered = [e for e in ledger if not e.fully_delivered(args.n)]
            for e in ledger:
                records.append(
                    {
                        "id": [e.sender, e.seq],
                        "dest": e.dest,
                        "sent_round": e.sent_round,
                        "delivered": {str(q): r for q, r in e.deliveries},
                        "lag": e.max_lag(),
                    }
                )
            _say(
                f"simulate: {len(ledger)} simulated messages, "
                f"{len(undelivered)} not fully delivered"
            )
    else:
        scheduler = _scheduler_for(args, args.n)
        result = run_async(inputs, protocol, scheduler, args.horizon)
        result.trace.write(out)
        final = result.final_state
        proj = project_synchronized_run(
            [s.internal for s in final.states], final.crashed, protocol.inner, inputs
        )
        records.append(
            {
                "crashed": proj.crashed,
                "min_round": proj.min_round,
                "completed_rounds": {str(q): r for q, r in proj.completed_rounds.items()},
                "projection_valid": proj.report.valid,
                "problems": proj.report.problems,
            }
        )
        if not proj.report.valid:
            code = EXIT_VIOLATION
        _say(
            f"simulate: crashed={proj.crashed} min_round={proj.min_round} "
            f"projection_valid={proj.report.valid}"
        )

    _write_jsonl(report_path, records)
    _say(f"trace written to {out}; report written to {report_path}")
    return code


def _getcore_equivalent(args, result, rounds, inputs) -> bool:
    """Wrapped run must equal the base protocol run directly under the
    classified fault sequence, state for state and output for output."""
    base = get_protocol(args.protocol, args.n)
    direct = initial_configuration(base, inputs)
    for rep in rounds:
        direct = step_fts(direct, base, rep.fault)
        wrapped = result.configs[3 * rep.sim_round]
        for q in range(args.n):
            if wrapped.states[q].internal.inner != direct.states[q].internal:
                return False
            if wrapped.states[q].output != direct.states[q].output:
                return False
    return True


def cmd_validate(args) -> int:
    trace = ExecutionTrace.read(args.trace)
    report = validate_trace(trace)
    if report.valid:
        _say(f"validate: {args.trace} ok ({len(trace.steps)} steps, model {trace.model})")
        return EXIT_OK
    for p in report.problems:
        _say(f"validate: {p}")
    return EXIT_TRACE


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------


def _build_parser() -> _Parser:
    parser = _Parser(prog="adversim", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, horizon_default=30):
        p.add_argument("--protocol", required=True, help="protocol or stack:base id")
        p.add_argument("--n", type=int, required=True)
        p.add_argument("--inputs", help="comma-separated bits, one per process")
        p.add_argument("--seed", type=int, help="single seed for all randomized choices")
        p.add_argument("--horizon", type=int, default=horizon_default)
        p.add_argument("--out", help="trace output path (default under $ADVERSIM_OUTDIR)")

    p = sub.add_parser("run", help="execute one model directly")
    common(p)
    p.add_argument("--model", choices=("fts", "ftr", "flp"), required=True)
    p.add_argument("--adversary", default="none", help="none | silent:P | script:PATH | random")
    p.add_argument("--restricted", action="store_true", help="forbid full-silence faults")
    p.add_argument("--scheduler", default="round-robin", help="round-robin | random | script:PATH")
    p.add_argument("--crash", help="PID:STEP crash directive (flp)")
    p.add_argument("--fairness-window", type=int, help="audit fairness with this window (flp)")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("attack", help="synthesize a non-deciding execution")
    p.add_argument("--protocol", required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--rounds", type=int, default=30)
    p.add_argument("--cap", type=int, help="oracle round cap (default 10n)")
    p.add_argument("--restricted", action="store_true", help="forbid full-silence faults")
    p.add_argument("--out", help="trace output path")
    p.add_argument("--report", help="witness report path")
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("check", help="agreement/validity/write-once checking")
    p.add_argument("--protocol", required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--mode", choices=("exhaustive", "fuzz"), default="exhaustive")
    p.add_argument("--model", choices=("fts", "ftr"), default="fts")
    p.add_argument("--depth", type=int, default=4)
    p.add_argument("--runs", type=int, default=1000, help="fuzz run count")
    p.add_argument("--seed", type=int)
    p.add_argument("--budget", type=int, default=2_000_000)
    p.add_argument("--restricted", action="store_true")
    p.add_argument("--out", help="violation trace path")
    p.add_argument("--report", help="violation report path")
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("simulate", help="run a composed model stack")
    common(p, horizon_default=60)
    p.add_argument(
        "--stack",
        required=True,
        help="fts-over-ftr | ftr-over-flp | flp-over-ftr | nested (a-over-b-over-c)",
    )
    p.add_argument("--adversary", default="none")
    p.add_argument("--scheduler", default="round-robin")
    p.add_argument("--crash", help="PID:STEP crash directive (flp engine)")
    p.add_argument("--report", help="faithfulness report path")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("validate", help="replay and validate a trace file")
    p.add_argument("trace", help="trace file path")
    p.set_defaults(func=cmd_validate)

    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        _say(f"adversim: {exc}")
        return EXIT_USAGE
    except UnknownProtocolError as exc:
        _say(f"adversim: {exc}")
        return EXIT_UNKNOWN_PROTOCOL
    except OracleCapExceeded as exc:
        _say(f"adversim: {exc}")
        return EXIT_ORACLE_CAP
    except BudgetExceeded as exc:
        _say(f"adversim: {exc}")
        return EXIT_BUDGET
    except (TraceFormatError, FileNotFoundError) as exc:
        _say(f"adversim: {exc}")
        return EXIT_TRACE
    except (AgreementViolation, EmulationLemmaViolation) as exc:
        _say(f"adversim: {exc}")
        return EXIT_VIOLATION
    except AdversimError as exc:
        _say(f"adversim: internal error: {exc}")
        return 70


if __name__ == "__main__":
    sys.exit(main())
