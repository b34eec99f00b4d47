"""Model reductions: gather core, synchronizer projection, piggyback ledger."""

import random

import pytest

from adversim.core import ReceiveFault, initial_configuration, validate_trace
from adversim.async_engine import make_scheduler, run_async
from adversim.protocols import phase_king_lite
from adversim.simulations import (
    EmulationLemmaViolation,
    ResourceLimitError,
    _dec,
    _enc,
    build_stack,
    classify_delivery,
    core_set,
    get_core_wrap,
    getcore_rounds,
    piggyback_ledger,
    piggyback_wrap,
    project_synchronized_run,
    stack_model,
    synchronizer_wrap,
)
from adversim.sync_engine import (
    NO_FAULT,
    NoFaultPolicy,
    RoundFault,
    ScriptedPolicy,
    SilentPolicy,
    enumerate_faults,
    run,
    step_fts,
)


def test_wire_codec_round_trip():
    values = [
        (1, b"\x00\xffpayload"),
        ((2, None, b""), "text", 5),
        [],
    ]
    for v in values:
        decoded = _dec(_enc(v))
        # lists decode as tuples; normalize for comparison
        def norm(x):
            if isinstance(x, (list, tuple)):
                return tuple(norm(y) for y in x)
            return x

        assert decoded == norm(v)


# -- get-core -----------------------------------------------------------------


def _wrapped_run(n, inputs, faults, rounds=1):
    base = phase_king_lite(n)
    wrapped = get_core_wrap(base, n)
    config = initial_configuration(wrapped, inputs)
    result = run(config, wrapped, ScriptedPolicy(faults, "ftr"), horizon=3 * rounds, keep_configs=True)
    return base, result


def test_no_drops_full_delivery():
    _, result = _wrapped_run(3, (1, 0, 0), [])
    rep = getcore_rounds(result.configs)[0]
    assert rep.core == (0, 1, 2)
    assert rep.fault == NO_FAULT
    assert all(len(v) == 2 for v in rep.delivery.values())  # n-1 senders each


def test_three_phase_silence_equals_direct_full_silence_fault():
    # silencing p on every phase of a simulated round reproduces the
    # fail-to-send fault (p, everyone else), state for state
    n = 3
    p = 1
    silence = ReceiveFault({q: p for q in range(n) if q != p})
    base, result = _wrapped_run(n, (1, 0, 0), [silence] * 3)
    rep = getcore_rounds(result.configs)[0]
    assert rep.fault == RoundFault(p, [0, 2])
    assert rep.core == (0, 2)
    direct = step_fts(initial_configuration(base, (1, 0, 0)), base, RoundFault(p, [0, 2]))
    wrapped_inners = tuple(s.internal.inner for s in result.configs[3].states)
    assert wrapped_inners == tuple(s.internal for s in direct.states)


def test_adversarial_sample_always_classifiable():
    # random 3-phase fault combinations always land on a legal single-sender
    # pattern (the exhaustive sweep lives in the acceptance suite)
    n = 3
    faults = enumerate_faults("ftr", n)
    rng = random.Random(123)
    for _ in range(300):
        combo = [rng.choice(faults) for _ in range(3)]
        _, result = _wrapped_run(n, (1, 0, 0), combo)
        rep = getcore_rounds(result.configs)[0]
        assert len(rep.core) >= n - 1


def test_wrapped_decisions_agree_with_direct_run():
    n = 3
    base, result = _wrapped_run(n, (1, 1, 0), [], rounds=4)
    outs = result.final_config.outputs()
    assert outs == {0: 1, 1: 1, 2: 1}  # failure-free majority decision


def test_core_set_and_classify_hand_cases():
    delivery = {0: (1, 2), 1: (0, 2), 2: (0, 1)}
    assert core_set(delivery, 3) == {0, 1, 2}
    assert classify_delivery(delivery, 3) == NO_FAULT
    partial = {0: (2,), 1: (0, 2), 2: (0,)}
    assert core_set(partial, 3) == {0, 2}
    assert classify_delivery(partial, 3) == RoundFault(1, [0, 2])
    broken = {0: (2,), 1: (0,), 2: (0, 1)}  # 0 misses 1, 1 misses 2
    assert len(core_set(broken, 3)) < 2
    with pytest.raises(EmulationLemmaViolation):
        classify_delivery(broken, 3)


def test_lemma_violation_carries_script():
    err = EmulationLemmaViolation("core too small", script=[ReceiveFault({0: 1})])
    assert err.script is not None
    assert "fault script" in str(err)


def test_counting_bound_behind_the_lemma():
    for n in range(3, 11):
        assert n * (n - 2) > n * (n - 3)


def test_get_core_requires_three():
    with pytest.raises(Exception):
        get_core_wrap(phase_king_lite(3), 2)


# -- synchronizer ---------------------------------------------------------------


def test_rounds_advance_unboundedly_with_horizon():
    proto = synchronizer_wrap(phase_king_lite(3), 3)
    lows = []
    for horizon in (60, 120, 240):
        result = run_async((1, 0, 0), proto, make_scheduler("round-robin", 3), horizon=horizon)
        lows.append(min(s.internal.round for s in result.final_state.states))
    assert lows[0] < lows[1] < lows[2]


def test_advance_needs_single_message_at_n3():
    # n-2 = 1: a process moves to round 2 after hearing one round-1 message
    proto = synchronizer_wrap(phase_king_lite(3), 3)
    from adversim.async_engine import AsyncEvent, initial_async_state, step_async

    state = initial_async_state(proto, (1, 0, 0))
    state, _ = step_async(state, proto, AsyncEvent(pid=0))  # broadcasts round 1
    msg = [m for m in state.in_flight if m.dest == 1][0]
    state, _ = step_async(state, proto, AsyncEvent(pid=1, deliver=msg.index))
    assert state.states[1].internal.round == 2


def test_projection_no_crash_validates():
    base = phase_king_lite(3)
    proto = synchronizer_wrap(base, 3)
    result = run_async((1, 1, 0), proto, make_scheduler("round-robin", 3), horizon=300)
    final = result.final_state
    proj = project_synchronized_run(
        [s.internal for s in final.states], final.crashed, base, (1, 1, 0)
    )
    assert proj.crashed is None
    assert proj.report.valid, proj.report.problems
    assert proj.min_round >= 20


def test_projection_with_crash_validates():
    base = phase_king_lite(4)
    proto = synchronizer_wrap(base, 4)
    sched = make_scheduler("seeded-random-fair", 4, seed=3, crash=(1, 33))
    result = run_async((1, 0, 1, 0), proto, sched, horizon=600)
    final = result.final_state
    assert final.crashed == 1
    proj = project_synchronized_run(
        [s.internal for s in final.states], final.crashed, base, (1, 0, 1, 0)
    )
    assert proj.report.valid, proj.report.problems
    assert proj.min_round >= 20
    assert proj.completed_rounds[1] < proj.min_round  # the crashed one lags


def test_projection_trace_is_plain_ftr():
    base = phase_king_lite(3)
    proto = synchronizer_wrap(base, 3)
    result = run_async((1, 0, 0), proto, make_scheduler("round-robin", 3), horizon=200)
    final = result.final_state
    proj = project_synchronized_run(
        [s.internal for s in final.states], final.crashed, base, (1, 0, 0)
    )
    assert proj.trace.model == "ftr"
    assert proj.trace.protocol == "phase-king-lite"
    report = validate_trace(proj.trace)
    assert report.valid


# -- piggyback --------------------------------------------------------------------


def _piggy(n=3, seen_cap=100_000):
    inner = synchronizer_wrap(phase_king_lite(n), n)
    return piggyback_wrap(inner, n, seen_cap=seen_cap)


def test_no_drops_delivers_within_one_round():
    n = 3
    proto = _piggy(n)
    result = run(initial_configuration(proto, (1, 0, 0)), proto, NoFaultPolicy("ftr"), horizon=20)
    ledger = piggyback_ledger(result.final_config)
    assert ledger
    for entry in ledger:
        if entry.sent_round <= 18:
            assert entry.fully_delivered(n)
            assert entry.max_lag() <= 1


def test_silent_sender_everyone_else_delivered():
    n = 3
    p = 2
    proto = _piggy(n)
    result = run(
        initial_configuration(proto, (1, 1, 0)), proto, SilentPolicy(p, n, "ftr"), horizon=30
    )
    ledger = piggyback_ledger(result.final_config)
    others = [e for e in ledger if e.sender != p and e.sent_round <= 27]
    assert others
    for entry in others:
        assert entry.fully_delivered(n), entry
    from_p = [e for e in ledger if e.sender == p]
    assert all(not e.deliveries for e in from_p)  # p's messages never arrive


def test_drop_then_relent_delivers_via_piggyback():
    # drop the only real message carrying a fresh simulated send; the copy
    # rides along on the next round's broadcasts instead
    n = 3
    proto = _piggy(n)
    config = initial_configuration(proto, (1, 0, 0))
    # simulated sends enter seen-sets during round 1; real round 2 carries
    # them; make process 1 miss process 0's round-2 broadcast, then relent
    faults = [ReceiveFault({}), ReceiveFault({1: 0}), ReceiveFault({})]
    result = run(config, proto, ScriptedPolicy(faults, "ftr"), horizon=4)
    ledger = piggyback_ledger(result.final_config)
    lagged = [
        e
        for e in ledger
        if e.sender == 0 and e.sent_round == 1 and dict(e.deliveries).get(1) == 3
    ]
    assert lagged, "dropped copy must arrive one round later via another carrier"


def test_seen_cap_enforced():
    proto = _piggy(3, seen_cap=5)
    config = initial_configuration(proto, (1, 0, 0))
    with pytest.raises(Exception) as info:
        run(config, proto, NoFaultPolicy("ftr"), horizon=20)
    assert isinstance(info.value.__cause__, ResourceLimitError) or isinstance(
        info.value, ResourceLimitError
    )


# -- stacks -----------------------------------------------------------------------


def test_stack_models():
    assert stack_model("fts-over-ftr") == "ftr"
    assert stack_model("ftr-over-flp") == "flp"
    assert stack_model("flp-over-ftr") == "ftr"
    assert stack_model("fts-over-ftr-over-flp") == "flp"


def test_build_stack_two_level():
    proto = build_stack("fts-over-ftr", "phase-king-lite", 3)
    assert proto.protocol_id == "fts-over-ftr:phase-king-lite"
    result = run(
        initial_configuration(proto, (1, 1, 0)), proto, NoFaultPolicy("ftr"), horizon=12
    )
    assert result.final_config.outputs() == {0: 1, 1: 1, 2: 1}


def test_build_stack_three_level_runs_async():
    proto = build_stack("fts-over-ftr-over-flp", "phase-king-lite", 3)
    result = run_async((1, 1, 0), proto, make_scheduler("round-robin", 3), horizon=500)
    assert result.final_state.outputs() == {0: 1, 1: 1, 2: 1}


def test_build_stack_flp_over_ftr_bridges_round_protocols():
    proto = build_stack("flp-over-ftr", "phase-king-lite", 3)
    assert proto.protocol_id == "flp-over-ftr:phase-king-lite"
    result = run(
        initial_configuration(proto, (1, 1, 0)), proto, NoFaultPolicy("ftr"), horizon=25
    )
    assert result.final_config.outputs() == {0: 1, 1: 1, 2: 1}


def test_build_stack_rejects_garbage():
    from adversim.core import AdversimError

    with pytest.raises(AdversimError):
        build_stack("fts", "phase-king-lite", 3)
    with pytest.raises(AdversimError):
        build_stack("fts-over-flp", "phase-king-lite", 3)
    with pytest.raises(AdversimError):
        build_stack("ftr-over-xyz", "phase-king-lite", 3)


def test_stack_traces_validate():
    proto = build_stack("fts-over-ftr", "phase-king-lite", 3)
    result = run(
        initial_configuration(proto, (1, 0, 0)), proto, SilentPolicy(0, 3, "ftr"), horizon=9
    )
    report = validate_trace(result.trace)
    assert report.valid, report.problems
