import zlib

import pytest

from src.core.exceptions import InvariantViolation, PastEvent
from src.schemas.trace import EventKind
from src.simkernel.kernel import EventTrace, Kernel
from src.simkernel.rng import MOBILITY, SWARM, RandomStreams, derive_seed


def test_events_pop_by_time_then_schedule_order():
    kernel = Kernel()
    kernel.at(20, EventKind.USER_MOVED, tag="late")
    kernel.at(10, EventKind.USER_MOVED, tag="first")
    kernel.at(10, EventKind.USER_MOVED, tag="second")

    fired = [(e.fire_at, e.payload["tag"]) for e in kernel.drain(100)]

    assert fired == [(10, "first"), (10, "second"), (20, "late")]
    assert kernel.now == 100
    assert kernel.processed == 3


def test_scheduling_in_the_past_raises():
    kernel = Kernel()
    kernel.at(50, EventKind.USER_MOVED)
    list(kernel.drain(50))
    with pytest.raises(PastEvent):
        kernel.at(49, EventKind.USER_MOVED)


def test_cancelled_events_are_skipped():
    kernel = Kernel()
    keep = kernel.at(5, EventKind.USER_MOVED, tag="keep")
    drop = kernel.at(6, EventKind.USER_MOVED, tag="drop")
    Kernel.cancel(drop)

    assert len(kernel) == 1
    assert [e.payload["tag"] for e in kernel.drain(10)] == ["keep"]
    assert keep.seq < drop.seq


def test_drain_stops_at_the_horizon():
    kernel = Kernel()
    kernel.at(5, EventKind.USER_MOVED)
    kernel.at(15, EventKind.USER_MOVED)
    assert len(list(kernel.drain(10))) == 1
    assert len(kernel) == 1
    assert kernel.now == 10


def test_handlers_may_schedule_at_the_current_time():
    kernel = Kernel()
    kernel.at(3, EventKind.LINK_LOST)
    kinds = []
    for event in kernel.drain(10):
        kinds.append(event.kind)
        if event.kind == EventKind.LINK_LOST:
            kernel.after(0, EventKind.LINK_ESTABLISHED)
    assert kinds == [EventKind.LINK_LOST, EventKind.LINK_ESTABLISHED]


def test_trace_refuses_to_go_backwards():
    trace = EventTrace()
    trace.append(10, "Start")
    with pytest.raises(InvariantViolation):
        trace.append(9, "End")


def test_trace_lines_are_canonical_json():
    trace = EventTrace()
    trace.append(0, "Start", b=1, a=2)
    assert trace.lines() == ['{"kind":"Start","payload":{"a":2,"b":1},"seq":0,"t":0}']
    assert trace.to_bytes().endswith(b"\n")
    assert EventTrace().to_bytes() == b""


# =========================================================================
# Seeded substreams
# =========================================================================

def test_derive_seed_is_a_stable_hash():
    assert derive_seed(7, "swarm") == (7 ^ (zlib.crc32(b"swarm") & 0xFFFFFFFF))


def test_seeds_a_multiple_of_2_32_apart_do_not_collide():
    assert derive_seed(7, "swarm") != derive_seed(7 + 2 ** 32, "swarm")
    assert RandomStreams(7).stream(SWARM).random() != RandomStreams(7 + 2 ** 32).stream(SWARM).random()


def test_negative_seeds_are_rejected():
    with pytest.raises(ValueError):
        derive_seed(-1, "swarm")


def test_substreams_do_not_interfere():
    left, right = RandomStreams(42), RandomStreams(42)
    for _ in range(100):
        left.stream(SWARM).random()
    assert left.stream(MOBILITY).random() == right.stream(MOBILITY).random()


def test_different_seeds_give_different_draws():
    assert RandomStreams(1).stream(SWARM).random() != RandomStreams(2).stream(SWARM).random()
