import pytest

from src.core.exceptions import InvariantViolation
from src.schemas.audit import AuditAction, AuditRecord
from src.schemas.handover import HandoverPackage, PolicySnapshot
from src.schemas.intent import ContextTag, SemanticTTL, TaskState
from src.schemas.node import NodeProfile, RankingWeights
from src.schemas.scenario import RadioModel
from src.services.rendezvous import RendezvousStore, audit_export, check_audit, checkpoint, nearest_rendezvous, recover

CTX_A = ContextTag(zone="A", intent_version=1)


def pkg(intent_id, units=10, created_at=0, budget=10_000, package_id=None):
    ttl = SemanticTTL(created_at=created_at, time_budget=budget, context_tag=CTX_A, relevance_threshold=0.5)
    state = TaskState(
        subtask_id=f"{intent_id}.st1",
        work_units=40,
        progress=units / 40,
        executed_units=units,
        host_agent="A",
        checkpoint_time=created_at,
        context_tag=CTX_A,
    )
    return HandoverPackage(
        package_id=package_id or f"pkg-{intent_id}-{units}",
        intent_id=intent_id,
        task_state=state,
        policy_snapshot=PolicySnapshot(weights=RankingWeights().canonical()),
        policy_size=200,
        ttl=ttl,
        link_params=b"\x00" * 8,
        source_node="A",
        state_size=1000,
        size_bytes=1208,
    )


def actions(store):
    return [r.action for r in store.audit]


def test_checkpoint_then_recover_latest_entry():
    store = RendezvousStore(node_id="R")
    checkpoint(store, pkg("i1", units=10), now=100)
    checkpoint(store, pkg("i1", units=20), now=200)

    found = recover(store, "i1", now=300, ctx_now=CTX_A)

    assert found.checkpoint_units == 20
    assert actions(store) == [AuditAction.CACHE, AuditAction.CACHE, AuditAction.FETCH]
    assert store.audit[0].actor == "A"
    assert store.audit[-1].detail["units"] == 20


def test_recover_miss_returns_none_without_audit():
    store = RendezvousStore(node_id="R")
    assert recover(store, "nothing", now=5, ctx_now=CTX_A) is None
    assert store.audit == []


def test_full_store_evicts_the_stalest_ttl():
    store = RendezvousStore(node_id="R", capacity=2)
    checkpoint(store, pkg("i1", budget=5_000), now=10)
    checkpoint(store, pkg("i2", budget=9_000), now=20)
    checkpoint(store, pkg("i3", budget=9_000), now=30)

    assert list(store.entries) == ["i2", "i3"]
    evicted = [r for r in store.audit if r.action == AuditAction.EVICT]
    assert [(r.intent_id, r.detail["reason"]) for r in evicted] == [("i1", "capacity")]


def test_expired_entries_are_evicted_on_read():
    store = RendezvousStore(node_id="R")
    checkpoint(store, pkg("i1", budget=1_000), now=10)
    assert recover(store, "i1", now=1_001, ctx_now=CTX_A) is None
    assert "i1" not in store.entries
    assert actions(store)[-1] == AuditAction.EVICT


def test_irrelevant_context_is_not_served():
    store = RendezvousStore(node_id="R")
    checkpoint(store, pkg("i1"), now=10)
    assert recover(store, "i1", now=20, ctx_now=ContextTag(zone="A", intent_version=2)) is None
    assert "i1" in store.entries
    assert AuditAction.FETCH not in actions(store)


def test_audit_log_is_append_only_in_time():
    store = RendezvousStore(node_id="R")
    store.append_audit(50, AuditAction.HANDOVER_DECISION, "i1", actor="A", target="N")
    with pytest.raises(InvariantViolation):
        store.append_audit(49, AuditAction.TTL_VERDICT, "i1")
    assert audit_export(store) == store.audit
    assert audit_export(store) is not store.audit


def test_fetch_without_cache_breaks_the_audit():
    fetch = AuditRecord(at=5, actor="R", action=AuditAction.FETCH, intent_id="i1")
    with pytest.raises(InvariantViolation):
        check_audit([fetch])
    cache = AuditRecord(at=1, actor="A", action=AuditAction.CACHE, intent_id="i1")
    check_audit([cache, fetch])


def test_nearest_rendezvous_with_tiebreak_and_availability():
    radio = RadioModel(backhaul_range=100)
    origin = NodeProfile(node_id="A", position=(0, 0), coverage_radius=10, cpu_capacity=10)
    rv = [
        NodeProfile(node_id="R2", position=(0, 50), coverage_radius=10, cpu_capacity=10, is_rendezvous=True),
        NodeProfile(node_id="R1", position=(50, 0), coverage_radius=10, cpu_capacity=10, is_rendezvous=True),
        NodeProfile(node_id="R3", position=(150, 0), coverage_radius=10, cpu_capacity=10, is_rendezvous=True),
    ]
    assert nearest_rendezvous(origin, rv, radio).node_id == "R1"
    assert nearest_rendezvous(origin, rv, radio, {"R1": False}).node_id == "R2"
    assert nearest_rendezvous(origin, rv, radio, {"R1": False, "R2": False}) is None
