from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Any, Dict, Iterable, List, Optional, Sequence

import structlog

from src.core.exceptions import InvariantViolation
from src.schemas.audit import AuditAction, AuditRecord
from src.schemas.handover import HandoverPackage
from src.schemas.intent import ContextTag
from src.schemas.node import NodeProfile
from src.schemas.scenario import RadioModel
from src.services.handover import ttl_valid
from src.simkernel.radio import distance

log = structlog.get_logger(__name__)


@dataclass
class CacheEntry:
    package: HandoverPackage
    cached_at: int

    @property
    def expires_at(self) -> int:
        return self.package.ttl.created_at + self.package.ttl.time_budget


@dataclass
class RendezvousStore:
    node_id: str
    capacity: int = 64
    entries: "OrderedDict[str, CacheEntry]" = field(default_factory=OrderedDict)
    audit: List[AuditRecord] = field(default_factory=list)

    def append_audit(self, at: int, action: AuditAction, intent_id: str, actor: Optional[str] = None, **detail: Any) -> AuditRecord:
        if self.audit and at < self.audit[-1].at:
            raise InvariantViolation(f"audit at {self.node_id} went backwards: {at} < {self.audit[-1].at}")
        record = AuditRecord(at=at, actor=actor or self.node_id, action=action, intent_id=intent_id, detail=detail)
        self.audit.append(record)
        return record


def _evict(store: RendezvousStore, intent_id: str, now: int, reason: str) -> None:
    store.entries.pop(intent_id)
    store.append_audit(now, AuditAction.EVICT, intent_id, reason=reason)


def checkpoint(store: RendezvousStore, pkg: HandoverPackage, now: int) -> None:
    if pkg.intent_id not in store.entries and len(store.entries) >= store.capacity:
        # Stalest TTL first, then the oldest entry.
        victim = min(store.entries.items(), key=lambda kv: (kv[1].expires_at, kv[1].cached_at, kv[0]))[0]
        _evict(store, victim, now, reason="capacity")
    store.entries[pkg.intent_id] = CacheEntry(package=pkg, cached_at=now)
    store.append_audit(
        now,
        AuditAction.CACHE,
        pkg.intent_id,
        actor=pkg.source_node,
        package_id=pkg.package_id,
        units=pkg.checkpoint_units,
    )


def recover(store: RendezvousStore, intent_id: str, now: int, ctx_now: ContextTag) -> Optional[HandoverPackage]:
    entry = store.entries.get(intent_id)
    if entry is None:
        return None
    if now > entry.expires_at:
        _evict(store, intent_id, now, reason="expired")
        return None
    if not ttl_valid(entry.package.ttl, now, ctx_now):
        return None
    store.append_audit(now, AuditAction.FETCH, intent_id, package_id=entry.package.package_id, units=entry.package.checkpoint_units)
    log.debug("rendezvous.fetch", node=store.node_id, intent_id=intent_id, units=entry.package.checkpoint_units)
    return entry.package


def audit_export(store: RendezvousStore) -> List[AuditRecord]:
    return list(store.audit)


def check_audit(records: Iterable[AuditRecord]) -> None:
    """Raises when a Fetch has no earlier Cache for the same intent."""
    cached = set()
    for record in records:
        if record.action == AuditAction.CACHE:
            cached.add(record.intent_id)
        elif record.action == AuditAction.FETCH and record.intent_id not in cached:
            raise InvariantViolation(f"Fetch of '{record.intent_id}' at {record.at} without a prior Cache")


def nearest_rendezvous(
    origin: NodeProfile,
    rendezvous: Sequence[NodeProfile],
    radio: RadioModel,
    available: Optional[Dict[str, bool]] = None,
) -> Optional[NodeProfile]:
    """Closest rendezvous node within backhaul range; ties go to the smaller node_id."""
    reachable = [
        node
        for node in rendezvous
        if distance(origin.position, node.position) <= radio.backhaul_range
        and (available is None or available.get(node.node_id, True))
    ]
    if not reachable:
        return None
    return min(reachable, key=lambda n: (distance(origin.position, n.position), n.node_id))
