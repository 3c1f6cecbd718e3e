import hashlib
import json
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Deque, Dict, List, Optional, Set

import structlog

from src.core.config import Settings, settings as default_settings
from src.core.exceptions import InvariantViolation
from src.schemas.audit import AuditAction, AuditRecord
from src.schemas.handover import HandoverPackage, Phase
from src.schemas.intent import ContextTag, Intent, SemanticTTL, TaskState
from src.schemas.node import NodeMetrics, NodeProfile
from src.schemas.scenario import FaultAction, Knobs, Mode, MobilityPath, Scenario, UserSpec
from src.schemas.trace import SCHEMA_VERSION, EventKind
from src.services.adapt import AgentState
from src.services.handover import AgentSession, ttl_valid
from src.services.intent_service import IdAllocator, decompose, topological_order, validate_intent
from src.services.rendezvous import RendezvousStore, check_audit, checkpoint, nearest_rendezvous
from src.simkernel.kernel import Event, EventTrace, Kernel
from src.simkernel.mobility import materialize, position_at, speed_at
from src.simkernel.radio import connected, distance, rssi, snr
from src.simkernel.rng import SHADOWING, RandomStreams

log = structlog.get_logger(__name__)


@dataclass
class UserRuntime:
    spec: UserSpec
    path: MobilityPath
    connected: Set[str] = field(default_factory=set)
    intent_version: int = 1
    intent: Optional[Intent] = None
    first_submitted_at: Optional[int] = None
    session: Optional[AgentSession] = None
    pending_submit: bool = False
    pending_result: Optional[str] = None
    done: bool = False

    @property
    def user_id(self) -> str:
        return self.spec.user_id

    @property
    def path_start(self) -> int:
        return self.path.waypoints[0].at


@dataclass
class SimulationResult:
    trace: EventTrace
    audits: Dict[str, List[AuditRecord]]
    scenario_hash: str
    seed: int
    mode: Mode
    events_processed: int


def scenario_hash(scenario: Scenario) -> str:
    canonical = json.dumps(scenario.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


class Simulation:
    """One deterministic run of a scenario in one mode with one seed."""

    def __init__(self, scenario: Scenario, seed: int, config: Optional[Settings] = None):
        # Imported here: protocol depends on this module's types.
        from src.services.protocol import BaselineProtocol, WaanProtocol

        self.knobs: Knobs = scenario.knobs.resolved(config or default_settings)
        self.scenario = scenario.model_copy(update={"knobs": self.knobs})
        self.seed = int(seed)
        self.radio = scenario.radio
        self.kernel = Kernel()
        self.trace = EventTrace()
        self.streams = RandomStreams(self.seed)
        self.ids = IdAllocator()

        self.nodes: Dict[str, NodeProfile] = {n.node_id: n for n in sorted(scenario.nodes, key=lambda n: n.node_id)}
        self.node_up: Dict[str, bool] = {n: True for n in self.nodes}
        self.link_up: Dict[str, bool] = {n: True for n in self.nodes}
        self.rendezvous_nodes = [n for n in self.nodes.values() if n.is_rendezvous]
        self.stores: Dict[str, RendezvousStore] = {
            n.node_id: RendezvousStore(node_id=n.node_id, capacity=self.knobs.rendezvous_capacity) for n in self.rendezvous_nodes
        }
        initial = self.knobs.initial_weights.canonical()
        self.agents: Dict[str, AgentState] = {n: AgentState(node_id=n, weights=initial) for n in self.nodes}

        self.users: Dict[str, UserRuntime] = {}
        for spec in sorted(scenario.users, key=lambda u: u.user_id):
            path = materialize(spec.path, scenario.world, scenario.end_time, self.seed)
            self.users[spec.user_id] = UserRuntime(spec=spec, path=path)

        self.sessions: Dict[str, AgentSession] = {}
        self.session_user: Dict[str, str] = {}
        self.quantum_events: Dict[str, Event] = {}
        self.run_queues: Dict[str, Deque[str]] = {}
        self.cpu_owner: Dict[str, Optional[str]] = {}
        self.ready_at: Dict[str, int] = {}
        self.quantum_started: Dict[str, int] = {}
        self.busy_until: Dict[str, int] = {}
        self.busy_ms: Dict[str, int] = {n: 0 for n in self.nodes}
        self.executed_on: Dict[str, int] = {n: 0 for n in self.nodes}
        self.unanchored_decisions: Set[str] = set()
        self.executed: Dict[str, int] = {}
        self.discarded: Dict[str, int] = {}

        self.protocol = WaanProtocol(self) if scenario.mode == Mode.WAAN else BaselineProtocol(self)
        self.handlers: Dict[EventKind, Callable[..., None]] = {
            EventKind.FAULT: self.on_fault,
            EventKind.USER_MOVED: self.on_user_moved,
            EventKind.LINK_LOST: self.on_link_lost,
            EventKind.LINK_ESTABLISHED: self.on_link_established,
            EventKind.INTENT_SUBMITTED: self.on_intent_submitted,
            EventKind.INTENT_REVISED: self.on_intent_revised,
            EventKind.COMPUTE_QUANTUM_DONE: self.on_compute_quantum_done,
            EventKind.RESULT_DELIVERED: self.on_result_delivered,
            EventKind.CHECKPOINT_DUE: self.on_checkpoint_due,
        }
        self.handlers.update(self.protocol.handlers())

    # ---- world state -------------------------------------------------

    @property
    def now(self) -> int:
        return self.kernel.now

    def available(self, node_id: str) -> bool:
        return self.node_up[node_id] and self.link_up[node_id]

    def hosted(self, node_id: str) -> int:
        return sum(1 for s in self.sessions.values() if s.host_node == node_id and not s.terminal)

    def has_capacity(self, node_id: str) -> bool:
        return self.hosted(node_id) < self.nodes[node_id].session_capacity

    def user_position(self, user: UserRuntime, t: int):
        return position_at(user.path, max(t, user.path_start))

    def user_of(self, session: AgentSession) -> UserRuntime:
        return self.users[self.session_user[session.session_id]]

    def serving_node(self, user: UserRuntime) -> Optional[str]:
        """Best-RSSI connected node (ties to the smaller id)."""
        if not user.connected:
            return None
        pos = self.user_position(user, self.now)
        return min(user.connected, key=lambda n: (-rssi(self.radio, distance(pos, self.nodes[n].position)), n))

    def ctx_now(self, user: UserRuntime) -> ContextTag:
        serving = self.serving_node(user)
        zone = self.nodes[serving].zone_id if serving is not None else None
        return ContextTag(zone=zone, intent_version=user.intent_version)

    def node_metrics(self, node_id: str, user: UserRuntime, sampled_at: int) -> Optional[NodeMetrics]:
        """Metric report of a candidate, or None when it is down or has no session capacity left."""
        if not self.available(node_id) or not self.has_capacity(node_id):
            return None
        node = self.nodes[node_id]
        pos = self.user_position(user, sampled_at)
        d = distance(pos, node.position)
        return NodeMetrics(
            node_id=node_id,
            sampled_at=sampled_at,
            cpu_load=min(1.0, node.background_load + self.hosted(node_id) / node.session_capacity),
            mem_used=node.background_mem,
            bandwidth_avail=node.bandwidth,
            rssi=rssi(self.radio, d),
            snr=snr(self.radio, d),
            mobility_speed=speed_at(user.path, max(sampled_at, user.path_start)),
            traffic_type=node.traffic_type,
        )

    def result_latency(self, session: AgentSession) -> int:
        base = self.radio.base_link_latency
        return base - base * session.link_bonus_pct // 100

    # ---- trace helpers -------------------------------------------------

    def record(self, kind, **payload) -> None:
        name = kind.value if isinstance(kind, EventKind) else kind
        self.trace.append(self.now, name, **payload)

    def mirror_audit(self, store: RendezvousStore, since: int) -> None:
        for entry in store.audit[since:]:
            self.record(
                "Audit",
                node=store.node_id,
                action=entry.action.value,
                actor=entry.actor,
                intent_id=entry.intent_id,
                detail=entry.detail,
            )

    def audit(self, near: str, action: AuditAction, intent_id: str, **detail) -> bool:
        """Appends an audit record at the rendezvous nearest `near`. False when none is reachable."""
        rv = nearest_rendezvous(self.nodes[near], self.rendezvous_nodes, self.radio, self.availability())
        if rv is None:
            return False
        store = self.stores[rv.node_id]
        before = len(store.audit)
        store.append_audit(self.now, action, intent_id, actor=near, **detail)
        self.mirror_audit(store, before)
        return True

    def availability(self) -> Dict[str, bool]:
        return {n: self.available(n) for n in self.nodes}

    def _phase_changed(self, session: AgentSession, old: Phase, new: Phase) -> None:
        self.record(
            "PhaseChanged",
            intent_id=session.intent_id,
            session=session.session_id,
            node=session.host_node,
            **{"from": old.value, "to": new.value},
        )

    def discard(self, session: AgentSession, units: int, reason: str) -> None:
        if units <= 0:
            return
        self.discarded[session.intent_id] = self.discarded.get(session.intent_id, 0) + units
        self.record("WorkDiscarded", intent_id=session.intent_id, session=session.session_id, units=units, reason=reason)

    # ---- connectivity -------------------------------------------------

    def refresh_connectivity(self, user: UserRuntime) -> None:
        if self.now < user.path_start:
            return
        pos = self.user_position(user, self.now)
        sigma = self.knobs.shadowing_sigma_db or 0.0
        rng = self.streams.stream(SHADOWING)
        now_connected = set()
        for node in self.nodes.values():
            if node.is_rendezvous:
                continue
            shadow = rng.gauss(0.0, sigma) if sigma > 0 else 0.0
            if self.available(node.node_id) and connected(self.radio, pos, node, shadow):
                now_connected.add(node.node_id)
        lost = sorted(user.connected - now_connected)
        gained = sorted(now_connected - user.connected)
        user.connected = now_connected
        for node_id in lost:
            self.kernel.at(self.now, EventKind.LINK_LOST, user_id=user.user_id, node_id=node_id)
        for node_id in gained:
            self.kernel.at(self.now, EventKind.LINK_ESTABLISHED, user_id=user.user_id, node_id=node_id)

    # ---- submission and compute -------------------------------------------------

    def submit(self, user: UserRuntime) -> Optional[AgentSession]:
        pos = self.user_position(user, self.now)
        hosts = sorted(
            (n for n in user.connected if self.has_capacity(n)),
            key=lambda n: (-rssi(self.radio, distance(pos, self.nodes[n].position)), n),
        )
        if not hosts:
            user.pending_submit = True
            return None
        user.pending_submit = False
        host = hosts[0]
        zone = self.ctx_now(user).zone
        resubmission = user.intent is not None
        if not resubmission:
            intent = decompose(user.spec.template, user.user_id, self.now, self.ids, zone=zone, version=user.intent_version)
            verdict = validate_intent(intent)
            if not verdict.ok:
                raise InvariantViolation(f"decomposed intent is invalid: {verdict.violations}", self.trace.records)
            intent = intent.model_copy(update={"subtasks": topological_order(intent)})
            user.first_submitted_at = self.now
        else:
            intent = user.intent.model_copy(
                update={
                    "ttl": SemanticTTL(
                        created_at=self.now,
                        time_budget=user.intent.ttl.time_budget,
                        context_tag=ContextTag(zone=zone, intent_version=user.intent_version),
                        relevance_threshold=user.intent.ttl.relevance_threshold,
                    )
                }
            )
        user.intent = intent

        session = AgentSession(
            session_id=self.ids.next("session"),
            intent=intent,
            host_node=host,
            current_state=TaskState.at(intent.subtasks[0], 0, host, self.now, intent.ttl.context_tag),
            weights=self.agents[host].weights,
            on_change=self._phase_changed,
        )
        self.sessions[session.session_id] = session
        self.session_user[session.session_id] = user.user_id
        user.session = session
        self.executed.setdefault(intent.intent_id, 0)
        self.discarded.setdefault(intent.intent_id, 0)

        self.record(
            "IntentResubmitted" if resubmission else EventKind.INTENT_SUBMITTED,
            intent_id=intent.intent_id,
            user_id=user.user_id,
            session=session.session_id,
            host=host,
            work_units=intent.work_units,
            max_latency=intent.qoe.max_latency,
            subtasks=[st.subtask_id for st in intent.subtasks],
        )
        log.info("intent.submitted", intent_id=intent.intent_id, host=host, resubmission=resubmission, t=self.now)
        self.schedule_quantum(session, delay=self.radio.base_link_latency)
        return session

    def resubmit(self, user: UserRuntime) -> None:
        if user.done:
            return
        if self.submit(user) is None:
            log.info("intent.resubmit_pending", user_id=user.user_id, t=self.now)

    def schedule_quantum(self, session: AgentSession, delay: int = 0) -> None:
        """Queues the session on its host; each node computes one quantum at a time, FIFO across sessions."""
        node_id = session.host_node
        self.ready_at[session.session_id] = self.now + delay
        queue = self.run_queues.setdefault(node_id, deque())
        if self.cpu_owner.get(node_id) != session.session_id and session.session_id not in queue:
            queue.append(session.session_id)
        if self.cpu_owner.get(node_id) == session.session_id:
            self._start_quantum(node_id, session.session_id)
        else:
            self.dispatch(node_id)

    def dispatch(self, node_id: str) -> None:
        if self.cpu_owner.get(node_id) is not None or not self.available(node_id):
            return
        queue = self.run_queues.get(node_id)
        if not queue:
            return
        session_id = queue.popleft()
        self.cpu_owner[node_id] = session_id
        self._start_quantum(node_id, session_id)

    def _start_quantum(self, node_id: str, session_id: str) -> None:
        start = max(self.now, self.ready_at.pop(session_id, self.now))
        self.quantum_started[session_id] = start
        self.quantum_events[session_id] = self.kernel.at(
            start + self.nodes[node_id].quantum_ms, EventKind.COMPUTE_QUANTUM_DONE, session_id=session_id
        )

    def release(self, node_id: str, session_id: str) -> None:
        """Frees the node's CPU if this session holds it and hands it to the next queued session."""
        if self.cpu_owner.get(node_id) != session_id:
            return
        self.cpu_owner[node_id] = None
        self.dispatch(node_id)

    def pause(self, session: AgentSession) -> None:
        Kernel.cancel(self.quantum_events.pop(session.session_id, None))
        self.quantum_started.pop(session.session_id, None)
        self.ready_at.pop(session.session_id, None)
        for queue in self.run_queues.values():
            if session.session_id in queue:
                queue.remove(session.session_id)
        for node_id, owner in list(self.cpu_owner.items()):
            if owner == session.session_id:
                self.release(node_id, session.session_id)

    def fail_and_resubmit(self, session: AgentSession, reason: str) -> None:
        """Reactive path: the session dies, its work is discarded and the intent starts over."""
        self.pause(session)
        session.transition(Phase.FAILED)
        self.discard(session, session.progress_units, reason)
        self.resubmit(self.user_of(session))

    def complete(self, session: AgentSession) -> None:
        self.pause(session)
        session.transition(Phase.COMPLETED)
        user = self.user_of(session)
        self.record(
            "IntentCompleted",
            intent_id=session.intent_id,
            session=session.session_id,
            node=session.host_node,
            executed_units=self.executed[session.intent_id],
        )
        if user.connected:
            self.kernel.at(self.now + self.result_latency(session), EventKind.RESULT_DELIVERED, session_id=session.session_id)
        else:
            user.pending_result = session.session_id

    # ---- event handlers -------------------------------------------------

    def on_fault(self, node_id: str, action: FaultAction) -> None:
        if action == FaultAction.NODE_DOWN:
            self.node_up[node_id] = False
        elif action == FaultAction.LINK_DOWN:
            self.link_up[node_id] = False
        else:
            self.link_up[node_id] = True
        self.record(EventKind.FAULT, node_id=node_id, action=action.value)
        log.info("fault.injected", node_id=node_id, action=action.value, t=self.now)
        for user in self.users.values():
            self.refresh_connectivity(user)
        if action != FaultAction.LINK_UP:
            self.protocol.on_node_failure(node_id)

    def on_user_moved(self, user_id: str) -> None:
        user = self.users[user_id]
        x, y = self.user_position(user, self.now)
        self.record(EventKind.USER_MOVED, user_id=user_id, x=round(x, 3), y=round(y, 3))
        self.refresh_connectivity(user)
        if user.pending_submit and user.connected:
            self.resubmit(user)
        tick = self.knobs.user_moved_tick_ms
        if self.now + tick <= self.scenario.end_time:
            self.kernel.after(tick, EventKind.USER_MOVED, user_id=user_id)

    def on_link_lost(self, user_id: str, node_id: str) -> None:
        self.record(EventKind.LINK_LOST, user_id=user_id, node_id=node_id)
        self.protocol.on_link_lost(self.users[user_id], node_id)

    def on_link_established(self, user_id: str, node_id: str) -> None:
        self.record(EventKind.LINK_ESTABLISHED, user_id=user_id, node_id=node_id)
        user = self.users[user_id]
        if user.pending_submit and node_id in user.connected:
            self.resubmit(user)
        if user.pending_result is not None and user.connected:
            session = self.sessions[user.pending_result]
            user.pending_result = None
            self.kernel.at(self.now + self.result_latency(session), EventKind.RESULT_DELIVERED, session_id=session.session_id)

    def on_intent_submitted(self, user_id: str) -> None:
        user = self.users[user_id]
        if self.submit(user) is None:
            log.info("intent.submit_pending", user_id=user_id, t=self.now)

    def on_intent_revised(self, user_id: str) -> None:
        user = self.users[user_id]
        user.intent_version += 1
        self.record(EventKind.INTENT_REVISED, user_id=user_id, intent_version=user.intent_version)

    def on_compute_quantum_done(self, session_id: str) -> None:
        session = self.sessions[session_id]
        self.quantum_events.pop(session_id, None)
        node_id = session.host_node
        started = self.quantum_started.pop(session_id, self.now)
        if session.phase != Phase.EXECUTING:
            self.release(node_id, session_id)
            return
        # One quantum at a time per node.
        if started < self.busy_until.get(node_id, 0):
            raise InvariantViolation(f"overlapping compute quanta on node '{node_id}' at t={self.now}", self.trace.records)
        self.busy_until[node_id] = self.now
        self.busy_ms[node_id] += self.now - started
        self.executed_on[node_id] += 1

        subtask = session.intent.subtasks[session.subtask_index]
        executed = session.current_state.executed_units + 1
        session.current_state = TaskState.at(subtask, executed, session.host_node, self.now, session.intent.ttl.context_tag)
        self.executed[session.intent_id] += 1
        self.record(
            EventKind.COMPUTE_QUANTUM_DONE,
            intent_id=session.intent_id,
            session=session_id,
            node=session.host_node,
            subtask=subtask.subtask_id,
            executed_units=executed,
            progress=session.current_state.progress,
        )
        if executed == subtask.work_units:
            self.record("SubtaskCompleted", intent_id=session.intent_id, subtask=subtask.subtask_id, node=session.host_node)
            session.completed_units += subtask.work_units
            session.subtask_index += 1
            if session.subtask_index == len(session.intent.subtasks):
                self.complete(session)
                return
            nxt = session.intent.subtasks[session.subtask_index]
            session.current_state = TaskState.at(nxt, 0, session.host_node, self.now, session.intent.ttl.context_tag)
        if not self.protocol.after_quantum(session):
            self.schedule_quantum(session)
        elif session.phase != Phase.EXECUTING:
            self.release(node_id, session_id)

    def on_result_delivered(self, session_id: str) -> None:
        session = self.sessions[session_id]
        user = self.user_of(session)
        ctx = self.ctx_now(user)
        valid = ttl_valid(session.intent.ttl, self.now, ctx)
        self.audit(session.host_node, AuditAction.TTL_VERDICT, session.intent_id, stage="result", valid=valid)
        if valid:
            latency = self.now - user.first_submitted_at
            self.record(
                EventKind.RESULT_DELIVERED,
                intent_id=session.intent_id,
                session=session_id,
                node=session.host_node,
                latency=latency,
                qoe_met=latency <= session.intent.qoe.max_latency,
            )
            user.done = True
            log.info("intent.delivered", intent_id=session.intent_id, latency=latency)
            return
        self.record("StaleDiscard", intent_id=session.intent_id, session=session_id, stage="result")
        self.record(EventKind.TTL_EXPIRED, intent_id=session.intent_id, session=session_id, zone=ctx.zone, intent_version=ctx.intent_version)
        self.discard(session, session.intent.work_units, "stale_result")
        self.resubmit(user)

    def on_checkpoint_due(self, session_id: str, rendezvous: str, package: HandoverPackage) -> None:
        if not self.available(rendezvous):
            return
        store = self.stores[rendezvous]
        before = len(store.audit)
        checkpoint(store, package, self.now)
        self.record(
            EventKind.CHECKPOINT_DUE,
            intent_id=package.intent_id,
            session=session_id,
            rendezvous=rendezvous,
            package_id=package.package_id,
            units=package.checkpoint_units,
            size_bytes=package.size_bytes,
        )
        self.mirror_audit(store, before)

    # ---- run -------------------------------------------------

    def header(self) -> Dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "scenario": self.scenario.name,
            "scenario_hash": scenario_hash(self.scenario),
            "seed": self.seed,
            "mode": self.scenario.mode.value,
            "config": self.scenario.model_dump(mode="json"),
        }

    def check_invariants(self) -> None:
        for user in self.users.values():
            if not user.done:
                continue
            intent = user.intent
            expected = intent.work_units + self.discarded[intent.intent_id]
            if self.executed[intent.intent_id] != expected:
                raise InvariantViolation(
                    f"intent '{intent.intent_id}' executed {self.executed[intent.intent_id]} units, expected {expected}",
                    self.trace.records,
                )
        for node_id, node in self.nodes.items():
            if self.busy_ms[node_id] != self.executed_on[node_id] * node.quantum_ms:
                raise InvariantViolation(
                    f"node '{node_id}' was busy {self.busy_ms[node_id]} ms for {self.executed_on[node_id]} units",
                    self.trace.records,
                )
        for store in self.stores.values():
            check_audit(store.audit)
        outcomes = {r["payload"]["handover_id"] for r in self.trace.records if r["kind"] == "HandoverOutcome"}
        decided = {
            entry.detail.get("handover_id")
            for store in self.stores.values()
            for entry in store.audit
            if entry.action == AuditAction.HANDOVER_DECISION
        }
        missing = sorted(outcomes - decided - self.unanchored_decisions)
        if missing:
            raise InvariantViolation(f"handover outcomes without a HandoverDecision audit: {missing}", self.trace.records)

    def run(self) -> SimulationResult:
        # 1. Header, then every scripted input as an event
        self.trace.append(0, "Start", **self.header())
        for fault in sorted(self.scenario.fault_injections, key=lambda f: (f.at, f.node_id)):
            self.kernel.at(fault.at, EventKind.FAULT, node_id=fault.node_id, action=fault.action)
        for user in self.users.values():
            self.kernel.at(user.path_start, EventKind.USER_MOVED, user_id=user.user_id)
            self.kernel.at(user.spec.submit_at, EventKind.INTENT_SUBMITTED, user_id=user.user_id)
            for at in sorted(user.spec.revisions):
                self.kernel.at(at, EventKind.INTENT_REVISED, user_id=user.user_id)

        # 2. Drain to end_time
        for event in self.kernel.drain(self.scenario.end_time):
            self.handlers[event.kind](**event.payload)

        # 3. Footer with learned agent state, then the run-wide checks
        self.trace.append(
            self.scenario.end_time,
            "End",
            events_processed=self.kernel.processed,
            agents=[agent.dump().model_dump(mode="json") for agent in self.agents.values()],
            audit_records={node_id: len(store.audit) for node_id, store in self.stores.items()},
        )
        self.check_invariants()
        log.info(
            "run.finished",
            scenario=self.scenario.name,
            mode=self.scenario.mode.value,
            seed=self.seed,
            events=self.kernel.processed,
        )
        return SimulationResult(
            trace=self.trace,
            audits={node_id: list(store.audit) for node_id, store in self.stores.items()},
            scenario_hash=scenario_hash(self.scenario),
            seed=self.seed,
            mode=self.scenario.mode,
            events_processed=self.kernel.processed,
        )


def run(scenario: Scenario, seed: int, config: Optional[Settings] = None) -> SimulationResult:
    return Simulation(scenario, seed, config).run()


def run_baseline(scenario: Scenario, seed: int, config: Optional[Settings] = None) -> SimulationResult:
    """The reactive drop-and-resubmit protocol on the same scenario and seed."""
    return run(scenario.with_mode(Mode.BASELINE), seed, config)
