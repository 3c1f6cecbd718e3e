"""
Mode-specific reactions of the agents.

WaanProtocol runs the proactive intent-aware handover: quantum-boundary exit
prediction, swarm ranking, package transfer with fallbacks, rendezvous
checkpoints and recovery. BaselineProtocol drops the session on link loss
and resubmits the intent from scratch.
"""

from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Callable, Dict, List, Optional

import structlog

from src.core.exceptions import NotConnected, StaleContext
from src.schemas.adapt import BucketKey, SpeedBand
from src.schemas.audit import AuditAction
from src.schemas.handover import HandoverOutcome, HandoverPackage, HandoverResult, Phase, TransferKind
from src.schemas.intent import ContextTag
from src.schemas.node import Components
from src.schemas.swarm import MetricReply, SwarmQuery, UserState
from src.schemas.trace import EventKind
from src.services.adapt import decide_transfer_kind, record_outcome, update_weights
from src.services.handover import (
    AgentSession,
    build_package,
    link_params_for,
    predict_exit,
    resume,
    snapshot_package,
    subtask_index_of,
    trigger_handover,
    ttl_valid,
)
from src.services.rendezvous import nearest_rendezvous, recover
from src.services.swarm import collect_metrics, discard_stale, discover_neighbors, normalize_metrics, rank_candidates
from src.simkernel.kernel import Event, Kernel
from src.simkernel.mobility import speed_at, velocity_at
from src.simkernel.radio import distance, transfer_time
from src.simkernel.rng import SWARM

if TYPE_CHECKING:
    from src.services.simulation import Simulation, UserRuntime

log = structlog.get_logger(__name__)

ZERO_COMPONENTS = Components(bandwidth=0.0, cpu_headroom=0.0, mem_headroom=0.0, snr=0.0, residence=0.0, traffic_match=0.0)


class BaselineProtocol:
    """Reactive drop-and-resubmit: no prediction, no state transfer."""

    def __init__(self, sim: "Simulation"):
        self.sim = sim

    def handlers(self) -> Dict[EventKind, Callable[..., None]]:
        return {}

    def after_quantum(self, session: AgentSession) -> bool:
        return False

    def on_link_lost(self, user: "UserRuntime", node_id: str) -> None:
        session = user.session
        if session is None or session.terminal or session.host_node != node_id:
            return
        if session.phase == Phase.EXECUTING:
            self.sim.fail_and_resubmit(session, reason="link_lost")

    def on_node_failure(self, node_id: str) -> None:
        for session in list(self.sim.sessions.values()):
            if session.host_node == node_id and session.phase == Phase.EXECUTING:
                self.sim.fail_and_resubmit(session, reason="node_down")


@dataclass
class HandoverAttempt:
    handover_id: str
    reason: str
    origin: str  # node that runs the swarm and sends the package
    source: str  # host the session leaves
    started_at: int
    via_rendezvous: Optional[str] = None
    discarded: int = 0
    query_id: Optional[str] = None
    package: Optional[HandoverPackage] = None
    target: Optional[str] = None
    attempt_index: int = 0
    progress_at_transfer: float = 0.0
    components: Dict[str, Components] = field(default_factory=dict)
    arrival_event: Optional[Event] = None
    timeout_event: Optional[Event] = None
    delivered_at: Optional[int] = None
    ctx_at_delivery: Optional[ContextTag] = None
    decision_audited: bool = False


class WaanProtocol(BaselineProtocol):
    def __init__(self, sim: "Simulation"):
        super().__init__(sim)
        self.attempts: Dict[str, HandoverAttempt] = {}

    def handlers(self) -> Dict[EventKind, Callable[..., None]]:
        return {
            EventKind.METRIC_REPLY: self.on_metric_reply,
            EventKind.SWARM_RANKED: self.on_swarm_ranked,
            EventKind.PACKAGE_DELIVERED: self.on_package_arrival,
            EventKind.ACK_RECEIVED: self.on_ack_received,
            EventKind.ACK_TIMEOUT: self.on_ack_timeout,
        }

    # ---- triggers -------------------------------------------------

    def t_prepare(self, session: AgentSession) -> int:
        knobs = self.sim.knobs
        if knobs.t_prepare_ms is not None:
            return knobs.t_prepare_ms
        subtask = session.intent.subtasks[session.subtask_index]
        estimate = subtask.state_size_fn(session.current_state.progress) + knobs.policy_overhead_bytes + knobs.link_params_bytes
        bw = self.sim.nodes[session.host_node].bandwidth
        return 2 * transfer_time(estimate, bw, bw, self.sim.radio) + knobs.swarm_deadline_ms

    def after_quantum(self, session: AgentSession) -> bool:
        sim = self.sim
        checkpointed = False
        if session.progress_units % sim.knobs.checkpoint_interval == 0:
            self.send_checkpoint(session)
            checkpointed = True

        user = sim.user_of(session)
        predicted = None
        if session.host_node in user.connected:
            try:
                predicted = predict_exit(user.path, sim.nodes[session.host_node], sim.now, sim.radio, horizon=sim.scenario.end_time)
            except NotConnected:
                predicted = None
        if not trigger_handover(session, predicted, self.t_prepare(session), sim.now):
            return False
        if not checkpointed:
            self.send_checkpoint(session)
        self.start_handover(session, reason="proactive", origin=session.host_node, predicted_exit=predicted)
        return True

    def on_link_lost(self, user: "UserRuntime", node_id: str) -> None:
        session = user.session
        if session is None or session.terminal or session.host_node != node_id or session.phase != Phase.EXECUTING:
            return
        # Reactive handover: the host is still up and ships the state over the backhaul.
        self.sim.pause(session)
        session.transition(Phase.HANDOVER_PREPARING)
        self.send_checkpoint(session)
        self.start_handover(session, reason="reactive", origin=session.host_node)

    def on_node_failure(self, node_id: str) -> None:
        sim = self.sim
        for session in list(sim.sessions.values()):
            if session.host_node != node_id or session.phase != Phase.EXECUTING:
                continue
            sim.pause(session)
            session.transition(Phase.HANDOVER_PREPARING)
            attempt = self._open_attempt(session, reason="recovery", origin=node_id)
            if self.recover_from_rendezvous(session, attempt) is None:
                self.abort(session, attempt)
                continue
            self.start_swarm(session, attempt)

    # ---- checkpoints and recovery -------------------------------------------------

    def _package(self, session: AgentSession, source: str, fallbacks=(), kind=TransferKind.STATE_TRANSFER, ranking=None):
        sim = self.sim
        agent = sim.agents[source]
        link_params = link_params_for(source, session.intent_id, sim.knobs.link_params_bytes)
        args = (session.weights, agent.log.causality_stats(), link_params, sim.ids.next("pkg"), source, sim.knobs.policy_overhead_bytes)
        if ranking is not None:
            return build_package(session, ranking, *args, transfer_kind=kind)
        return snapshot_package(session, *args, fallbacks=fallbacks, transfer_kind=kind)

    def send_checkpoint(self, session: AgentSession) -> None:
        sim = self.sim
        host = sim.nodes[session.host_node]
        rv = nearest_rendezvous(host, sim.rendezvous_nodes, sim.radio, sim.availability())
        if rv is None or not sim.available(host.node_id):
            return
        pkg = self._package(session, host.node_id)
        tt = transfer_time(pkg.size_bytes, host.bandwidth, rv.bandwidth, sim.radio)
        sim.kernel.at(sim.now + tt, EventKind.CHECKPOINT_DUE, session_id=session.session_id, rendezvous=rv.node_id, package=pkg)

    def recover_from_rendezvous(self, session: AgentSession, attempt: HandoverAttempt) -> Optional[HandoverPackage]:
        """Rolls the session back to the freshest valid checkpoint; the rendezvous becomes the sender."""
        sim = self.sim
        host = sim.nodes[session.host_node]
        ctx = sim.ctx_now(sim.user_of(session))
        stores = sorted(
            (rv for rv in sim.rendezvous_nodes if sim.available(rv.node_id)),
            key=lambda rv: (distance(host.position, rv.position), rv.node_id),
        )
        for rv in stores:
            store = sim.stores[rv.node_id]
            before = len(store.audit)
            cached = recover(store, session.intent_id, sim.now, ctx)
            sim.mirror_audit(store, before)
            if cached is None or cached.checkpoint_units > session.progress_units:
                continue
            lost = session.progress_units - cached.checkpoint_units
            sim.discard(session, lost, "rollback")
            attempt.discarded += lost
            session.current_state = cached.task_state
            session.completed_units = cached.completed_units
            session.subtask_index = subtask_index_of(session.intent, cached.task_state.subtask_id)
            attempt.origin = rv.node_id
            attempt.via_rendezvous = rv.node_id
            log.info("handover.recovered", intent_id=session.intent_id, rendezvous=rv.node_id, lost_units=lost)
            fallbacks = [f for f in session.ranked_fallbacks if f != rv.node_id]
            return cached.model_copy(
                update={"package_id": sim.ids.next("pkg"), "source_node": rv.node_id, "ranked_fallbacks": fallbacks}
            )
        return None

    # ---- swarm -------------------------------------------------

    def _open_attempt(self, session: AgentSession, reason: str, origin: str, predicted_exit: Optional[int] = None) -> HandoverAttempt:
        sim = self.sim
        attempt = HandoverAttempt(
            handover_id=sim.ids.next("handover"),
            reason=reason,
            origin=origin,
            source=session.host_node,
            started_at=sim.now,
        )
        self.attempts[session.session_id] = attempt
        sim.record(
            EventKind.HANDOVER_TRIGGERED,
            intent_id=session.intent_id,
            session=session.session_id,
            handover_id=attempt.handover_id,
            source=session.host_node,
            reason=reason,
            progress=session.current_state.progress,
            progress_units=session.progress_units,
            predicted_exit=predicted_exit,
        )
        log.info("handover.triggered", intent_id=session.intent_id, source=session.host_node, reason=reason, t=sim.now)
        return attempt

    def start_handover(self, session: AgentSession, reason: str, origin: str, predicted_exit: Optional[int] = None) -> None:
        attempt = self._open_attempt(session, reason, origin, predicted_exit)
        self.start_swarm(session, attempt)

    def start_swarm(self, session: AgentSession, attempt: HandoverAttempt) -> None:
        sim = self.sim
        neighbors = discover_neighbors(attempt.origin, list(sim.nodes.values()), sim.radio)
        candidates = [n for n in neighbors if not sim.nodes[n].is_rendezvous and n != session.host_node]
        if not candidates:
            self.no_candidate(session, attempt)
            return
        query = SwarmQuery(
            query_id=sim.ids.next("query"),
            origin_node=attempt.origin,
            candidate_set=candidates,
            issued_at=sim.now,
            deadline=sim.knobs.swarm_deadline_ms,
        )
        attempt.query_id = query.query_id
        sim.record(
            EventKind.METRIC_QUERY,
            intent_id=session.intent_id,
            query_id=query.query_id,
            origin=query.origin_node,
            candidates=candidates,
            deadline=query.deadline,
        )
        user = sim.user_of(session)
        replies = collect_metrics(
            query,
            lambda node_id, sampled_at: sim.node_metrics(node_id, user, sampled_at),
            sim.radio,
            sim.streams.stream(SWARM),
            sim.knobs.swarm_jitter_max_ms,
        )
        for reply in sorted(replies, key=lambda r: (r.arrives_at, r.metrics.node_id)):
            sim.kernel.at(
                reply.arrives_at,
                EventKind.METRIC_REPLY,
                query_id=query.query_id,
                node_id=reply.metrics.node_id,
                sampled_at=reply.metrics.sampled_at,
            )
        if replies and len(replies) == len(candidates):
            decide_at = max(r.arrives_at for r in replies)
        else:
            decide_at = query.issued_at + query.deadline
        sim.kernel.at(decide_at, EventKind.SWARM_RANKED, session_id=session.session_id, query_id=query.query_id, replies=replies)

    def on_metric_reply(self, query_id: str, node_id: str, sampled_at: int) -> None:
        self.sim.record(EventKind.METRIC_REPLY, query_id=query_id, node_id=node_id, sampled_at=sampled_at)

    def _live_attempt(self, session_id: str, handover_id: Optional[str] = None, attempt_index: Optional[int] = None):
        session = self.sim.sessions[session_id]
        attempt = self.attempts.get(session_id)
        if session.terminal or attempt is None:
            return None, None
        if handover_id is not None and attempt.handover_id != handover_id:
            return None, None
        if attempt_index is not None and attempt.attempt_index != attempt_index:
            return None, None
        return session, attempt

    def on_swarm_ranked(self, session_id: str, query_id: str, replies: List[MetricReply]) -> None:
        sim = self.sim
        session, attempt = self._live_attempt(session_id)
        if session is None or attempt.query_id != query_id:
            return
        user = sim.user_of(session)
        # 1. Score the fresh replies
        fresh = discard_stale([r.metrics for r in replies], sim.now, sim.knobs.staleness_max_ms)
        t = max(sim.now, user.path_start)
        user_state = UserState(
            position=sim.user_position(user, sim.now),
            velocity=velocity_at(user.path, t),
            traffic_type=session.intent.qoe.traffic_type,
        )
        scored = [(m, normalize_metrics(m, user_state, sim.knobs.normalization, sim.nodes[m.node_id])) for m in fresh]
        ranking = rank_candidates(scored, session.weights, sim.now)
        attempt.components = {c.node_id: c.components for c in ranking}
        sim.record(
            EventKind.SWARM_RANKED,
            intent_id=session.intent_id,
            query_id=query_id,
            ranking=[{"node_id": c.node_id, "score": c.score} for c in ranking],
        )
        if not ranking:
            self.no_candidate(session, attempt)
            return

        # 2. State transfer or full offload, from the origin's outcome history
        target = sim.nodes[ranking[0].node_id]
        origin = sim.nodes[attempt.origin]
        subtask = session.intent.subtasks[session.subtask_index]
        bucket = self._bucket(session, user, target.node_id)
        kind = decide_transfer_kind(
            sim.agents[attempt.origin].log,
            subtask.state_size_fn(session.current_state.progress),
            subtask.input_size,
            bucket,
            session.current_state.executed_units,
            target.quantum_ms,
            origin.bandwidth,
            target.bandwidth,
            sim.radio,
            sim.knobs.k_min,
        )
        if kind == TransferKind.FULL_OFFLOAD:
            dropped = session.current_state.executed_units
            sim.discard(session, dropped, "full_offload")
            attempt.discarded += dropped
        # 3. Package, audit, send to the best candidate
        pkg = self._package(session, attempt.origin, kind=kind, ranking=ranking)
        session.current_state = pkg.task_state
        session.ranked_fallbacks = list(pkg.ranked_fallbacks)
        attempt.package = pkg
        attempt.progress_at_transfer = pkg.task_state.progress
        self.audit_decision(
            session,
            attempt,
            target=target.node_id,
            fallbacks=list(pkg.ranked_fallbacks),
            transfer_kind=kind.value,
            scores={c.node_id: c.score for c in ranking},
        )
        self.execute_transfer(session, pkg, target.node_id, attempt_index=1)

    def no_candidate(self, session: AgentSession, attempt: HandoverAttempt) -> None:
        sim = self.sim
        sim.record("NoCandidate", intent_id=session.intent_id, handover_id=attempt.handover_id, query_id=attempt.query_id)
        user = sim.user_of(session)
        keep_going = (
            attempt.reason == "proactive"
            and attempt.via_rendezvous is None
            and sim.available(session.host_node)
            and session.host_node in user.connected
        )
        if keep_going:
            # Still covered: keep executing and try again at a later quantum boundary.
            del self.attempts[session.session_id]
            session.transition(Phase.EXECUTING)
            sim.schedule_quantum(session)
            return
        self.abort(session, attempt)

    # ---- transfer -------------------------------------------------

    def execute_transfer(self, session: AgentSession, pkg: HandoverPackage, target: str, attempt_index: int) -> None:
        sim = self.sim
        attempt = self.attempts[session.session_id]
        attempt.attempt_index = attempt_index
        attempt.target = target
        if not sim.available(attempt.origin):
            recovered = self.recover_from_rendezvous(session, attempt)
            if recovered is None:
                self.abort(session, attempt)
                return
            pkg = recovered
            attempt.package = pkg
            attempt.progress_at_transfer = pkg.task_state.progress
            session.ranked_fallbacks = list(pkg.ranked_fallbacks)
        if session.phase != Phase.TRANSFERRING:
            session.transition(Phase.TRANSFERRING)
        sender = sim.nodes[attempt.origin]
        tt = transfer_time(pkg.size_bytes, sender.bandwidth, sim.nodes[target].bandwidth, sim.radio)
        sim.record(
            EventKind.PACKAGE_SENT,
            intent_id=session.intent_id,
            package_id=pkg.package_id,
            source=sender.node_id,
            target=target,
            attempt=attempt_index,
            size_bytes=pkg.size_bytes,
            transfer_time=tt,
            transfer_kind=pkg.transfer_kind.value,
            progress=pkg.task_state.progress,
        )
        attempt.arrival_event = sim.kernel.at(
            sim.now + tt,
            EventKind.PACKAGE_DELIVERED,
            session_id=session.session_id,
            handover_id=attempt.handover_id,
            attempt_index=attempt_index,
        )
        attempt.timeout_event = sim.kernel.at(
            sim.now + 2 * tt + sim.radio.base_link_latency,
            EventKind.ACK_TIMEOUT,
            session_id=session.session_id,
            handover_id=attempt.handover_id,
            attempt_index=attempt_index,
        )

    def on_package_arrival(self, session_id: str, handover_id: str, attempt_index: int) -> None:
        sim = self.sim
        session, attempt = self._live_attempt(session_id, handover_id, attempt_index)
        if session is None:
            return
        pkg, target = attempt.package, attempt.target
        reason = None
        if not sim.available(target):
            reason = "target_unreachable"
        elif not sim.has_capacity(target):
            reason = "target_full"
        if reason is not None:
            # The sender only learns of the loss through the ack timeout.
            sim.record(EventKind.PACKAGE_LOST, intent_id=session.intent_id, package_id=pkg.package_id, target=target, attempt=attempt_index, reason=reason)
            return

        ctx = sim.ctx_now(sim.user_of(session))
        valid = ttl_valid(pkg.ttl, sim.now, ctx)
        sim.audit(target, AuditAction.TTL_VERDICT, session.intent_id, stage="package", valid=valid, package_id=pkg.package_id)
        if not valid:
            sim.record("StaleDiscard", intent_id=session.intent_id, session=session_id, stage="package", package_id=pkg.package_id, target=target)
            sim.record(EventKind.TTL_EXPIRED, intent_id=session.intent_id, session=session_id, zone=ctx.zone, intent_version=ctx.intent_version)
            self.abort(session, attempt)
            return
        sim.record(EventKind.PACKAGE_DELIVERED, intent_id=session.intent_id, package_id=pkg.package_id, target=target, attempt=attempt_index)
        session.transition(Phase.AWAITING_ACK)
        attempt.delivered_at = sim.now
        attempt.ctx_at_delivery = ctx
        sim.kernel.at(
            sim.now + sim.radio.base_link_latency,
            EventKind.ACK_RECEIVED,
            session_id=session_id,
            handover_id=handover_id,
            attempt_index=attempt_index,
        )

    def on_ack_received(self, session_id: str, handover_id: str, attempt_index: int) -> None:
        sim = self.sim
        session, attempt = self._live_attempt(session_id, handover_id, attempt_index)
        if session is None or session.phase != Phase.AWAITING_ACK:
            return
        target = attempt.target
        if not sim.available(target):
            return
        Kernel.cancel(attempt.timeout_event)
        sim.record(EventKind.ACK_RECEIVED, intent_id=session.intent_id, target=target, attempt=attempt_index)
        try:
            resume(session, attempt.package, target, attempt.delivered_at, attempt.ctx_at_delivery)
        except StaleContext:
            self.abort(session, attempt)
            return

        user = sim.user_of(session)
        # The target holds the package, so it re-opens the channel to the personal agent.
        sim.record("ControlChannelEstablished", intent_id=session.intent_id, node=target, user_id=user.user_id)
        if attempt.package.link_params:
            session.link_bonus_pct = sim.knobs.link_latency_bonus_pct
            sim.record(
                "LinkParamsApplied",
                intent_id=session.intent_id,
                node=target,
                size_bytes=len(attempt.package.link_params),
                latency_bonus_pct=session.link_bonus_pct,
            )
        session.transition(Phase.EXECUTING)
        result = HandoverResult.SUCCESS if attempt_index == 1 else HandoverResult.FALLBACK_SUCCESS
        self.finish(session, attempt, result)
        sim.schedule_quantum(session)

    def on_ack_timeout(self, session_id: str, handover_id: str, attempt_index: int) -> None:
        sim = self.sim
        session, attempt = self._live_attempt(session_id, handover_id, attempt_index)
        if session is None:
            return
        sim.record(EventKind.ACK_TIMEOUT, intent_id=session.intent_id, target=attempt.target, attempt=attempt_index)
        if not session.ranked_fallbacks:
            self.abort(session, attempt)
            return
        nxt = session.ranked_fallbacks.pop(0)
        self.execute_transfer(session, attempt.package, nxt, attempt_index + 1)

    # ---- outcomes -------------------------------------------------

    def audit_decision(self, session: AgentSession, attempt: HandoverAttempt, **detail) -> None:
        attempt.decision_audited = True
        recorded = self.sim.audit(
            attempt.origin, AuditAction.HANDOVER_DECISION, session.intent_id, handover_id=attempt.handover_id, **detail
        )
        if not recorded:
            self.sim.unanchored_decisions.add(attempt.handover_id)

    def _bucket(self, session: AgentSession, user: "UserRuntime", target: Optional[str]) -> BucketKey:
        sim = self.sim
        node = sim.nodes[target] if target is not None else sim.nodes[session.host_node]
        speed = speed_at(user.path, max(sim.now, user.path_start))
        return BucketKey(
            traffic_type=session.intent.qoe.traffic_type,
            speed_band=SpeedBand.of(speed),
            capability_class=node.capability_class,
        )

    def _qoe_projection(self, session: AgentSession, user: "UserRuntime") -> bool:
        sim = self.sim
        remaining = session.intent.work_units - session.progress_units
        projected = (
            sim.now - user.first_submitted_at
            + remaining * sim.nodes[session.host_node].quantum_ms
            + sim.result_latency(session)
        )
        return projected <= session.intent.qoe.max_latency

    def abort(self, session: AgentSession, attempt: HandoverAttempt) -> None:
        sim = self.sim
        if attempt.arrival_event is not None:
            Kernel.cancel(attempt.arrival_event)
        Kernel.cancel(attempt.timeout_event)
        sim.pause(session)
        lost = session.progress_units
        self.finish(session, attempt, HandoverResult.ABORT, extra_recomputed=lost)
        session.transition(Phase.FAILED)
        sim.discard(session, lost, "abort")
        sim.resubmit(sim.user_of(session))

    def finish(self, session: AgentSession, attempt: HandoverAttempt, result: HandoverResult, extra_recomputed: int = 0) -> None:
        sim = self.sim
        user = sim.user_of(session)
        if not attempt.decision_audited:
            # Ended before any ranking: the decision record still anchors the outcome.
            self.audit_decision(session, attempt, target=None, fallbacks=[], transfer_kind=None, scores={}, result=result.value)
        outcome = HandoverOutcome(
            intent_id=session.intent_id,
            source=attempt.source,
            target=attempt.target,
            attempt_index=max(1, attempt.attempt_index),
            started_at=attempt.started_at,
            finished_at=sim.now,
            result=result,
            progress_at_transfer=attempt.progress_at_transfer if attempt.package is not None else session.current_state.progress,
            recomputed_units=attempt.discarded + extra_recomputed,
            transfer_kind=attempt.package.transfer_kind if attempt.package is not None else TransferKind.STATE_TRANSFER,
            via_rendezvous=attempt.via_rendezvous,
        )
        qoe_met = result != HandoverResult.ABORT and self._qoe_projection(session, user)
        components = attempt.components.get(attempt.target, ZERO_COMPONENTS) if attempt.target else ZERO_COMPONENTS
        agent = sim.agents[attempt.origin]
        record_outcome(agent.log, outcome, self._bucket(session, user, attempt.target), components, qoe_met)
        session.weights = update_weights(session.weights, outcome, components, qoe_met, sim.knobs.eta)
        agent.weights = session.weights
        sim.record(
            "HandoverOutcome",
            session=session.session_id,
            handover_id=attempt.handover_id,
            qoe_met=qoe_met,
            **outcome.model_dump(mode="json"),
        )
        log.info(
            "handover.outcome",
            intent_id=session.intent_id,
            result=result.value,
            target=attempt.target,
            attempt=outcome.attempt_index,
            recomputed_units=outcome.recomputed_units,
        )
        self.attempts.pop(session.session_id, None)

