import hashlib
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence

import structlog

from src.core.exceptions import InvariantViolation, NoCandidate, NotConnected, StaleContext
from src.schemas.handover import (
    ALLOWED_TRANSITIONS,
    TERMINAL_PHASES,
    HandoverPackage,
    Phase,
    PolicySnapshot,
    TransferKind,
)
from src.schemas.intent import ContextTag, Intent, SemanticTTL, TaskState
from src.schemas.node import CandidateScore, NodeProfile, RankingWeights
from src.schemas.scenario import MobilityPath, RadioModel
from src.services.intent_service import package_size
from src.simkernel.mobility import position_at, segments
from src.simkernel.radio import distance, effective_radius

log = structlog.get_logger(__name__)

PhaseListener = Callable[["AgentSession", Phase, Phase], None]


@dataclass
class AgentSession:
    """Execution lineage of one intent. The host changes on every successful handover; a resubmission starts a new session."""

    session_id: str
    intent: Intent
    host_node: str
    current_state: TaskState
    weights: RankingWeights
    phase: Phase = Phase.EXECUTING
    ranked_fallbacks: List[str] = field(default_factory=list)
    prepare_deadline: Optional[int] = None
    subtask_index: int = 0
    completed_units: int = 0  # units of subtasks already finished in this lineage
    link_bonus_pct: int = 0
    on_change: Optional[PhaseListener] = None

    @property
    def intent_id(self) -> str:
        return self.intent.intent_id

    @property
    def progress_units(self) -> int:
        return self.completed_units + self.current_state.executed_units

    @property
    def terminal(self) -> bool:
        return self.phase in TERMINAL_PHASES

    def transition(self, new_phase: Phase) -> None:
        if new_phase not in ALLOWED_TRANSITIONS[self.phase]:
            raise InvariantViolation(f"session {self.session_id}: illegal transition {self.phase.value} -> {new_phase.value}")
        old, self.phase = self.phase, new_phase
        if self.on_change is not None:
            self.on_change(self, old, new_phase)


def predict_exit(
    user_path: MobilityPath,
    node: NodeProfile,
    now: int,
    radio: RadioModel,
    horizon: Optional[int] = None,
    radius: Optional[float] = None,
) -> Optional[int]:
    """First integer ms >= now at which the path is outside the node's coverage disc, or None."""
    r = effective_radius(radio, node) if radius is None else radius
    cx, cy = node.position
    if distance(position_at(user_path, now), node.position) > r:
        raise NotConnected(f"user '{user_path.user_id}' is outside the coverage of '{node.node_id}' at {now}")

    for t0, t1, p0, p1 in segments(user_path, now):
        dx, dy = p1[0] - p0[0], p1[1] - p0[1]
        ox, oy = p0[0] - cx, p0[1] - cy
        a = dx * dx + dy * dy
        if a == 0.0:
            continue
        b = 2.0 * (ox * dx + oy * dy)
        c = ox * ox + oy * oy - r * r
        disc = b * b - 4.0 * a * c
        if disc < 0:
            crossing = float(t0)
        else:
            s_out = (-b + math.sqrt(disc)) / (2.0 * a)
            if s_out >= 1.0:
                continue
            crossing = t0 + max(s_out, 0.0) * (t1 - t0)
        exit_at = max(now, math.ceil(crossing - 1e-6))
        if horizon is not None and exit_at > horizon:
            return None
        return exit_at
    return None


def trigger_handover(session: AgentSession, predicted_exit: Optional[int], t_prepare: int, now: int) -> bool:
    if session.phase != Phase.EXECUTING or predicted_exit is None:
        return False
    if predicted_exit - now > t_prepare:
        return False
    session.prepare_deadline = predicted_exit
    session.transition(Phase.HANDOVER_PREPARING)
    return True


def link_params_for(source: str, intent_id: str, size: int) -> bytes:
    """Opaque MAC/RLC parameter blob. Content is a stable digest; only its size matters."""
    if size <= 0:
        return b""
    return hashlib.shake_128(f"{source}:{intent_id}".encode("utf-8")).digest(size)


def snapshot_package(
    session: AgentSession,
    weights: RankingWeights,
    causality_stats: Dict[str, List[int]],
    link_params: bytes,
    package_id: str,
    source: str,
    policy_overhead: int,
    fallbacks: Sequence[str] = (),
    transfer_kind: TransferKind = TransferKind.STATE_TRANSFER,
) -> HandoverPackage:
    """Packages the session as of its last completed quantum. Also used for rendezvous checkpoints."""
    subtask = session.intent.subtasks[session.subtask_index]
    if transfer_kind == TransferKind.FULL_OFFLOAD:
        task_state = TaskState.at(subtask, 0, source, session.current_state.checkpoint_time, session.current_state.context_tag)
        state_size = subtask.input_size
    else:
        task_state = session.current_state
        state_size = subtask.state_size_fn(task_state.progress)
    draft = HandoverPackage(
        package_id=package_id,
        intent_id=session.intent_id,
        task_state=task_state,
        completed_units=session.completed_units,
        policy_snapshot=PolicySnapshot(weights=weights.canonical(), causality_stats=causality_stats),
        policy_size=policy_overhead,
        ttl=session.intent.ttl,
        link_params=link_params,
        ranked_fallbacks=[f for f in fallbacks if f != source],
        source_node=source,
        transfer_kind=transfer_kind,
        state_size=state_size,
        size_bytes=1,
    )
    return draft.model_copy(update={"size_bytes": max(1, package_size(draft))})


def build_package(
    session: AgentSession,
    ranking: Sequence[CandidateScore],
    weights: RankingWeights,
    causality_stats: Dict[str, List[int]],
    link_params: bytes,
    package_id: str,
    source: str,
    policy_overhead: int,
    transfer_kind: TransferKind = TransferKind.STATE_TRANSFER,
) -> HandoverPackage:
    """Package for the top-ranked candidate; the rest of the ranking become fallbacks in order."""
    if not ranking:
        raise NoCandidate(f"no ranked candidate for intent '{session.intent_id}'")
    return snapshot_package(
        session,
        weights,
        causality_stats,
        link_params,
        package_id,
        source,
        policy_overhead,
        fallbacks=[c.node_id for c in ranking[1:]],
        transfer_kind=transfer_kind,
    )


def subtask_index_of(intent: Intent, subtask_id: str) -> int:
    for index, st in enumerate(intent.subtasks):
        if st.subtask_id == subtask_id:
            return index
    raise InvariantViolation(f"subtask '{subtask_id}' is not part of intent '{intent.intent_id}'")


def relevance(tag: ContextTag, ctx_now: ContextTag) -> float:
    if tag.intent_version != ctx_now.intent_version:
        return 0.0
    return 1.0 if tag.zone == ctx_now.zone else 0.5


def ttl_valid(ttl: SemanticTTL, now: int, ctx_now: ContextTag) -> bool:
    if now - ttl.created_at > ttl.time_budget:
        return False
    return relevance(ttl.context_tag, ctx_now) >= ttl.relevance_threshold


def resume(session: AgentSession, pkg: HandoverPackage, target: str, delivered_at: int, ctx_at_delivery: ContextTag) -> None:
    """Installs the delivered package on the target. The TaskState is copied verbatim apart from its host."""
    if not ttl_valid(pkg.ttl, delivered_at, ctx_at_delivery):
        raise StaleContext(f"package {pkg.package_id} for '{pkg.intent_id}' is stale at {delivered_at}")
    session.transition(Phase.RESUMING)
    session.current_state = pkg.task_state.model_copy(update={"host_agent": target})
    session.completed_units = pkg.completed_units
    session.subtask_index = subtask_index_of(session.intent, pkg.task_state.subtask_id)
    session.host_node = target
    session.weights = pkg.policy_snapshot.weights
    session.ranked_fallbacks = []
    session.prepare_deadline = None
    log.debug("handover.resumed", intent_id=pkg.intent_id, target=target, progress=pkg.task_state.progress)
