"""
Outcome feedback for the ranking agents.

Each agent keeps an append-only outcome log bucketed by context, learns its
ranking weights with a multiplicative update, and uses the bucketed success
rates as priors when choosing between state transfer and full offload.
"""

from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np
import structlog

from src.core.exceptions import InvariantViolation
from src.schemas.adapt import AdaptDump, BucketKey, BucketSnapshot, BucketStats, OutcomeRecord
from src.schemas.handover import HandoverOutcome, HandoverResult, TransferKind
from src.schemas.node import Components, RankingWeights
from src.schemas.scenario import RadioModel
from src.simkernel.radio import transfer_time

log = structlog.get_logger(__name__)

SUCCESS_RESULTS = frozenset({HandoverResult.SUCCESS, HandoverResult.FALLBACK_SUCCESS})
UNINFORMED_PRIOR = 0.5


@dataclass
class OutcomeLog:
    records: List[OutcomeRecord] = field(default_factory=list)
    buckets: Dict[BucketKey, BucketStats] = field(default_factory=dict)

    def causality_stats(self) -> Dict[str, List[int]]:
        """Per-bucket [successes, failures], keyed by bucket label; shipped inside packages."""
        return {key.label: [s.successes, s.failures] for key, s in sorted(self.buckets.items(), key=lambda kv: kv[0].label)}


@dataclass
class AgentState:
    node_id: str
    weights: RankingWeights
    log: OutcomeLog = field(default_factory=OutcomeLog)

    def dump(self) -> AdaptDump:
        return AdaptDump(
            node_id=self.node_id,
            weights=list(self.weights.canonical().as_tuple()),
            records=len(self.log.records),
            buckets=[
                BucketSnapshot(key=key, stats=stats)
                for key, stats in sorted(self.log.buckets.items(), key=lambda kv: kv[0].label)
            ],
        )


def record_outcome(
    outcome_log: OutcomeLog, outcome: HandoverOutcome, bucket: BucketKey, components: Components, qoe_met: bool
) -> OutcomeRecord:
    if outcome_log.records and outcome.finished_at < outcome_log.records[-1].outcome.finished_at:
        raise InvariantViolation(f"outcome for '{outcome.intent_id}' recorded out of finished_at order")
    record = OutcomeRecord(outcome=outcome, context_bucket=bucket, components=components, qoe_met=qoe_met)
    outcome_log.records.append(record)

    stats = outcome_log.buckets.get(bucket, BucketStats())
    latency = outcome.finished_at - outcome.started_at
    total = stats.total + 1
    success = outcome.result in SUCCESS_RESULTS
    outcome_log.buckets[bucket] = BucketStats(
        successes=stats.successes + (1 if success else 0),
        failures=stats.failures + (0 if success else 1),
        mean_completion_latency=stats.mean_completion_latency + (latency - stats.mean_completion_latency) / total,
    )
    return record


def update_weights(
    weights: RankingWeights,
    outcome: HandoverOutcome,
    components_of_chosen: Components,
    qoe_met: bool = True,
    eta: float = 0.1,
) -> RankingWeights:
    sign = 1.0 if outcome.result in SUCCESS_RESULTS and qoe_met else -1.0
    w = np.asarray(weights.canonical().as_tuple(), dtype=float)
    c = np.asarray(components_of_chosen.as_tuple(), dtype=float)
    w = w * np.exp(eta * sign * c)
    return RankingWeights.from_values(w / np.sum(w))


def few_shot_prior(outcome_log: OutcomeLog, bucket_key: BucketKey, k_min: int) -> Optional[float]:
    if k_min < 1:
        raise ValueError("k_min must be >= 1")
    stats = outcome_log.buckets.get(bucket_key)
    if stats is None or stats.total < k_min:
        return None
    return (stats.successes + 1) / (stats.total + 2)


def success_prior(outcome_log: OutcomeLog, bucket_key: BucketKey, k_min: int) -> float:
    """Bucket prior, else the Laplace-smoothed global rate, else the uninformed 0.5."""
    prior = few_shot_prior(outcome_log, bucket_key, k_min)
    if prior is not None:
        return prior
    successes = sum(s.successes for s in outcome_log.buckets.values())
    total = sum(s.total for s in outcome_log.buckets.values())
    if total == 0:
        return UNINFORMED_PRIOR
    return (successes + 1) / (total + 2)


def decide_transfer_kind(
    outcome_log: OutcomeLog,
    pkg_state_size: int,
    input_size: int,
    bucket_key: BucketKey,
    executed_units: int,
    quantum_ms: int,
    src_bw: float,
    dst_bw: float,
    radio: RadioModel,
    k_min: int = 3,
) -> TransferKind:
    if pkg_state_size < 0 or input_size < 0:
        raise ValueError("sizes must be >= 0")
    prior = success_prior(outcome_log, bucket_key, k_min)
    cost_state = transfer_time(pkg_state_size, src_bw, dst_bw, radio) / prior
    cost_full = transfer_time(input_size, src_bw, dst_bw, radio) + executed_units * quantum_ms
    kind = TransferKind.FULL_OFFLOAD if cost_full < cost_state else TransferKind.STATE_TRANSFER
    log.debug("adapt.transfer_kind", bucket=bucket_key.label, prior=prior, cost_state=cost_state, cost_full=cost_full, kind=kind.value)
    return kind
