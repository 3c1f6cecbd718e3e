import pytest

from src.core.exceptions import InvariantViolation
from src.schemas.adapt import BucketKey, SpeedBand
from src.schemas.handover import HandoverOutcome, HandoverResult, TransferKind
from src.schemas.intent import TrafficType
from src.schemas.node import CapabilityClass, Components, RankingWeights
from src.schemas.scenario import RadioModel
from src.services.adapt import (
    AgentState,
    OutcomeLog,
    decide_transfer_kind,
    few_shot_prior,
    record_outcome,
    success_prior,
    update_weights,
)

RADIO = RadioModel()
BUCKET = BucketKey(traffic_type=TrafficType.INTERACTIVE, speed_band=SpeedBand.FAST, capability_class=CapabilityClass.EDGE_NODE)
OTHER = BucketKey(traffic_type=TrafficType.BULK, speed_band=SpeedBand.SLOW, capability_class=CapabilityClass.CLOUD)
BANDWIDTH_ONLY = Components(bandwidth=1.0, cpu_headroom=0.0, mem_headroom=0.0, snr=0.0, residence=0.0, traffic_match=0.0)


def outcome(result=HandoverResult.SUCCESS, started=0, finished=50, attempt=1):
    return HandoverOutcome(
        intent_id="i1",
        source="A",
        target="N",
        attempt_index=attempt,
        started_at=started,
        finished_at=finished,
        result=result,
        progress_at_transfer=0.6,
        recomputed_units=0 if result != HandoverResult.ABORT else 32,
    )


def log_with(bucket, successes, failures):
    log = OutcomeLog()
    t = 0
    for result in [HandoverResult.SUCCESS] * successes + [HandoverResult.ABORT] * failures:
        t += 10
        record_outcome(log, outcome(result, started=t - 5, finished=t), bucket, BANDWIDTH_ONLY, result != HandoverResult.ABORT)
    return log


# =========================================================================
# Weight updates
# =========================================================================

def test_success_rewards_the_chosen_components():
    weights = update_weights(RankingWeights(), outcome(), BANDWIDTH_ONLY, qoe_met=True, eta=0.1)
    values = weights.as_tuple()
    assert sum(values) == pytest.approx(1.0)
    assert values[0] > 1 / 6
    assert all(v < 1 / 6 for v in values[1:])


def test_missed_qoe_counts_as_failure():
    weights = update_weights(RankingWeights(), outcome(), BANDWIDTH_ONLY, qoe_met=False, eta=0.1)
    assert weights.w_bandwidth < 1 / 6


def test_five_failures_strictly_decrease_the_bandwidth_weight():
    weights = RankingWeights()
    previous = weights.canonical().w_bandwidth
    for i in range(5):
        weights = update_weights(weights, outcome(HandoverResult.ABORT, finished=10 * (i + 1)), BANDWIDTH_ONLY, eta=0.1)
        assert weights.w_bandwidth < previous
        previous = weights.w_bandwidth


def test_zero_learning_rate_keeps_canonical_weights():
    start = RankingWeights.from_values([1, 2, 3, 4, 5, 6])
    assert update_weights(start, outcome(), BANDWIDTH_ONLY, eta=0.0).as_tuple() == pytest.approx(start.canonical().as_tuple())


# =========================================================================
# Outcome log and priors
# =========================================================================

def test_outcome_log_tracks_bucket_counts_and_latency():
    log = OutcomeLog()
    record_outcome(log, outcome(started=0, finished=40), BUCKET, BANDWIDTH_ONLY, True)
    record_outcome(log, outcome(HandoverResult.ABORT, started=10, finished=90), BUCKET, BANDWIDTH_ONLY, False)

    stats = log.buckets[BUCKET]
    assert (stats.successes, stats.failures) == (1, 1)
    assert stats.mean_completion_latency == pytest.approx(60.0)
    assert log.causality_stats() == {BUCKET.label: [1, 1]}


def test_outcomes_must_arrive_in_finish_order():
    log = OutcomeLog()
    record_outcome(log, outcome(finished=100), BUCKET, BANDWIDTH_ONLY, True)
    with pytest.raises(InvariantViolation):
        record_outcome(log, outcome(started=0, finished=99), BUCKET, BANDWIDTH_ONLY, True)


def test_few_shot_prior_matches_laplace_everywhere():
    for s in range(11):
        for f in range(11 - s):
            prior = few_shot_prior(log_with(BUCKET, s, f), BUCKET, k_min=1)
            if s + f == 0:
                assert prior is None
            else:
                assert prior == (s + 1) / (s + f + 2)


def test_few_shot_prior_needs_k_min_samples():
    log = log_with(BUCKET, 2, 0)
    assert few_shot_prior(log, BUCKET, k_min=3) is None
    assert few_shot_prior(log, BUCKET, k_min=2) == pytest.approx(3 / 4)
    with pytest.raises(ValueError):
        few_shot_prior(log, BUCKET, k_min=0)


def test_success_prior_falls_back_to_global_then_uninformed():
    assert success_prior(OutcomeLog(), BUCKET, k_min=3) == 0.5
    log = log_with(OTHER, 3, 1)
    assert success_prior(log, BUCKET, k_min=3) == pytest.approx((3 + 1) / (4 + 2))
    assert success_prior(log, OTHER, k_min=3) == pytest.approx((3 + 1) / (4 + 2))


def test_agent_dump_reports_canonical_weights():
    agent = AgentState(node_id="A", weights=RankingWeights.from_values([2, 2, 2, 2, 0, 0]), log=log_with(BUCKET, 1, 0))
    dump = agent.dump()
    assert dump.weights == pytest.approx([0.25, 0.25, 0.25, 0.25, 0.0, 0.0])
    assert dump.records == 1
    assert dump.buckets[0].key == BUCKET


# =========================================================================
# Transfer kind
# =========================================================================

def test_small_state_is_shipped():
    kind = decide_transfer_kind(OutcomeLog(), 4000, 40000, BUCKET, 24, 250, 1e6, 1e6, RADIO)
    assert kind == TransferKind.STATE_TRANSFER


def test_huge_state_early_in_the_subtask_is_offloaded():
    kind = decide_transfer_kind(OutcomeLog(), 500_000, 1_000, BUCKET, 1, 250, 1e6, 1e6, RADIO)
    assert kind == TransferKind.FULL_OFFLOAD


def test_equal_costs_prefer_state_transfer():
    # state: tt(0) / 0.5 = 10; full: tt(0) + 1 * 5 = 10
    kind = decide_transfer_kind(OutcomeLog(), 0, 0, BUCKET, 1, 5, 1e6, 1e6, RADIO)
    assert kind == TransferKind.STATE_TRANSFER


def test_poor_history_tilts_towards_offload():
    # tt(4000) = 37; tt(8000) = 69 plus 10 ms of redone work
    assert decide_transfer_kind(OutcomeLog(), 4000, 8000, BUCKET, 1, 10, 1e6, 1e6, RADIO) == TransferKind.STATE_TRANSFER
    bad = log_with(BUCKET, 0, 5)
    assert decide_transfer_kind(bad, 4000, 8000, BUCKET, 1, 10, 1e6, 1e6, RADIO) == TransferKind.FULL_OFFLOAD
