"""
指標計算測試
"""

import pytest

from bandwidth_model import BamModel
from conftest import MBPS, make_scenario
from event_log import EventKind, EventLog, EventRecord
from metrics_engine import UnknownLink, average_summaries, block_rate, summarize, time_series, utilization
from simulator import run

LINK = (0, 1)


def idle_scenario():
    # 兩個 10 分鐘階段，到達率為 0，紀錄由測試自行建立
    return make_scenario({0: 0.0, 1: 0.0, 2: 0.0}, phases=2)


def record(time_ms, kind, request_id, class_id, bandwidth=10 * MBPS, **kwargs):
    phase = 1 if time_ms < 600_000 else 2
    return EventRecord(time_ms, kind, request_id, class_id, bandwidth, (LINK,), phase, **kwargs)


def accepted(time_ms, request_id, class_id, bandwidth=10 * MBPS):
    return [
        record(time_ms, EventKind.ARRIVAL, request_id, class_id, bandwidth),
        record(time_ms, EventKind.ACCEPT, request_id, class_id, bandwidth,
               breakdown=((LINK, ((class_id, bandwidth),)),)),
    ]


def build_log(records, seed=1):
    log = EventLog({"rng": "PCG64", "seed": str(seed), "scenario": "test", "model": "ATCS"})
    for r in sorted(records, key=lambda r: r.time_ms):
        log.append(r)
    return log


def held_for_one_phase():
    """TC2 一條 10 Mbps LSP，在第一階段全程使用"""
    return build_log(accepted(0, 1, 2) + [record(600_000, EventKind.RELEASE, 1, 2)])


def test_empty_log_gives_zero_utilization():
    scenario = idle_scenario()
    log = build_log([])
    assert utilization(log, scenario) == 0.0
    assert utilization(log, scenario, class_id=0) == 0.0
    assert block_rate(log, scenario) is None


def test_utilization_is_time_weighted_over_bc():
    scenario = idle_scenario()
    log = held_for_one_phase()
    assert utilization(log, scenario, class_id=2, window=(0, 600_000)) == pytest.approx(2.5)
    assert utilization(log, scenario, class_id=2) == pytest.approx(1.25)
    assert utilization(log, scenario, class_id=2, window=(600_000, 1_200_000)) == 0.0
    assert utilization(log, scenario) == pytest.approx(0.5)
    assert utilization(log, scenario, class_id=0) == 0.0


def test_active_lsp_is_counted_until_end_of_run():
    scenario = idle_scenario()
    log = build_log(accepted(600_000, 1, 2))
    assert utilization(log, scenario, class_id=2) == pytest.approx(1.25)


def test_borrowed_bandwidth_counts_for_the_owner():
    scenario = make_scenario({0: 0.0}, bcs=(10 * MBPS, 10 * MBPS), lb=20 * MBPS)
    records = [
        record(0, EventKind.ARRIVAL, 1, 1, 15 * MBPS),
        record(0, EventKind.ACCEPT, 1, 1, 15 * MBPS, breakdown=((LINK, ((1, 10 * MBPS), (0, 5 * MBPS))),)),
    ]
    assert utilization(build_log(records), scenario, class_id=1) == pytest.approx(150.0)


def test_block_rate():
    scenario = idle_scenario()
    records = []
    for n in range(1, 10):
        records += accepted(n * 1000, n, 0, 1)
    records += [record(20_000, EventKind.ARRIVAL, 10, 0, 1), record(20_000, EventKind.BLOCK, 10, 0, 1, at=LINK)]
    log = build_log(records)
    assert block_rate(log, scenario, class_id=0) == pytest.approx(10.0)
    assert block_rate(log, scenario, class_id=1) is None

    overall = summarize(log, scenario).overall
    tc0 = overall.for_class(0)
    assert (tc0.arrivals, tc0.accepted, tc0.blocked) == (10, 9, 1)
    # 只有 TC0 有到達，平均阻擋率只計入有定義的類別
    assert overall.mean_block_rate == pytest.approx(10.0)


def test_preemption_and_devolution_percentages():
    scenario = idle_scenario()
    records = accepted(0, 1, 2) + accepted(0, 2, 2) + accepted(0, 3, 2) + accepted(0, 4, 2)
    records += accepted(30_000, 5, 0)
    records += [
        record(30_000, EventKind.PREEMPTION, 1, 2, cause=5, at=LINK),
        record(30_000, EventKind.DEVOLUTION, 2, 2, cause=5, at=LINK, breakdown=((LINK, ((2, 10 * MBPS),)),)),
    ]
    summary = summarize(build_log(records), scenario)
    tc2 = summary.phases[0].for_class(2)
    assert tc2.preemption_pct == pytest.approx(25.0)
    assert tc2.devolution_pct == pytest.approx(25.0)
    assert tc2.preemptions_per_hour == pytest.approx(6.0)
    assert summary.phases[1].for_class(2).preemption_pct is None
    assert summary.phases[0].for_class(0).preemption_pct == 0.0


def test_summary_structure():
    scenario = idle_scenario()
    summary = summarize(held_for_one_phase(), scenario)
    assert summary.link == LINK
    assert summary.model == "ATCS"
    assert summary.seeds == (1,)
    assert [(s.start_ms, s.end_ms) for s in summary.phases] == [(0, 600_000), (600_000, 1_200_000)]
    assert [m.class_id for m in summary.overall.per_class] == [0, 1, 2]
    assert summary.overall.mean_utilization == pytest.approx(1.25 / 3)


def test_average_summaries():
    scenario = idle_scenario()
    first = summarize(held_for_one_phase(), scenario)
    second = summarize(build_log([], seed=2), scenario)
    mean = average_summaries([first, second])
    assert mean.seeds == (1, 2)
    assert mean.overall.for_class(2).utilization == pytest.approx(0.625)
    assert mean.overall.for_class(2).arrivals == 1
    with pytest.raises(ValueError):
        average_summaries([])


def test_time_series_columns():
    scenario = idle_scenario()
    frame = time_series(held_for_one_phase(), scenario)
    assert len(frame) == 20
    assert {"start_s", "phase", "util_TC0", "blocks_TC2", "preemptions_TC1", "devolutions_TC0",
            "util_link"} <= set(frame.columns)
    assert frame["phase"].tolist() == [1] * 10 + [2] * 10
    assert frame["util_TC2"].iloc[0] == pytest.approx(2.5)
    assert frame["util_TC2"].iloc[-1] == 0.0
    with pytest.raises(ValueError):
        time_series(held_for_one_phase(), scenario, bucket_ms=0)


def test_unknown_link_and_window():
    scenario = idle_scenario()
    log = build_log([])
    with pytest.raises(UnknownLink):
        utilization(log, scenario, link=(5, 6))
    with pytest.raises(ValueError):
        utilization(log, scenario, window=(0, 2_000_000))


def test_simulated_counts_add_up():
    scenario = make_scenario({0: 0.1, 1: 0.14, 2: 0.16}, phases=2, phase_ms=900_000)
    log, summary = run(scenario, seed=4)
    for metrics in summary.overall.per_class:
        assert metrics.accepted + metrics.blocked == metrics.arrivals
    assert sum(m.arrivals for m in summary.overall.per_class) == len(log.arrivals())


@pytest.mark.parametrize("model", [BamModel.ATCS, BamModel.FRFS])
def test_aggregate_is_bc_weighted_sum_of_classes(model):
    """整條鏈路使用率 × LB 等於各類別使用率 × BC 的總和（整體與每個階段）"""
    scenario = make_scenario({0: 0.1, 1: 0.14, 2: 0.16}, phases=2, phase_ms=900_000, model=model)
    _, summary = run(scenario, seed=2, check_invariants=False)
    lb = scenario.graph.capacity(LINK)
    for metrics in (summary.overall,) + summary.phases:
        weighted = sum(m.utilization * scenario.class_bc(LINK, m.class_id) for m in metrics.per_class)
        assert metrics.aggregate.utilization * lb == pytest.approx(weighted, rel=1e-9)
        assert metrics.aggregate.arrivals == sum(m.arrivals for m in metrics.per_class)
        assert metrics.aggregate.blocked == sum(m.blocked for m in metrics.per_class)
    assert summary.overall.aggregate.utilization > 0
