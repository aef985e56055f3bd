"""
模擬器測試：可重現性、事件紀錄結構與帳本檢查
"""

from dataclasses import replace

import pytest

from bandwidth_model import BamModel
from conftest import LB, MBPS, make_scenario
from event_log import EventKind
from metrics_engine import block_rate
from scenario import InvalidScenario
from simulator import Simulator, build_requests, run
from traffic_generator import PhaseProfile


def contended(model=BamModel.ATCS, **kwargs):
    # 各類別提供負載約為 BC 的 1.2 倍
    rates = {0: 0.1, 1: 0.14, 2: 0.16}
    return make_scenario(rates, phases=2, phase_ms=1_800_000, model=model, **kwargs)


def test_same_seed_gives_identical_log():
    scenario = contended()
    first, _ = run(scenario, seed=3)
    second, _ = run(scenario, seed=3)
    assert first == second
    assert first.dumps() == second.dumps()
    assert first != run(scenario, seed=4)[0]


def test_header_records_generator():
    log, _ = run(contended(), seed=8)
    assert log.header == {"rng": "PCG64", "seed": "8", "scenario": "test", "model": "ATCS"}


def test_zero_rates_produce_empty_log():
    log, summary = run(make_scenario({0: 0.0, 1: 0.0, 2: 0.0}, phases=2))
    assert len(log) == 0
    assert summary.overall.mean_utilization == 0.0
    assert summary.overall.mean_block_rate is None


def test_uncontended_load_never_blocks():
    # 單一類別，提供負載為 LB 的 10%
    scenario = make_scenario({0: 100 * MBPS / (10 * MBPS * 300)}, phase_ms=3_600_000)
    log, summary = run(scenario, seed=1)
    assert log.of_kind(EventKind.ARRIVAL)
    assert not log.of_kind(EventKind.BLOCK, EventKind.PREEMPTION, EventKind.DEVOLUTION)
    assert block_rate(log, scenario, class_id=0) == 0.0


@pytest.mark.parametrize("model", list(BamModel))
def test_log_structure(model):
    scenario = contended(model=model, hops=(0, 1, 2))
    log, _ = run(scenario, seed=2, check_invariants=True)
    assert log.problems(scenario.duration_ms) == []
    arrivals = log.arrivals()
    assert len(arrivals) == len(build_requests(scenario, 2))
    decided = {r.request_id for r in log.of_kind(EventKind.ACCEPT, EventKind.BLOCK)}
    assert decided == set(arrivals)
    assert all(r.time_ms <= scenario.duration_ms for r in log)


def test_contention_produces_reclaims_under_atcs():
    log, _ = run(contended(), seed=1)
    assert log.of_kind(EventKind.BLOCK)
    assert log.of_kind(EventKind.PREEMPTION, EventKind.DEVOLUTION)
    for r in log.of_kind(EventKind.PREEMPTION, EventKind.DEVOLUTION):
        assert r.cause is not None and r.at is not None


def test_preempted_lsp_is_not_released_again():
    log, _ = run(contended(), seed=1)
    preempted = {r.request_id for r in log.of_kind(EventKind.PREEMPTION)}
    released = {r.request_id for r in log.of_kind(EventKind.RELEASE)}
    assert not preempted & released


def test_halt_releases_active_lsps():
    scenario = contended()
    log, _ = run(scenario, seed=5)
    at_halt = [r for r in log.of_kind(EventKind.RELEASE) if r.time_ms == scenario.duration_ms]
    assert at_halt
    assert len(Simulator(scenario, 5).run()) == len(log)


def test_phases_use_their_own_rates():
    scenario = replace(
        make_scenario({0: 0.0}),
        phases=(PhaseProfile(600_000, {0: 0.0}), PhaseProfile(600_000, {0: 0.5})),
        duration_ms=1_200_000,
    ).validate()
    requests = build_requests(scenario, 1)
    assert requests and all(r.arrival_ms >= 600_000 for r in requests)


def test_invalid_scenario():
    scenario = make_scenario({0: 0.1})
    with pytest.raises(InvalidScenario):
        run(replace(scenario, duration_ms=scenario.duration_ms + 1))
