"""
BAM 引擎測試：允入、釋放、回收與窮舉參考引擎比對
"""

import itertools
from fractions import Fraction

import numpy as np
import pytest

from bam_engine import (
    AdmitDecision,
    AtcsEngine,
    FrfsEngine,
    MamEngine,
    NothingToReclaim,
    RdmEngine,
    ReclaimKind,
    create_engine,
)
from bam_oracle import OracleLink
from bandwidth_model import (
    BamModel,
    ConfigError,
    InvalidDemand,
    LinkState,
    UnknownClass,
    UnknownRequest,
    partition,
)
from conftest import LB, MBPS, link_config, request


def admit_series(engine, state, class_id, count, size, start=1):
    return [engine.admit(state, request(start + n, class_id, size)) for n in range(count)]


class TestAdmit:
    def test_atcs_borrows_beyond_own_bc(self):
        state = LinkState(link_config(BamModel.ATCS))
        engine = AtcsEngine()
        decisions = admit_series(engine, state, 2, 50, 10 * MBPS)
        assert all(d.accepted for d in decisions)
        assert engine.used_bandwidth(state, 2) == (400 * MBPS, 0, 100 * MBPS)
        # 從最低優先權的 TC0 開始借用
        assert state.lent(0) == 100 * MBPS
        assert state.lent(1) == 0

    def test_atcs_single_breakdown_spans_donors(self):
        state = LinkState(link_config(BamModel.ATCS, bcs=[10, 10, 10], lb=30))
        engine = AtcsEngine()
        engine.admit(state, request(1, 2, 10))
        engine.admit(state, request(2, 0, 6))
        decision = engine.admit(state, request(3, 2, 8))
        assert decision.accepted
        assert decision.breakdown == ((0, 4), (1, 4))

    def test_mam_blocks_beyond_own_bc(self):
        state = LinkState(link_config(BamModel.MAM))
        engine = MamEngine()
        decisions = admit_series(engine, state, 2, 41, 10 * MBPS)
        assert all(d.accepted for d in decisions[:40])
        assert not decisions[40].accepted
        assert decisions[40].breakdown == () and decisions[40].side_effects == ()
        assert engine.used_bandwidth(state, 2) == (400 * MBPS, 0, 0)

    def test_frfs_single_pool(self):
        state = LinkState(link_config(BamModel.FRFS))
        engine = FrfsEngine()
        for n in range(100):
            assert engine.admit(state, request(n, n % 3, 10 * MBPS)).accepted
        assert not engine.admit(state, request(100, 1, 1)).accepted
        assert state.usage_matrix() == {(0, 0): LB}

    def test_rdm_only_borrows_from_higher_priority(self):
        config = link_config(BamModel.RDM, bcs=[10, 10], lb=20)
        rdm, atcs = RdmEngine(), AtcsEngine()

        low = LinkState(config)
        assert rdm.admit(low, request(1, 0, 15)).accepted
        assert low.usage_matrix() == {(0, 0): 10, (0, 1): 5}

        high = LinkState(config)
        assert not rdm.admit(high, request(1, 1, 15)).accepted
        assert atcs.admit(LinkState(link_config(BamModel.ATCS, bcs=[10, 10], lb=20)), request(1, 1, 15)).accepted

    def test_sharing_limit_caps_lending(self):
        config = link_config(BamModel.ATCS, bcs=[10, 10], lb=20, sharing=[Fraction(1, 2), 0])
        state = LinkState(config)
        engine = AtcsEngine()
        assert engine.admit(state, request(1, 1, 15)).accepted
        assert not engine.admit(state, request(2, 1, 1)).accepted
        assert state.lent(0) == partition(config.classes[0])[1]

    def test_invalid_inputs(self):
        state = LinkState(link_config(BamModel.ATCS))
        with pytest.raises(UnknownClass):
            AtcsEngine().admit(state, request(1, 7, 10))
        with pytest.raises(InvalidDemand):
            request(1, 0, -5)

    def test_create_engine(self):
        assert isinstance(create_engine("rdm"), RdmEngine)
        assert isinstance(create_engine(BamModel.FRFS), FrfsEngine)
        with pytest.raises(ConfigError):
            create_engine("gbam")


class TestRelease:
    def test_release_returns_to_donor(self):
        state = LinkState(link_config(BamModel.ATCS, bcs=[10, 10, 10], lb=30))
        engine = AtcsEngine()
        engine.admit(state, request(1, 1, 10))
        engine.admit(state, request(2, 1, 4))
        before = state.lendable(0)
        assert engine.release(state, 2) == ((0, 4),)
        assert state.lendable(0) == before + 4

    def test_release_then_readmit_gives_same_decision(self):
        state = LinkState(link_config(BamModel.ATCS))
        engine = AtcsEngine()
        admit_series(engine, state, 1, 30, 10 * MBPS)
        first = engine.admit(state, request(99, 1, 12 * MBPS))
        engine.release(state, 99)
        assert engine.admit(state, request(99, 1, 12 * MBPS)) == first

    def test_releasing_everything_restores_ground_state(self):
        state = LinkState(link_config(BamModel.ATCS))
        engine = AtcsEngine()
        admit_series(engine, state, 2, 45, 10 * MBPS)
        admit_series(engine, state, 0, 10, 7 * MBPS, start=100)
        for request_id in list(state.allocations):
            engine.release(state, request_id)
        assert state.usage_matrix() == {}
        assert all(engine.used_bandwidth(state, k) == (0, 0, 0) for k in (0, 1, 2))

    def test_release_unknown(self):
        with pytest.raises(UnknownRequest):
            AtcsEngine().release(LinkState(link_config(BamModel.ATCS)), 5)


class TestReclaim:
    @staticmethod
    def two_class_state():
        """TC0（低優先權，可分享）與 TC2（高優先權，不分享）"""
        config = link_config(BamModel.ATCS, bcs=[20, 20], lb=40, sharing=[1, 0], ids=[0, 2], priorities=[0, 2])
        state = LinkState(config)
        engine = AtcsEngine()
        engine.admit(state, request(1, 2, 10))
        engine.admit(state, request(2, 2, 10))
        assert engine.admit(state, request(3, 2, 10)).breakdown == ((0, 10),)
        assert engine.admit(state, request(4, 0, 10)).breakdown == ((0, 10),)
        return engine, state

    def test_devolution_when_borrower_can_move_home(self):
        engine, state = self.two_class_state()
        engine.release(state, 1)
        decision = engine.admit(state, request(5, 0, 10))
        assert decision.accepted
        assert decision.breakdown == ((0, 10),)
        assert [e.kind for e in decision.side_effects] == [ReclaimKind.DEVOLUTION]
        event = decision.side_effects[0]
        assert (event.victim_id, event.freed, event.reason_class, event.rehoused) == (3, 10, 0, ((2, 10),))
        assert state.lent(0) == 0
        assert state.violations() == []

    def test_preemption_when_borrower_has_nowhere_to_go(self):
        engine, state = self.two_class_state()
        decision = engine.admit(state, request(5, 0, 10))
        assert decision.accepted
        assert [(e.kind, e.victim_id) for e in decision.side_effects] == [(ReclaimKind.PREEMPTION, 3)]
        assert 3 not in state.allocations

    def test_nothing_to_reclaim(self):
        state = LinkState(link_config(BamModel.ATCS))
        with pytest.raises(NothingToReclaim):
            AtcsEngine().reclaim(state, 0, 10)

    def test_victims_lowest_priority_then_most_recent(self):
        state = LinkState(link_config(BamModel.ATCS, bcs=[10, 10, 10], lb=30))
        engine = AtcsEngine()
        engine.admit(state, request(1, 1, 10))
        engine.admit(state, request(2, 2, 10))
        engine.admit(state, request(3, 2, 2))
        engine.admit(state, request(4, 1, 2))
        engine.admit(state, request(5, 1, 2))
        order = [item.request_id for item in engine.victims(state, 0)]
        assert order == [5, 4, 3]

    def test_minimal_victim_prefix(self):
        state = LinkState(link_config(BamModel.ATCS, bcs=[10, 10], lb=20, sharing=[1, 0]))
        engine = AtcsEngine()
        engine.admit(state, request(1, 1, 10))
        for n in range(2, 7):
            engine.admit(state, request(n, 1, 2))
        events = engine.reclaim(state, 0, 3)
        assert [e.victim_id for e in events] == [6, 5]
        assert all(e.kind is ReclaimKind.PREEMPTION for e in events)

    @staticmethod
    def partly_lent_state():
        """TC2 自身剩 3、借給 TC0 5；TC1 可借出 4"""
        state = LinkState(link_config(BamModel.ATCS, bcs=[10, 10, 10], lb=30))
        engine = AtcsEngine()
        engine.admit(state, request(1, 1, 6))
        engine.admit(state, request(2, 1, 4))
        engine.admit(state, request(3, 0, 10))
        assert engine.admit(state, request(4, 0, 5)).breakdown == ((2, 5),)
        engine.release(state, 2)
        engine.admit(state, request(5, 2, 2))
        assert (state.free_in(2), state.lent(2), state.lendable(1)) == (3, 5, 4)
        return engine, state

    def test_reclaim_then_borrow_the_rest(self):
        """收回的量少於缺口時，其餘部分依模型向其他類別借用"""
        engine, state = self.partly_lent_state()
        decision = engine.admit(state, request(6, 2, 10))
        assert decision.accepted
        assert decision.breakdown == ((2, 8), (1, 2))
        assert [(e.kind, e.victim_id, e.freed) for e in decision.side_effects] == [(ReclaimKind.PREEMPTION, 4, 5)]
        assert state.lent(2) == 0
        assert state.violations() == []
        assert engine.model_violations(state) == []

    def test_reclaim_that_cannot_help_leaves_ledger_untouched(self):
        engine, state = self.partly_lent_state()
        before = state.usage_matrix()
        decision = engine.admit(state, request(6, 2, 13))
        assert not decision.accepted
        assert decision.side_effects == ()
        assert state.usage_matrix() == before
        assert 4 in state.allocations

    def test_mam_and_frfs_never_reclaim(self):
        for model, engine in ((BamModel.MAM, MamEngine()), (BamModel.FRFS, FrfsEngine())):
            state = LinkState(link_config(model, bcs=[10, 10], lb=20))
            for n in range(25):
                assert engine.admit(state, request(n, n % 2, 1)).side_effects == ()


def test_blocked_decision_is_empty():
    decision = AdmitDecision.block("full")
    assert decision.canonical() == "Blocked"
    assert decision.breakdown == () and decision.side_effects == ()


@pytest.mark.parametrize("model", list(BamModel))
def test_random_walk_keeps_invariants(model):
    rng = np.random.default_rng(7)
    state = LinkState(link_config(model, sharing=[1, Fraction(1, 2), Fraction(1, 4)]))
    engine = create_engine(model)
    for n in range(3000):
        if state.allocations and rng.random() < 0.4:
            victim = list(state.allocations)[int(rng.integers(len(state.allocations)))]
            engine.release(state, victim)
        else:
            engine.admit(state, request(n, int(rng.integers(3)), int(rng.integers(5, 16)) * MBPS))
        assert state.violations() == []
        assert engine.model_violations(state) == []
        if model is BamModel.MAM:
            assert all(engine.used_bandwidth(state, k)[1:] == (0, 0) for k in (0, 1, 2))


# 窮舉比對：3 個類別、LB 6、每個請求 1 單位
ORACLE_CONFIGS = [
    dict(bcs=[2, 2, 2], lb=6),
    dict(bcs=[2, 2, 2], lb=6, sharing=[1, Fraction(1, 2), 0]),
    dict(bcs=[1, 2, 3], lb=6, priorities=[2, 0, 1]),
]
# 0..2 = 該類別送出請求；3 = 釋放最近允入且仍在使用中的 LSP
ALPHABET = (0, 1, 2, 3)


def oracle_for(config):
    bc = {tc.class_id: tc.bc for tc in config.classes}
    public = {tc.class_id: partition(tc)[1] for tc in config.classes}
    priority = {tc.class_id: tc.priority for tc in config.classes}
    return OracleLink(config.model, bc, public, priority)


def replay_against_oracle(config, sequence):
    """sequence 的元素為 3（釋放）、類別編號（1 單位）或 (類別, 需求)"""
    state = LinkState(config)
    engine = create_engine(config.model)
    oracle = oracle_for(config)
    admitted = []
    for step, symbol in enumerate(sequence, 1):
        if symbol == 3:
            live = [rid for rid in admitted if rid in state.allocations]
            if not live:
                continue
            engine.release(state, live[-1])
            oracle.release(live[-1])
        else:
            class_id, demand = symbol if isinstance(symbol, tuple) else (symbol, 1)
            decision = engine.admit(state, request(step, class_id, demand))
            outcome, effects = oracle.admit(step, class_id, demand)
            assert ("accept" if decision.accepted else "block") == outcome, sequence
            assert [(e.kind.value, e.victim_id) for e in decision.side_effects] == effects, sequence
            if decision.accepted:
                admitted.append(step)
        assert state.usage_matrix() == oracle.usage(), sequence
        assert state.violations() == []


@pytest.mark.parametrize("model", list(BamModel))
@pytest.mark.parametrize("options", ORACLE_CONFIGS)
def test_engine_matches_exhaustive_oracle(model, options):
    if model is BamModel.FRFS:
        config = link_config(model, lb=options["lb"])
    else:
        config = link_config(model, **options)
    for sequence in itertools.product(ALPHABET, repeat=5):
        replay_against_oracle(config, sequence)


@pytest.mark.slow
@pytest.mark.parametrize("model", [BamModel.RDM, BamModel.ATCS])
def test_engine_matches_exhaustive_oracle_long_sequences(model):
    config = link_config(model, **ORACLE_CONFIGS[1])
    for sequence in itertools.product(ALPHABET, repeat=8):
        replay_against_oracle(config, sequence)


# 多單位需求：回收量可能小於缺口，剩餘部分須再借用
MULTI_UNIT_CONFIGS = [
    dict(bcs=[4, 4, 4], lb=12),
    dict(bcs=[3, 4, 5], lb=12, sharing=[1, Fraction(1, 2), 1]),
    dict(bcs=[5, 3, 4], lb=12, priorities=[1, 2, 0]),
]


@pytest.mark.parametrize("model", list(BamModel))
@pytest.mark.parametrize("options", MULTI_UNIT_CONFIGS)
def test_engine_matches_oracle_with_multi_unit_demands(model, options):
    if model is BamModel.FRFS:
        config = link_config(model, lb=options["lb"])
    else:
        config = link_config(model, **options)
    rng = np.random.default_rng(11)
    for _ in range(300):
        sequence = []
        for _ in range(14):
            if rng.random() < 0.3:
                sequence.append(3)
            else:
                sequence.append((int(rng.integers(3)), int(rng.integers(1, 6))))
        replay_against_oracle(config, sequence)


def test_oracle_reaches_reclaim_then_borrow():
    config = link_config(BamModel.ATCS, bcs=[4, 4, 4], lb=12)
    oracle = oracle_for(config)
    state = LinkState(config)
    engine = AtcsEngine()
    steps = [(1, 1, 2), (2, 1, 2), (3, 0, 4), (4, 0, 3)]
    for request_id, class_id, demand in steps:
        assert oracle.admit(request_id, class_id, demand) == ("accept", [])
        assert engine.admit(state, request(request_id, class_id, demand)).accepted
    oracle.release(2)
    engine.release(state, 2)

    assert oracle.admit(5, 2, 5) == ("accept", [("Preemption", 4)])
    decision = engine.admit(state, request(5, 2, 5))
    assert decision.breakdown == ((2, 4), (1, 1))
    assert [(e.kind.value, e.victim_id) for e in decision.side_effects] == [("Preemption", 4)]
    assert oracle.usage() == state.usage_matrix() == {(0, 0): 4, (1, 1): 2, (2, 1): 1, (2, 2): 4}
