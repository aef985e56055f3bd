"""
核心模型測試：設定驗證、BC 分割與鏈路帳本
"""

from fractions import Fraction

import numpy as np
import pytest

from bandwidth_model import (
    BamModel,
    BadSharingLimit,
    ConfigError,
    DuplicatePriority,
    InvalidDemand,
    InvariantViolation,
    LinkBamConfig,
    LinkState,
    LspAllocation,
    LspRequest,
    NetworkGraph,
    OverCommitted,
    TrafficClassConfig,
    UnknownClass,
    UnknownRequest,
    frfs_config,
    mbps_to_kbps,
    merge_breakdown,
    parse_link_name,
    partition,
    validate_link_config,
)
from conftest import LB, MBPS, class_table, link_config


class TestValidateLinkConfig:
    def test_reference_configuration_is_valid(self):
        config = validate_link_config(LinkBamConfig((0, 1), BamModel.ATCS, class_table()), LB)
        assert config.lb == LB
        assert [tc.bc for tc in config.classes] == [250 * MBPS, 350 * MBPS, 400 * MBPS]

    def test_over_commitment_is_rejected(self):
        config = LinkBamConfig((0, 1), BamModel.ATCS, class_table([600 * MBPS, 600 * MBPS]))
        with pytest.raises(OverCommitted, match="ΣBC") as excinfo:
            validate_link_config(config, LB)
        message = str(excinfo.value)
        assert "1200 Mbps" in message and "1000 Mbps" in message and "ΣBC ≤ LB" in message

    def test_under_provisioning_is_allowed(self):
        config = LinkBamConfig((0, 1), BamModel.MAM, class_table([100 * MBPS, 100 * MBPS]))
        assert validate_link_config(config, LB).lb == LB

    def test_single_class_at_link_capacity(self):
        config = LinkBamConfig((0, 1), BamModel.ATCS, class_table([LB], sharing=[0]))
        assert validate_link_config(config, LB).classes[0].bc == LB

    def test_duplicate_priority(self):
        config = LinkBamConfig((0, 1), BamModel.ATCS, class_table(priorities=[1, 1, 2]))
        with pytest.raises(DuplicatePriority):
            validate_link_config(config, LB)

    @pytest.mark.parametrize("limit", [Fraction(-1, 10), Fraction(11, 10)])
    def test_sharing_limit_out_of_range(self, limit):
        config = LinkBamConfig((0, 1), BamModel.ATCS, class_table(sharing=[1, limit, 1]))
        with pytest.raises(BadSharingLimit):
            validate_link_config(config, LB)

    def test_idempotent_and_order_insensitive(self):
        table = class_table()
        forward = validate_link_config(LinkBamConfig((0, 1), BamModel.RDM, table), LB)
        backward = validate_link_config(LinkBamConfig((0, 1), BamModel.RDM, tuple(reversed(table))), LB)
        assert forward == backward
        assert validate_link_config(forward, LB) == forward

    def test_frfs_requires_single_pool(self):
        config = LinkBamConfig((0, 1), BamModel.FRFS, class_table())
        with pytest.raises(ConfigError):
            validate_link_config(config, LB)
        assert validate_link_config(frfs_config((0, 1), LB), LB).classes[0].bc == LB


class TestPartition:
    @pytest.mark.parametrize("bc, limit, expected", [
        (400 * MBPS, Fraction(1), (0, 400 * MBPS)),
        (400 * MBPS, Fraction(0), (400 * MBPS, 0)),
        (350 * MBPS, Fraction(1, 2), (175 * MBPS, 175 * MBPS)),
    ])
    def test_private_public_split(self, bc, limit, expected):
        assert partition(TrafficClassConfig(0, 0, bc, limit)) == expected

    def test_split_is_exact_for_odd_amounts(self):
        private, public = partition(TrafficClassConfig(0, 0, 7, Fraction(1, 3)))
        assert private + public == 7


class TestNetworkGraph:
    def test_connectivity_matrix(self):
        graph = NetworkGraph((0, 1, 2), {(0, 1): 10, (1, 2): 10})
        matrix = graph.connectivity
        assert matrix.dtype == np.int8
        assert matrix.tolist() == [[0, 1, 0], [0, 0, 1], [0, 0, 0]]
        assert not np.diag(matrix).any()

    def test_self_loop_rejected(self):
        with pytest.raises(ConfigError):
            NetworkGraph((0, 1), {(0, 0): 10})

    def test_zero_capacity_rejected(self):
        with pytest.raises(ConfigError):
            NetworkGraph((0, 1), {(0, 1): 0})

    def test_unknown_link_capacity(self):
        with pytest.raises(ConfigError):
            NetworkGraph((0, 1), {(0, 1): 10}).capacity((1, 0))


def test_unit_conversion_is_exact():
    assert mbps_to_kbps(0.1) == 100
    assert mbps_to_kbps("12.5") == 12_500
    assert parse_link_name(" 3-10 ") == (3, 10)
    with pytest.raises(ConfigError):
        parse_link_name("3_10")


def test_request_requires_positive_demand_and_holding():
    with pytest.raises(InvalidDemand):
        LspRequest(1, "u", 0, 0, 0, 1)
    with pytest.raises(InvalidDemand):
        LspRequest(1, "u", 0, 10, 0, 1, holding_ms=0)


def test_allocation_segments_must_concatenate():
    with pytest.raises(ConfigError):
        LspAllocation(1, 0, 10, ((0, 1, (0, 1)), (2, 3, (2, 3))), {})
    with pytest.raises(InvariantViolation):
        LspAllocation(1, 0, 10, ((0, 1, (0, 1)),), {(0, 1): ((0, 4),)})


def test_merge_breakdown_keeps_first_order():
    assert merge_breakdown([(2, 3), (0, 1), (2, 4), (1, 0)]) == ((2, 7), (0, 1))


class TestLinkState:
    def test_bookkeeping_tracks_owner_and_donor(self, atcs_state):
        atcs_state.add(1, 2, 2, ((2, 400 * MBPS),))
        atcs_state.add(2, 2, 2, ((0, 60 * MBPS), (1, 40 * MBPS)))
        assert atcs_state.own_use(2) == 400 * MBPS
        assert atcs_state.borrowed(2) == 100 * MBPS
        assert atcs_state.lent(0) == 60 * MBPS
        assert atcs_state.free_in(0) == 190 * MBPS
        assert atcs_state.total_allocated() == 500 * MBPS
        assert atcs_state.violations() == []

    def test_remove_restores_pristine_state(self, atcs_state):
        atcs_state.add(1, 1, 1, ((1, 10 * MBPS), (0, 5 * MBPS)))
        atcs_state.remove(1)
        assert atcs_state.usage_matrix() == {}
        assert atcs_state.allocations == {}

    def test_remove_unknown_request(self, atcs_state):
        with pytest.raises(UnknownRequest):
            atcs_state.remove(42)

    def test_rehouse_keeps_admission_order(self, atcs_state):
        atcs_state.add(1, 2, 2, ((0, 10),))
        atcs_state.add(2, 2, 2, ((2, 10),))
        atcs_state.rehouse(1, ((2, 10),))
        assert atcs_state.allocations[1].seq < atcs_state.allocations[2].seq
        assert atcs_state.lent(0) == 0

    def test_violations_detect_overdrawn_donor(self):
        state = LinkState(link_config(BamModel.ATCS, sharing=[Fraction(1, 2), 1, 1]))
        state.add(1, 2, 2, ((0, 200 * MBPS),))
        problems = state.violations()
        assert any("共享上限" in p for p in problems)
        with pytest.raises(InvariantViolation):
            state.assert_invariants()

    def test_unknown_class(self, atcs_state):
        with pytest.raises(UnknownClass):
            atcs_state.bc(9)

    def test_copy_is_independent(self, atcs_state):
        atcs_state.add(1, 0, 0, ((0, 10),))
        clone = atcs_state.copy()
        clone.add(2, 0, 0, ((0, 10),))
        assert 2 not in atcs_state.allocations
        assert atcs_state.own_use(0) == 10
