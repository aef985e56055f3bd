"""
測試共用設定
"""

from fractions import Fraction
from typing import Dict, Optional, Sequence

import pytest

from bandwidth_model import (
    BamModel,
    LinkBamConfig,
    LinkState,
    LspRequest,
    NetworkGraph,
    TrafficClassConfig,
    frfs_config,
    validate_link_config,
)
from scenario import Scenario
from topology import build_path_table
from traffic_generator import Flow, PhaseProfile, WorkloadSpec

MBPS = 1000
LB = 1000 * MBPS
REFERENCE_BCS = (250 * MBPS, 350 * MBPS, 400 * MBPS)


def class_table(bcs: Sequence[int] = REFERENCE_BCS, sharing: Optional[Sequence] = None,
                priorities: Optional[Sequence[int]] = None, ids: Optional[Sequence[int]] = None):
    ids = list(ids if ids is not None else range(len(bcs)))
    sharing = sharing if sharing is not None else [1] * len(bcs)
    priorities = priorities if priorities is not None else list(range(len(bcs)))
    return tuple(
        TrafficClassConfig(class_id=k, priority=p, bc=bc, sharing_limit=Fraction(s), name=f"TC{k}")
        for k, p, bc, s in zip(ids, priorities, bcs, sharing)
    )


def link_config(model: BamModel, bcs: Sequence[int] = REFERENCE_BCS, lb: int = LB, link=(0, 1),
                **kwargs) -> LinkBamConfig:
    if model is BamModel.FRFS:
        return validate_link_config(frfs_config(link, lb), lb)
    return validate_link_config(LinkBamConfig(link, model, class_table(bcs, **kwargs)), lb)


def request(request_id: int, class_id: int, bandwidth: int, user_id: str = "u", source: int = 0,
            destination: int = 1) -> LspRequest:
    return LspRequest(request_id, user_id, class_id, bandwidth, source, destination)


def make_scenario(rates: Dict[int, float], phases: int = 1, phase_ms: int = 600_000,
                  model: BamModel = BamModel.ATCS, hops=(0, 1), bcs=REFERENCE_BCS, lb: int = LB,
                  holding_ms: int = 300_000, low: int = 5 * MBPS, high: int = 15 * MBPS,
                  seeds=(1,), name: str = "test") -> Scenario:
    """線狀拓樸上的小型情境；流量沿 hops 從頭走到尾"""
    switches = tuple(sorted(set(hops)))
    links = {}
    for x, y in zip(hops, hops[1:]):
        links[(x, y)] = lb
        links[(y, x)] = lb
    table = class_table(bcs)
    return Scenario(
        name=name,
        graph=NetworkGraph(switches, links),
        class_tables={link: table for link in links},
        models={link: model for link in links},
        path_table=build_path_table({(hops[0], hops[-1]): list(hops)}),
        phases=tuple(PhaseProfile(phase_ms, dict(rates)) for _ in range(phases)),
        workload=WorkloadSpec(low, high, holding_ms, (Flow(hops[0], hops[-1]),),
                              users={k: (f"tc{k}-a", f"tc{k}-b") for k in range(len(bcs))}),
        duration_ms=phases * phase_ms,
        seeds=tuple(seeds),
        focus_link=(hops[0], hops[1]),
        bucket_ms=60_000,
    ).validate()


@pytest.fixture
def atcs_state():
    return LinkState(link_config(BamModel.ATCS))


@pytest.fixture
def reference_config():
    return link_config(BamModel.ATCS)
