"""
LSP 請求產生器
各類別以獨立、由種子衍生的亂數子串流產生 Poisson 到達
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Sequence, Tuple

import numpy as np
from numpy.random import PCG64, Generator, SeedSequence

from bandwidth_model import InvalidDemand, LspRequest, MS_PER_SECOND

logger = logging.getLogger(__name__)

RNG_ALGORITHM = "PCG64"


@dataclass(frozen=True)
class PhaseProfile:
    """單一階段：持續時間與各類別平均到達率 (requests/s)"""

    duration_ms: int
    rates: Mapping[int, float]

    def __post_init__(self):
        if self.duration_ms <= 0:
            raise InvalidDemand("階段持續時間必須大於 0")
        for class_id, rate in self.rates.items():
            if rate < 0:
                raise InvalidDemand(f"TC{class_id} 的到達率不可為負值")


@dataclass(frozen=True)
class Flow:
    source: int
    destination: int
    weight: float = 1.0


@dataclass(frozen=True)
class WorkloadSpec:
    """請求頻寬、持有時間、來源目的與使用者對應"""

    low_kbps: int
    high_kbps: int
    mean_holding_ms: int
    flows: Tuple[Flow, ...]
    users: Mapping[int, Tuple[str, ...]] = field(default_factory=dict)

    def __post_init__(self):
        if not 0 < self.low_kbps <= self.high_kbps:
            raise InvalidDemand("請求頻寬分布必須滿足 0 < low ≤ high")
        if self.mean_holding_ms <= 0:
            raise InvalidDemand("平均持有時間必須大於 0")
        if not self.flows:
            raise InvalidDemand("至少需要一組來源與目的")

    @property
    def mean_demand_kbps(self) -> float:
        return (self.low_kbps + self.high_kbps) / 2


def class_stream(seed: int, class_id: int, phase_index: int) -> Generator:
    """
    取得類別在某階段的亂數子串流

    子串流只依 (seed, class_id, phase_index) 決定，新增類別或階段不影響其他串流。
    """
    return Generator(PCG64(SeedSequence(seed, spawn_key=(class_id, phase_index))))


def generate_workload(phase: PhaseProfile, streams: Mapping[int, Generator], workload: WorkloadSpec,
                      start_ms: int = 0, first_request_id: int = 1, phase_index: int = 0) -> List[LspRequest]:
    """
    產生單一階段的請求

    Args:
        phase: 階段設定
        streams: 類別 → 亂數子串流
        workload: 請求分布設定
        start_ms: 階段起始時間
        first_request_id: 第一個請求代碼
        phase_index: 階段序號（僅用於日誌）

    Returns:
        依 (到達時間, 類別, 類別內序號) 排序、請求代碼連續的請求列表
    """
    end_ms = start_ms + phase.duration_ms
    weights = np.array([flow.weight for flow in workload.flows], dtype=float)
    weights = weights / weights.sum()

    drafts = []
    for class_id in sorted(phase.rates):
        rate = phase.rates[class_id]
        if rate <= 0:
            continue
        rng = streams[class_id]
        users = workload.users.get(class_id) or (f"tc{class_id}-user",)
        t = start_ms / MS_PER_SECOND
        n = 0
        while True:
            t += rng.exponential(1.0 / rate)
            arrival_ms = int(t * MS_PER_SECOND)
            if arrival_ms >= end_ms:
                break
            demand = int(rng.integers(workload.low_kbps, workload.high_kbps, endpoint=True))
            holding_ms = max(1, int(round(rng.exponential(workload.mean_holding_ms))))
            user = users[int(rng.integers(len(users)))]
            flow = workload.flows[int(rng.choice(len(workload.flows), p=weights))]
            drafts.append((arrival_ms, class_id, n, demand, holding_ms, user, flow))
            n += 1

    drafts.sort(key=lambda d: d[:3])
    requests = [
        LspRequest(
            request_id=first_request_id + i,
            user_id=user,
            class_id=class_id,
            bandwidth=demand,
            source=flow.source,
            destination=flow.destination,
            arrival_ms=arrival_ms,
            holding_ms=holding_ms,
        )
        for i, (arrival_ms, class_id, _, demand, holding_ms, user, flow) in enumerate(drafts)
    ]
    logger.debug("階段 %d 產生 %d 筆請求", phase_index, len(requests))
    return requests
