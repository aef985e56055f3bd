"""
端到端 LSP 路徑允入
逐段呼叫各鏈路引擎，全部成功才建立 LSP，否則回滾
"""

import logging
from dataclasses import dataclass, field, replace
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

from bam_engine import BamEngine, ReclaimEvent, ReclaimKind, create_engine
from bandwidth_model import (
    BandwidthBrokerError,
    InvariantViolation,
    LinkBamConfig,
    LinkId,
    LinkState,
    LspAllocation,
    LspRequest,
    NetworkGraph,
    Segment,
    UnknownRequest,
    ConfigError,
    link_name,
)

logger = logging.getLogger(__name__)


class NoPath(BandwidthBrokerError):
    """路徑表中沒有這組來源與目的"""


def segments_from_hops(hops: Sequence[int]) -> Tuple[Segment, ...]:
    """將交換器序列轉為區段列表"""
    return tuple((x, y, (x, y)) for x, y in zip(hops, hops[1:]))


@dataclass(frozen=True)
class PathTable:
    """(來源, 目的) → 區段列表"""

    paths: Mapping[Tuple[int, int], Tuple[Segment, ...]]

    def lookup(self, source: int, destination: int) -> Tuple[Segment, ...]:
        try:
            return self.paths[(source, destination)]
        except KeyError:
            raise NoPath(f"路徑表中沒有 {source} → {destination}")

    def validate(self, graph: NetworkGraph):
        for (src, dst), segments in self.paths.items():
            if not segments:
                raise ConfigError(f"路徑 {src} → {dst} 沒有任何區段")
            if segments[0][0] != src or segments[-1][1] != dst:
                raise ConfigError(f"路徑 {src} → {dst} 的端點與區段不符")
            for (_, y, _), (x, _, _) in zip(segments, segments[1:]):
                if y != x:
                    raise ConfigError(f"路徑 {src} → {dst} 的區段不相連")
            for x, y, link in segments:
                if link != (x, y) or not graph.has_link(link):
                    raise ConfigError(f"路徑 {src} → {dst} 引用了不存在的鏈路 {x}-{y}")


@dataclass(frozen=True)
class PathDecision:
    """
    路徑允入結果

    reclaims 包含所有鏈路上發生的回收事件（即使最後被阻擋也不撤銷）；
    preempted 為被端到端拆除的 LSP。
    """

    request_id: int
    accepted: bool
    allocation: Optional[LspAllocation] = None
    blocked_link: Optional[LinkId] = None
    reason: str = ""
    reclaims: Tuple[ReclaimEvent, ...] = ()
    preempted: Tuple[LspAllocation, ...] = ()


class PathAdmission:
    """
    路徑允入協調器

    每條鏈路各有獨立的帳本與引擎；路徑允入在模擬時間上全域序列化。
    """

    def __init__(self, table: PathTable, link_configs: Mapping[LinkId, LinkBamConfig],
                 engines: Optional[Mapping[LinkId, BamEngine]] = None):
        """
        初始化路徑允入

        Args:
            table: 路徑表
            link_configs: 已驗證的鏈路設定
            engines: 自訂引擎（可選，預設依各鏈路模型建立）
        """
        self.table = table
        self.states: Dict[LinkId, LinkState] = {link: LinkState(cfg) for link, cfg in link_configs.items()}
        self.engines: Dict[LinkId, BamEngine] = dict(engines or {})
        for link, cfg in link_configs.items():
            self.engines.setdefault(link, create_engine(cfg.model))
        self.active: Dict[int, LspAllocation] = {}

    def admit_path(self, req: LspRequest) -> PathDecision:
        """
        沿路徑逐段允入

        Args:
            req: LSP 請求

        Returns:
            PathDecision
        """
        segments = self.table.lookup(req.source, req.destination)
        for _, _, link in segments:
            if link not in self.states:
                raise NoPath(f"鏈路 {link_name(link)} 沒有頻寬分配設定")

        granted: List[Tuple[LinkId, tuple]] = []
        reclaims: List[ReclaimEvent] = []
        preempted: List[LspAllocation] = []

        for _, _, link in segments:
            decision = self.engines[link].admit(self.states[link], req)
            for event in decision.side_effects:
                reclaims.append(event)
                if event.kind is ReclaimKind.PREEMPTION:
                    preempted.append(self._finish_preemption(event))
                else:
                    self._record_devolution(event)

            if not decision.accepted:
                # 依允入的相反順序回滾；回收副作用不撤銷
                for granted_link, _ in reversed(granted):
                    self.engines[granted_link].release(self.states[granted_link], req.request_id)
                logger.debug("請求 %s 在鏈路 %s 被阻擋", req.request_id, link_name(link))
                return PathDecision(req.request_id, False, blocked_link=link, reason=decision.reason,
                                    reclaims=tuple(reclaims), preempted=tuple(preempted))
            granted.append((link, decision.breakdown))

        allocation = LspAllocation(
            request_id=req.request_id,
            class_id=req.class_id,
            bandwidth=req.bandwidth,
            path=tuple(segments),
            breakdowns=dict(granted),
        )
        self.active[req.request_id] = allocation
        return PathDecision(req.request_id, True, allocation=allocation,
                            reclaims=tuple(reclaims), preempted=tuple(preempted))

    def _finish_preemption(self, event: ReclaimEvent) -> LspAllocation:
        """搶占後在其餘鏈路上拆除受害 LSP"""
        victim = self.active.pop(event.victim_id, None)
        if victim is None:
            raise InvariantViolation(f"被搶占的 LSP {event.victim_id} 不在啟用清單中")
        for link in victim.links:
            if link != event.link:
                self.engines[link].release(self.states[link], victim.request_id)
        return victim

    def _record_devolution(self, event: ReclaimEvent):
        victim = self.active[event.victim_id]
        breakdowns = dict(victim.breakdowns)
        breakdowns[event.link] = event.rehoused
        self.active[event.victim_id] = replace(victim, breakdowns=breakdowns)

    def teardown_path(self, request_id: int) -> LspAllocation:
        """在路徑上所有鏈路釋放 LSP"""
        try:
            allocation = self.active.pop(request_id)
        except KeyError:
            raise UnknownRequest(f"LSP {request_id} 未啟用")
        for link in allocation.links:
            self.engines[link].release(self.states[link], request_id)
        return allocation

    def violations(self) -> List[str]:
        """帳本、模型與路徑原子性檢查"""
        problems = []
        for link, state in self.states.items():
            problems.extend(f"{link_name(link)}: {p}" for p in state.violations())
            problems.extend(f"{link_name(link)}: {p}" for p in self.engines[link].model_violations(state))
            for request_id in state.allocations:
                allocation = self.active.get(request_id)
                if allocation is None or link not in allocation.links:
                    problems.append(f"{link_name(link)}: LSP {request_id} 不屬於任何啟用路徑")
        for request_id, allocation in self.active.items():
            for link in allocation.links:
                item = self.states[link].allocations.get(request_id)
                if item is None:
                    problems.append(f"LSP {request_id} 在鏈路 {link_name(link)} 上缺少配置")
                elif item.breakdown != allocation.breakdowns[link]:
                    problems.append(f"LSP {request_id} 在鏈路 {link_name(link)} 的明細不一致")
        return problems

    def assert_invariants(self):
        problems = self.violations()
        if problems:
            raise InvariantViolation("; ".join(problems))
