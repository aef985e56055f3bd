"""
頻寬分配模型引擎
MAM、RDM、ATCS 與 FRFS 基準的鏈路允入、釋放與回收
"""

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple, Type

from bandwidth_model import (
    FRFS_POOL_CLASS,
    BamModel,
    BandwidthBrokerError,
    Breakdown,
    InvalidDemand,
    LinkId,
    LinkSlice,
    LinkState,
    LspRequest,
    link_name,
    merge_breakdown,
)

logger = logging.getLogger(__name__)


class NothingToReclaim(BandwidthBrokerError):
    """擁有類別的 BC 中沒有借用者可回收"""


class ReclaimKind(str, Enum):
    DEVOLUTION = "Devolution"
    PREEMPTION = "Preemption"


@dataclass(frozen=True)
class ReclaimEvent:
    """
    回收事件

    freed 為受害 LSP 在此鏈路上向 reason_class 借用的量；
    DEVOLUTION 時 rehoused 為受害者在此鏈路上的新明細。
    """

    kind: ReclaimKind
    victim_id: int
    victim_class: int
    freed: int
    reason_class: int
    link: LinkId
    rehoused: Breakdown = ()


@dataclass(frozen=True)
class AdmitDecision:
    """允入決策；Blocked 時明細與副作用皆為空"""

    accepted: bool
    breakdown: Breakdown = ()
    reason: str = ""
    side_effects: Tuple[ReclaimEvent, ...] = ()

    @classmethod
    def accept(cls, breakdown: Breakdown, side_effects: Sequence[ReclaimEvent] = ()) -> "AdmitDecision":
        return cls(True, tuple(breakdown), "", tuple(side_effects))

    @classmethod
    def block(cls, reason: str) -> "AdmitDecision":
        return cls(False, (), reason, ())

    def canonical(self) -> str:
        """與請求身分無關的決策字串，用於非歧視比對"""
        if not self.accepted:
            return "Blocked"
        parts = ",".join(f"{donor}={amount}" for donor, amount in self.breakdown)
        effects = ";".join(
            f"{ev.kind.value}:{ev.victim_id}:{ev.victim_class}:{ev.freed}:"
            + ",".join(f"{d}={a}" for d, a in ev.rehoused)
            for ev in self.side_effects
        )
        return f"Accepted[{parts}]|{effects}"


class BamEngine:
    """
    鏈路頻寬分配引擎基底類別

    子類別只需決定「可向哪些類別借用、借用順序」；
    記帳、回收與釋放流程由基底類別共用。
    """

    model: BamModel = None
    reclaims: bool = True

    def owner_class(self, state: LinkState, class_id: int) -> int:
        """請求在此鏈路上的記帳類別"""
        state.traffic_class(class_id)
        return class_id

    def donor_order(self, state: LinkState, class_id: int) -> List[int]:
        """可借用的其他類別（依掃描順序）"""
        raise NotImplementedError

    def available(self, state: LinkState, class_id: int, exclude: Sequence[int] = ()) -> int:
        """
        類別可取得的空閒頻寬

        Args:
            state: 鏈路帳本
            class_id: 記帳類別
            exclude: 不可使用的捐出類別

        Returns:
            自身 BC 剩餘量加上依模型規則可借用的公開頻寬
        """
        total = state.free_in(class_id) if class_id not in exclude else 0
        for donor in self.donor_order(state, class_id):
            if donor not in exclude:
                total += state.lendable(donor)
        return total

    def plan_draw(self, state: LinkState, owner: int, demand: int,
                  exclude: Sequence[int] = ()) -> Optional[Breakdown]:
        """先用自身 BC，再依序向捐出類別借用；不足時回傳 None"""
        parts = []
        remaining = demand
        if owner not in exclude:
            take = min(remaining, state.free_in(owner))
            if take > 0:
                parts.append((owner, take))
                remaining -= take
        for donor in self.donor_order(state, owner):
            if remaining == 0:
                break
            if donor in exclude:
                continue
            take = min(remaining, state.lendable(donor))
            if take > 0:
                parts.append((donor, take))
                remaining -= take
        if remaining > 0:
            return None
        return tuple(parts)

    def admit(self, state: LinkState, req: LspRequest) -> AdmitDecision:
        """
        允入 LSP 並直接套用到鏈路帳本

        Args:
            state: 鏈路帳本
            req: LSP 請求

        Returns:
            AdmitDecision
        """
        if req.bandwidth <= 0:
            raise InvalidDemand(f"請求 {req.request_id} 的頻寬必須大於 0")
        owner = self.owner_class(state, req.class_id)
        demand = req.bandwidth

        plan = self.plan_draw(state, owner, demand)
        if plan is not None:
            state.add(req.request_id, req.class_id, owner, plan)
            logger.debug("%s 允入 %s: %s", link_name(state.link), req.request_id, plan)
            return AdmitDecision.accept(plan)

        # 壅塞：停止共享，把自身 BC 中借出的頻寬收回，不足的部分再依模型借用
        if self.reclaims and state.lent(owner) > 0:
            needed = min(demand - state.free_in(owner), state.lent(owner))
            if self.reclaim_would_admit(state, owner, needed, demand):
                events = self.reclaim(state, owner, needed)
                plan = self.plan_draw(state, owner, demand)
                state.add(req.request_id, req.class_id, owner, plan)
                logger.debug("%s 回收後允入 %s: %d 筆回收", link_name(state.link), req.request_id, len(events))
                return AdmitDecision.accept(plan, events)

        logger.debug("%s 阻擋 %s", link_name(state.link), req.request_id)
        return AdmitDecision.block(
            f"TC{req.class_id} 可用頻寬 {self.available(state, owner)} kbps 少於需求 {demand} kbps"
        )

    def reclaim_would_admit(self, state: LinkState, owner: int, needed: int, demand: int) -> bool:
        """在帳本副本上試做回收；回收後需求可被滿足才回傳 True"""
        trial = state.copy()
        self.reclaim(trial, owner, needed)
        return self.plan_draw(trial, owner, demand) is not None

    def release(self, state: LinkState, request_id: int) -> Breakdown:
        """釋放 LSP，頻寬歸還各捐出類別"""
        return state.remove(request_id).breakdown

    def victims(self, state: LinkState, owner_class: int) -> List[LinkSlice]:
        """占用 owner_class BC 的借用者：最低優先權類別優先，其次最近允入者優先"""
        borrowers = [
            item for item in state.allocations.values()
            if item.owner != owner_class and item.drawn_from(owner_class) > 0
        ]
        return sorted(borrowers, key=lambda item: (state.priority(item.owner), -item.seq))

    def reclaim(self, state: LinkState, owner_class: int, needed: int) -> List[ReclaimEvent]:
        """
        收回借出的頻寬

        取受害者排序中最短、足以釋放 needed 的前段；每個受害者先嘗試歸還
        （改由其他合法空閒頻寬承載），無法歸還才搶占。搶占只移除本鏈路上的
        配置，其他鏈路的拆除由路徑允入負責。

        Args:
            state: 鏈路帳本
            owner_class: 要收回頻寬的擁有類別
            needed: 需要釋放的量 (kbps)

        Returns:
            回收事件列表
        """
        if needed <= 0:
            raise InvalidDemand("回收量必須大於 0")
        state.traffic_class(owner_class)
        candidates = self.victims(state, owner_class)
        if not candidates:
            raise NothingToReclaim(f"鏈路 {link_name(state.link)} 上沒有借用 TC{owner_class} 頻寬的 LSP")

        events = []
        freed = 0
        for victim in candidates:
            if freed >= needed:
                break
            borrowed = victim.drawn_from(owner_class)
            plan = self.plan_draw(state, victim.owner, borrowed, exclude=(owner_class,))
            if plan is not None:
                kept = [(donor, amount) for donor, amount in victim.breakdown if donor != owner_class]
                rehoused = merge_breakdown(kept + list(plan))
                state.rehouse(victim.request_id, rehoused)
                events.append(ReclaimEvent(ReclaimKind.DEVOLUTION, victim.request_id, victim.class_id,
                                           borrowed, owner_class, state.link, rehoused))
            else:
                state.remove(victim.request_id)
                events.append(ReclaimEvent(ReclaimKind.PREEMPTION, victim.request_id, victim.class_id,
                                           borrowed, owner_class, state.link))
            freed += borrowed
        return events

    def used_bandwidth(self, state: LinkState, class_id: int) -> Tuple[int, int, int]:
        """
        類別使用量分解

        Returns:
            (own_use, lent, borrowed)
        """
        state.traffic_class(class_id)
        return state.own_use(class_id), state.lent(class_id), state.borrowed(class_id)

    def model_violations(self, state: LinkState) -> List[str]:
        """模型特有的條件；基底類別只檢查借用方向"""
        problems = []
        for (owner, donor), amount in state.usage_matrix().items():
            if owner != donor and amount > 0 and donor not in self.donor_order(state, owner):
                problems.append(f"TC{owner} 不可向 TC{donor} 借用（{self.model.value}）")
        return problems


class MamEngine(BamEngine):
    """MAM：各類別獨占自己的 BC"""

    model = BamModel.MAM

    def donor_order(self, state, class_id):
        return []


class RdmEngine(BamEngine):
    """RDM：只能借用較高優先權類別的公開頻寬 (HTL)"""

    model = BamModel.RDM

    def donor_order(self, state, class_id):
        mine = state.priority(class_id)
        return [tc.class_id for tc in state.config.by_priority() if tc.priority > mine]


class AtcsEngine(BamEngine):
    """ATCS：所有類別雙向共享，從最低優先權的類別開始借用"""

    model = BamModel.ATCS

    def donor_order(self, state, class_id):
        return [tc.class_id for tc in state.config.by_priority() if tc.class_id != class_id]


class FrfsEngine(BamEngine):
    """FRFS：不分類別，先到先服務"""

    model = BamModel.FRFS
    reclaims = False

    def owner_class(self, state, class_id):
        return FRFS_POOL_CLASS

    def donor_order(self, state, class_id):
        return []


ENGINES: Dict[BamModel, Type[BamEngine]] = {
    BamModel.MAM: MamEngine,
    BamModel.RDM: RdmEngine,
    BamModel.ATCS: AtcsEngine,
    BamModel.FRFS: FrfsEngine,
}


def create_engine(model) -> BamEngine:
    if not isinstance(model, BamModel):
        model = BamModel.parse(model)
    return ENGINES[model]()
