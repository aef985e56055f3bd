"""
ITM 符合性檢查
非歧視（要求 3）、比例性（要求 4）與例外性（要求 5）
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from bam_engine import BamEngine, create_engine
from bandwidth_model import (
    BandwidthBrokerError,
    LinkBamConfig,
    LinkId,
    LinkState,
    LspRequest,
    link_name,
)
from event_log import CorruptLog, EventKind, EventLog, EventRecord
from metrics_engine import summarize

logger = logging.getLogger(__name__)

NON_DISCRIMINATION = 3
PROPORTIONALITY = 4
EXCEPTIONALITY = 5

REQUIREMENT_NAMES = {
    NON_DISCRIMINATION: "非歧視",
    PROPORTIONALITY: "比例性",
    EXCEPTIONALITY: "例外性",
}


class TraceMismatch(BandwidthBrokerError):
    """兩份事件紀錄的到達序列不同"""


@dataclass(frozen=True)
class RequirementVerdict:
    """單一要求的判定；FAIL 時至少帶一個反例"""

    requirement: int
    passed: bool
    statistics: Mapping[str, object] = field(default_factory=dict)
    counterexamples: Tuple[str, ...] = ()

    def __post_init__(self):
        if not self.passed and not self.counterexamples:
            raise ValueError(f"要求 {self.requirement} 判定失敗時必須附上反例")

    @property
    def verdict(self) -> str:
        return "PASS" if self.passed else "FAIL"


@dataclass(frozen=True)
class ConformanceReport:
    verdicts: Mapping[int, RequirementVerdict] = field(default_factory=dict)

    def with_verdict(self, verdict: RequirementVerdict) -> "ConformanceReport":
        verdicts = dict(self.verdicts)
        verdicts[verdict.requirement] = verdict
        return ConformanceReport(verdicts)

    @property
    def passed(self) -> bool:
        return all(v.passed for v in self.verdicts.values())

    def to_dict(self) -> Dict:
        return {
            str(req): {
                "requirement": REQUIREMENT_NAMES.get(req, str(req)),
                "verdict": v.verdict,
                "statistics": dict(v.statistics),
                "counterexamples": list(v.counterexamples),
            }
            for req, v in sorted(self.verdicts.items())
        }


class LogReplayer:
    """
    依事件紀錄重建各鏈路帳本

    只套用紀錄中的事件，不重新做允入決策。
    """

    def __init__(self, link_configs: Mapping[LinkId, LinkBamConfig]):
        self.states = {link: LinkState(cfg) for link, cfg in link_configs.items()}
        self.engines = {link: create_engine(cfg.model) for link, cfg in link_configs.items()}
        self.requests: Dict[int, EventRecord] = {}
        self.active: Dict[int, Tuple[LinkId, ...]] = {}

    def state(self, link: LinkId) -> LinkState:
        try:
            return self.states[link]
        except KeyError:
            raise CorruptLog(f"紀錄引用了未設定的鏈路 {link_name(link)}")

    def available(self, link: LinkId, class_id: int) -> int:
        """類別在鏈路上依模型規則可取得的空閒頻寬"""
        state = self.state(link)
        engine = self.engines[link]
        return engine.available(state, engine.owner_class(state, class_id))

    def apply(self, r: EventRecord):
        try:
            if r.kind is EventKind.ARRIVAL:
                self.requests[r.request_id] = r
            elif r.kind is EventKind.ACCEPT:
                for link, breakdown in r.breakdown:
                    state = self.state(link)
                    owner = self.engines[link].owner_class(state, r.class_id)
                    state.add(r.request_id, r.class_id, owner, breakdown)
                self.active[r.request_id] = tuple(link for link, _ in r.breakdown)
            elif r.kind is EventKind.DEVOLUTION:
                for link, breakdown in r.breakdown:
                    self.state(link).rehouse(r.request_id, breakdown)
            elif r.kind in (EventKind.PREEMPTION, EventKind.RELEASE):
                links = self.active.pop(r.request_id, None)
                if links is None:
                    raise CorruptLog(f"請求 {r.request_id} 在允入前就 {r.kind.value}")
                for link in links:
                    self.state(link).remove(r.request_id)
        except CorruptLog:
            raise
        except BandwidthBrokerError as e:
            raise CorruptLog(f"重播請求 {r.request_id} 的 {r.kind.value} 失敗: {e}")

        for link in set(r.links) | {link for link, _ in r.breakdown}:
            problems = self.state(link).violations()
            if problems:
                raise CorruptLog(f"重播後鏈路 {link_name(link)} 帳本錯誤: {'; '.join(problems)}")


def check_exceptionality(log: EventLog, link_configs: Mapping[LinkId, LinkBamConfig]) -> RequirementVerdict:
    """
    例外性檢查

    重播紀錄；每個阻擋、歸還與搶占事件發生時，觸發類別依模型規則可取得的
    空閒頻寬必須嚴格小於其需求。

    Args:
        log: 事件紀錄
        link_configs: 產生紀錄時的鏈路設定

    Returns:
        要求 5 的判定

    Raises:
        CorruptLog: 紀錄無法重播
    """
    replayer = LogReplayer(link_configs)
    counterexamples: List[str] = []
    checked = set()
    per_phase: Dict[int, int] = {}
    reclaim_by_class: Dict[int, int] = {}
    blocks = 0

    for r in log:
        if r.kind is EventKind.BLOCK:
            blocks += 1
            trigger = replayer.requests.get(r.request_id)
            if trigger is None or r.at is None:
                raise CorruptLog(f"阻擋事件 {r.request_id} 缺少到達紀錄或鏈路")
            free = replayer.available(r.at, trigger.class_id)
            if free >= trigger.bandwidth:
                counterexamples.append(
                    f"t={r.time_ms}ms 阻擋請求 {r.request_id}（TC{trigger.class_id}）於 {link_name(r.at)}，"
                    f"可用 {free} ≥ 需求 {trigger.bandwidth} kbps"
                )
        elif r.kind in (EventKind.DEVOLUTION, EventKind.PREEMPTION):
            per_phase[r.phase] = per_phase.get(r.phase, 0) + 1
            reclaim_by_class[r.class_id] = reclaim_by_class.get(r.class_id, 0) + 1
            trigger = replayer.requests.get(r.cause)
            if trigger is None or r.at is None:
                raise CorruptLog(f"回收事件 {r.request_id} 缺少觸發請求或鏈路")
            # 同一觸發請求在同一鏈路的第一個回收事件前檢查一次
            if (r.cause, r.at) not in checked:
                checked.add((r.cause, r.at))
                free = replayer.available(r.at, trigger.class_id)
                if free >= trigger.bandwidth:
                    counterexamples.append(
                        f"t={r.time_ms}ms 請求 {r.cause}（TC{trigger.class_id}）在 {link_name(r.at)} "
                        f"{r.kind.value} LSP {r.request_id}，可用 {free} ≥ 需求 {trigger.bandwidth} kbps"
                    )
        replayer.apply(r)

    statistics = {
        "blocks": blocks,
        "reclaim_events": sum(per_phase.values()),
        "reclaim_events_per_phase": dict(sorted(per_phase.items())),
        "reclaim_events_per_victim_class": dict(sorted(reclaim_by_class.items())),
        "violations": len(counterexamples),
    }
    return RequirementVerdict(EXCEPTIONALITY, not counterexamples, statistics, tuple(counterexamples))


def random_trace_step(rng: np.random.Generator, state: LinkState, class_ids: Sequence[int],
                      low: int, high: int, next_id: int) -> Optional[LspRequest]:
    """隨機軌跡的一步：約六成允入新請求，其餘釋放一個既有 LSP（回傳 None）"""
    if state.allocations and rng.random() < 0.4:
        return None
    return LspRequest(
        request_id=next_id,
        user_id=f"user-{int(rng.integers(1_000_000))}",
        class_id=int(class_ids[int(rng.integers(len(class_ids)))]),
        bandwidth=int(rng.integers(low, high, endpoint=True)),
        source=0,
        destination=1,
    )


def check_non_discrimination(engine: BamEngine, link_config: LinkBamConfig, decision_points: int = 1000,
                             seed: int = 0, demand_range: Optional[Tuple[int, int]] = None) -> RequirementVerdict:
    """
    非歧視的蛻變測試

    沿隨機軌跡前進；每個決策點把同一 (類別, 需求) 以兩組全新的請求與使用者
    身分，分別送入兩份相同的帳本複本，兩個決策必須完全相同。

    Args:
        engine: 受測引擎
        link_config: 已驗證的鏈路設定
        decision_points: 決策點數量
        seed: 軌跡亂數種子
        demand_range: 需求範圍 (kbps)，預設為 LB 的 0.5% 到 1.5%

    Returns:
        要求 3 的判定
    """
    rng = np.random.default_rng(seed)
    state = LinkState(link_config)
    class_ids = [tc.class_id for tc in link_config.classes]
    if demand_range is None:
        demand_range = (max(1, link_config.lb // 200), max(1, link_config.lb * 3 // 200))
    low, high = demand_range

    counterexamples: List[str] = []
    next_id = 1
    trial_id = 10 ** 12
    checked = 0
    while checked < decision_points:
        req = random_trace_step(rng, state, class_ids, low, high, next_id)
        if req is None:
            victim = list(state.allocations)[int(rng.integers(len(state.allocations)))]
            engine.release(state, victim)
            continue

        decisions = []
        for offset in range(2):
            trial = LspRequest(
                request_id=trial_id + 2 * checked + offset,
                user_id=str(2 * checked + offset),
                class_id=req.class_id,
                bandwidth=req.bandwidth,
                source=req.source,
                destination=req.destination,
            )
            decisions.append(engine.admit(state.copy(), trial).canonical())
        if decisions[0] != decisions[1]:
            counterexamples.append(
                f"決策點 {checked}: TC{req.class_id} 需求 {req.bandwidth} kbps 得到 {decisions[0]} 與 {decisions[1]}"
            )
        checked += 1

        engine.admit(state, req)
        next_id += 1

    statistics = {"decision_points": checked, "mismatches": len(counterexamples), "model": link_config.model.value}
    return RequirementVerdict(NON_DISCRIMINATION, not counterexamples, statistics, tuple(counterexamples[:20]))


def compare_proportionality(log_bam: EventLog, log_frfs: EventLog, scenario, link: Optional[LinkId] = None,
                            band: Optional[float] = None) -> RequirementVerdict:
    """
    比例性比較：BAM 與 FRFS 在同一工作負載下的平均使用率與平均阻擋率

    Args:
        log_bam: BAM 模型的事件紀錄
        log_frfs: FRFS 的事件紀錄
        scenario: 情境
        link: 鏈路（預設為觀察鏈路）
        band: 使用率等效範圍（百分點，預設為情境設定）

    Returns:
        要求 4 的判定

    Raises:
        TraceMismatch: 兩份紀錄的到達序列不同
    """
    if log_bam.arrival_trace() != log_frfs.arrival_trace():
        raise TraceMismatch("兩份事件紀錄的到達序列不同，無法比較")
    band = scenario.equivalence_band if band is None else band
    bam = summarize(log_bam, scenario, link).overall
    frfs = summarize(log_frfs, scenario, link).overall
    return proportionality_verdict(bam.mean_utilization, bam.mean_block_rate,
                                   frfs.mean_utilization, frfs.mean_block_rate, band)


def proportionality_verdict(util_bam: float, block_bam: Optional[float], util_frfs: float,
                            block_frfs: Optional[float], band: float) -> RequirementVerdict:
    """依平均使用率差距與平均阻擋率判定比例性"""
    block_bam = block_bam or 0.0
    block_frfs = block_frfs or 0.0
    delta = util_bam - util_frfs
    counterexamples = []
    if abs(delta) > band:
        counterexamples.append(f"平均使用率差距 {delta:+.2f} 超出 ±{band:.2f} 百分點")
    if block_bam > block_frfs:
        counterexamples.append(f"平均阻擋率 {block_bam:.2f}% 高於 FRFS 的 {block_frfs:.2f}%")
    statistics = {
        "mean_utilization": round(util_bam, 2),
        "mean_utilization_frfs": round(util_frfs, 2),
        "utilization_delta": round(delta, 2),
        "mean_block_rate": round(block_bam, 2),
        "mean_block_rate_frfs": round(block_frfs, 2),
        "block_rate_ratio": round(block_bam / block_frfs, 4) if block_frfs else None,
        "band": band,
    }
    return RequirementVerdict(PROPORTIONALITY, not counterexamples, statistics, tuple(counterexamples))
