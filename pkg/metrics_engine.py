"""
效能指標計算
由事件紀錄計算時間加權使用率、阻擋率、搶占與歸還率
"""

import logging
from dataclasses import dataclass, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from bandwidth_model import BandwidthBrokerError, LinkId, MS_PER_SECOND, link_name
from event_log import EventKind, EventLog

logger = logging.getLogger(__name__)

MS_PER_HOUR = 3600 * MS_PER_SECOND


class UnknownLink(BandwidthBrokerError):
    """拓樸中沒有此鏈路"""


@dataclass(frozen=True)
class ClassMetrics:
    """單一類別（或 class_id 為 None 的整體）的指標"""

    class_id: Optional[int]
    arrivals: int
    accepted: int
    blocked: int
    utilization: float
    block_rate: Optional[float]
    preemption_pct: Optional[float]
    devolution_pct: Optional[float]
    preemptions_per_hour: float
    devolutions_per_hour: float


@dataclass(frozen=True)
class MetricsSlice:
    """時間區間內的指標；平均值為各類別數值的算術平均"""

    start_ms: int
    end_ms: int
    per_class: Tuple[ClassMetrics, ...]
    aggregate: ClassMetrics

    def for_class(self, class_id: int) -> ClassMetrics:
        for metrics in self.per_class:
            if metrics.class_id == class_id:
                return metrics
        raise KeyError(class_id)

    @property
    def mean_utilization(self) -> float:
        return float(np.mean([m.utilization for m in self.per_class])) if self.per_class else 0.0

    @property
    def mean_block_rate(self) -> Optional[float]:
        values = [m.block_rate for m in self.per_class if m.block_rate is not None]
        return float(np.mean(values)) if values else None


@dataclass(frozen=True)
class MetricsSummary:
    """單一鏈路的整體與分階段指標"""

    link: LinkId
    model: str
    seeds: Tuple[int, ...]
    overall: MetricsSlice
    phases: Tuple[MetricsSlice, ...]


class LogView:
    """事件紀錄在單一鏈路上的表格化檢視"""

    def __init__(self, log: EventLog, link: LinkId, end_ms: int):
        self.link = tuple(link)
        ends: Dict[int, int] = {}
        routed = set()
        accepted, arrivals, blocks, preemptions, devolutions = [], [], [], [], []
        for r in log:
            on_link = self.link in r.links
            if r.kind is EventKind.ARRIVAL and on_link:
                routed.add(r.request_id)
                arrivals.append((r.request_id, r.class_id, r.time_ms))
            elif r.kind is EventKind.ACCEPT and on_link:
                accepted.append((r.request_id, r.class_id, r.bandwidth, r.time_ms))
            elif r.kind is EventKind.BLOCK and r.request_id in routed:
                # 路徑經過此鏈路的請求，不論在哪一段被阻擋
                blocks.append((r.request_id, r.class_id, r.time_ms))
            elif r.kind is EventKind.PREEMPTION and on_link:
                preemptions.append((r.request_id, r.class_id, r.time_ms))
            elif r.kind is EventKind.DEVOLUTION and r.at == self.link:
                devolutions.append((r.request_id, r.class_id, r.time_ms))
            if r.kind in (EventKind.RELEASE, EventKind.PREEMPTION):
                ends[r.request_id] = r.time_ms

        self.arrivals = pd.DataFrame(arrivals, columns=["request", "class", "time"])
        self.blocks = pd.DataFrame(blocks, columns=["request", "class", "time"])
        self.preemptions = pd.DataFrame(preemptions, columns=["request", "class", "time"])
        self.devolutions = pd.DataFrame(devolutions, columns=["request", "class", "time"])
        intervals = pd.DataFrame(accepted, columns=["request", "class", "bw", "start"])
        intervals["end"] = [ends.get(rid, end_ms) for rid in intervals["request"]]
        self.intervals = intervals

    @staticmethod
    def _select(frame: pd.DataFrame, class_id: Optional[int], column: str, window: Tuple[int, int]) -> pd.DataFrame:
        mask = (frame[column] >= window[0]) & (frame[column] < window[1])
        if class_id is not None:
            mask &= frame["class"] == class_id
        return frame[mask]

    def carried(self, class_id: Optional[int], window: Tuple[int, int]) -> float:
        """時間區間內承載頻寬的積分 (kbps·ms)"""
        frame = self.intervals
        if class_id is not None:
            frame = frame[frame["class"] == class_id]
        if frame.empty:
            return 0.0
        overlap = (np.minimum(frame["end"].to_numpy(), window[1])
                   - np.maximum(frame["start"].to_numpy(), window[0])).clip(min=0)
        return float((frame["bw"].to_numpy(dtype=float) * overlap).sum())

    def class_metrics(self, class_id: Optional[int], capacity: int, window: Tuple[int, int]) -> ClassMetrics:
        span = window[1] - window[0]
        arrivals = len(self._select(self.arrivals, class_id, "time", window))
        blocked = len(self._select(self.blocks, class_id, "time", window))
        accepted_frame = self._select(self.intervals, class_id, "start", window)
        accepted_ids = set(accepted_frame["request"])

        preempted = self._select(self.preemptions, class_id, "time", window)
        devolved = self._select(self.devolutions, class_id, "time", window)
        # 百分比以區間內允入的 LSP 為分母（不論之後何時被回收）
        ever_preempted = set(self.preemptions["request"]) & accepted_ids
        ever_devolved = set(self.devolutions["request"]) & accepted_ids
        hours = span / MS_PER_HOUR if span else 0.0

        def pct(count: int, total: int) -> Optional[float]:
            return 100.0 * count / total if total else None

        return ClassMetrics(
            class_id=class_id,
            arrivals=arrivals,
            accepted=arrivals - blocked,
            blocked=blocked,
            utilization=100.0 * self.carried(class_id, window) / (capacity * span) if span else 0.0,
            block_rate=pct(blocked, arrivals),
            preemption_pct=pct(len(ever_preempted), len(accepted_ids)),
            devolution_pct=pct(len(ever_devolved), len(accepted_ids)),
            preemptions_per_hour=len(preempted) / hours if hours else 0.0,
            devolutions_per_hour=len(devolved) / hours if hours else 0.0,
        )


def _resolve(scenario, link: Optional[LinkId], window: Optional[Tuple[int, int]]):
    link = scenario.focus_link if link is None else tuple(link)
    if not scenario.graph.has_link(link):
        raise UnknownLink(f"拓樸中沒有鏈路 {link_name(link)}")
    window = (0, scenario.duration_ms) if window is None else tuple(window)
    if not 0 <= window[0] < window[1] <= scenario.duration_ms:
        raise ValueError(f"時間區間 {window} 不在模擬期間內")
    return link, window


def utilization(log: EventLog, scenario, link: Optional[LinkId] = None, class_id: Optional[int] = None,
                window: Optional[Tuple[int, int]] = None) -> float:
    """
    時間加權使用率 (%)

    Args:
        log: 事件紀錄
        scenario: 情境（提供 BC 與 LB）
        link: 鏈路（預設為觀察鏈路）
        class_id: 類別；None 代表整條鏈路
        window: (起, 迄) 毫秒

    Returns:
        類別：承載量 ÷ (BC × 時間)，借用時可超過 100%；整體：承載量 ÷ (LB × 時間)
    """
    link, window = _resolve(scenario, link, window)
    capacity = scenario.graph.capacity(link) if class_id is None else scenario.class_bc(link, class_id)
    view = LogView(log, link, scenario.duration_ms)
    return 100.0 * view.carried(class_id, window) / (capacity * (window[1] - window[0]))


def block_rate(log: EventLog, scenario, link: Optional[LinkId] = None, class_id: Optional[int] = None,
               window: Optional[Tuple[int, int]] = None) -> Optional[float]:
    """阻擋率 (%)；沒有任何到達時回傳 None（不適用）"""
    link, window = _resolve(scenario, link, window)
    if class_id is not None:
        scenario.class_bc(link, class_id)
    view = LogView(log, link, scenario.duration_ms)
    arrivals = len(view._select(view.arrivals, class_id, "time", window))
    blocked = len(view._select(view.blocks, class_id, "time", window))
    return 100.0 * blocked / arrivals if arrivals else None


def _slice(view: LogView, scenario, link: LinkId, window: Tuple[int, int]) -> MetricsSlice:
    per_class = tuple(
        view.class_metrics(k, scenario.class_bc(link, k), window) for k in scenario.class_ids
    )
    aggregate = view.class_metrics(None, scenario.graph.capacity(link), window)
    return MetricsSlice(window[0], window[1], per_class, aggregate)


def summarize(log: EventLog, scenario, link: Optional[LinkId] = None) -> MetricsSummary:
    """
    計算整體與分階段指標

    Args:
        log: 事件紀錄
        scenario: 情境
        link: 鏈路（預設為觀察鏈路）

    Returns:
        MetricsSummary
    """
    link, window = _resolve(scenario, link, None)
    view = LogView(log, link, scenario.duration_ms)
    seed = log.header.get("seed")
    return MetricsSummary(
        link=link,
        model=log.header.get("model", scenario.model_label),
        seeds=(int(seed),) if seed is not None else (),
        overall=_slice(view, scenario, link, window),
        phases=tuple(_slice(view, scenario, link, bounds) for bounds in scenario.phase_bounds()),
    )


def _mean(values: Sequence[Optional[float]]) -> Optional[float]:
    present = [v for v in values if v is not None]
    return float(np.mean(present)) if present else None


def _average_class(items: Sequence[ClassMetrics]) -> ClassMetrics:
    return ClassMetrics(
        class_id=items[0].class_id,
        arrivals=sum(m.arrivals for m in items),
        accepted=sum(m.accepted for m in items),
        blocked=sum(m.blocked for m in items),
        utilization=float(np.mean([m.utilization for m in items])),
        block_rate=_mean([m.block_rate for m in items]),
        preemption_pct=_mean([m.preemption_pct for m in items]),
        devolution_pct=_mean([m.devolution_pct for m in items]),
        preemptions_per_hour=float(np.mean([m.preemptions_per_hour for m in items])),
        devolutions_per_hour=float(np.mean([m.devolutions_per_hour for m in items])),
    )


def _average_slice(slices: Sequence[MetricsSlice]) -> MetricsSlice:
    per_class = tuple(
        _average_class([s.per_class[i] for s in slices]) for i in range(len(slices[0].per_class))
    )
    return replace(slices[0], per_class=per_class, aggregate=_average_class([s.aggregate for s in slices]))


def average_summaries(summaries: Sequence[MetricsSummary]) -> MetricsSummary:
    """多個種子的平均指標（計數相加，比率取平均）"""
    if not summaries:
        raise ValueError("沒有可平均的指標")
    first = summaries[0]
    return MetricsSummary(
        link=first.link,
        model=first.model,
        seeds=tuple(seed for s in summaries for seed in s.seeds),
        overall=_average_slice([s.overall for s in summaries]),
        phases=tuple(_average_slice([s.phases[i] for s in summaries]) for i in range(len(first.phases))),
    )


def time_series(log: EventLog, scenario, link: Optional[LinkId] = None,
                bucket_ms: Optional[int] = None) -> pd.DataFrame:
    """
    依時間區間切分的指標序列，可直接用於繪圖

    Returns:
        每個區間一列：起始秒數、階段、各類別使用率與阻擋 / 搶占 / 歸還次數
    """
    link, _ = _resolve(scenario, link, None)
    bucket_ms = scenario.bucket_ms if bucket_ms is None else bucket_ms
    if bucket_ms <= 0:
        raise ValueError("時間區間長度必須大於 0")
    view = LogView(log, link, scenario.duration_ms)
    rows = []
    for start in range(0, scenario.duration_ms, bucket_ms):
        window = (start, min(start + bucket_ms, scenario.duration_ms))
        row = {"start_s": start / MS_PER_SECOND, "phase": scenario.phase_at(start)}
        for k in scenario.class_ids:
            m = view.class_metrics(k, scenario.class_bc(link, k), window)
            row[f"util_TC{k}"] = m.utilization
            row[f"arrivals_TC{k}"] = m.arrivals
            row[f"blocks_TC{k}"] = m.blocked
            row[f"preemptions_TC{k}"] = len(view._select(view.preemptions, k, "time", window))
            row[f"devolutions_TC{k}"] = len(view._select(view.devolutions, k, "time", window))
        row["util_link"] = view.class_metrics(None, scenario.graph.capacity(link), window).utilization
        rows.append(row)
    return pd.DataFrame(rows)
