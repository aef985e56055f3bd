"""
事件紀錄
到達、允入、阻擋、歸還、搶占與釋放事件，所有指標與符合性檢查的資料來源
"""

import io
import logging
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Dict, Iterator, List, Mapping, Optional, Tuple

import pandas as pd

from bandwidth_model import BandwidthBrokerError, Breakdown, LinkId, link_name, parse_link_name

logger = logging.getLogger(__name__)

EVENTS_SCHEMA_VERSION = 1
COLUMNS = ["time_ms", "kind", "request", "class", "bw_kbps", "links", "phase", "user", "cause", "at", "breakdown"]
EMPTY = "-"


class CorruptLog(BandwidthBrokerError):
    """事件紀錄格式錯誤或重播失敗"""


class EventKind(str, Enum):
    ARRIVAL = "Arrival"
    ACCEPT = "Accept"
    BLOCK = "Block"
    DEVOLUTION = "Devolution"
    PREEMPTION = "Preemption"
    RELEASE = "Release"


@dataclass(frozen=True)
class EventRecord:
    """
    單筆事件

    cause 為觸發回收的請求；at 為阻擋或回收發生的鏈路；
    breakdown 只出現在 Accept（每段明細）與 Devolution（新明細）。
    """

    time_ms: int
    kind: EventKind
    request_id: int
    class_id: int
    bandwidth: int
    links: Tuple[LinkId, ...]
    phase: int
    user_id: str = ""
    cause: Optional[int] = None
    at: Optional[LinkId] = None
    breakdown: Tuple[Tuple[LinkId, Breakdown], ...] = ()


def format_breakdown(breakdown: Tuple[Tuple[LinkId, Breakdown], ...]) -> str:
    if not breakdown:
        return EMPTY
    return ";".join(
        f"{link_name(link)}:" + ",".join(f"{donor}={amount}" for donor, amount in parts)
        for link, parts in breakdown
    )


def parse_breakdown(text: str) -> Tuple[Tuple[LinkId, Breakdown], ...]:
    if text == EMPTY:
        return ()
    result = []
    for chunk in text.split(";"):
        link_text, parts_text = chunk.split(":")
        parts = tuple(
            (int(donor), int(amount))
            for donor, amount in (item.split("=") for item in parts_text.split(","))
        )
        result.append((parse_link_name(link_text), parts))
    return tuple(result)


class EventLog:
    """依時間排序的事件紀錄"""

    def __init__(self, header: Optional[Mapping[str, str]] = None):
        self.header: Dict[str, str] = dict(header or {})
        self.records: List[EventRecord] = []

    def append(self, record: EventRecord):
        if self.records and record.time_ms < self.records[-1].time_ms:
            raise CorruptLog(f"事件時間倒退: {record.time_ms} < {self.records[-1].time_ms}")
        self.records.append(record)

    def __iter__(self) -> Iterator[EventRecord]:
        return iter(self.records)

    def __len__(self) -> int:
        return len(self.records)

    def __eq__(self, other) -> bool:
        return isinstance(other, EventLog) and self.header == other.header and self.records == other.records

    def of_kind(self, *kinds: EventKind) -> List[EventRecord]:
        return [r for r in self.records if r.kind in kinds]

    def arrivals(self) -> Dict[int, EventRecord]:
        return {r.request_id: r for r in self.records if r.kind is EventKind.ARRIVAL}

    def arrival_trace(self) -> List[Tuple]:
        """到達序列，用於確認兩份紀錄來自同一工作負載"""
        return [
            (r.time_ms, r.request_id, r.class_id, r.bandwidth, r.user_id, r.links)
            for r in self.records if r.kind is EventKind.ARRIVAL
        ]

    def problems(self, halt_ms: Optional[int] = None) -> List[str]:
        """
        檢查紀錄的結構條件

        Returns:
            問題描述列表（空列表代表紀錄完整）
        """
        problems = []
        arrivals: Dict[int, int] = {}
        accepted = set()
        closed = set()
        last = None
        for r in self.records:
            if last is not None and r.time_ms < last:
                problems.append(f"事件時間倒退於請求 {r.request_id}")
            last = r.time_ms
            if halt_ms is not None and r.time_ms > halt_ms:
                problems.append(f"請求 {r.request_id} 的 {r.kind.value} 發生在停止時間之後")
            if r.kind is EventKind.ARRIVAL:
                arrivals[r.request_id] = arrivals.get(r.request_id, 0) + 1
            elif r.kind is EventKind.ACCEPT:
                accepted.add(r.request_id)
            elif r.kind in (EventKind.RELEASE, EventKind.PREEMPTION):
                if r.request_id not in accepted:
                    problems.append(f"請求 {r.request_id} 在允入前就 {r.kind.value}")
                if r.request_id in closed:
                    problems.append(f"請求 {r.request_id} 重複結束")
                closed.add(r.request_id)
        problems.extend(f"請求 {rid} 有 {n} 筆到達事件" for rid, n in arrivals.items() if n != 1)
        problems.extend(f"請求 {rid} 允入後沒有釋放或搶占" for rid in sorted(accepted - closed))
        return problems

    def to_frame(self) -> pd.DataFrame:
        """轉為 DataFrame（數值欄位保留原始型別）"""
        rows = [
            {
                "time_ms": r.time_ms,
                "kind": r.kind.value,
                "request": r.request_id,
                "class": r.class_id,
                "bw_kbps": r.bandwidth,
                "links": ",".join(link_name(link) for link in r.links) or EMPTY,
                "phase": r.phase,
                "user": r.user_id or EMPTY,
                "cause": EMPTY if r.cause is None else str(r.cause),
                "at": EMPTY if r.at is None else link_name(r.at),
                "breakdown": format_breakdown(r.breakdown),
            }
            for r in self.records
        ]
        return pd.DataFrame(rows, columns=COLUMNS)

    def dumps(self) -> str:
        """序列化為事件檔內容（固定欄位順序，位元組穩定）"""
        meta = " ".join(f"{key}={value}" for key, value in sorted(self.header.items()))
        buffer = io.StringIO()
        buffer.write(f"# bamsim-events v{EVENTS_SCHEMA_VERSION} {meta}".rstrip() + "\n")
        self.to_frame().to_csv(buffer, sep="\t", index=False, lineterminator="\n")
        return buffer.getvalue()

    def write(self, path) -> Path:
        path = Path(path)
        path.write_text(self.dumps(), encoding="utf-8")
        return path

    @classmethod
    def loads(cls, text: str) -> "EventLog":
        lines = text.splitlines(keepends=True)
        if not lines or not lines[0].startswith("# bamsim-events v"):
            raise CorruptLog("事件檔缺少標頭")
        tokens = lines[0][2:].split()
        version = tokens[1].lstrip("v")
        if version != str(EVENTS_SCHEMA_VERSION):
            raise CorruptLog(f"不支援的事件檔版本: {version}")
        header = dict(token.split("=", 1) for token in tokens[2:])
        frame = pd.read_csv(io.StringIO("".join(lines[1:])), sep="\t", dtype=str, keep_default_na=False)
        if list(frame.columns) != COLUMNS:
            raise CorruptLog(f"事件檔欄位不符: {list(frame.columns)}")

        log = cls(header)
        for row in frame.itertuples(index=False):
            try:
                log.append(EventRecord(
                    time_ms=int(row[0]),
                    kind=EventKind(row[1]),
                    request_id=int(row[2]),
                    class_id=int(row[3]),
                    bandwidth=int(row[4]),
                    links=() if row[5] == EMPTY else tuple(parse_link_name(t) for t in row[5].split(",")),
                    phase=int(row[6]),
                    user_id="" if row[7] == EMPTY else row[7],
                    cause=None if row[8] == EMPTY else int(row[8]),
                    at=None if row[9] == EMPTY else parse_link_name(row[9]),
                    breakdown=parse_breakdown(row[10]),
                ))
            except (ValueError, IndexError, BandwidthBrokerError) as e:
                raise CorruptLog(f"事件檔第 {len(log) + 3} 行格式錯誤: {e}")
        return log

    @classmethod
    def read(cls, path) -> "EventLog":
        return cls.loads(Path(path).read_text(encoding="utf-8"))
