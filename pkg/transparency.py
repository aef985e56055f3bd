"""
透明度報告
公開類別、使用者對應、BC、分享上限與各鏈路模型；僅由情境設定產生
"""

import json
from collections import defaultdict
from dataclasses import dataclass
from typing import Dict, List, Tuple

from bandwidth_model import kbps_to_mbps, link_name, partition
from scenario import Scenario

# 正當目的與透明度兩項要求屬於結構性陳述，無法由模擬數據計算
LEGITIMATE_PURPOSE = (
    "流量類別依應用需求分組（例如緊急、即時、一般資料），"
    "每個類別有保證的頻寬限制 (BC)，類別之間的差異化只依類別而非使用者身分"
)
TRANSPARENCY = (
    "所有管理參數（類別數量、使用者與類別的對應、各類別 BC、分享上限與各鏈路模型）"
    "皆公開於本報告，且可完全由情境檔重建"
)


@dataclass(frozen=True)
class ClassEntry:
    class_id: int
    name: str
    priority: int
    traffic: str
    users: Tuple[str, ...]
    bc_mbps: float
    bc_percent: float
    sharing_percent: float
    private_mbps: float
    public_mbps: float


@dataclass(frozen=True)
class TransparencyReport:
    """
    流量管理設定的公開報告

    人類可讀 (to_text) 與機器可讀 (to_dict / to_json) 兩種輸出內容相同。
    """

    scenario: str
    link: str
    link_bandwidth_mbps: float
    classes: Tuple[ClassEntry, ...]
    models: Tuple[Tuple[str, Tuple[str, ...]], ...]

    @property
    def num_classes(self) -> int:
        return len(self.classes)

    @property
    def user_mapping(self) -> Dict[str, str]:
        return {user: tc.name or f"TC{tc.class_id}" for tc in self.classes for user in tc.users}

    def to_dict(self) -> Dict:
        return {
            "scenario": self.scenario,
            "link": self.link,
            "link_bandwidth_mbps": self.link_bandwidth_mbps,
            "num_classes": self.num_classes,
            "classes": [
                {
                    "id": tc.class_id,
                    "name": tc.name,
                    "priority": tc.priority,
                    "traffic": tc.traffic,
                    "users": list(tc.users),
                    "bc_mbps": tc.bc_mbps,
                    "bc_percent": tc.bc_percent,
                    "sharing_percent": tc.sharing_percent,
                    "private_mbps": tc.private_mbps,
                    "public_mbps": tc.public_mbps,
                }
                for tc in self.classes
            ],
            "user_mapping": self.user_mapping,
            "models": {model: list(links) for model, links in self.models},
            "requirements": {
                "legitimate_purpose": LEGITIMATE_PURPOSE,
                "transparency": TRANSPARENCY,
            },
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), ensure_ascii=False, indent=2) + "\n"

    def to_text(self) -> str:
        lines: List[str] = [
            "=" * 60,
            f"流量管理透明度報告 - {self.scenario}",
            "=" * 60,
            f"鏈路 {self.link}，頻寬 {self.link_bandwidth_mbps:.2f} Mbps",
            f"流量類別數量: {self.num_classes}",
            "",
            f"{'類別':<6}{'優先權':>6}{'BC (Mbps)':>12}{'BC %':>8}{'分享 %':>8}{'私有':>10}{'公用':>10}",
            "-" * 60,
        ]
        for tc in self.classes:
            lines.append(
                f"{tc.name or 'TC' + str(tc.class_id):<6}{tc.priority:>6}{tc.bc_mbps:>12.2f}"
                f"{tc.bc_percent:>8.2f}{tc.sharing_percent:>8.2f}{tc.private_mbps:>10.2f}{tc.public_mbps:>10.2f}"
            )
        lines += ["", "使用者與類別的對應:"]
        for tc in self.classes:
            label = tc.name or f"TC{tc.class_id}"
            traffic = f"（{tc.traffic}）" if tc.traffic else ""
            lines.append(f"  {label}{traffic}: {', '.join(tc.users) if tc.users else '-'}")
        lines += ["", "各鏈路的頻寬分配模型:"]
        for model, links in self.models:
            lines.append(f"  {model}: {len(links)} 條鏈路 ({', '.join(links)})")
        lines += [
            "",
            "-" * 60,
            f"正當目的: {LEGITIMATE_PURPOSE}",
            f"透明度: {TRANSPARENCY}",
            "=" * 60,
        ]
        return "\n".join(lines) + "\n"


def build_report(scenario: Scenario, link=None) -> TransparencyReport:
    """
    由情境產生透明度報告（不需要任何模擬結果）

    Args:
        scenario: 情境
        link: 公開類別表的鏈路（預設為觀察鏈路）

    Returns:
        TransparencyReport
    """
    link = scenario.focus_link if link is None else tuple(link)
    lb = scenario.graph.capacity(link)
    classes = []
    for tc in scenario.class_table(link):
        private, public = partition(tc)
        classes.append(ClassEntry(
            class_id=tc.class_id,
            name=tc.name,
            priority=tc.priority,
            traffic=tc.description,
            users=tc.users,
            bc_mbps=kbps_to_mbps(tc.bc),
            bc_percent=100.0 * tc.bc / lb,
            sharing_percent=float(tc.sharing_limit * 100),
            private_mbps=kbps_to_mbps(private),
            public_mbps=kbps_to_mbps(public),
        ))

    by_model: Dict[str, List[str]] = defaultdict(list)
    for each in sorted(scenario.graph.links):
        by_model[scenario.models[each].value].append(link_name(each))
    return TransparencyReport(
        scenario=scenario.name,
        link=link_name(link),
        link_bandwidth_mbps=kbps_to_mbps(lb),
        classes=tuple(classes),
        models=tuple((model, tuple(links)) for model, links in sorted(by_model.items())),
    )
