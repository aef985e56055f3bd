"""
模擬情境
拓樸、各鏈路類別表與模型、路徑表、分階段工作負載與種子
"""

from dataclasses import dataclass, replace
from typing import Dict, Mapping, Optional, Tuple

from bandwidth_model import (
    BamModel,
    BandwidthBrokerError,
    ConfigError,
    LinkBamConfig,
    LinkId,
    NetworkGraph,
    TrafficClassConfig,
    UnknownClass,
    frfs_config,
    link_name,
    validate_link_config,
)
from path_admission import NoPath, PathTable
from traffic_generator import PhaseProfile, WorkloadSpec


class InvalidScenario(BandwidthBrokerError):
    """情境設定不合法"""


@dataclass(frozen=True)
class Scenario:
    """
    模擬情境

    class_tables 保存每條鏈路的類別表（即使該鏈路使用 FRFS，
    也用於以虛擬 BC 區間計算各類別指標）；models 為每條鏈路的模型。
    """

    name: str
    graph: NetworkGraph
    class_tables: Mapping[LinkId, Tuple[TrafficClassConfig, ...]]
    models: Mapping[LinkId, BamModel]
    path_table: PathTable
    phases: Tuple[PhaseProfile, ...]
    workload: WorkloadSpec
    duration_ms: int
    seeds: Tuple[int, ...] = (1,)
    focus_link: LinkId = (0, 1)
    bucket_ms: int = 60_000
    equivalence_band: float = 3.0
    description: str = ""

    def validate(self) -> "Scenario":
        """
        驗證情境

        Raises:
            InvalidScenario: 階段時間總和、路徑或類別設定不合法
        """
        if self.duration_ms <= 0:
            raise InvalidScenario("模擬時間必須大於 0")
        if not self.phases:
            raise InvalidScenario("至少需要一個階段")
        if sum(phase.duration_ms for phase in self.phases) != self.duration_ms:
            raise InvalidScenario("各階段持續時間總和必須等於模擬時間")
        if set(self.class_tables) != set(self.graph.links) or set(self.models) != set(self.graph.links):
            raise InvalidScenario("每條鏈路都必須有類別表與模型")
        if not self.graph.has_link(self.focus_link):
            raise InvalidScenario(f"觀察鏈路 {link_name(self.focus_link)} 不在拓樸中")
        if self.bucket_ms <= 0:
            raise InvalidScenario("時間區間長度必須大於 0")
        try:
            self.path_table.validate(self.graph)
            for flow in self.workload.flows:
                self.path_table.lookup(flow.source, flow.destination)
            self.link_configs()
        except (ConfigError, NoPath) as e:
            raise InvalidScenario(str(e))
        class_ids = set(self.class_ids)
        for index, phase in enumerate(self.phases):
            unknown = set(phase.rates) - class_ids
            if unknown:
                raise InvalidScenario(f"階段 {index + 1} 引用了未設定的類別 {sorted(unknown)}")
        return self

    @property
    def class_ids(self) -> Tuple[int, ...]:
        return tuple(tc.class_id for tc in self.class_tables[self.focus_link])

    def class_table(self, link: LinkId) -> Tuple[TrafficClassConfig, ...]:
        try:
            return self.class_tables[tuple(link)]
        except KeyError:
            raise ConfigError(f"網路中沒有鏈路 {link_name(link)}")

    def class_bc(self, link: LinkId, class_id: int) -> int:
        for tc in self.class_table(link):
            if tc.class_id == class_id:
                return tc.bc
        raise UnknownClass(f"鏈路 {link_name(link)} 沒有設定類別 TC{class_id}")

    def reference_config(self, link: LinkId) -> LinkBamConfig:
        """鏈路的類別設定（FRFS 鏈路以 ATCS 表示其類別表）"""
        model = self.models[tuple(link)]
        if model is BamModel.FRFS:
            model = BamModel.ATCS
        return validate_link_config(
            LinkBamConfig(tuple(link), model, self.class_table(link)), self.graph.capacity(link)
        )

    def link_config(self, link: LinkId) -> LinkBamConfig:
        """鏈路實際運作的設定"""
        lb = self.graph.capacity(link)
        if self.models[tuple(link)] is BamModel.FRFS:
            return validate_link_config(frfs_config(link, lb), lb)
        return self.reference_config(link)

    def link_configs(self) -> Dict[LinkId, LinkBamConfig]:
        return {link: self.link_config(link) for link in self.graph.links}

    @property
    def model_label(self) -> str:
        models = sorted({model.value for model in self.models.values()})
        return models[0] if len(models) == 1 else "+".join(models)

    def with_model(self, model: BamModel) -> "Scenario":
        """所有鏈路改用同一模型"""
        return replace(self, models={link: model for link in self.graph.links})

    def scaled(self, multiplier: float) -> "Scenario":
        """所有階段的到達率乘上負載倍數"""
        phases = tuple(
            replace(phase, rates={k: rate * multiplier for k, rate in phase.rates.items()})
            for phase in self.phases
        )
        return replace(self, phases=phases)

    def phase_bounds(self) -> Tuple[Tuple[int, int], ...]:
        bounds = []
        start = 0
        for phase in self.phases:
            bounds.append((start, start + phase.duration_ms))
            start += phase.duration_ms
        return tuple(bounds)

    def phase_at(self, time_ms: int) -> int:
        """事件時間所屬的階段序號（從 1 開始）"""
        for index, (_, end) in enumerate(self.phase_bounds(), 1):
            if time_ms < end:
                return index
        return len(self.phases)

    def offered_load(self, class_id: int, phase_index: int = 1, link: Optional[LinkId] = None) -> float:
        """類別在階段中相對於其 BC 的提供負載"""
        link = self.focus_link if link is None else link
        rate = self.phases[phase_index - 1].rates.get(class_id, 0.0)
        offered = rate * self.workload.mean_demand_kbps * self.workload.mean_holding_ms / 1000
        return offered / self.class_bc(link, class_id)
