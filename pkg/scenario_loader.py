"""
情境檔讀寫
YAML 情境檔解析為 Scenario，以及標準格式輸出
"""

import logging
import math
from fractions import Fraction
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Sequence, Tuple

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from bandwidth_model import (
    BamModel,
    BandwidthBrokerError,
    ConfigError,
    LinkBamConfig,
    NetworkGraph,
    TrafficClassConfig,
    kbps_to_mbps,
    link_name,
    mbps_to_kbps,
    parse_link_name,
    seconds_to_ms,
    validate_link_config,
)
from path_admission import NoPath, PathTable
from scenario import InvalidScenario, Scenario
from topology import bidirectional_links, build_path_table, shortest_hop_paths
from traffic_generator import Flow, PhaseProfile, WorkloadSpec

logger = logging.getLogger(__name__)

SCENARIO_DIR = Path(__file__).resolve().parent / "scenarios"


class ScenarioParseError(BandwidthBrokerError):
    """情境檔無法解析；帶有檔案、行號與欄位位置"""

    def __init__(self, message: str, path=None, line: Optional[int] = None, field: Optional[str] = None):
        self.message = message
        self.path = str(path) if path is not None else None
        self.line = line
        self.field = field
        location = ":".join(str(p) for p in (self.path, line) if p is not None)
        prefix = f"{location}: " if location else ""
        prefix += f"{field}: " if field else ""
        super().__init__(prefix + message)


class ScenarioValidationError(BandwidthBrokerError):
    """情境檔格式正確，但設定違反模型條件"""


class _Document(BaseModel):
    model_config = ConfigDict(extra="forbid")


class TopologyLinkEntry(_Document):
    link: str
    bandwidth_mbps: Optional[float] = Field(default=None, gt=0)


class TopologyDocument(_Document):
    switches: List[int] = Field(min_length=2)
    bandwidth_mbps: float = Field(default=1000, gt=0)
    bidirectional: bool = True
    links: List[TopologyLinkEntry] = Field(min_length=1)


class TopologyInclude(_Document):
    include: str


class ClassEntry(_Document):
    id: int = Field(ge=0)
    name: str = ""
    priority: int
    bc_percent: Optional[float] = Field(default=None, ge=0, le=100)
    bc_mbps: Optional[float] = Field(default=None, ge=0)
    sharing_percent: float = Field(default=100, ge=0, le=100)
    traffic: str = ""
    users: List[str] = Field(default_factory=list)

    @model_validator(mode="after")
    def _one_bc(self):
        if (self.bc_percent is None) == (self.bc_mbps is None):
            raise ValueError("bc_percent 與 bc_mbps 必須恰好設定一個")
        return self


class LinkEntry(_Document):
    link: str
    model: Optional[str] = None
    classes: Optional[List[ClassEntry]] = None


class PathEntry(_Document):
    source: int
    destination: int
    hops: List[int] = Field(min_length=2)


class FlowEntry(_Document):
    source: int
    destination: int
    weight: float = Field(default=1.0, gt=0)


class BandwidthRange(_Document):
    low: float = Field(gt=0)
    high: float = Field(gt=0)


class WorkloadEntry(_Document):
    bandwidth_mbps: BandwidthRange
    mean_holding_s: float = Field(default=300, gt=0)
    load_basis_link: Optional[str] = None


class PhaseEntry(_Document):
    duration_s: float = Field(gt=0)
    rate: Dict[int, float] = Field(default_factory=dict)
    load: Dict[int, float] = Field(default_factory=dict)


class ScenarioDocument(_Document):
    name: str
    description: str = ""
    topology: TopologyDocument | TopologyInclude
    focus_link: str = "0-1"
    default_model: str = "atcs"
    classes: List[ClassEntry] = Field(min_length=1)
    links: List[LinkEntry] = Field(default_factory=list)
    path_policy: Optional[Literal["shortest-hop"]] = None
    paths: List[PathEntry] = Field(default_factory=list)
    flows: List[FlowEntry] = Field(min_length=1)
    workload: WorkloadEntry
    phases: List[PhaseEntry] = Field(min_length=1)
    seeds: List[int] = Field(default_factory=lambda: [1], min_length=1)
    duration_s: Optional[float] = Field(default=None, gt=0)
    bucket_seconds: float = Field(default=60, gt=0)
    equivalence_band: float = Field(default=3.0, ge=0)


def _locate(text: str, loc: Sequence) -> Optional[int]:
    """依 pydantic 的欄位路徑找出 YAML 行號"""
    try:
        node = yaml.compose(text)
    except yaml.YAMLError:
        return None
    line = node.start_mark.line + 1 if node is not None else None
    for key in loc:
        if isinstance(node, yaml.MappingNode):
            match = [v for k, v in node.value if k.value == str(key)]
            if not match:
                break
            node = match[0]
        elif isinstance(node, yaml.SequenceNode) and isinstance(key, int) and key < len(node.value):
            node = node.value[key]
        else:
            break
        line = node.start_mark.line + 1
    return line


def _load_document(path: Path, model):
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ScenarioParseError(f"無法讀取檔案: {e.strerror or e}", path)
    try:
        data = yaml.safe_load(text)
    except yaml.MarkedYAMLError as e:
        line = e.problem_mark.line + 1 if e.problem_mark else None
        raise ScenarioParseError(f"YAML 語法錯誤: {e.problem}", path, line)
    if not isinstance(data, dict):
        raise ScenarioParseError("檔案內容必須是 YAML 對應表", path, 1)
    try:
        return model.model_validate(data)
    except ValidationError as e:
        error = e.errors()[0]
        loc = [item for item in error["loc"] if not str(item).startswith(("Topology", "function"))]
        raise ScenarioParseError(error["msg"], path, _locate(text, loc), ".".join(str(p) for p in loc))


def _graph(topology: TopologyDocument) -> NetworkGraph:
    default = mbps_to_kbps(topology.bandwidth_mbps)
    links = {}
    for entry in topology.links:
        i, j = parse_link_name(entry.link)
        lb = mbps_to_kbps(entry.bandwidth_mbps) if entry.bandwidth_mbps is not None else default
        if topology.bidirectional:
            links.update(bidirectional_links([(i, j)], lb))
        else:
            links[(i, j)] = lb
    return NetworkGraph(tuple(topology.switches), links)


def _class_table(entries: List[ClassEntry], lb: int) -> Tuple[TrafficClassConfig, ...]:
    table = []
    for entry in entries:
        if entry.bc_mbps is not None:
            bc = mbps_to_kbps(entry.bc_mbps)
        else:
            bc = math.floor(Fraction(str(entry.bc_percent)) * lb / 100)
        table.append(TrafficClassConfig(
            class_id=entry.id,
            priority=entry.priority,
            bc=bc,
            sharing_limit=Fraction(str(entry.sharing_percent)) / 100,
            name=entry.name,
            users=tuple(entry.users),
            description=entry.traffic,
        ))
    return tuple(sorted(table, key=lambda tc: tc.class_id))


def build_scenario(doc: ScenarioDocument, topology: TopologyDocument, path=None) -> Scenario:
    """
    由已解析的文件建立並驗證 Scenario

    Raises:
        ScenarioValidationError: 設定違反模型條件
        ScenarioParseError: 欄位值無法解讀
    """
    try:
        graph = _graph(topology)
        focus = parse_link_name(doc.focus_link)
        default_model = BamModel.parse(doc.default_model)
        overrides = {parse_link_name(entry.link): entry for entry in doc.links}
        for link in overrides:
            if not graph.has_link(link):
                raise ConfigError(f"links 引用了不存在的鏈路 {link_name(link)}")

        class_tables, models = {}, {}
        for link in sorted(graph.links):
            entry = overrides.get(link)
            models[link] = BamModel.parse(entry.model) if entry and entry.model else default_model
            entries = entry.classes if entry and entry.classes else doc.classes
            class_tables[link] = _class_table(entries, graph.links[link])
            validate_link_config(LinkBamConfig(link, BamModel.ATCS, class_tables[link]), graph.links[link])
    except ConfigError as e:
        raise ScenarioValidationError(f"{path or doc.name}: {e}")

    hops = {(p.source, p.destination): list(p.hops) for p in doc.paths}
    if doc.path_policy == "shortest-hop":
        missing = [(f.source, f.destination) for f in doc.flows if (f.source, f.destination) not in hops]
        try:
            hops.update(shortest_hop_paths(graph, missing))
        except NoPath as e:
            raise ScenarioValidationError(f"{path or doc.name}: {e}")
    table = build_path_table(hops)

    low, high = doc.workload.bandwidth_mbps.low, doc.workload.bandwidth_mbps.high
    users = {tc.class_id: tc.users for tc in class_tables.get(focus, ())}
    try:
        workload = WorkloadSpec(
            low_kbps=mbps_to_kbps(low),
            high_kbps=mbps_to_kbps(high),
            mean_holding_ms=seconds_to_ms(doc.workload.mean_holding_s),
            flows=tuple(Flow(f.source, f.destination, f.weight) for f in doc.flows),
            users={k: v for k, v in users.items() if v},
        )
        if focus not in class_tables:
            raise ConfigError(f"觀察鏈路 {doc.focus_link} 不在拓樸中")
        basis = parse_link_name(doc.workload.load_basis_link) if doc.workload.load_basis_link else focus
        if basis not in class_tables:
            raise ConfigError(f"負載基準鏈路 {link_name(basis)} 不在拓樸中")
        phases = tuple(
            _phase(index, entry, class_tables[basis], workload) for index, entry in enumerate(doc.phases, 1)
        )
        duration_ms = (seconds_to_ms(doc.duration_s) if doc.duration_s is not None
                       else sum(phase.duration_ms for phase in phases))
        scenario = Scenario(
            name=doc.name,
            graph=graph,
            class_tables=class_tables,
            models=models,
            path_table=table,
            phases=phases,
            workload=workload,
            duration_ms=duration_ms,
            seeds=tuple(doc.seeds),
            focus_link=focus,
            bucket_ms=seconds_to_ms(doc.bucket_seconds),
            equivalence_band=doc.equivalence_band,
            description=doc.description,
        )
        return scenario.validate()
    except (BandwidthBrokerError, ValueError) as e:
        if isinstance(e, (ScenarioParseError, ScenarioValidationError)):
            raise
        raise ScenarioValidationError(f"{path or doc.name}: {e}")


def _phase(index: int, entry: PhaseEntry, table: Tuple[TrafficClassConfig, ...], workload: WorkloadSpec) -> PhaseProfile:
    """load 為相對於類別 BC 的提供負載倍數，換算為到達率"""
    both = set(entry.rate) & set(entry.load)
    if both:
        raise ConfigError(f"階段 {index} 的類別 {sorted(both)} 同時設定了 rate 與 load")
    bc = {tc.class_id: tc.bc for tc in table}
    rates = dict(entry.rate)
    for class_id, load in entry.load.items():
        if class_id not in bc:
            raise ConfigError(f"階段 {index} 引用了未設定的類別 TC{class_id}")
        per_lsp = workload.mean_demand_kbps * workload.mean_holding_ms / 1000
        rates[class_id] = load * bc[class_id] / per_lsp
    return PhaseProfile(seconds_to_ms(entry.duration_s), dict(sorted(rates.items())))


def resolve_scenario_path(path) -> Path:
    """找不到檔案時改在內建 scenarios 目錄中尋找（可省略 .yaml）"""
    candidate = Path(path)
    if candidate.exists():
        return candidate
    for name in (candidate.name, f"{candidate.name}.yaml"):
        bundled = SCENARIO_DIR / name
        if bundled.exists():
            return bundled
    return candidate


def parse_scenario(path) -> Scenario:
    """
    讀取情境檔

    Args:
        path: 情境檔路徑，或內建情境名稱（scenario1、scenario2）

    Returns:
        已驗證的 Scenario

    Raises:
        ScenarioParseError: 語法或欄位錯誤（含行號與欄位）
        ScenarioValidationError: 設定違反模型條件
    """
    path = resolve_scenario_path(path)
    doc = _load_document(path, ScenarioDocument)
    topology = doc.topology
    if isinstance(topology, TopologyInclude):
        topology = _load_document(path.parent / topology.include, TopologyDocument)
    scenario = build_scenario(doc, topology, path)
    logger.info("已載入情境 %s：%d 個交換器、%d 條鏈路、%d 個階段",
                scenario.name, len(scenario.graph.switches), len(scenario.graph.links), len(scenario.phases))
    return scenario


def _class_entries(table: Sequence[TrafficClassConfig]) -> List[Dict[str, Any]]:
    entries = []
    for tc in table:
        entry = {
            "id": tc.class_id,
            "name": tc.name,
            "priority": tc.priority,
            "bc_mbps": kbps_to_mbps(tc.bc),
            "sharing_percent": float(tc.sharing_limit * 100),
        }
        if tc.description:
            entry["traffic"] = tc.description
        if tc.users:
            entry["users"] = list(tc.users)
        entries.append(entry)
    return entries


def emit_scenario(scenario: Scenario) -> str:
    """
    以標準格式輸出情境檔（拓樸內嵌、BC 與到達率皆為絕對值）

    parse(emit(s)) 會得到相同的 Scenario。
    """
    focus = scenario.focus_link
    links = []
    for link in sorted(scenario.graph.links):
        entry: Dict[str, Any] = {}
        if scenario.models[link] is not scenario.models[focus]:
            entry["model"] = scenario.models[link].value.lower()
        if scenario.class_tables[link] != scenario.class_tables[focus]:
            entry["classes"] = _class_entries(scenario.class_tables[link])
        if entry:
            links.append({"link": link_name(link), **entry})

    document = {
        "name": scenario.name,
        "description": scenario.description,
        "topology": {
            "switches": list(scenario.graph.switches),
            "bidirectional": False,
            "links": [
                {"link": link_name(link), "bandwidth_mbps": kbps_to_mbps(lb)}
                for link, lb in sorted(scenario.graph.links.items())
            ],
        },
        "focus_link": link_name(focus),
        "default_model": scenario.models[focus].value.lower(),
        "classes": _class_entries(scenario.class_tables[focus]),
        "links": links,
        "paths": [
            {"source": src, "destination": dst, "hops": [segments[0][0]] + [seg[1] for seg in segments]}
            for (src, dst), segments in sorted(scenario.path_table.paths.items())
        ],
        "flows": [
            {"source": f.source, "destination": f.destination, "weight": f.weight}
            for f in scenario.workload.flows
        ],
        "workload": {
            "bandwidth_mbps": {
                "low": kbps_to_mbps(scenario.workload.low_kbps),
                "high": kbps_to_mbps(scenario.workload.high_kbps),
            },
            "mean_holding_s": scenario.workload.mean_holding_ms / 1000,
        },
        "phases": [
            {"duration_s": phase.duration_ms / 1000, "rate": {int(k): float(v) for k, v in phase.rates.items()}}
            for phase in scenario.phases
        ],
        "seeds": list(scenario.seeds),
        "duration_s": scenario.duration_ms / 1000,
        "bucket_seconds": scenario.bucket_ms / 1000,
        "equivalence_band": scenario.equivalence_band,
    }
    return yaml.safe_dump(document, sort_keys=False, allow_unicode=True)


def loads_scenario(text: str, base_dir=None) -> Scenario:
    """由字串解析情境（供標準格式往返使用）"""
    try:
        data = yaml.safe_load(text)
        doc = ScenarioDocument.model_validate(data)
    except yaml.MarkedYAMLError as e:
        raise ScenarioParseError(f"YAML 語法錯誤: {e.problem}", line=e.problem_mark.line + 1 if e.problem_mark else None)
    except ValidationError as e:
        error = e.errors()[0]
        loc = list(error["loc"])
        raise ScenarioParseError(error["msg"], line=_locate(text, loc), field=".".join(str(p) for p in loc))
    topology = doc.topology
    if isinstance(topology, TopologyInclude):
        topology = _load_document(Path(base_dir or SCENARIO_DIR) / topology.include, TopologyDocument)
    return build_scenario(doc, topology)
