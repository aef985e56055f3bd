"""
頻寬分配核心模型
網路圖、流量類別 (TC) 設定、LSP 請求與每條鏈路的頻寬帳本

內部頻寬一律以整數 kbps 表示，時間以整數毫秒表示，
確保分割與守恆檢查沒有浮點誤差。
"""

import logging
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from fractions import Fraction
from typing import Dict, Iterable, List, Mapping, Optional, Tuple

import numpy as np

logger = logging.getLogger(__name__)

KBPS_PER_MBPS = 1000
MS_PER_SECOND = 1000

LinkId = Tuple[int, int]
# (donor_class, amount_kbps)
Breakdown = Tuple[Tuple[int, int], ...]
# (sw_x, sw_y, link)
Segment = Tuple[int, int, LinkId]

# FRFS 鏈路上唯一的隱含類別
FRFS_POOL_CLASS = 0


class BandwidthBrokerError(Exception):
    """頻寬代理所有錯誤的基底類別"""


class ConfigError(BandwidthBrokerError):
    """鏈路或類別設定不合法"""


class OverCommitted(ConfigError):
    """各類別 BC 總和超過鏈路頻寬"""


class DuplicatePriority(ConfigError):
    """同一鏈路上出現重複的優先權"""


class BadSharingLimit(ConfigError):
    """共享上限不在 [0, 1] 範圍內"""


class UnknownClass(ConfigError):
    """鏈路上未設定此流量類別"""


class InvalidDemand(BandwidthBrokerError):
    """請求頻寬或持有時間不為正值"""


class UnknownRequest(BandwidthBrokerError):
    """請求不在鏈路或路徑上"""


class InvariantViolation(BandwidthBrokerError):
    """鏈路帳本違反守恆或上限條件"""


class BamModel(str, Enum):
    """頻寬分配模型"""

    MAM = "MAM"
    RDM = "RDM"
    ATCS = "ATCS"
    FRFS = "FRFS"

    @classmethod
    def parse(cls, value: str) -> "BamModel":
        try:
            return cls(str(value).strip().upper())
        except ValueError:
            raise ConfigError(f"不支援的頻寬分配模型: {value}（可用: mam, rdm, atcs, frfs）")


def mbps_to_kbps(mbps) -> int:
    """Mbps 轉為整數 kbps（以十進位字串轉換，避免二進位浮點誤差）"""
    return int(round(Fraction(str(mbps)) * KBPS_PER_MBPS))


def kbps_to_mbps(kbps: int) -> float:
    return kbps / KBPS_PER_MBPS


def seconds_to_ms(seconds) -> int:
    return int(round(Fraction(str(seconds)) * MS_PER_SECOND))


def link_name(link: LinkId) -> str:
    return f"{link[0]}-{link[1]}"


def parse_link_name(text: str) -> LinkId:
    """
    解析 "i-j" 格式的鏈路名稱

    Args:
        text: 鏈路名稱，例如 "0-1"

    Returns:
        (i, j) 鏈路代碼
    """
    try:
        left, right = str(text).strip().split("-")
        return int(left), int(right)
    except ValueError:
        raise ConfigError(f"鏈路名稱格式錯誤: {text!r}（應為 i-j）")


@dataclass(frozen=True)
class NetworkGraph:
    """
    網路實體圖

    switches 為交換器代碼，links 為有向鏈路與其總頻寬 LB (kbps)。
    """

    switches: Tuple[int, ...]
    links: Mapping[LinkId, int]

    def __post_init__(self):
        known = set(self.switches)
        if len(known) != len(self.switches):
            raise ConfigError("交換器代碼重複")
        for (i, j), lb in self.links.items():
            if i == j:
                raise ConfigError(f"鏈路 {i}-{j} 不可連回自身")
            if i not in known or j not in known:
                raise ConfigError(f"鏈路 {i}-{j} 引用了不存在的交換器")
            if lb <= 0:
                raise ConfigError(f"鏈路 {i}-{j} 的頻寬必須大於 0")

    @property
    def connectivity(self) -> np.ndarray:
        """n×n 的 0/1 連通矩陣，列與欄依 switches 順序排列"""
        index = {sw: n for n, sw in enumerate(self.switches)}
        matrix = np.zeros((len(self.switches), len(self.switches)), dtype=np.int8)
        for i, j in self.links:
            matrix[index[i], index[j]] = 1
        return matrix

    def has_link(self, link: LinkId) -> bool:
        return tuple(link) in self.links

    def capacity(self, link: LinkId) -> int:
        try:
            return self.links[tuple(link)]
        except KeyError:
            raise ConfigError(f"網路中沒有鏈路 {link_name(link)}")


@dataclass(frozen=True)
class TrafficClassConfig:
    """
    流量類別設定

    priority 數值越大優先權越高；sharing_limit 為 BC 中公開（可借出）的比例。
    """

    class_id: int
    priority: int
    bc: int
    sharing_limit: Fraction = Fraction(1)
    name: str = ""
    users: Tuple[str, ...] = ()
    description: str = ""

    @property
    def label(self) -> str:
        return self.name or f"TC{self.class_id}"


@dataclass(frozen=True)
class LinkBamConfig:
    """單一鏈路的頻寬分配模型與類別表"""

    link: LinkId
    model: BamModel
    classes: Tuple[TrafficClassConfig, ...]
    lb: Optional[int] = None

    def class_config(self, class_id: int) -> TrafficClassConfig:
        for tc in self.classes:
            if tc.class_id == class_id:
                return tc
        raise UnknownClass(f"鏈路 {link_name(self.link)} 沒有設定類別 TC{class_id}")

    @property
    def class_ids(self) -> Tuple[int, ...]:
        return tuple(tc.class_id for tc in self.classes)

    def by_priority(self) -> List[TrafficClassConfig]:
        """依優先權由低到高排序"""
        return sorted(self.classes, key=lambda tc: tc.priority)


ValidatedConfig = LinkBamConfig


def frfs_config(link: LinkId, lb: int) -> LinkBamConfig:
    """建立 FRFS 鏈路設定：單一隱含類別，BC 等於鏈路頻寬"""
    pool = TrafficClassConfig(
        class_id=FRFS_POOL_CLASS,
        priority=0,
        bc=lb,
        sharing_limit=Fraction(0),
        name="pool",
    )
    return LinkBamConfig(link=tuple(link), model=BamModel.FRFS, classes=(pool,), lb=lb)


def validate_link_config(config: LinkBamConfig, lb: int) -> ValidatedConfig:
    """
    驗證鏈路設定

    Args:
        config: 鏈路設定
        lb: 鏈路總頻寬 (kbps)

    Returns:
        類別依 class_id 排序、並帶有 lb 的設定（可重複呼叫，結果相同）

    Raises:
        OverCommitted: ΣBC > LB
        DuplicatePriority: 優先權不是嚴格全序
        BadSharingLimit: 共享上限不在 [0, 1]
    """
    if lb <= 0:
        raise ConfigError(f"鏈路 {link_name(config.link)} 的頻寬必須大於 0")
    if not config.classes:
        raise ConfigError(f"鏈路 {link_name(config.link)} 沒有任何流量類別")

    ids = [tc.class_id for tc in config.classes]
    if len(set(ids)) != len(ids):
        raise ConfigError(f"鏈路 {link_name(config.link)} 的類別代碼重複")

    priorities = [tc.priority for tc in config.classes]
    if len(set(priorities)) != len(priorities):
        raise DuplicatePriority(f"鏈路 {link_name(config.link)} 的類別優先權重複: {sorted(priorities)}")

    for tc in config.classes:
        if not 0 <= tc.sharing_limit <= 1:
            raise BadSharingLimit(f"類別 {tc.label} 的共享上限 {float(tc.sharing_limit)} 不在 [0, 1]")
        if tc.bc < 0:
            raise ConfigError(f"類別 {tc.label} 的 BC 不可為負值")

    total = sum(tc.bc for tc in config.classes)
    if total > lb:
        raise OverCommitted(
            f"鏈路 {link_name(config.link)} 的 ΣBC = {kbps_to_mbps(total):g} Mbps "
            f"超過鏈路頻寬 LB = {kbps_to_mbps(lb):g} Mbps（必須 ΣBC ≤ LB）"
        )

    if config.model is BamModel.FRFS and (len(config.classes) != 1 or config.classes[0].bc != lb):
        raise ConfigError(f"FRFS 鏈路 {link_name(config.link)} 必須只有一個 BC = LB 的類別")

    ordered = tuple(sorted(config.classes, key=lambda tc: tc.class_id))
    return replace(config, link=tuple(config.link), classes=ordered, lb=lb)


def partition(config: TrafficClassConfig) -> Tuple[int, int]:
    """
    將 BC 分成私有與公開兩部分

    Args:
        config: 已驗證的類別設定

    Returns:
        (private_kbps, public_kbps)，兩者相加恰等於 BC
    """
    public = math.floor(config.bc * config.sharing_limit)
    return config.bc - public, public


@dataclass(frozen=True)
class LspRequest:
    """LSP 請求：某使用者在某類別下要求固定頻寬的端到端路徑"""

    request_id: int
    user_id: str
    class_id: int
    bandwidth: int
    source: int
    destination: int
    arrival_ms: int = 0
    holding_ms: int = 1

    def __post_init__(self):
        if self.bandwidth <= 0:
            raise InvalidDemand(f"請求 {self.request_id} 的頻寬必須大於 0")
        if self.holding_ms <= 0:
            raise InvalidDemand(f"請求 {self.request_id} 的持有時間必須大於 0")


@dataclass(frozen=True)
class LspAllocation:
    """已建立的 LSP：路徑區段與每段的捐出類別明細"""

    request_id: int
    class_id: int
    bandwidth: int
    path: Tuple[Segment, ...]
    breakdowns: Mapping[LinkId, Breakdown]

    def __post_init__(self):
        for (_, y, _), (x, _, _) in zip(self.path, self.path[1:]):
            if y != x:
                raise ConfigError(f"LSP {self.request_id} 的路徑區段不相連")
        for link, breakdown in self.breakdowns.items():
            if sum(amount for _, amount in breakdown) != self.bandwidth:
                raise InvariantViolation(f"LSP {self.request_id} 在鏈路 {link_name(link)} 的明細總和不等於需求")
            if any(amount <= 0 for _, amount in breakdown):
                raise InvariantViolation(f"LSP {self.request_id} 的明細金額必須為正")

    @property
    def links(self) -> Tuple[LinkId, ...]:
        return tuple(seg[2] for seg in self.path)


@dataclass(frozen=True)
class LinkSlice:
    """LSP 在單一鏈路上的配置；owner 為記帳類別（FRFS 時為隱含類別）"""

    request_id: int
    class_id: int
    owner: int
    breakdown: Breakdown
    seq: int

    @property
    def amount(self) -> int:
        return sum(amount for _, amount in self.breakdown)

    def drawn_from(self, donor: int) -> int:
        return sum(amount for d, amount in self.breakdown if d == donor)


def merge_breakdown(parts: Iterable[Tuple[int, int]]) -> Breakdown:
    """合併同一捐出類別的金額，保留第一次出現的順序，並去除 0"""
    merged: Dict[int, int] = {}
    for donor, amount in parts:
        merged[donor] = merged.get(donor, 0) + amount
    return tuple((donor, amount) for donor, amount in merged.items() if amount > 0)


class LinkState:
    """
    鏈路配置帳本

    以 (owner, donor) 記錄每個類別從各 BC 取用的頻寬。單一寫入者，
    不提供內部同步。
    """

    def __init__(self, config: LinkBamConfig):
        if config.lb is None:
            raise ConfigError(f"鏈路 {link_name(config.link)} 的設定尚未驗證")
        self.config = config
        self.allocations: Dict[int, LinkSlice] = {}
        self._usage: Dict[Tuple[int, int], int] = {}
        self._seq = 0
        self._tc = {tc.class_id: tc for tc in config.classes}
        self._public = {tc.class_id: partition(tc)[1] for tc in config.classes}

    @property
    def link(self) -> LinkId:
        return self.config.link

    @property
    def lb(self) -> int:
        return self.config.lb

    def traffic_class(self, class_id: int) -> TrafficClassConfig:
        try:
            return self._tc[class_id]
        except KeyError:
            raise UnknownClass(f"鏈路 {link_name(self.link)} 沒有設定類別 TC{class_id}")

    def bc(self, class_id: int) -> int:
        return self.traffic_class(class_id).bc

    def public(self, class_id: int) -> int:
        self.traffic_class(class_id)
        return self._public[class_id]

    def priority(self, class_id: int) -> int:
        return self.traffic_class(class_id).priority

    def usage(self, owner: int, donor: int) -> int:
        return self._usage.get((owner, donor), 0)

    def drawn_from(self, donor: int) -> int:
        """所有類別從 donor 的 BC 取用的總量"""
        return sum(amount for (_, d), amount in self._usage.items() if d == donor)

    def own_use(self, class_id: int) -> int:
        return self.usage(class_id, class_id)

    def lent(self, class_id: int) -> int:
        return sum(amount for (o, d), amount in self._usage.items() if d == class_id and o != class_id)

    def borrowed(self, class_id: int) -> int:
        return sum(amount for (o, d), amount in self._usage.items() if o == class_id and d != class_id)

    def free_in(self, class_id: int) -> int:
        """donor BC 中尚未被任何類別使用的頻寬"""
        return self.bc(class_id) - self.drawn_from(class_id)

    def lendable(self, class_id: int) -> int:
        """可借給其他類別的公開頻寬"""
        return max(0, min(self.free_in(class_id), self.public(class_id) - self.lent(class_id)))

    def total_allocated(self) -> int:
        return sum(self._usage.values())

    def usage_matrix(self) -> Dict[Tuple[int, int], int]:
        return {key: amount for key, amount in sorted(self._usage.items()) if amount}

    def add(self, request_id: int, class_id: int, owner: int, breakdown: Breakdown) -> LinkSlice:
        """啟用一筆配置並更新記帳"""
        if request_id in self.allocations:
            raise InvariantViolation(f"請求 {request_id} 已在鏈路 {link_name(self.link)} 上")
        self._seq += 1
        item = LinkSlice(request_id, class_id, owner, merge_breakdown(breakdown), self._seq)
        self.allocations[request_id] = item
        self._apply(item, +1)
        return item

    def remove(self, request_id: int) -> LinkSlice:
        """移除一筆配置並把頻寬還給各捐出類別"""
        try:
            item = self.allocations.pop(request_id)
        except KeyError:
            raise UnknownRequest(f"請求 {request_id} 不在鏈路 {link_name(self.link)} 上")
        self._apply(item, -1)
        return item

    def rehouse(self, request_id: int, breakdown: Breakdown) -> LinkSlice:
        """以新的捐出明細取代既有配置（保留原本的啟用順序）"""
        old = self.remove(request_id)
        item = replace(old, breakdown=merge_breakdown(breakdown))
        self.allocations[request_id] = item
        self._apply(item, +1)
        return item

    def _apply(self, item: LinkSlice, sign: int):
        for donor, amount in item.breakdown:
            key = (item.owner, donor)
            value = self._usage.get(key, 0) + sign * amount
            if value:
                self._usage[key] = value
            else:
                self._usage.pop(key, None)

    def rebuild_usage(self) -> Dict[Tuple[int, int], int]:
        """由啟用中的配置重新計算記帳"""
        usage: Dict[Tuple[int, int], int] = {}
        for item in self.allocations.values():
            for donor, amount in item.breakdown:
                usage[(item.owner, donor)] = usage.get((item.owner, donor), 0) + amount
        return {key: amount for key, amount in sorted(usage.items()) if amount}

    def violations(self) -> List[str]:
        """列出違反的帳本條件（空列表代表全部成立）"""
        problems = []
        total = self.total_allocated()
        if total > self.lb:
            problems.append(f"守恆: Σ使用量 {total} > LB {self.lb}")
        for class_id in self._tc:
            drawn = self.drawn_from(class_id)
            if drawn > self.bc(class_id):
                problems.append(f"捐出上限: TC{class_id} 被取用 {drawn} > BC {self.bc(class_id)}")
            lent = self.lent(class_id)
            if lent > self.public(class_id):
                problems.append(f"共享上限: TC{class_id} 借出 {lent} > 公開 {self.public(class_id)}")
        for (owner, donor), amount in self._usage.items():
            if amount < 0:
                problems.append(f"負值記帳: ({owner}, {donor}) = {amount}")
            if donor not in self._tc:
                problems.append(f"未知的捐出類別 TC{donor}")
        if self.rebuild_usage() != self.usage_matrix():
            problems.append("記帳與重建結果不一致")
        return problems

    def assert_invariants(self):
        problems = self.violations()
        if problems:
            raise InvariantViolation(f"鏈路 {link_name(self.link)}: " + "; ".join(problems))

    def copy(self) -> "LinkState":
        clone = LinkState(self.config)
        clone.allocations = dict(self.allocations)
        clone._usage = dict(self._usage)
        clone._seq = self._seq
        return clone

    def __repr__(self):
        return f"LinkState({link_name(self.link)}, {self.config.model.value}, lsps={len(self.allocations)}, used={self.total_allocated()})"
